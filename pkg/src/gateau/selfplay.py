"""Game generation, replay frames and the bounded frame window."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .chess import WHITE, GameOutcome, Move, Position, apply_move, get_variant, status, terminal_value
from .checkpoint import atomic_write
from .graph import action_of_move
from .mcts import Evaluator, NetEvaluator, SearchParams, run_searches, search_rng
from .model import GateauNet
from .notation import GameRecord, board_fen, emit_fen, parse_board, parse_fen

FRAMES_MAGIC = b"GATEAU-FRAMES\n"
FRAMES_VERSION = 1


class FrameError(ValueError):
    pass


@dataclass
class ReplayFrame:
    """One training sample.

    ``history`` keeps (placement, repetitions) of up to seven earlier
    positions, most recent first, which is all the encoder needs besides the
    FEN and the repetition count of the position itself.
    """

    fen: str
    history: tuple[tuple[str, int], ...]
    repetitions: int
    policy: dict[int, float]
    value: float
    variant: str
    iteration: int = 0

    @classmethod
    def from_position(cls, p: Position, policy: dict[int, float], value: float, iteration: int = 0) -> ReplayFrame:
        side = p.side
        history = tuple((board_fen(b, side), int(r)) for b, r in p.past)
        return cls(emit_fen(p), history, p.repetitions(), dict(policy), float(value), p.variant.name, iteration)

    def position(self) -> Position:
        variant = get_variant(self.variant)
        p = parse_fen(self.fen, variant)
        past = tuple((parse_board(pl, variant.board_side), r) for pl, r in self.history)
        return replace(p, past=past, keys=(p.key,) * self.repetitions)

    def validate(self, p: Position | None = None) -> None:
        p = p or self.position()
        total = sum(self.policy.values())
        if abs(total - 1.0) > 1e-5 or min(self.policy.values(), default=0.0) < 0:
            raise FrameError(f"policy target sums to {total}")
        legal = {action_of_move(m, p.variant, p.turn) for m in p.legal_moves()}
        stray = set(self.policy) - legal
        if stray:
            raise FrameError(f"policy mass on illegal actions {sorted(stray)[:5]}")
        if self.value not in (-1.0, 0.0, 1.0):
            raise FrameError(f"value target {self.value} is not a game result")

    def to_json(self) -> dict:
        actions = sorted(self.policy)
        return {
            "fen": self.fen,
            "hist": [list(h) for h in self.history],
            "rep": self.repetitions,
            "a": actions,
            "p": [self.policy[a] for a in actions],
            "z": self.value,
            "v": self.variant,
            "it": self.iteration,
        }

    @classmethod
    def from_json(cls, d: dict) -> ReplayFrame:
        return cls(
            d["fen"], tuple((pl, int(r)) for pl, r in d["hist"]), int(d["rep"]),
            {int(a): float(p) for a, p in zip(d["a"], d["p"])}, float(d["z"]), d["v"], int(d.get("it", 0)),
        )


@dataclass
class FrameWindow:
    capacity: int
    frames: list[ReplayFrame] = field(default_factory=list)
    iteration: int = 0

    def __len__(self) -> int:
        return len(self.frames)


def update_window(new: Sequence[ReplayFrame], previous: FrameWindow | None, ws: int,
                  rng: np.random.Generator) -> FrameWindow:
    """All new frames plus a uniform sample (without replacement) of the old ones."""
    if len(new) > ws:
        raise FrameError(f"{len(new)} new frames exceed the window capacity {ws}")
    old = previous.frames if previous is not None else []
    room = ws - len(new)
    if len(old) > room:
        keep = np.sort(rng.choice(len(old), size=room, replace=False))
        old = [old[i] for i in keep]
    iteration = (previous.iteration if previous is not None else 0) + 1
    return FrameWindow(ws, list(new) + list(old), iteration)


def save_window(window: FrameWindow, path) -> None:
    variants = sorted({f.variant for f in window.frames})
    header = {
        "version": FRAMES_VERSION,
        "count": len(window.frames),
        "variant": variants[0] if len(variants) == 1 else ",".join(variants),
        "capacity": window.capacity,
        "iteration": window.iteration,
    }
    parts = [FRAMES_MAGIC, json.dumps(header).encode(), b"\n"]
    for f in window.frames:
        blob = json.dumps(f.to_json(), separators=(",", ":")).encode()
        parts.append(struct.pack("<I", len(blob)))
        parts.append(blob)
    atomic_write(path, b"".join(parts))


def load_window(path, validate: bool = True) -> FrameWindow:
    data = Path(path).read_bytes()
    if not data.startswith(FRAMES_MAGIC):
        raise FrameError(f"{path}: not a frame window file")
    end = data.index(b"\n", len(FRAMES_MAGIC))
    header = json.loads(data[len(FRAMES_MAGIC):end])
    if header.get("version") != FRAMES_VERSION:
        raise FrameError(f"{path}: unsupported version {header.get('version')}")
    pos = end + 1
    frames = []
    for _ in range(header["count"]):
        if pos + 4 > len(data):
            raise FrameError(f"{path}: truncated after {len(frames)} frames")
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + n > len(data):
            raise FrameError(f"{path}: truncated after {len(frames)} frames")
        frame = ReplayFrame.from_json(json.loads(data[pos:pos + n]))
        if validate:
            frame.validate()
        frames.append(frame)
        pos += n
    return FrameWindow(int(header["capacity"]), frames, int(header["iteration"]))


@dataclass
class PlayedGame:
    record: GameRecord
    positions: list[Position]
    policies: list[dict[int, float]]
    root_values: list[float]

    @property
    def outcome(self) -> GameOutcome:
        return self.record.outcome

    def frames(self, iteration: int = 0) -> list[ReplayFrame]:
        """One frame per ply; value targets are the final result seen by the mover."""
        out = []
        for p, pi in zip(self.positions, self.policies):
            z = terminal_value(self.outcome, p.turn)
            out.append(ReplayFrame.from_position(p, pi, z, iteration))
        return out


def play_games(white: Sequence[Evaluator], black: Sequence[Evaluator], sp: SearchParams, max_plies: int,
               rngs: Sequence[np.random.Generator], starts: Sequence[Position],
               tags: Sequence[dict] | None = None) -> list[PlayedGame]:
    """Play several games in lockstep, one search per side to move."""
    n = len(starts)
    current = list(starts)
    moves: list[list[Move]] = [[] for _ in range(n)]
    positions: list[list[Position]] = [[] for _ in range(n)]
    policies: list[list[dict[int, float]]] = [[] for _ in range(n)]
    values: list[list[float]] = [[] for _ in range(n)]
    outcomes: list[GameOutcome | None] = [status(p, max_plies) for p in current]
    while True:
        active = [i for i in range(n) if outcomes[i] is None]
        if not active:
            break
        evaluators = [white[i] if current[i].turn == WHITE else black[i] for i in active]
        results = run_searches([current[i] for i in active], evaluators, sp, [rngs[i] for i in active], max_plies)
        for i, res in zip(active, results):
            p = current[i]
            positions[i].append(p)
            policies[i].append(res.policy_by_action(p))
            values[i].append(res.value)
            moves[i].append(res.move)
            current[i] = apply_move(p, res.move)
            outcomes[i] = status(current[i], max_plies)
    games = []
    for i in range(n):
        record = GameRecord(starts[i], moves[i], outcomes[i], dict(tags[i]) if tags else {})
        games.append(PlayedGame(record, positions[i], policies[i], values[i]))
    return games


def play_game(white_net: GateauNet | Evaluator, black_net: GateauNet | Evaluator, sp: SearchParams,
              max_plies: int, variant="gardner", seed: int | None = None, start: Position | None = None) -> PlayedGame:
    start = start or Position.initial(variant)

    def as_eval(x):
        return NetEvaluator(x, variant=start.variant) if isinstance(x, GateauNet) else x

    rng = search_rng(sp.seed if seed is None else seed, 0)
    return play_games([as_eval(white_net)], [as_eval(black_net)], sp, max_plies, [rng], [start])[0]


def selfplay_games(net: GateauNet, variant, games: int | Sequence[int], sp: SearchParams, max_plies: int,
                   seed: int, stream: int = 0) -> list[PlayedGame]:
    """Self-play games; game ``i`` draws its noise from (seed, stream, i).

    ``games`` is either a count or an explicit list of game indices.
    """
    variant = get_variant(variant)
    ids = list(range(games)) if isinstance(games, int) else list(games)
    evaluator = NetEvaluator(net, variant=variant)
    start = Position.initial(variant)
    rngs = [search_rng(seed, stream, i) for i in ids]
    tags = [{"Event": "self-play", "Round": str(i + 1), "White": "self", "Black": "self"} for i in ids]
    n = len(ids)
    return play_games([evaluator] * n, [evaluator] * n, sp, max_plies, rngs, [start] * n, tags)


def match_games(net_a: GateauNet, net_b: GateauNet, variant, games: int, sp: SearchParams, max_plies: int,
                seed: int, names: tuple[str, str] = ("A", "B"), stream: int = 0) -> list[PlayedGame]:
    """Colour-balanced match: even-numbered games have ``net_a`` as White."""
    variant = get_variant(variant)
    ea, eb = NetEvaluator(net_a, variant=variant), NetEvaluator(net_b, variant=variant)
    white = [ea if i % 2 == 0 else eb for i in range(games)]
    black = [eb if i % 2 == 0 else ea for i in range(games)]
    tags = []
    for i in range(games):
        w, b = (names[0], names[1]) if i % 2 == 0 else (names[1], names[0])
        tags.append({"Event": "match", "Round": str(i + 1), "White": w, "Black": b})
    rngs = [search_rng(seed, stream, i) for i in range(games)]
    start = Position.initial(variant)
    return play_games(white, black, sp, max_plies, rngs, [start] * games, tags)


def match_score(games: Sequence[PlayedGame], player: str) -> tuple[int, int, int]:
    """(wins, draws, losses) of ``player`` over the games it took part in."""
    w = d = l = 0
    for g in games:
        tags = g.record.tags
        if player not in (tags.get("White"), tags.get("Black")):
            continue
        score = g.outcome.white_score if tags.get("White") == player else 1 - g.outcome.white_score
        if score == 1:
            w += 1
        elif score == 0:
            l += 1
        else:
            d += 1
    return w, d, l
