"""Elo ratings from match tables.

Pairwise results are turned into rating-difference equations using a
Jeffreys-adjusted score (one extra draw per pair), then fitted jointly with
a mean-1000 anchor by ordinary or inverse-variance weighted least squares.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .checkpoint import atomic_write
from .notation import PgnError, read_pgn

ELO_SCALE = 400.0 / math.log(10.0)
ANCHOR_RATING = 1000.0
ANCHOR_WEIGHT = 1e6


class EloError(ValueError):
    pass


class DisconnectedError(EloError):
    def __init__(self, components: list[list[str]]):
        self.components = components
        names = "; ".join("{" + ", ".join(c) + "}" for c in components)
        super().__init__(f"match graph is disconnected: {names}")


def expected_score(r_a: float, r_b: float) -> float:
    """Probability that A beats B (draws counted as half)."""
    return 1.0 / (1.0 + 10.0 ** ((r_b - r_a) / 400.0))


def pair_estimate(w: int, d: int, l: int) -> tuple[float, float]:
    """(r_j - r_i, variance) from i's wins, draws and losses against j."""
    n = w + d + l
    if n < 1 or min(w, d, l) < 0:
        raise EloError(f"no games in match ({w}, {d}, {l})")
    p = (w + (d + 1) / 2) / (n + 1)
    diff = ELO_SCALE * math.log(1.0 / p - 1.0)
    var = ELO_SCALE**2 / (n * p * (1.0 - p))
    return diff, var


@dataclass
class MatchTable:
    """Win/draw/loss counts per ordered pair, kept symmetric."""

    players: list[str] = field(default_factory=list)
    counts: dict[tuple[str, str], tuple[int, int, int]] = field(default_factory=dict)

    def add_player(self, name: str) -> None:
        if name not in self.players:
            self.players.append(name)

    def add(self, a: str, b: str, w: int, d: int, l: int) -> None:
        if a == b:
            raise EloError(f"player {a} cannot play itself")
        if min(w, d, l) < 0:
            raise EloError("counts must be non-negative")
        self.add_player(a)
        self.add_player(b)
        w0, d0, l0 = self.counts.get((a, b), (0, 0, 0))
        self.counts[(a, b)] = (w0 + w, d0 + d, l0 + l)
        self.counts[(b, a)] = (l0 + l, d0 + d, w0 + w)

    def get(self, a: str, b: str) -> tuple[int, int, int]:
        return self.counts.get((a, b), (0, 0, 0))

    def pairs(self) -> list[tuple[str, str, tuple[int, int, int]]]:
        """Each played pair once, oriented by player order."""
        order = {p: k for k, p in enumerate(self.players)}
        return sorted(
            ((a, b, c) for (a, b), c in self.counts.items() if order[a] < order[b] and sum(c) > 0),
            key=lambda t: (order[t[0]], order[t[1]]),
        )

    def matched(self) -> list[str]:
        seen = {a for (a, b), c in self.counts.items() if sum(c) > 0}
        return [p for p in self.players if p in seen]

    def opponents(self, player: str) -> list[str]:
        return [b for (a, b), c in self.counts.items() if a == player and sum(c) > 0]

    def reversed(self) -> MatchTable:
        """Every result swapped (wins become losses)."""
        out = MatchTable(list(self.players))
        for a, b, (w, d, l) in self.pairs():
            out.add(a, b, l, d, w)
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, MatchTable):
            return NotImplemented
        mine = {k: v for k, v in self.counts.items() if sum(v)}
        theirs = {k: v for k, v in other.counts.items() if sum(v)}
        return set(self.players) == set(other.players) and mine == theirs

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["player_i", "player_j", "w", "d", "l"])
        for a, b, (w, d, l) in self.pairs():
            writer.writerow([a, b, w, d, l])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, source: str = "<csv>") -> MatchTable:
        table = cls()
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != ["player_i", "player_j", "w", "d", "l"]:
            raise EloError(f"{source}: expected header player_i,player_j,w,d,l")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                a, b, w, d, l = row
                table.add(a, b, int(w), int(d), int(l))
            except ValueError as exc:
                raise EloError(f"{source}:{lineno}: {exc}") from None
        return table

    def save(self, path) -> None:
        atomic_write(path, self.to_csv().encode())

    @classmethod
    def load(cls, path) -> MatchTable:
        return cls.from_csv(Path(path).read_text(), str(path))


@dataclass
class RatingVector:
    players: list[str]
    ratings: np.ndarray
    sigmas: np.ndarray

    def __getitem__(self, player: str) -> float:
        return float(self.ratings[self.players.index(player)])

    def sigma(self, player: str) -> float:
        return float(self.sigmas[self.players.index(player)])

    def as_dict(self) -> dict[str, float]:
        return {p: float(r) for p, r in zip(self.players, self.ratings)}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["player", "rating", "sigma"])
        for p, r, s in zip(self.players, self.ratings, self.sigmas):
            writer.writerow([p, f"{r:.3f}", f"{s:.3f}"])
        return buf.getvalue()


def _components(players: Sequence[str], table: MatchTable) -> list[list[str]]:
    parent = {p: p for p in players}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b, _ in table.pairs():
        if a in parent and b in parent:
            parent[find(a)] = find(b)
    groups: dict[str, list[str]] = {}
    for p in players:
        groups.setdefault(find(p), []).append(p)
    return list(groups.values())


def _fit(table: MatchTable, players: Sequence[str] | None, weighted: bool) -> RatingVector:
    players = list(players) if players is not None else table.matched() or list(table.players)
    if not players:
        raise EloError("no players to rate")
    comps = _components(players, table)
    if len(comps) > 1:
        raise DisconnectedError(comps)
    index = {p: k for k, p in enumerate(players)}
    rows, targets, weights = [], [], []
    for a, b, (w, d, l) in table.pairs():
        if a not in index or b not in index:
            continue
        diff, var = pair_estimate(w, d, l)
        row = np.zeros(len(players))
        row[index[b]], row[index[a]] = 1.0, -1.0
        rows.append(row)
        targets.append(diff)
        weights.append(1.0 / var if weighted else 1.0)
    anchor_w = ANCHOR_WEIGHT * max(weights, default=1.0)
    rows.append(np.ones(len(players)))
    targets.append(ANCHOR_RATING * len(players))
    weights.append(anchor_w)
    A = np.array(rows)
    y = np.array(targets)
    sw = np.sqrt(np.array(weights))
    sol, _, rank, _ = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)
    if rank < len(players):
        raise EloError("rating system is singular")
    if weighted:
        # anchor enters as a near-exact constraint, so its own term is dropped from the covariance
        fisher = (A[:-1] * np.array(weights[:-1])[:, None]).T @ A[:-1]
        ones = np.ones((len(players), 1)) / math.sqrt(len(players))
        pinv = np.linalg.pinv(fisher + ones @ ones.T) - ones @ ones.T
        sigmas = np.sqrt(np.clip(np.diag(pinv), 0.0, None))
    else:
        resid = A[:-1] @ sol - y[:-1]
        dof = max(len(rows) - 1 - (len(players) - 1), 1)
        s2 = float(resid @ resid) / dof
        fisher = A[:-1].T @ A[:-1]
        ones = np.ones((len(players), 1)) / math.sqrt(len(players))
        pinv = np.linalg.pinv(fisher + ones @ ones.T) - ones @ ones.T
        sigmas = np.sqrt(np.clip(np.diag(pinv) * s2, 0.0, None))
    return RatingVector(players, sol, sigmas)


def fit_ratings_ols(table: MatchTable, players: Sequence[str] | None = None) -> RatingVector:
    """Unweighted fit; a rough estimate for matchmaking."""
    return _fit(table, players, weighted=False)


def fit_ratings_wls(table: MatchTable, players: Sequence[str] | None = None) -> RatingVector:
    """Inverse-variance weighted fit with standard deviations from the solution covariance."""
    return _fit(table, players, weighted=True)


PlayFn = Callable[[str, str, int], tuple[int, int, int]]


def closest_opponent(table: MatchTable, player: str) -> str:
    """Matched player whose current rating is nearest to ``player``'s (1000 if unrated)."""
    pool = [p for p in table.matched() if p != player]
    if not pool:
        raise EloError("no rated opponents to match against")
    members = table.matched()
    ratings = fit_ratings_ols(table, members).as_dict() if len(members) > 1 else {members[0]: ANCHOR_RATING}
    own = ratings.get(player, ANCHOR_RATING)
    return min(pool, key=lambda p: (abs(ratings[p] - own), pool.index(p)))


def run_matchmaking(table: MatchTable, unmatched: Iterable[str], play: PlayFn, games: int = 60,
                    rounds: int = 5) -> MatchTable:
    """Each unmatched player plays ``rounds`` matches against the closest-rated opponent.

    ``play(player, opponent, games)`` returns ``player``'s (wins, draws, losses).
    """
    for player in unmatched:
        table.add_player(player)
        for _ in range(rounds):
            opponent = closest_opponent(table, player)
            w, d, l = play(player, opponent, games)
            table.add(player, opponent, w, d, l)
    return table


def round_robin(table: MatchTable, players: Sequence[str], play: PlayFn, games: int = 60) -> MatchTable:
    for i, a in enumerate(players):
        for b in players[i + 1:]:
            w, d, l = play(a, b, games)
            table.add(a, b, w, d, l)
    return table


def ingest_pgn(files: Iterable) -> MatchTable:
    """Match table from PGN files whose White/Black tags name the players."""
    table = MatchTable()
    for path in files:
        text = Path(path).read_text()
        for game in read_pgn(text, str(path)):
            white, black = game.tags.get("White"), game.tags.get("Black")
            if not white or not black:
                raise PgnError(f"{path}:{game.line}: game without White/Black tags")
            result = {"1-0": (1, 0, 0), "0-1": (0, 0, 1), "1/2-1/2": (0, 1, 0)}.get(game.result)
            if result is None:
                raise PgnError(f"{path}:{game.line}: game {white} vs {black} has result {game.result!r}")
            table.add(white, black, *result)
    return table


def export_match_pgn(records, path) -> None:
    from .notation import emit_pgn

    atomic_write(path, "\n".join(emit_pgn(r) for r in records).encode())
