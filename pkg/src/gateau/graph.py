"""Static move graphs and per-position node/edge features.

Everything here works in the canonical orientation: the board is flipped
vertically when Black is to move, so the side to move always plays "up" and
its pieces occupy the first six piece channels. Node ``i`` is the square at
canonical rank ``i // side`` and file ``i % side``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .chess import (
    BISHOP,
    BLACK,
    DIRECTIONS,
    KING,
    KNIGHT,
    KNIGHT_JUMPS,
    PAWN,
    QUEEN,
    ROOK,
    WHITE,
    Move,
    Position,
    Variant,
    get_variant,
)

NODE_FEATURES = 119
EDGE_FEATURES = 15
HISTORY = 7

UNDERPROMOTION_FILES = (-1, 0, 1)  # capture-left, push, capture-right
UNDERPROMOTION_PIECES = (KNIGHT, BISHOP, ROOK)

_PIECES = "PNBRQK"
NODE_FEATURE_NAMES = (
    [f"piece_{c}{p}" for c in ("own", "opp") for p in _PIECES]
    + ["repeated_1", "repeated_2"]
    + [f"hist{t}_{name}" for t in range(1, HISTORY + 1)
       for name in [f"piece_{c}{p}" for c in ("own", "opp") for p in _PIECES] + ["repeated_1", "repeated_2"]]
    + ["current_player", "move_count", "castle_own_k", "castle_own_q", "castle_opp_k", "castle_opp_q",
       "no_progress"]
)
EDGE_FEATURE_NAMES = (
    "legal", "move_left", "move_up",
    "promote_N", "promote_B", "promote_R", "promote_Q",
    "pawn_white", "pawn_black",
    "piece_N", "piece_B", "piece_R", "piece_Q",
    "king_white", "king_black",
)
assert len(NODE_FEATURE_NAMES) == NODE_FEATURES and len(EDGE_FEATURE_NAMES) == EDGE_FEATURES

# column offsets inside the node feature vector
_REP = 12
_HIST = 14
_PLAYER = 14 + 14 * HISTORY
_MOVES = _PLAYER + 1
_CASTLE = _PLAYER + 2
_NOPROGRESS = _PLAYER + 6


class VariantMismatchError(ValueError):
    pass


def move_types(side: int) -> list[tuple[int, int, str, int]]:
    """Canonical move-type table: (file delta, rank delta, kind, detail).

    ``detail`` is the direction index for sliding moves, the jump index for
    knight moves and the promotion piece for underpromotions.
    """
    types = []
    for d, (df, dr) in enumerate(DIRECTIONS):
        for dist in range(1, side):
            types.append((df * dist, dr * dist, "slide", d))
    for j, (df, dr) in enumerate(KNIGHT_JUMPS):
        types.append((df, dr, "knight", j))
    for df in UNDERPROMOTION_FILES:
        for piece in UNDERPROMOTION_PIECES:
            types.append((df, 1, "underpromotion", piece))
    return types


@dataclass(frozen=True, eq=False)
class MoveGraph:
    """Directed multigraph of geometrically possible moves for one board size.

    Edges are ordered by source node then move type, so ``src`` is sorted.
    ``static_features`` holds every edge feature except legality.
    """

    variant: Variant
    src: np.ndarray
    dst: np.ndarray
    move_type: np.ndarray
    action: np.ndarray
    action_to_edge: np.ndarray
    static_features: np.ndarray
    kinds: tuple[str, ...]

    @property
    def node_count(self) -> int:
        return self.variant.node_count

    @property
    def edge_count(self) -> int:
        return len(self.src)

    def edges(self):
        return list(zip(self.src.tolist(), self.dst.tolist(), self.move_type.tolist(), self.action.tolist()))


@lru_cache(maxsize=None)
def build_move_graph(variant: Variant | str) -> MoveGraph:
    variant = get_variant(variant)
    side = variant.board_side
    mtc = variant.move_type_count
    types = move_types(side)
    assert len(types) == mtc

    src, dst, mt, feats, kinds = [], [], [], [], []
    for node in range(side * side):
        rank, file = divmod(node, side)
        for t, (df, dr, kind, detail) in enumerate(types):
            f2, r2 = file + df, rank + dr
            if not (0 <= f2 < side and 0 <= r2 < side):
                continue
            if kind == "underpromotion" and rank != side - 2:
                continue
            src.append(node)
            dst.append(r2 * side + f2)
            mt.append(t)
            kinds.append(kind)
            feats.append(_static_edge_features(side, rank, file, df, dr, kind, detail))

    src_a = np.array(src, dtype=np.int64)
    mt_a = np.array(mt, dtype=np.int64)
    action = src_a * mtc + mt_a
    action_to_edge = np.full(variant.action_count, -1, dtype=np.int64)
    action_to_edge[action] = np.arange(len(src))
    graph = MoveGraph(
        variant=variant,
        src=src_a,
        dst=np.array(dst, dtype=np.int64),
        move_type=mt_a,
        action=action,
        action_to_edge=action_to_edge,
        static_features=np.array(feats, dtype=np.float32),
        kinds=tuple(kinds),
    )
    for arr in (graph.src, graph.dst, graph.move_type, graph.action, graph.action_to_edge, graph.static_features):
        arr.flags.writeable = False
    return graph


def _static_edge_features(side, rank, file, df, dr, kind, detail) -> list[float]:
    f = [0.0] * (EDGE_FEATURES - 1)  # legality is prepended per position
    f[0] = float(-df)  # squares to the left
    f[1] = float(dr)  # squares up
    pawn_ranks = range(1, side - 1)
    if kind == "underpromotion":
        f[2 + UNDERPROMOTION_PIECES.index(detail)] = 1.0
        f[6] = 1.0
        return f
    if kind == "knight":
        f[8] = 1.0
        return f
    dist = max(abs(df), abs(dr))
    diagonal = df != 0 and dr != 0
    if diagonal:
        f[9] = 1.0
    else:
        f[10] = 1.0
    f[11] = 1.0
    if dist == 1 and dr == 1 and rank == side - 2:
        f[5] = 1.0  # promotes to a queen by default
    if rank in pawn_ranks:
        if (df == 0 and dr == 1) or (dist == 1 and dr == 1 and diagonal):
            f[6] = 1.0
        if (df == 0 and dr == -1) or (dist == 1 and dr == -1 and diagonal):
            f[7] = 1.0
    if side == 8 and df == 0 and dr == 2 and rank == 1:
        f[6] = 1.0
    if side == 8 and df == 0 and dr == -2 and rank == side - 2:
        f[7] = 1.0
    if dist == 1:
        f[12] = f[13] = 1.0
    if side == 8 and dr == 0 and abs(df) == 2 and file == 4:
        if rank == 0:
            f[12] = 1.0
        elif rank == side - 1:
            f[13] = 1.0
    return f


def canonical_square(sq: int, side: int, turn: int) -> int:
    if turn == WHITE:
        return sq
    rank, file = divmod(sq, side)
    return (side - 1 - rank) * side + file


def action_of_move(m: Move, variant: Variant | str, turn: int = WHITE) -> int:
    """Action index of a move made by ``turn``; queen promotions share the sliding edge."""
    return _action_of_move(m, get_variant(variant), turn)


@lru_cache(maxsize=1 << 16)
def _action_of_move(m: Move, variant: Variant, turn: int) -> int:
    side = variant.board_side
    src = canonical_square(m.from_sq, side, turn)
    dst = canonical_square(m.to_sq, side, turn)
    r1, f1 = divmod(src, side)
    r2, f2 = divmod(dst, side)
    df, dr = f2 - f1, r2 - r1
    mtc = variant.move_type_count
    if m.promotion in UNDERPROMOTION_PIECES:
        if dr != 1 or df not in UNDERPROMOTION_FILES:
            raise ValueError(f"not an underpromotion geometry: {m}")
        t = 8 * (side - 1) + 8 + 3 * UNDERPROMOTION_FILES.index(df) + UNDERPROMOTION_PIECES.index(m.promotion)
        return src * mtc + t
    if (df, dr) in KNIGHT_JUMPS:
        return src * mtc + 8 * (side - 1) + KNIGHT_JUMPS.index((df, dr))
    dist = max(abs(df), abs(dr))
    if dist == 0 or (df != 0 and dr != 0 and abs(df) != abs(dr)):
        raise ValueError(f"move {m} has no action")
    direction = DIRECTIONS.index((np.sign(df), np.sign(dr)))
    return src * mtc + direction * (side - 1) + dist - 1


def move_of_action(a: int, p: Position) -> Move:
    """Resolve an action index to a concrete move in ``p`` (legality not checked)."""
    variant = p.variant
    side = variant.board_side
    if not 0 <= a < variant.action_count:
        raise ValueError(f"action {a} out of range")
    src, t = divmod(a, variant.move_type_count)
    df, dr, kind, detail = move_types(side)[t]
    rank, file = divmod(src, side)
    f2, r2 = file + df, rank + dr
    if not (0 <= f2 < side and 0 <= r2 < side) or (kind == "underpromotion" and rank != side - 2):
        raise ValueError(f"action {a} leaves the board")
    turn = p.turn
    from_sq = canonical_square(src, side, turn)
    to_sq = canonical_square(r2 * side + f2, side, turn)
    piece = abs(p.board[from_sq])
    if kind == "underpromotion":
        return Move(from_sq, to_sq, detail)
    if piece == PAWN:
        if r2 == side - 1:
            return Move(from_sq, to_sq, QUEEN)
        if abs(dr) == 2:
            return Move(from_sq, to_sq, None, "double_push")
        if df != 0 and to_sq == p.ep_square:
            return Move(from_sq, to_sq, None, "en_passant")
    if piece == KING and abs(df) == 2:
        return Move(from_sq, to_sq, None, "castle")
    return Move(from_sq, to_sq)


@dataclass(frozen=True, eq=False)
class FeatureSet:
    node_features: np.ndarray
    edge_features: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, FeatureSet)
            and np.array_equal(self.node_features, other.node_features)
            and np.array_equal(self.edge_features, other.edge_features)
        )


@lru_cache(maxsize=None)
def _flip_index(side: int) -> np.ndarray:
    idx = np.arange(side * side).reshape(side, side)[::-1].reshape(-1)
    idx.flags.writeable = False
    return idx


def _piece_planes(out: np.ndarray, board, turn: int, side: int) -> None:
    arr = np.asarray(board, dtype=np.int64)
    if turn == BLACK:
        arr = -arr[_flip_index(side)]
    nodes = np.flatnonzero(arr)
    vals = arr[nodes]
    out[nodes, np.where(vals > 0, vals - 1, 5 - vals)] = 1.0


def legal_edges(p: Position, graph: MoveGraph) -> np.ndarray:
    """Edge index of every legal move, aligned with ``p.legal_moves()``."""
    actions = [action_of_move(m, graph.variant, p.turn) for m in p.legal_moves()]
    return graph.action_to_edge[np.array(actions, dtype=np.int64)]


def encode_position(p: Position, graph: MoveGraph, dtype=np.float32) -> FeatureSet:
    if p.variant != graph.variant:
        raise VariantMismatchError(f"position is {p.variant.name}, graph is {graph.variant.name}")
    side = p.side
    n = side * side
    turn = p.turn
    nodes = np.zeros((n, NODE_FEATURES), dtype=dtype)

    _piece_planes(nodes, p.board, turn, side)
    reps = p.repetitions()
    nodes[:, _REP] = reps >= 1
    nodes[:, _REP + 1] = reps >= 2
    for t, (board, r) in enumerate(p.past[:HISTORY]):
        base = _HIST + 14 * t
        _piece_planes(nodes[:, base:base + 12], board, turn, side)
        nodes[:, base + 12] = r >= 1
        nodes[:, base + 13] = r >= 2

    nodes[:, _PLAYER] = 1.0 if turn == WHITE else 0.0
    nodes[:, _MOVES] = min(p.fullmove_number / 100.0, 1.0)
    c = p.castling
    own = (c[0], c[1]) if turn == WHITE else (c[2], c[3])
    opp = (c[2], c[3]) if turn == WHITE else (c[0], c[1])
    nodes[:, _CASTLE:_CASTLE + 4] = np.array(own + opp, dtype=dtype)
    nodes[:, _NOPROGRESS] = min(p.halfmove_clock / 100.0, 1.0)

    edges = np.empty((graph.edge_count, EDGE_FEATURES), dtype=dtype)
    edges[:, 1:] = graph.static_features
    edges[:, 0] = 0.0
    if p.legal_moves():
        edges[legal_edges(p, graph), 0] = 1.0
    return FeatureSet(nodes, edges)


def feature_csv_rows(fs: FeatureSet, graph: MoveGraph):
    """Rows for the node and edge CSV dumps: (header, rows) pairs."""
    side = graph.variant.board_side
    node_header = ["node", "square"] + list(NODE_FEATURE_NAMES)
    node_rows = []
    for i, row in enumerate(fs.node_features):
        rank, file = divmod(i, side)
        node_rows.append([i, "abcdefgh"[file] + str(rank + 1)] + [_fmt(v) for v in row])
    edge_header = ["edge", "src", "dst", "move_type", "action"] + list(EDGE_FEATURE_NAMES)
    edge_rows = []
    for e, (s, d, t, a) in enumerate(graph.edges()):
        edge_rows.append([e, s, d, t, a] + [_fmt(v) for v in fs.edge_features[e]])
    return (node_header, node_rows), (edge_header, edge_rows)


def _fmt(v: float) -> str:
    return f"{float(v):g}"
