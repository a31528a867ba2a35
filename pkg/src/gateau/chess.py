"""Chess rules for the standard 8x8 game and 5x5 Gardner chess.

Boards are flat tuples indexed ``rank * side + file`` with rank 0 on White's
side. Pieces are signed ints: positive for White, negative for Black, and the
absolute value is the piece kind.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

WHITE = 1
BLACK = -1

PAWN, KNIGHT, BISHOP, ROOK, QUEEN, KING = range(1, 7)
PIECE_SYMBOLS = ".pnbrqk"

# (file delta, rank delta) in N, NE, E, SE, S, SW, W, NW order
DIRECTIONS = ((0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1))
KNIGHT_JUMPS = ((1, 2), (2, 1), (2, -1), (1, -2), (-1, -2), (-2, -1), (-2, 1), (-1, 2))

RESULT_WHITE = "white_win"
RESULT_BLACK = "black_win"
RESULT_DRAW = "draw"


class IllegalMoveError(ValueError):
    pass


@dataclass(frozen=True)
class Variant:
    name: str
    board_side: int

    @property
    def move_type_count(self) -> int:
        # sliding moves, knight jumps, underpromotions
        return 8 * (self.board_side - 1) + 8 + 9

    @property
    def node_count(self) -> int:
        return self.board_side * self.board_side

    @property
    def action_count(self) -> int:
        return self.node_count * self.move_type_count

    @property
    def start_fen(self) -> str:
        return START_FENS[self.name]


CHESS = Variant("chess", 8)
GARDNER = Variant("gardner", 5)

START_FENS = {
    "chess": "rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1",
    "gardner": "rnbqk/ppppp/5/PPPPP/RNBQK w - - 0 1",
}

_VARIANT_ALIASES = {
    "chess": CHESS,
    "standard": CHESS,
    "8x8": CHESS,
    "gardner": GARDNER,
    "5x5": GARDNER,
}


def get_variant(name: str | Variant) -> Variant:
    if isinstance(name, Variant):
        return name
    try:
        return _VARIANT_ALIASES[name.lower()]
    except KeyError:
        raise ValueError(f"unsupported variant {name!r}") from None


class Move(NamedTuple):
    from_sq: int
    to_sq: int
    promotion: int | None = None
    special: str | None = None  # "castle", "en_passant" or "double_push"

    def uci(self, side: int = 8) -> str:
        text = square_name(self.from_sq, side) + square_name(self.to_sq, side)
        if self.promotion:
            text += PIECE_SYMBOLS[self.promotion]
        return text


class GameOutcome(NamedTuple):
    result: str
    reason: str

    @property
    def white_score(self) -> float:
        return {RESULT_WHITE: 1.0, RESULT_BLACK: 0.0}.get(self.result, 0.5)

    @property
    def pgn_result(self) -> str:
        return {RESULT_WHITE: "1-0", RESULT_BLACK: "0-1"}.get(self.result, "1/2-1/2")


def square_name(sq: int, side: int = 8) -> str:
    rank, file = divmod(sq, side)
    return "abcdefgh"[file] + str(rank + 1)


def parse_square(name: str, side: int = 8) -> int:
    if len(name) != 2 or name[0] not in "abcdefgh"[:side] or not name[1].isdigit():
        raise ValueError(f"bad square {name!r}")
    rank = int(name[1]) - 1
    if not 0 <= rank < side:
        raise ValueError(f"bad square {name!r}")
    return rank * side + "abcdefgh".index(name[0])


class _Tables:
    """Precomputed geometry for one board size."""

    def __init__(self, side: int):
        self.side = side
        n = side * side

        def on_board(f: int, r: int) -> bool:
            return 0 <= f < side and 0 <= r < side

        self.rays: list[tuple[tuple[int, ...], ...]] = []
        self.knight: list[tuple[int, ...]] = []
        self.king: list[tuple[int, ...]] = []
        for sq in range(n):
            r, f = divmod(sq, side)
            rays = []
            for df, dr in DIRECTIONS:
                ray = []
                ff, rr = f + df, r + dr
                while on_board(ff, rr):
                    ray.append(rr * side + ff)
                    ff, rr = ff + df, rr + dr
                rays.append(tuple(ray))
            self.rays.append(tuple(rays))
            self.knight.append(tuple(
                (r + dr) * side + f + df for df, dr in KNIGHT_JUMPS if on_board(f + df, r + dr)))
            self.king.append(tuple(
                (r + dr) * side + f + df for df, dr in DIRECTIONS if on_board(f + df, r + dr)))
        self.orth_rays = [tuple(ray for d, ray in enumerate(rs) if d % 2 == 0 and ray) for rs in self.rays]
        self.diag_rays = [tuple(ray for d, ray in enumerate(rs) if d % 2 == 1 and ray) for rs in self.rays]
        # pawn_from[color][sq]: squares from which a pawn of `color` attacks sq
        self.pawn_from = {WHITE: [], BLACK: []}
        self.pawn_caps = {WHITE: [], BLACK: []}
        for sq in range(n):
            r, f = divmod(sq, side)
            for color in (WHITE, BLACK):
                self.pawn_from[color].append(tuple(
                    (r - color) * side + f + df for df in (-1, 1) if on_board(f + df, r - color)))
                self.pawn_caps[color].append(tuple(
                    (r + color) * side + f + df for df in (-1, 1) if on_board(f + df, r + color)))


@lru_cache(maxsize=None)
def _tables(side: int) -> _Tables:
    return _Tables(side)


def _attacked(board, sq: int, by: int, t: _Tables) -> bool:
    """True if any piece of color ``by`` attacks ``sq``."""
    pawn = PAWN * by
    for s in t.pawn_from[by][sq]:
        if board[s] == pawn:
            return True
    knight = KNIGHT * by
    for s in t.knight[sq]:
        if board[s] == knight:
            return True
    king = KING * by
    for s in t.king[sq]:
        if board[s] == king:
            return True
    queen = QUEEN * by
    rook = ROOK * by
    for ray in t.orth_rays[sq]:
        for s in ray:
            v = board[s]
            if v:
                if v == rook or v == queen:
                    return True
                break
    bishop = BISHOP * by
    for ray in t.diag_rays[sq]:
        for s in ray:
            v = board[s]
            if v:
                if v == bishop or v == queen:
                    return True
                break
    return False


# castling: (right index, color, king from, king to, rook from, rook to, must be empty, must be safe)
_CASTLES = (
    (0, WHITE, 4, 6, 7, 5, (5, 6), (4, 5, 6)),
    (1, WHITE, 4, 2, 0, 3, (1, 2, 3), (4, 3, 2)),
    (2, BLACK, 60, 62, 63, 61, (61, 62), (60, 61, 62)),
    (3, BLACK, 60, 58, 56, 59, (57, 58, 59), (60, 59, 58)),
)
# corner square -> castling right lost when it is vacated or captured
_ROOK_CORNERS = {7: 0, 0: 1, 63: 2, 56: 3}


def _make(b: list, m: Move, us: int, side: int) -> None:
    piece = b[m.from_sq]
    b[m.from_sq] = 0
    b[m.to_sq] = m.promotion * us if m.promotion else piece
    if m.special == "en_passant":
        b[m.to_sq - us * side] = 0
    elif m.special == "castle":
        for _, color, kf, kt, rf, rt, _, _ in _CASTLES:
            if color == us and kf == m.from_sq and kt == m.to_sq:
                b[rt] = b[rf]
                b[rf] = 0
                break


@dataclass(frozen=True)
class Position:
    """Immutable game state.

    ``keys`` holds repetition keys of earlier positions since the last
    irreversible move; ``past`` holds ``(board, repetitions)`` for up to seven
    preceding positions, most recent first. Neither takes part in equality.
    """

    variant: Variant
    board: tuple[int, ...]
    turn: int = WHITE
    castling: tuple[bool, bool, bool, bool] = (False, False, False, False)
    ep_square: int | None = None
    halfmove_clock: int = 0
    fullmove_number: int = 1
    keys: tuple = field(default=(), compare=False, repr=False)
    past: tuple = field(default=(), compare=False, repr=False)
    _legal: list | None = field(default=None, compare=False, repr=False)

    @classmethod
    def initial(cls, variant: Variant | str = CHESS) -> Position:
        from .notation import parse_fen

        variant = get_variant(variant)
        return parse_fen(variant.start_fen, variant)

    @property
    def side(self) -> int:
        return self.variant.board_side

    @property
    def key(self) -> tuple:
        return (self.board, self.turn, self.castling, self.ep_square)

    @property
    def ply(self) -> int:
        return 2 * (self.fullmove_number - 1) + (self.turn == BLACK)

    def repetitions(self) -> int:
        """Number of earlier occurrences of this exact position."""
        return self.keys.count(self.key) if self.keys else 0

    def king_square(self, color: int) -> int:
        return self.board.index(KING * color)

    def in_check(self) -> bool:
        t = _tables(self.side)
        return _attacked(self.board, self.king_square(self.turn), -self.turn, t)

    def legal_moves(self) -> list[Move]:
        if self._legal is None:
            object.__setattr__(self, "_legal", _generate_legal(self))
        return self._legal

    def __str__(self) -> str:
        side = self.side
        rows = []
        for r in range(side - 1, -1, -1):
            row = ""
            for f in range(side):
                v = self.board[r * side + f]
                c = PIECE_SYMBOLS[abs(v)]
                row += c.upper() if v > 0 else c
            rows.append(row)
        return "\n".join(rows)


def _pseudo_moves(p: Position, t: _Tables) -> list[Move]:
    board = p.board
    us = p.turn
    side = t.side
    moves: list[Move] = []
    append = moves.append
    last_rank = side - 1 if us == WHITE else 0
    start_rank = 1 if us == WHITE else side - 2
    double_push = side == 8
    for sq, v in enumerate(board):
        v *= us
        if v <= 0:
            continue
        if v == PAWN:
            to = sq + us * side
            rank_to = to // side
            if board[to] == 0:
                if rank_to == last_rank:
                    for promo in (QUEEN, ROOK, BISHOP, KNIGHT):
                        append(Move(sq, to, promo))
                else:
                    append(Move(sq, to))
                    if double_push and sq // side == start_rank:
                        to2 = to + us * side
                        if board[to2] == 0:
                            append(Move(sq, to2, None, "double_push"))
            for to in t.pawn_caps[us][sq]:
                target = board[to] * us
                if target < 0:
                    if rank_to == last_rank:
                        for promo in (QUEEN, ROOK, BISHOP, KNIGHT):
                            append(Move(sq, to, promo))
                    else:
                        append(Move(sq, to))
                elif to == p.ep_square:
                    append(Move(sq, to, None, "en_passant"))
        elif v == KNIGHT:
            for to in t.knight[sq]:
                if board[to] * us <= 0:
                    append(Move(sq, to))
        elif v == KING:
            for to in t.king[sq]:
                if board[to] * us <= 0:
                    append(Move(sq, to))
        else:
            if v == BISHOP:
                rays = t.diag_rays[sq]
            elif v == ROOK:
                rays = t.orth_rays[sq]
            else:
                rays = t.rays[sq]
            for ray in rays:
                for to in ray:
                    target = board[to] * us
                    if target > 0:
                        break
                    append(Move(sq, to))
                    if target < 0:
                        break
    if side == 8 and any(p.castling):
        for right, color, kf, kt, rf, _, empty, safe in _CASTLES:
            if color != us or not p.castling[right]:
                continue
            if board[kf] != KING * us or board[rf] != ROOK * us:
                continue
            if any(board[s] for s in empty):
                continue
            if any(_attacked(board, s, -us, t) for s in safe):
                continue
            append(Move(kf, kt, None, "castle"))
    return moves


def _generate_legal(p: Position) -> list[Move]:
    t = _tables(p.side)
    board = p.board
    us = p.turn
    side = t.side
    king = KING * us
    king_sq = board.index(king)
    legal = []
    for m in _pseudo_moves(p, t):
        b = list(board)
        _make(b, m, us, side)
        ksq = m.to_sq if board[m.from_sq] == king else king_sq
        if not _attacked(b, ksq, -us, t):
            legal.append(m)
    return legal


def legal_moves(p: Position) -> list[Move]:
    """All legal moves, in generation order."""
    return list(p.legal_moves())


def apply_move(p: Position, m: Move, validate: bool = True) -> Position:
    """Return the position after ``m``.

    Raises IllegalMoveError when ``validate`` is set and ``m`` is not legal.
    """
    if validate and m not in p.legal_moves():
        raise IllegalMoveError(f"illegal move {m.uci(p.side)}")
    side = p.side
    us = p.turn
    b = list(p.board)
    piece = b[m.from_sq]
    captured = b[m.to_sq]
    _make(b, m, us, side)

    castling = p.castling
    if any(castling):
        rights = list(castling)
        if abs(piece) == KING:
            if us == WHITE:
                rights[0] = rights[1] = False
            else:
                rights[2] = rights[3] = False
        for sq in (m.from_sq, m.to_sq):
            if sq in _ROOK_CORNERS:
                rights[_ROOK_CORNERS[sq]] = False
        castling = tuple(rights)

    irreversible = abs(piece) == PAWN or captured != 0
    return Position(
        variant=p.variant,
        board=tuple(b),
        turn=-us,
        castling=castling,
        ep_square=m.from_sq + us * side if m.special == "double_push" else None,
        halfmove_clock=0 if irreversible else p.halfmove_clock + 1,
        fullmove_number=p.fullmove_number + (us == BLACK),
        keys=() if irreversible else p.keys + (p.key,),
        past=((p.board, p.repetitions()),) + p.past[:6],
    )


def insufficient_material(p: Position) -> bool:
    """K vs K or K + one minor piece vs K."""
    others = [abs(v) for v in p.board if v and abs(v) != KING]
    return not others or (len(others) == 1 and others[0] in (KNIGHT, BISHOP))


def status(p: Position, max_plies: int | None = None) -> GameOutcome | None:
    """Outcome of the game at ``p``, or None while it is ongoing."""
    if not p.legal_moves():
        if p.in_check():
            return GameOutcome(RESULT_BLACK if p.turn == WHITE else RESULT_WHITE, "checkmate")
        return GameOutcome(RESULT_DRAW, "stalemate")
    if insufficient_material(p):
        return GameOutcome(RESULT_DRAW, "insufficient_material")
    if p.halfmove_clock >= 100:
        return GameOutcome(RESULT_DRAW, "fifty_move")
    if p.repetitions() >= 2:
        return GameOutcome(RESULT_DRAW, "threefold")
    if max_plies is not None and p.ply >= max_plies:
        return GameOutcome(RESULT_DRAW, "truncation")
    return None


def terminal_value(outcome: GameOutcome, turn: int) -> float:
    """Outcome value from the perspective of the side to move."""
    if outcome.result == RESULT_DRAW:
        return 0.0
    winner = WHITE if outcome.result == RESULT_WHITE else BLACK
    return 1.0 if winner == turn else -1.0


def perft(p: Position, depth: int) -> int:
    if depth == 0:
        return 1
    moves = p.legal_moves()
    if depth == 1:
        return len(moves)
    return sum(perft(apply_move(p, m, validate=False), depth - 1) for m in moves)


def replay(start: Position, moves) -> list[Position]:
    """Positions visited by playing ``moves`` from ``start`` (inclusive)."""
    out = [start]
    for m in moves:
        out.append(apply_move(out[-1], m))
    return out
