"""FEN, SAN and PGN text formats for both board sizes."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .chess import (
    BLACK,
    KING,
    PAWN,
    PIECE_SYMBOLS,
    WHITE,
    GameOutcome,
    Move,
    Position,
    Variant,
    _attacked,
    _tables,
    apply_move,
    get_variant,
    parse_square,
    square_name,
)


class FenError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class PgnError(ValueError):
    pass


_CASTLE_FLAGS = "KQkq"


def parse_fen(text: str, variant: Variant | str | None = None) -> Position:
    """Parse a FEN string; the variant is inferred from the rank count if not given."""
    if text.strip() == "startpos":
        text = get_variant(variant or "chess").start_fen
    fields = text.split()
    if len(fields) != 6:
        raise FenError(f"expected 6 fields, got {len(fields)}", 0)
    offsets = []
    pos = 0
    for f in fields:
        pos = text.index(f, pos)
        offsets.append(pos)
        pos += len(f)

    ranks = fields[0].split("/")
    if variant is None:
        if len(ranks) not in (5, 8):
            raise FenError(f"cannot infer variant from {len(ranks)} ranks", offsets[0])
        variant = get_variant("gardner" if len(ranks) == 5 else "chess")
    variant = get_variant(variant)
    side = variant.board_side
    if len(ranks) != side:
        raise FenError(f"{variant.name} needs {side} ranks, got {len(ranks)}", offsets[0])

    board = [0] * (side * side)
    cursor = offsets[0]
    for i, row in enumerate(ranks):
        rank = side - 1 - i
        file = 0
        for ch in row:
            if ch.isdigit():
                file += int(ch)
            else:
                kind = PIECE_SYMBOLS.find(ch.lower())
                if kind <= 0:
                    raise FenError(f"bad piece {ch!r}", cursor)
                if file >= side:
                    raise FenError("rank overflows the board", cursor)
                if kind == PAWN and rank in (0, side - 1):
                    raise FenError("pawn on a back rank", cursor)
                board[rank * side + file] = kind if ch.isupper() else -kind
                file += 1
            cursor += 1
        if file != side:
            raise FenError(f"rank has {file} files, expected {side}", cursor - 1)
        cursor += 1

    if fields[1] not in ("w", "b"):
        raise FenError("side to move must be 'w' or 'b'", offsets[1])
    turn = WHITE if fields[1] == "w" else BLACK

    if fields[2] == "-":
        castling = (False, False, False, False)
    else:
        if side != 8:
            raise FenError("castling does not exist on this board", offsets[2])
        if any(c not in _CASTLE_FLAGS for c in fields[2]) or len(set(fields[2])) != len(fields[2]):
            raise FenError("bad castling field", offsets[2])
        castling = tuple(c in fields[2] for c in _CASTLE_FLAGS)

    if fields[3] == "-":
        ep = None
    else:
        if side != 8:
            raise FenError("en passant does not exist on this board", offsets[3])
        try:
            ep = parse_square(fields[3], side)
        except ValueError:
            raise FenError("bad en passant square", offsets[3]) from None
        if ep // side != (5 if turn == WHITE else 2):
            raise FenError("en passant square on the wrong rank", offsets[3])

    try:
        halfmove = int(fields[4])
        fullmove = int(fields[5])
    except ValueError:
        raise FenError("move counters must be integers", offsets[4]) from None
    if halfmove < 0 or fullmove < 1:
        raise FenError("move counters out of range", offsets[4])

    for color in (WHITE, BLACK):
        if board.count(KING * color) != 1:
            raise FenError("each side needs exactly one king", offsets[0])
    t = _tables(side)
    if _attacked(board, board.index(KING * -turn), turn, t):
        raise FenError("side not to move is in check", offsets[1])

    return Position(variant, tuple(board), turn, castling, ep, halfmove, fullmove)


def board_fen(board, side: int) -> str:
    rows = []
    for rank in range(side - 1, -1, -1):
        row = ""
        empty = 0
        for file in range(side):
            v = board[rank * side + file]
            if v == 0:
                empty += 1
                continue
            if empty:
                row += str(empty)
                empty = 0
            c = PIECE_SYMBOLS[abs(v)]
            row += c.upper() if v > 0 else c
        if empty:
            row += str(empty)
        rows.append(row)
    return "/".join(rows)


def parse_board(text: str, side: int) -> tuple[int, ...]:
    """Inverse of board_fen for the placement field alone."""
    board = [0] * (side * side)
    for i, row in enumerate(text.split("/")):
        rank = side - 1 - i
        file = 0
        for ch in row:
            if ch.isdigit():
                file += int(ch)
            else:
                kind = PIECE_SYMBOLS.index(ch.lower())
                board[rank * side + file] = kind if ch.isupper() else -kind
                file += 1
    return tuple(board)


def emit_fen(p: Position) -> str:
    castling = "".join(c for c, ok in zip(_CASTLE_FLAGS, p.castling) if ok) or "-"
    ep = square_name(p.ep_square, p.side) if p.ep_square is not None else "-"
    turn = "w" if p.turn == WHITE else "b"
    return f"{board_fen(p.board, p.side)} {turn} {castling} {ep} {p.halfmove_clock} {p.fullmove_number}"


def san(p: Position, m: Move) -> str:
    """Standard algebraic notation for a legal move, with check suffix."""
    side = p.side
    piece = abs(p.board[m.from_sq])
    if m.special == "castle":
        text = "O-O" if m.to_sq > m.from_sq else "O-O-O"
    else:
        capture = p.board[m.to_sq] != 0 or m.special == "en_passant"
        dest = square_name(m.to_sq, side)
        if piece == PAWN:
            text = ""
            if capture:
                text = square_name(m.from_sq, side)[0] + "x"
            text += dest
            if m.promotion:
                text += "=" + PIECE_SYMBOLS[m.promotion].upper()
        else:
            text = PIECE_SYMBOLS[piece].upper()
            rivals = [
                o for o in p.legal_moves()
                if o.to_sq == m.to_sq and o.from_sq != m.from_sq and abs(p.board[o.from_sq]) == piece
            ]
            if rivals:
                file = m.from_sq % side
                rank = m.from_sq // side
                if all(o.from_sq % side != file for o in rivals):
                    text += square_name(m.from_sq, side)[0]
                elif all(o.from_sq // side != rank for o in rivals):
                    text += square_name(m.from_sq, side)[1]
                else:
                    text += square_name(m.from_sq, side)
            if capture:
                text += "x"
            text += dest
    after = apply_move(p, m, validate=False)
    if after.in_check():
        text += "#" if not after.legal_moves() else "+"
    return text


_SAN_SUFFIX = re.compile(r"[+#!?]+$")


def parse_san(p: Position, text: str) -> Move:
    wanted = _SAN_SUFFIX.sub("", text.strip()).replace("0-0-0", "O-O-O").replace("0-0", "O-O")
    for m in p.legal_moves():
        if _SAN_SUFFIX.sub("", san(p, m)) == wanted:
            return m
    # long algebraic fallback, e.g. "e2e4" or "Nb1c3"
    for m in p.legal_moves():
        if wanted.lstrip("NBRQK") in (m.uci(p.side), m.uci(p.side)[:4]):
            return m
    raise PgnError(f"no legal move matches {text!r}")


SEVEN_TAGS = ("Event", "Site", "Date", "Round", "White", "Black", "Result")


@dataclass
class GameRecord:
    """A finished (or truncated) game with enough context to emit PGN."""

    start: Position
    moves: list[Move]
    outcome: GameOutcome | None
    tags: dict[str, str] = field(default_factory=dict)

    @property
    def result(self) -> str:
        return self.outcome.pgn_result if self.outcome else "*"


def emit_pgn(record: GameRecord) -> str:
    start = record.start
    tags = {
        "Event": "?",
        "Site": "?",
        "Date": "????.??.??",
        "Round": "?",
        "White": "?",
        "Black": "?",
    }
    tags.update(record.tags)
    tags["Result"] = record.result
    tags["Variant"] = start.variant.name
    fen = emit_fen(start)
    if fen != start.variant.start_fen or start.variant.name != "chess":
        tags["SetUp"] = "1"
        tags["FEN"] = fen
    if record.outcome is not None:
        tags.setdefault("Termination", record.outcome.reason)

    lines = [f'[{k} "{tags[k]}"]' for k in SEVEN_TAGS]
    lines += [f'[{k} "{v}"]' for k, v in tags.items() if k not in SEVEN_TAGS]
    lines.append("")

    tokens = []
    p = start
    for i, m in enumerate(record.moves):
        if p.turn == WHITE:
            tokens.append(f"{p.fullmove_number}.")
        elif i == 0:
            tokens.append(f"{p.fullmove_number}...")
        tokens.append(san(p, m))
        p = apply_move(p, m)
    tokens.append(record.result)

    line = ""
    for tok in tokens:
        if line and len(line) + 1 + len(tok) > 79:
            lines.append(line)
            line = tok
        else:
            line = f"{line} {tok}" if line else tok
    lines.append(line)
    return "\n".join(lines) + "\n"


_TAG_RE = re.compile(r'^\[(\w+)\s+"((?:[^"\\]|\\.)*)"\]\s*$')
_RESULTS = ("1-0", "0-1", "1/2-1/2", "*")


@dataclass
class PgnGame:
    tags: dict[str, str]
    sans: list[str]
    result: str
    line: int  # 1-based line of the first tag


def read_pgn(text: str, source: str = "<pgn>") -> list[PgnGame]:
    """Split PGN text into games (tags plus SAN tokens); no move replay."""
    games: list[PgnGame] = []
    tags: dict[str, str] = {}
    movetext: list[str] = []
    start_line = 0

    def flush():
        if not tags and not movetext:
            return
        body = " ".join(movetext)
        body = re.sub(r"\{[^}]*\}", " ", body)
        body = re.sub(r";[^\n]*", " ", body)
        toks = body.split()
        result = None
        sans = []
        for tok in toks:
            if tok in _RESULTS:
                result = tok
            elif re.fullmatch(r"\d+\.+", tok) or tok.startswith("$"):
                continue
            else:
                sans.append(re.sub(r"^\d+\.+", "", tok))
        name = f"{source}:{start_line} ({tags.get('White', '?')} vs {tags.get('Black', '?')})"
        tag_result = tags.get("Result")
        if tag_result is None:
            raise PgnError(f"{name}: missing Result tag")
        if tag_result not in _RESULTS:
            raise PgnError(f"{name}: malformed Result tag {tag_result!r}")
        if result is not None and result != tag_result:
            raise PgnError(f"{name}: movetext result {result!r} disagrees with tag {tag_result!r}")
        games.append(PgnGame(dict(tags), sans, tag_result, start_line))

    in_moves = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("["):
            if in_moves:
                flush()
                tags, movetext, in_moves = {}, [], False
            if not tags:
                start_line = lineno
            match = _TAG_RE.match(line)
            if not match:
                raise PgnError(f"{source}:{lineno}: malformed tag line {line!r}")
            tags[match.group(1)] = match.group(2)
        elif line:
            if not tags and not movetext:
                start_line = lineno
            in_moves = True
            movetext.append(line)
    flush()
    return games


def replay_pgn(game: PgnGame) -> GameRecord:
    """Rebuild the move list of a parsed game by replaying its SAN tokens."""
    variant = get_variant(game.tags.get("Variant", "chess"))
    fen = game.tags.get("FEN")
    start = parse_fen(fen, variant) if fen else Position.initial(variant)
    p = start
    moves = []
    for tok in game.sans:
        m = parse_san(p, tok)
        moves.append(m)
        p = apply_move(p, m)
    return GameRecord(start, moves, None, dict(game.tags))
