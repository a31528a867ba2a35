from __future__ import annotations

import chess as pychess
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gateau.chess import (
    BLACK,
    WHITE,
    IllegalMoveError,
    Move,
    Position,
    apply_move,
    get_variant,
    parse_square,
    perft,
    replay,
    square_name,
    status,
    terminal_value,
)
from gateau.notation import (
    FenError,
    GameRecord,
    PgnError,
    emit_fen,
    emit_pgn,
    parse_fen,
    parse_san,
    read_pgn,
    replay_pgn,
    san,
)

from conftest import random_game


def oracle_moves(fen: str) -> set[str]:
    return {m.uci() for m in pychess.Board(fen).legal_moves}


@pytest.mark.parametrize("depth,expected", [(1, 20), (2, 400), (3, 8902)])
def test_perft_start(depth, expected):
    assert perft(Position.initial(), depth) == expected


@pytest.mark.parametrize("fen,depth", [
    ("r3k2r/p1ppqpb1/bn2pnp1/3PN3/1p2P3/2N2Q1p/PPPBBPPP/R3K2R w KQkq - 0 1", 2),
    ("8/2p5/3p4/KP5r/1R3p1k/8/4P1P1/8 w - - 0 1", 3),
    ("r3k2r/Pppp1ppp/1b3nbN/nP6/BBP1P3/q4N2/Pp1P2PP/R2Q1RK1 w kq - 0 1", 2),
    ("rnbq1k1r/pp1Pbppp/2p5/8/2B5/8/PPP1NnPP/RNBQK2R w KQ - 1 8", 2),
])
def test_perft_matches_oracle(fen, depth):
    def oracle(board, d):
        if d == 0:
            return 1
        total = 0
        for m in list(board.legal_moves):
            board.push(m)
            total += oracle(board, d - 1)
            board.pop()
        return total

    assert perft(parse_fen(fen), depth) == oracle(pychess.Board(fen), depth)


@pytest.mark.parametrize("seed", range(12))
def test_legal_moves_match_oracle_along_random_games(seed):
    for p in random_game("chess", plies=80, seed=seed):
        fen = emit_fen(p)
        ours = {m.uci() for m in p.legal_moves()}
        assert ours == oracle_moves(fen), fen


def test_gardner_start_and_rules():
    p = Position.initial("gardner")
    assert emit_fen(p) == "rnbqk/ppppp/5/PPPPP/RNBQK w - - 0 1"
    assert len(p.legal_moves()) == 7
    for q in random_game("gardner", plies=200, seed=3):
        for m in q.legal_moves():
            assert m.special not in ("double_push", "en_passant", "castle")


def test_gardner_promotion_on_fifth_rank():
    p = parse_fen("4k/P4/5/5/K4 w - - 0 1", "gardner")
    promos = {m.promotion for m in p.legal_moves() if m.from_sq == parse_square("a4", 5)}
    assert len(promos) == 4


@pytest.mark.parametrize("fen,reason,result", [
    ("7k/6Q1/6K1/8/8/8/8/8 b - - 0 1", "checkmate", "white_win"),
    ("7k/5Q2/6K1/8/8/8/8/8 b - - 0 1", "stalemate", "draw"),
    ("8/8/4k3/8/8/3K4/8/8 w - - 0 1", "insufficient_material", "draw"),
    ("8/8/4k3/8/8/3KN3/8/8 w - - 0 1", "insufficient_material", "draw"),
    ("8/8/4k3/8/8/3K4/8/R7 w - - 100 80", "fifty_move", "draw"),
])
def test_status(fen, reason, result):
    out = status(parse_fen(fen))
    assert (out.reason, out.result) == (reason, result)


def test_threefold_and_truncation():
    p = Position.initial()
    shuffle = ["g1f3", "g8f6", "f3g1", "f6g8"] * 2
    for uci in shuffle:
        m = next(m for m in p.legal_moves() if m.uci() == uci)
        p = apply_move(p, m)
    assert status(p).reason == "threefold"
    q = Position.initial()
    assert status(apply_move(q, q.legal_moves()[0]), max_plies=1).reason == "truncation"


def test_terminal_value_signs():
    out = status(parse_fen("7k/6Q1/6K1/8/8/8/8/8 b - - 0 1"))
    assert terminal_value(out, BLACK) == -1.0
    assert terminal_value(out, WHITE) == 1.0


def test_illegal_move_rejected():
    with pytest.raises(IllegalMoveError):
        apply_move(Position.initial(), Move(parse_square("e2"), parse_square("e5")))


def test_king_never_left_in_check():
    for p in random_game("chess", plies=120, seed=7):
        for m in p.legal_moves():
            q = apply_move(p, m)
            board = pychess.Board(emit_fen(q))
            board.turn = not board.turn
            assert not board.is_check()


@given(st.integers(0, 10_000), st.sampled_from(["chess", "gardner"]))
def test_fen_round_trip(seed, variant):
    for p in random_game(variant, plies=30, seed=seed)[::5]:
        q = parse_fen(emit_fen(p), variant)
        assert q == p


@pytest.mark.parametrize("bad,offset", [
    ("rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP w KQkq - 0 1", 0),
    ("rnbqkbnr/pppppppp/9/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1", None),
    ("rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR x KQkq - 0 1", None),
])
def test_bad_fen(bad, offset):
    with pytest.raises(FenError):
        parse_fen(bad)


def test_gardner_fen_rejects_castling():
    with pytest.raises(FenError):
        parse_fen("rnbqk/ppppp/5/PPPPP/RNBQK w KQkq - 0 1", "gardner")


@pytest.mark.parametrize("seed", range(4))
def test_san_matches_oracle(seed):
    for p in random_game("chess", plies=60, seed=seed):
        board = pychess.Board(emit_fen(p))
        for m in p.legal_moves():
            expected = board.san(pychess.Move.from_uci(m.uci()))
            assert san(p, m) == expected
            assert parse_san(p, expected) == m


@pytest.mark.parametrize("variant", ["chess", "gardner"])
def test_pgn_round_trip(variant):
    positions = random_game(variant, plies=50, seed=11)
    moves = []
    for a, b in zip(positions, positions[1:]):
        moves.append(next(m for m in a.legal_moves() if apply_move(a, m) == b))
    outcome = status(positions[-1], max_plies=50)
    record = GameRecord(positions[0], moves, outcome, {"White": "x", "Black": "y"})
    text = emit_pgn(record)
    (game,) = read_pgn(text)
    assert game.tags["Variant"] == variant
    back = replay_pgn(game)
    assert back.moves == moves
    assert replay(back.start, back.moves)[-1] == positions[-1]


def test_pgn_bad_result_names_game():
    text = '[Event "x"]\n[White "alpha"]\n[Black "beta"]\n[Result "2-0"]\n\n1. e4 e5 2-0\n'
    with pytest.raises(PgnError, match="alpha"):
        read_pgn(text, "games.pgn")


def test_square_names():
    assert square_name(0) == "a1" and square_name(63) == "h8"
    assert square_name(24, 5) == "e5"
    assert get_variant("5x5").board_side == 5
