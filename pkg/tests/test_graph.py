from __future__ import annotations

import chess as pychess
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gateau.chess import BLACK, WHITE, Position, apply_move
from gateau.graph import (
    EDGE_FEATURE_NAMES,
    EDGE_FEATURES,
    NODE_FEATURE_NAMES,
    NODE_FEATURES,
    VariantMismatchError,
    action_of_move,
    build_move_graph,
    encode_position,
    feature_csv_rows,
    legal_edges,
    move_of_action,
)
from gateau.notation import parse_fen

from conftest import random_game


def enumerate_edges(side: int) -> tuple[int, int, int]:
    """(queen-like, knight, underpromotion) edge counts by direct geometry."""
    queen = knight = 0
    for r in range(side):
        for f in range(side):
            for df in (-1, 0, 1):
                for dr in (-1, 0, 1):
                    if (df, dr) == (0, 0):
                        continue
                    k = 1
                    while 0 <= f + k * df < side and 0 <= r + k * dr < side:
                        queen += 1
                        k += 1
            for df, dr in ((1, 2), (2, 1), (-1, 2), (-2, 1), (1, -2), (2, -1), (-1, -2), (-2, -1)):
                knight += 0 <= f + df < side and 0 <= r + dr < side
    under = 3 * sum(1 for f in range(side) for df in (-1, 0, 1) if 0 <= f + df < side)
    return queen, knight, under


def test_enumeration_oracle_agrees_with_python_chess():
    queen = sum(len(pychess.SquareSet(pychess.BB_RANK_ATTACKS[sq][0] | pychess.BB_FILE_ATTACKS[sq][0]
                                      | pychess.BB_DIAG_ATTACKS[sq][0])) for sq in pychess.SQUARES)
    knight = sum(len(pychess.SquareSet(pychess.BB_KNIGHT_ATTACKS[sq])) for sq in pychess.SQUARES)
    assert enumerate_edges(8)[:2] == (queen, knight)


@pytest.mark.parametrize("variant,side,total,actions", [("chess", 8, 1858, 4672), ("gardner", 5, 455, 1225)])
def test_edge_counts(variant, side, total, actions):
    g = build_move_graph(variant)
    kinds = [g.kinds.count(k) for k in ("slide", "knight", "underpromotion")]
    assert tuple(kinds) == enumerate_edges(side)
    assert g.edge_count == total
    assert g.variant.action_count == actions
    assert np.all(np.diff(g.src) >= 0)
    assert len(np.unique(g.action)) == total


@pytest.mark.parametrize("variant", ["chess", "gardner"])
@pytest.mark.parametrize("seed", range(3))
def test_action_round_trip_and_legal_edges(variant, seed):
    g = build_move_graph(variant)
    for p in random_game(variant, plies=60, seed=seed):
        moves = p.legal_moves()
        edges = legal_edges(p, g)
        assert np.all(edges >= 0) and len(set(edges.tolist())) == len(moves)
        for m in moves:
            a = action_of_move(m, variant, p.turn)
            assert move_of_action(a, p) == m


def test_black_moves_use_canonical_orientation():
    g = build_move_graph("chess")
    p = apply_move(Position.initial(), Position.initial().legal_moves()[0])
    assert p.turn == BLACK
    white_actions = sorted(action_of_move(m, "chess", WHITE) for m in Position.initial().legal_moves())
    black_actions = sorted(action_of_move(m, "chess", BLACK) for m in p.legal_moves())
    assert white_actions == black_actions  # the start position is symmetric
    assert np.all(g.action_to_edge[black_actions] >= 0)


def test_start_features():
    g = build_move_graph("chess")
    fs = encode_position(Position.initial(), g)
    assert fs.node_features.shape == (64, NODE_FEATURES) and fs.edge_features.shape == (1858, EDGE_FEATURES)
    assert fs.edge_features[:, 0].sum() == 20
    n = fs.node_features
    own_pawns = NODE_FEATURE_NAMES.index("piece_ownP")
    opp_king = NODE_FEATURE_NAMES.index("piece_oppK")
    assert n[:, own_pawns].sum() == 8 and n[8:16, own_pawns].all()
    assert n[60, opp_king] == 1
    assert np.all(n[:, NODE_FEATURE_NAMES.index("current_player")] == 1)
    assert np.all(n[:, NODE_FEATURE_NAMES.index("castle_own_k")] == 1)


def test_black_to_move_is_flipped():
    g = build_move_graph("chess")
    p = parse_fen("rnbqkbnr/pppppppp/8/8/4P3/8/PPPP1PPP/RNBQKBNR b KQkq - 0 1")
    n = encode_position(p, g).node_features
    own_pawns = NODE_FEATURE_NAMES.index("piece_ownP")
    opp_pawns = NODE_FEATURE_NAMES.index("piece_oppP")
    assert n[8:16, own_pawns].all()  # black's pawns appear on canonical rank 2
    assert n[4 * 8 + 4, opp_pawns] == 1  # white's e4 pawn appears on canonical e5
    assert np.all(n[:, NODE_FEATURE_NAMES.index("current_player")] == 0)


def test_gardner_castling_features_are_zero():
    g = build_move_graph("gardner")
    for p in random_game("gardner", plies=30, seed=1):
        n = encode_position(p, g).node_features
        cols = [NODE_FEATURE_NAMES.index(c) for c in ("castle_own_k", "castle_own_q", "castle_opp_k", "castle_opp_q")]
        assert not n[:, cols].any()


def test_history_planes():
    g = build_move_graph("chess")
    game = random_game("chess", plies=9, seed=4)
    p = game[-1]
    n = encode_position(p, g).node_features
    for t in range(7):
        base = 14 + 14 * t
        assert n[:, base:base + 12].sum() == sum(1 for x in game[-2 - t].board if x)


def test_repetition_flags():
    g = build_move_graph("chess")
    p = Position.initial()
    for uci in ["g1f3", "g8f6", "f3g1", "f6g8"]:
        p = apply_move(p, next(m for m in p.legal_moves() if m.uci() == uci))
    n = encode_position(p, g).node_features
    assert n[:, 12].all() and not n[:, 13].any()


def test_edge_static_features():
    g = build_move_graph("chess")
    names = list(EDGE_FEATURE_NAMES)
    under = [i for i, k in enumerate(g.kinds) if k == "underpromotion"]
    fe = encode_position(Position.initial(), g).edge_features
    assert np.all(fe[under][:, [names.index("promote_N"), names.index("promote_B"), names.index("promote_R")]].sum(axis=1) == 1)
    knights = [i for i, k in enumerate(g.kinds) if k == "knight"]
    assert np.all(fe[knights, names.index("piece_N")] == 1)


def test_variant_mismatch():
    with pytest.raises(VariantMismatchError):
        encode_position(Position.initial("gardner"), build_move_graph("chess"))


def test_csv_rows_shape():
    g = build_move_graph("gardner")
    fs = encode_position(Position.initial("gardner"), g)
    (nh, nr), (eh, er) = feature_csv_rows(fs, g)
    assert len(nr) == 25 and len(nh) == 2 + NODE_FEATURES
    assert len(er) == 455 and len(eh) == 5 + EDGE_FEATURES


@given(st.integers(0, 5000))
def test_encoding_is_deterministic(seed):
    g = build_move_graph("gardner")
    p = random_game("gardner", plies=12, seed=seed)[-1]
    assert encode_position(p, g) == encode_position(p, g)
