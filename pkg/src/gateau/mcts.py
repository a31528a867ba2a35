"""Gumbel-style MCTS over exact chess dynamics.

At the root, Gumbel noise plus prior logits pick the candidate actions and
sequential halving spreads the simulation budget over them. Below the root,
actions are chosen deterministically by matching visit counts to the
improved policy. Values are stored from the perspective of the side to move
at each node and flip sign at every ply.

Several trees can be searched in lockstep (``run_searches``): each simulation
step collects one leaf per tree and evaluates all of them in one batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Protocol, Sequence

import numpy as np

from .chess import GameOutcome, Move, Position, apply_move, status, terminal_value
from .graph import MoveGraph, action_of_move, build_move_graph, encode_position, legal_edges
from .model import GateauNet


class SearchError(ValueError):
    pass


@dataclass(frozen=True)
class SearchParams:
    simulations: int = 128
    gumbel_scale: float = 1.0
    considered_actions: int = 16
    c_visit: float = 50.0
    c_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.simulations < 2:
            raise SearchError("simulation budget must be at least 2")
        if min(self.considered_actions, self.c_visit, self.c_scale) <= 0 or self.gumbel_scale < 0:
            raise SearchError("search constants must be positive")


class Evaluator(Protocol):
    def evaluate(self, positions: Sequence[Position]) -> list[tuple[float, np.ndarray]]:
        """(value for the side to move, prior logits aligned with legal_moves()) per position."""


class NetEvaluator:
    """Batched network evaluation of positions for one variant."""

    def __init__(self, net: GateauNet, graph: MoveGraph | None = None, variant=None):
        if graph is None:
            graph = build_move_graph(variant)
        self.net = net
        self.graph = graph

    def evaluate(self, positions):
        if not positions:
            return []
        feats = [encode_position(p, self.graph, self.net.dtype) for p in positions]
        values, logits = self.net.evaluate(feats, self.graph)
        return [
            (float(values[i]), logits[i][legal_edges(p, self.graph)].astype(np.float64))
            for i, p in enumerate(positions)
        ]


class UniformEvaluator:
    """Value 0 and flat priors; handy as a no-knowledge baseline."""

    def evaluate(self, positions):
        return [(0.0, np.zeros(len(p.legal_moves()))) for p in positions]


@lru_cache(maxsize=None)
def considered_visit_sequence(max_considered: int, simulations: int) -> tuple[int, ...]:
    """Visit count an action must have to be chosen at each root simulation."""
    if max_considered <= 1:
        return tuple(range(simulations))
    log2max = int(math.ceil(math.log2(max_considered)))
    sequence: list[int] = []
    visits = [0] * max_considered
    considered = max_considered
    while len(sequence) < simulations:
        extra = max(1, int(simulations / (log2max * considered)))
        for _ in range(extra):
            sequence.extend(visits[:considered])
            for i in range(considered):
                visits[i] += 1
        considered = max(2, considered // 2)
    return tuple(sequence[:simulations])


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max())
    return z / z.sum()


class Node:
    __slots__ = ("position", "moves", "logits", "raw_value", "terminal", "children",
                 "child_visits", "child_values", "visits")

    def __init__(self, position: Position, value: float, logits: np.ndarray | None, terminal: float | None):
        self.position = position
        self.terminal = terminal
        self.raw_value = value
        self.visits = 1
        self.children: dict[int, Node] = {}
        if terminal is None:
            self.moves = position.legal_moves()
            self.logits = logits - logits.max()
            k = len(self.moves)
            self.child_visits = np.zeros(k, dtype=np.int64)
            self.child_values = np.zeros(k, dtype=np.float64)
        else:
            self.moves = []
            self.logits = None

    def q(self) -> np.ndarray:
        return np.where(self.child_visits > 0, self.child_values / np.maximum(self.child_visits, 1), 0.0)


@dataclass
class SearchResult:
    move: Move
    moves: list[Move]
    policy: np.ndarray  # improved policy aligned with ``moves``
    value: float
    visits: np.ndarray

    def policy_by_action(self, position: Position) -> dict[int, float]:
        return {
            action_of_move(m, position.variant, position.turn): float(p)
            for m, p in zip(self.moves, self.policy) if p > 0
        }


class _Tree:
    def __init__(self, root: Position, sp: SearchParams, rng: np.random.Generator, max_plies: int | None):
        if status(root, max_plies) is not None:
            raise SearchError("cannot search from a terminal position")
        self.root_position = root
        self.sp = sp
        self.rng = rng
        self.max_plies = max_plies
        self.root: Node | None = None
        self.gumbel: np.ndarray | None = None
        self.table: tuple[int, ...] = ()
        self._path: list[tuple[Node, int]] = []
        self._leaf: Position | None = None
        self._outcome: GameOutcome | None = None

    # --- completed Q values -------------------------------------------------

    def sigma_q(self, node: Node) -> np.ndarray:
        visits = node.child_visits
        q = node.q()
        visited = visits > 0
        total = visits.sum()
        if total > 0:
            prior = np.maximum(_softmax(node.logits), np.finfo(np.float64).tiny)
            weighted = (prior[visited] * q[visited]).sum() / prior[visited].sum()
            mixed = (node.raw_value + total * weighted) / (total + 1)
        else:
            mixed = node.raw_value
        completed = np.where(visited, q, mixed)
        lo, hi = completed.min(), completed.max()
        completed = (completed - lo) / max(hi - lo, 1e-8)
        return (self.sp.c_visit + visits.max()) * self.sp.c_scale * completed

    def _root_action(self) -> int:
        node = self.root
        sim = int(node.child_visits.sum())
        wanted = self.table[sim] if sim < len(self.table) else node.child_visits.min()
        score = self.gumbel + node.logits + self.sigma_q(node)
        score = np.where(node.child_visits == wanted, score, -np.inf)
        return int(np.argmax(score))

    def _interior_action(self, node: Node) -> int:
        probs = _softmax(node.logits + self.sigma_q(node))
        return int(np.argmax(probs - node.child_visits / (1 + node.child_visits.sum())))

    # --- simulation phases ---------------------------------------------------

    def start(self) -> Position:
        return self.root_position

    def init_root(self, value: float, logits: np.ndarray) -> None:
        self.root = Node(self.root_position, value, logits, None)
        k = len(self.root.moves)
        self.gumbel = self.sp.gumbel_scale * self.rng.gumbel(size=k)
        self.table = considered_visit_sequence(min(self.sp.considered_actions, k), self.sp.simulations)

    def select(self) -> Position | None:
        """Descend to a new leaf; returns it if it needs evaluation, else backs up directly."""
        node = self.root
        action = self._root_action()
        path = [(node, action)]
        while True:
            child = node.children.get(action)
            if child is None:
                pos = apply_move(node.position, node.moves[action], validate=False)
                outcome = status(pos, self.max_plies)
                self._path = path
                if outcome is not None:
                    leaf = Node(pos, terminal_value(outcome, pos.turn), None, terminal_value(outcome, pos.turn))
                    node.children[action] = leaf
                    self._backup(path, leaf.terminal)
                    return None
                self._leaf = pos
                return pos
            if child.terminal is not None:
                child.visits += 1
                self._backup(path, child.terminal)
                return None
            node = child
            action = self._interior_action(node)
            path.append((node, action))

    def expand(self, value: float, logits: np.ndarray) -> None:
        node, action = self._path[-1]
        node.children[action] = Node(self._leaf, value, logits, None)
        self._backup(self._path, value)
        self._leaf = None

    @staticmethod
    def _backup(path, leaf_value: float) -> None:
        v = leaf_value
        for node, action in reversed(path):
            v = -v
            node.child_visits[action] += 1
            node.child_values[action] += v
            node.visits += 1

    def result(self) -> SearchResult:
        node = self.root
        visits = node.child_visits
        sq = self.sigma_q(node)
        score = np.where(visits == visits.max(), self.gumbel + node.logits + sq, -np.inf)
        best = int(np.argmax(score))
        policy = _softmax(node.logits + sq)
        q = node.q()
        value = float((visits * q).sum() / visits.sum()) if visits.sum() else node.raw_value
        return SearchResult(node.moves[best], list(node.moves), policy, value, visits.copy())


def run_searches(roots: Sequence[Position], evaluators: Sequence[Evaluator], sp: SearchParams,
                 rngs: Sequence[np.random.Generator], max_plies: int | None = None) -> list[SearchResult]:
    """Search several roots in lockstep; leaves are batched per evaluator."""
    trees = [_Tree(r, sp, g, max_plies) for r, g in zip(roots, rngs)]

    def evaluate(requests: list[tuple[int, Position]]):
        groups: dict[int, list[tuple[int, Position]]] = {}
        for i, pos in requests:
            groups.setdefault(id(evaluators[i]), []).append((i, pos))
        out = {}
        for items in groups.values():
            results = evaluators[items[0][0]].evaluate([pos for _, pos in items])
            for (i, _), res in zip(items, results):
                out[i] = res
        return out

    for i, res in evaluate([(i, t.start()) for i, t in enumerate(trees)]).items():
        trees[i].init_root(*res)
    for _ in range(sp.simulations):
        requests = []
        for i, tree in enumerate(trees):
            leaf = tree.select()
            if leaf is not None:
                requests.append((i, leaf))
        for i, res in evaluate(requests).items():
            trees[i].expand(*res)
    return [t.result() for t in trees]


def search_rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *stream]))


def run_search(root: Position, graph: MoveGraph | None, net: GateauNet | Evaluator, sp: SearchParams,
               max_plies: int | None = None, rng: np.random.Generator | None = None) -> SearchResult:
    """Search one position; ``net`` may be a network or any evaluator."""
    evaluator = NetEvaluator(net, graph, root.variant) if isinstance(net, GateauNet) else net
    rng = rng if rng is not None else search_rng(sp.seed)
    return run_searches([root], [evaluator], sp, [rng], max_plies)[0]
