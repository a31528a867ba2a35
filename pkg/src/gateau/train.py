"""The outer self-play / training loop and its loss."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .checkpoint import atomic_write, load_checkpoint, save_checkpoint
from .chess import get_variant
from .graph import build_move_graph, encode_position, legal_edges
from .mcts import SearchParams, search_rng
from .model import GateauNet, GraphBatch, ModelConfig
from .notation import emit_pgn
from .optim import Adam
from .selfplay import FrameWindow, PlayedGame, ReplayFrame, load_window, save_window, selfplay_games, update_window

log = logging.getLogger(__name__)

LOG_EPS = 1e-9
METRIC_COLUMNS = ("iteration", "policy_loss", "value_loss", "games", "plies", "frames", "white_wins",
                  "black_wins", "draws", "wall_time")


class SupportError(ValueError):
    """The policy target puts mass on an action the prediction masks out."""


@dataclass
class TrainConfig:
    variant: str = "chess"
    iterations: int = 100
    games: int = 256
    search: SearchParams = field(default_factory=SearchParams)
    window: int = 1_000_000
    epochs: int = 1
    batch_size: int = 2048
    learning_rate: float = 1e-3
    max_plies: int = 512
    seed: int = 0
    checkpoint_every: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)
    threads: int = 1
    save_games: bool = True

    def __post_init__(self):
        get_variant(self.variant)
        positive = ("iterations", "games", "window", "epochs", "batch_size", "max_plies", "checkpoint_every", "threads")
        for name in positive:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size > self.window:
            raise ValueError("batch_size must not exceed the window size")

    def to_dict(self) -> dict:
        return asdict(self)


# --- loss -------------------------------------------------------------------


def loss(policy_target: np.ndarray, value_target: float, policy_pred: np.ndarray, value_pred: float) -> float:
    """Cross-entropy plus squared value error for one frame."""
    pi = np.asarray(policy_target, dtype=np.float64)
    q = np.asarray(policy_pred, dtype=np.float64)
    if np.any((pi > 0) & (q <= 0)):
        raise SupportError("policy target has mass on a masked action")
    support = pi > 0
    ce = -float(np.sum(pi[support] * np.log(q[support] + LOG_EPS)))
    return max(ce, 0.0) + (float(value_target) - float(value_pred)) ** 2


def batch_loss(value: ad.Tensor, logits: ad.Tensor, batch: GraphBatch, policy_target: np.ndarray,
               value_target: np.ndarray) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
    """Mean (total, policy, value) loss of a batch; the softmax runs over legal edges only."""
    legal = np.flatnonzero(batch.legal)
    target = np.asarray(policy_target)
    if np.any(np.delete(target, legal) > 0):
        raise SupportError("policy target has mass on an illegal edge")
    b = batch.num_graphs
    probs = ad.segment_softmax(ad.gather(logits, legal), batch.edge_graph[legal], b)
    log_probs = ad.log(ad.add(probs, LOG_EPS))
    policy = ad.mul(ad.total(ad.mul(log_probs, target[legal].astype(logits.data.dtype))), -1.0 / b)
    diff = ad.add(value, -np.asarray(value_target, dtype=value.data.dtype))
    value_loss = ad.mean(ad.mul(diff, diff))
    return ad.add(policy, value_loss), policy, value_loss


def encode_frames(frames: Sequence[ReplayFrame], dtype=np.float32) -> tuple[GraphBatch, np.ndarray, np.ndarray]:
    """Batch of re-encoded frames with dense edge policy targets and value targets."""
    variants = {f.variant for f in frames}
    if len(variants) != 1:
        raise ValueError(f"a batch must hold one variant, got {sorted(variants)}")
    graph = build_move_graph(frames[0].variant)
    feats = []
    target = np.zeros((len(frames), graph.edge_count), dtype=np.float64)
    for i, f in enumerate(frames):
        p = f.position()
        feats.append(encode_position(p, graph, dtype))
        for a, prob in f.policy.items():
            target[i, graph.action_to_edge[a]] = prob
    values = np.array([f.value for f in frames], dtype=np.float64)
    return GraphBatch.from_features(feats, graph), target.reshape(-1), values


# --- one iteration ----------------------------------------------------------


@dataclass
class TrainMetrics:
    policy_loss: list[float] = field(default_factory=list)
    value_loss: list[float] = field(default_factory=list)

    @property
    def mean_policy(self) -> float:
        return float(np.mean(self.policy_loss)) if self.policy_loss else float("nan")

    @property
    def mean_value(self) -> float:
        return float(np.mean(self.value_loss)) if self.value_loss else float("nan")


def train_step(net: GateauNet, frames: Sequence[ReplayFrame], optimizer: Adam) -> tuple[float, float]:
    batch, pi, z = encode_frames(frames, net.dtype)
    params = {k: ad.Tensor(v, requires_grad=True) for k, v in net.params.items()}
    value, logits = net.forward(batch, training=True, params=params)
    total, policy, value_loss = batch_loss(value, logits, batch, pi, z)
    ad.backward(total)
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in params.items()}
    optimizer.step(net.params, grads)
    return float(policy.data), float(value_loss.data)


def train_iteration(net: GateauNet, window: FrameWindow, cfg: TrainConfig, rng: np.random.Generator,
                    optimizer: Adam | None = None) -> tuple[GateauNet, TrainMetrics]:
    """``cfg.epochs`` shuffled passes over the window; returns an updated copy."""
    if not window.frames:
        raise ValueError("cannot train on an empty window")
    net = net.copy()
    optimizer = optimizer if optimizer is not None else Adam(cfg.learning_rate)
    metrics = TrainMetrics()
    for _ in range(cfg.epochs):
        order = rng.permutation(len(window.frames))
        for start in range(0, len(order), cfg.batch_size):
            chunk = [window.frames[i] for i in order[start:start + cfg.batch_size]]
            if len(chunk) < 2:
                continue  # batch statistics need two samples
            pl, vl = train_step(net, chunk, optimizer)
            metrics.policy_loss.append(pl)
            metrics.value_loss.append(vl)
    return net, metrics


# --- self-play fan-out ------------------------------------------------------


def _selfplay_chunk(args) -> list[PlayedGame]:
    net, variant, ids, sp, max_plies, seed, iteration = args
    return selfplay_games(net, variant, ids, sp, max_plies, seed, iteration)


def generate_selfplay(net: GateauNet, cfg: TrainConfig, iteration: int = 0,
                      threads: int | None = None) -> tuple[list[ReplayFrame], list[PlayedGame]]:
    """``cfg.games`` self-play games and one frame per ply.

    Game ``i`` of iteration ``t`` always draws its noise from (seed, t, i), so
    the split across worker processes does not change which games are played.
    """
    threads = threads or cfg.threads
    ids = list(range(cfg.games))
    if threads <= 1 or cfg.games < 2:
        games = selfplay_games(net, cfg.variant, ids, cfg.search, cfg.max_plies, cfg.seed, iteration)
    else:
        chunks = [ids[k::threads] for k in range(threads) if ids[k::threads]]
        jobs = [(net, cfg.variant, c, cfg.search, cfg.max_plies, cfg.seed, iteration) for c in chunks]
        with ProcessPoolExecutor(len(jobs)) as pool:
            parts = list(pool.map(_selfplay_chunk, jobs))
        by_id = {i: g for c, part in zip(chunks, parts) for i, g in zip(c, part)}
        games = [by_id[i] for i in ids]
    frames = [f for g in games for f in g.frames(iteration)]
    return frames, games


# --- the full loop ----------------------------------------------------------


@dataclass
class RunPaths:
    root: Path

    @property
    def checkpoints(self) -> Path:
        return self.root / "checkpoints"

    def checkpoint(self, iteration: int) -> Path:
        return self.checkpoints / f"iter_{iteration:04d}.ckpt"

    @property
    def latest(self) -> Path:
        return self.root / "latest.ckpt"

    def window(self, iteration: int) -> Path:
        return self.root / f"window_{iteration:04d}.frames"

    def optimizer(self, iteration: int) -> Path:
        return self.root / f"optimizer_{iteration:04d}.npz"

    @property
    def metrics(self) -> Path:
        return self.root / "metrics.csv"

    def games(self, iteration: int) -> Path:
        return self.root / "games" / f"iter_{iteration:04d}.pgn"


def _save_optimizer(opt: Adam, path: Path) -> None:
    state = opt.state_dict()
    arrays = {"step": np.array(state["step"])}
    for k, v in state["m"].items():
        arrays[f"m/{k}"] = v
    for k, v in state["v"].items():
        arrays[f"v/{k}"] = v
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    atomic_write(path, buf.getvalue())


def _load_optimizer(opt: Adam, path: Path) -> None:
    with np.load(path) as data:
        state = {"step": int(data["step"]), "m": {}, "v": {}}
        for key in data.files:
            if "/" in key:
                kind, name = key.split("/", 1)
                state[kind][name] = data[key]
    opt.load_state_dict(state)


def _write_metrics(path: Path, rows: list[dict]) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=METRIC_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    atomic_write(path, buf.getvalue().encode())


def _read_metrics(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def run_training(cfg: TrainConfig, out_dir, initial: GateauNet | None = None, resume: bool = True) -> list[Path]:
    """Alternate self-play and training for ``cfg.iterations`` iterations.

    ``initial`` starts from an existing network (fine-tuning); otherwise a
    fresh one is built from ``cfg.model``. Output layout under ``out_dir``:
    ``checkpoints/iter_NNNN.ckpt`` at the configured stride (``iter_0000`` is
    the starting network), ``latest.ckpt``, ``window_NNNN.frames``,
    ``optimizer_NNNN.npz``, ``metrics.csv`` and ``games/iter_NNNN.pgn``.
    """
    paths = RunPaths(Path(out_dir))
    paths.root.mkdir(parents=True, exist_ok=True)
    atomic_write(paths.root / "config.json", json.dumps(cfg.to_dict(), indent=2, sort_keys=True).encode())
    optimizer = Adam(cfg.learning_rate)
    window: FrameWindow | None = None
    start = 0
    if resume and paths.latest.exists():
        net = load_checkpoint(paths.latest)
        start = int(net.metadata.get("iteration", 0))
        if start > 0:
            window = load_window(paths.window(start))
            _load_optimizer(optimizer, paths.optimizer(start))
        log.info("resuming %s at iteration %d", paths.root, start)
    else:
        net = initial.copy() if initial is not None else GateauNet(cfg.model, seed=cfg.seed)
        history = list(net.metadata.get("variants", []))
        net.metadata = {"iteration": 0, "variant": cfg.variant, "variants": history + [cfg.variant],
                        "seed": cfg.seed}
        save_checkpoint(net, paths.checkpoint(0))
        save_checkpoint(net, paths.latest)
    rows = [r for r in _read_metrics(paths.metrics) if int(r["iteration"]) <= start]
    written = sorted(paths.checkpoints.glob("iter_*.ckpt"))

    for it in range(start + 1, cfg.iterations + 1):
        t0 = time.perf_counter()
        frames, games = generate_selfplay(net, cfg, it)
        window = update_window(frames, window, cfg.window, search_rng(cfg.seed, it, 1 << 20))
        net, metrics = train_iteration(net, window, cfg, search_rng(cfg.seed, it, 1 << 21), optimizer)
        net.metadata["iteration"] = it
        outcomes = [g.outcome.result for g in games]
        rows.append({
            "iteration": it,
            "policy_loss": f"{metrics.mean_policy:.6f}",
            "value_loss": f"{metrics.mean_value:.6f}",
            "games": len(games),
            "plies": sum(len(g.positions) for g in games),
            "frames": len(window),
            "white_wins": outcomes.count("white_win"),
            "black_wins": outcomes.count("black_win"),
            "draws": outcomes.count("draw"),
            "wall_time": f"{time.perf_counter() - t0:.2f}",
        })
        save_window(window, paths.window(it))
        _save_optimizer(optimizer, paths.optimizer(it))
        if cfg.save_games:
            text = "\n".join(emit_pgn(g.record) for g in games)
            atomic_write(paths.games(it), text.encode())
        _write_metrics(paths.metrics, rows)
        if it % cfg.checkpoint_every == 0 or it == cfg.iterations:
            save_checkpoint(net, paths.checkpoint(it))
        save_checkpoint(net, paths.latest)  # commit point for resume
        for stale in (paths.window(it - 1), paths.optimizer(it - 1)):
            if stale.exists():
                os.unlink(stale)
        log.info("iteration %d: %s", it, rows[-1])
    written = sorted(paths.checkpoints.glob("iter_*.ckpt"))
    return written


def checkpoint_iteration(path) -> int:
    m = re.search(r"iter_(\d+)", str(path))
    return int(m.group(1)) if m else -1


def legal_policy(net: GateauNet, position) -> tuple[float, dict]:
    """Value and move probabilities of ``net`` on one position."""
    graph = build_move_graph(position.variant)
    values, logits = net.evaluate([encode_position(position, graph, net.dtype)], graph)
    edges = legal_edges(position, graph)
    z = logits[0][edges].astype(np.float64)
    z = np.exp(z - z.max())
    z /= z.sum()
    return float(values[0]), dict(zip(position.legal_moves(), z))
