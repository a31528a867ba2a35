"""Central finite-difference checks of the autodiff engine.

The relative error of an analytic gradient ``a`` against a numeric one ``n``
is ``||a - n|| / max(||a||, ||n||, 1e-12)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad


def numeric_gradient(f: Callable[[], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of ``f`` with respect to the array ``x`` (perturbed in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return g


def relative_error(a: np.ndarray, n: np.ndarray) -> float:
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-12))


def check(build: Callable[[list[ad.Tensor]], ad.Tensor], arrays: list[np.ndarray], step: float = 1e-5) -> float:
    """Max relative error over all inputs for the scalar built by ``build``."""
    tensors = [ad.Tensor(a, requires_grad=True) for a in arrays]
    analytic = ad.grad(build(tensors), tensors)

    def value() -> float:
        return float(build([ad.Tensor(a) for a in arrays]).data)

    return max(relative_error(g, numeric_gradient(value, a, step)) for g, a in zip(analytic, arrays))


def check_sampled(build: Callable[[list[ad.Tensor]], ad.Tensor], arrays: list[np.ndarray],
                  rng: np.random.Generator, samples: int = 64, step: float = 1e-5) -> float:
    """Like ``check`` but compares a random subset of all coordinates at once."""
    tensors = [ad.Tensor(a, requires_grad=True) for a in arrays]
    analytic = ad.grad(build(tensors), tensors)
    sizes = np.array([a.size for a in arrays])
    picks = rng.choice(sizes.sum(), size=min(samples, int(sizes.sum())), replace=False)
    owner = np.searchsorted(np.cumsum(sizes), picks, side="right")
    offsets = np.r_[0, np.cumsum(sizes)[:-1]]
    a_vals, n_vals = [], []
    for k, flat_i in zip(owner, picks - offsets[owner]):
        x = arrays[k].reshape(-1)
        orig = x[flat_i]
        x[flat_i] = orig + step
        up = float(build([ad.Tensor(a) for a in arrays]).data)
        x[flat_i] = orig - step
        down = float(build([ad.Tensor(a) for a in arrays]).data)
        x[flat_i] = orig
        a_vals.append(analytic[k].reshape(-1)[flat_i])
        n_vals.append((up - down) / (2 * step))
    return relative_error(np.array(a_vals), np.array(n_vals))


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x) + 0.0


def _segment_case(rng):
    m = int(rng.integers(2, 12))
    n = int(rng.integers(1, 5))
    ids = rng.integers(0, n, size=m)
    return m, n, ids


def _primitive_cases() -> dict[str, Callable[[np.random.Generator], float]]:
    """One randomised scalar-loss check per differentiable primitive."""

    def projected(t: ad.Tensor, w: np.ndarray) -> ad.Tensor:
        # random linear functional so gradients are not trivially uniform
        return ad.total(ad.mul(t, w))

    def c_matmul(rng):
        m, k, n = rng.integers(1, 6, size=3)
        w = rng.normal(size=(m, n))
        return check(lambda t: projected(ad.matmul(t[0], t[1]), w), [rng.normal(size=(m, k)), rng.normal(size=(k, n))])

    def c_add(rng):
        m, k = rng.integers(1, 6, size=2)
        w = rng.normal(size=(m, k))
        return check(lambda t: projected(ad.add(t[0], t[1]), w), [rng.normal(size=(m, k)), rng.normal(size=(k,))])

    def c_mul(rng):
        m, k = rng.integers(1, 6, size=2)
        w = rng.normal(size=(m, k))
        return check(lambda t: projected(ad.mul(t[0], t[1]), w), [rng.normal(size=(m, k)), rng.normal(size=(m, 1))])

    def c_relu(rng):
        shape = tuple(rng.integers(1, 6, size=2))
        w = rng.normal(size=shape)
        return check(lambda t: projected(ad.relu(t[0]), w), [_away_from_zero(rng, shape)])

    def c_leaky(rng):
        shape = tuple(rng.integers(1, 6, size=2))
        w = rng.normal(size=shape)
        return check(lambda t: projected(ad.leaky_relu(t[0], 0.2), w), [_away_from_zero(rng, shape)])

    def c_tanh(rng):
        shape = tuple(rng.integers(1, 6, size=2))
        w = rng.normal(size=shape)
        return check(lambda t: projected(ad.tanh(t[0]), w), [rng.normal(size=shape)])

    def c_exp(rng):
        shape = tuple(rng.integers(1, 6, size=2))
        w = rng.normal(size=shape)
        return check(lambda t: projected(ad.exp(t[0]), w), [rng.normal(size=shape)])

    def c_log(rng):
        shape = tuple(rng.integers(1, 6, size=2))
        w = rng.normal(size=shape)
        return check(lambda t: projected(ad.log(t[0]), w), [rng.uniform(0.5, 2.0, size=shape)])

    def c_gather(rng):
        m, k = rng.integers(1, 6, size=2)
        idx = rng.integers(0, m, size=int(rng.integers(1, 10)))
        w = rng.normal(size=(len(idx), k))
        return check(lambda t: projected(ad.gather(t[0], idx), w), [rng.normal(size=(m, k))])

    def c_scatter(rng):
        m, n, ids = _segment_case(rng)
        k = int(rng.integers(1, 5))
        w = rng.normal(size=(n, k))
        return check(lambda t: projected(ad.scatter_add(t[0], ids, n), w), [rng.normal(size=(m, k))])

    def c_segment_sum(rng):
        m, n, ids = _segment_case(rng)
        w = rng.normal(size=n)
        return check(lambda t: projected(ad.segment_sum(t[0], ids, n), w), [rng.normal(size=m)])

    def c_segment_softmax(rng):
        m, n, ids = _segment_case(rng)
        w = rng.normal(size=m)
        return check(lambda t: projected(ad.segment_softmax(t[0], ids, n), w), [rng.normal(size=m)])

    def c_softmax_xent(rng):
        m, n, ids = _segment_case(rng)
        target = rng.uniform(size=m)
        target /= ad._scatter_rows(target, ids, n)[ids]
        return check(lambda t: ad.neg(ad.total(ad.mul(ad.log(ad.segment_softmax(t[0], ids, n)), target))),
                     [rng.normal(size=m)])

    def c_batch_norm(rng):
        m, k = int(rng.integers(3, 8)), int(rng.integers(1, 5))
        w = rng.normal(size=(m, k))
        training = bool(rng.integers(0, 2))
        state = ad.BatchNormState(k, dtype=np.float64)
        state.mean[:] = rng.normal(size=k)
        state.var[:] = rng.uniform(0.5, 2.0, size=k)

        def build(t):
            s = ad.BatchNormState(k, dtype=np.float64)
            s.mean[:], s.var[:] = state.mean, state.var
            return projected(ad.batch_norm(t[0], t[1], t[2], s, training, relu=relu), w)

        # the fused ReLU is checked on half of the seeds
        relu = bool(rng.integers(0, 2))
        return check(build, [rng.normal(size=(m, k)) * 2 + 1, rng.normal(size=k), rng.normal(size=k)])

    return {
        "matmul": c_matmul, "add": c_add, "mul": c_mul, "relu": c_relu, "leaky_relu": c_leaky,
        "tanh": c_tanh, "exp": c_exp, "log": c_log, "gather": c_gather, "scatter_add": c_scatter,
        "segment_sum": c_segment_sum, "segment_softmax": c_segment_softmax,
        "softmax_cross_entropy": c_softmax_xent, "batch_norm": c_batch_norm,
    }


PRIMITIVES = tuple(_primitive_cases())


@dataclass
class CheckResult:
    name: str
    worst: float
    tolerance: float
    seeds: int

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance


def check_primitives(seeds: int = 100, tolerance: float = 1e-5, base_seed: int = 0) -> list[CheckResult]:
    results = []
    for name, case in _primitive_cases().items():
        worst = 0.0
        for s in range(seeds):
            rng = np.random.default_rng([base_seed, s, PRIMITIVES.index(name)])
            worst = max(worst, case(rng))
        results.append(CheckResult(name, worst, tolerance, seeds))
    return results


def check_model(seeds: int = 100, tolerance: float = 1e-4, base_seed: int = 0) -> CheckResult:
    """Full network loss on random 3-node graphs against finite differences."""
    from .model import ModelConfig, GateauNet, GraphBatch
    from .train import batch_loss

    worst = 0.0
    for s in range(seeds):
        rng = np.random.default_rng([base_seed, s, 1000])
        worst = max(worst, _model_case(rng, ModelConfig(hidden=4, blocks=1), GateauNet, GraphBatch, batch_loss))
    return CheckResult("model", worst, tolerance, seeds)


def _model_case(rng, config, net_cls, batch_cls, loss_fn) -> float:
    from .graph import EDGE_FEATURES, NODE_FEATURES

    n = 3
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    keep = rng.choice(len(pairs), size=int(rng.integers(3, len(pairs) + 1)), replace=False)
    src, dst = np.array(sorted(pairs[k] for k in keep)).T
    e = len(src)
    net = net_cls(config, seed=int(rng.integers(1 << 30)), dtype=np.float64)
    for arr in net.params.values():
        arr += rng.normal(scale=0.3, size=arr.shape)
    nodes = rng.normal(size=(n, NODE_FEATURES))
    edges = rng.normal(size=(e, EDGE_FEATURES))
    legal = np.zeros(e)
    legal[rng.choice(e, size=int(rng.integers(1, e + 1)), replace=False)] = 1.0
    edges[:, 0] = legal
    target = rng.uniform(size=e) * legal
    target /= target.sum()
    value_target = np.array([rng.uniform(-1, 1)])
    training = bool(rng.integers(0, 2))
    batch = batch_cls.from_arrays(nodes, edges, src, dst, n)

    names = list(net.params)
    arrays = [net.params[k] for k in names]

    def build(tensors):
        params = dict(zip(names, tensors))
        value, logits = net.forward(batch, training=training, params=params)
        total, _, _ = loss_fn(value, logits, batch, target, value_target)
        return total

    return check_sampled(build, arrays, rng)
