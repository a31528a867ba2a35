"""GATEAU layers and the full policy/value network.

Graphs of one batch are stacked into a single disjoint graph: node and edge
rows are concatenated and edge endpoints are offset per graph. All weight
matrices multiply from the right (``h @ W``).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import EDGE_FEATURES, NODE_FEATURES, FeatureSet, MoveGraph, VariantMismatchError

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 128
    blocks: int = 5
    slope: float = 0.2
    # which edges a node attends over: its out-edges ("out") or in-edges ("in")
    attention: str = "out"

    def __post_init__(self):
        if self.hidden < 1 or self.blocks < 0:
            raise ValueError("hidden must be >= 1 and blocks >= 0")
        if self.attention not in ("out", "in"):
            raise ValueError("attention must be 'out' or 'in'")


@dataclass(eq=False)
class GraphBatch:
    node_x: np.ndarray
    edge_x: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    node_graph: np.ndarray
    edge_graph: np.ndarray
    num_graphs: int

    @property
    def num_nodes(self) -> int:
        return len(self.node_x)

    @property
    def legal(self) -> np.ndarray:
        return self.edge_x[:, 0] > 0.5

    @classmethod
    def from_arrays(cls, node_x, edge_x, src, dst, num_nodes: int | None = None) -> GraphBatch:
        """A batch holding one arbitrary graph."""
        node_x = np.asarray(node_x)
        edge_x = np.asarray(edge_x)
        num_nodes = len(node_x) if num_nodes is None else num_nodes
        if node_x.shape != (num_nodes, NODE_FEATURES) or edge_x.shape != (len(src), EDGE_FEATURES):
            raise ValueError(f"feature shapes {node_x.shape}, {edge_x.shape} do not match the graph")
        return cls(node_x, edge_x, np.asarray(src), np.asarray(dst),
                   np.zeros(num_nodes, dtype=np.int64), np.zeros(len(src), dtype=np.int64), 1)

    @classmethod
    def from_features(cls, feature_sets: list[FeatureSet], graph: MoveGraph) -> GraphBatch:
        b = len(feature_sets)
        n, e = graph.node_count, graph.edge_count
        for fs in feature_sets:
            if fs.node_features.shape[0] != n or fs.edge_features.shape[0] != e:
                raise VariantMismatchError("feature set does not match the move graph")
        src, dst, node_graph, edge_graph = _batched_indices(graph, b)
        return cls(
            np.concatenate([fs.node_features for fs in feature_sets]),
            np.concatenate([fs.edge_features for fs in feature_sets]),
            src, dst, node_graph, edge_graph, b,
        )


@lru_cache(maxsize=64)
def _batched_indices(graph: MoveGraph, b: int):
    n, e = graph.node_count, graph.edge_count
    offsets = np.repeat(np.arange(b) * n, e)
    out = (
        np.tile(graph.src, b) + offsets,
        np.tile(graph.dst, b) + offsets,
        np.repeat(np.arange(b), n),
        np.repeat(np.arange(b), e),
    )
    for arr in out:
        arr.flags.writeable = False
    return out


def _layer_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    hs = config.hidden
    shapes: dict[str, tuple[int, ...]] = {
        "embed.node.w": (NODE_FEATURES, hs),
        "embed.node.b": (hs,),
        "embed.edge.w": (EDGE_FEATURES, hs),
        "embed.edge.b": (hs,),
    }
    for blk in range(config.blocks):
        for j in range(2):
            for part in ("node", "edge"):
                shapes[f"block{blk}.bn{j}.{part}.gamma"] = (hs,)
                shapes[f"block{blk}.bn{j}.{part}.beta"] = (hs,)
            for w in ("w_u", "w_v", "w_e", "w_0", "w_h", "w_g"):
                shapes[f"block{blk}.gat{j}.{w}"] = (hs, hs)
            shapes[f"block{blk}.gat{j}.a"] = (hs,)
    for head in ("value", "policy"):
        for j in range(2):
            shapes[f"{head}.bn{j}.gamma"] = (hs,)
            shapes[f"{head}.bn{j}.beta"] = (hs,)
        shapes[f"{head}.linear.w"] = (hs, hs)
        shapes[f"{head}.linear.b"] = (hs,)
        shapes[f"{head}.out.w"] = (hs, 1)
        shapes[f"{head}.out.b"] = (1,)
    shapes["value.pool.a"] = (hs,)
    return shapes


def _bn_names(config: ModelConfig) -> list[str]:
    names = []
    for blk in range(config.blocks):
        for j in range(2):
            names += [f"block{blk}.bn{j}.node", f"block{blk}.bn{j}.edge"]
    names += ["value.bn0", "value.bn1", "policy.bn0", "policy.bn1"]
    return names


class GateauNet:
    """Parameters, batch-norm statistics and metadata of one network.

    Every shape depends only on ``config``, so the same instance evaluates
    graphs of any board size.
    """

    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.metadata: dict = {}
        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        for name, shape in _layer_shapes(config).items():
            leaf = name.rsplit(".", 1)[1]
            if leaf == "gamma":
                arr = np.ones(shape)
            elif leaf in ("beta", "b") or name.endswith(".out.w"):
                # zero head projections: a fresh network has flat priors and value 0
                arr = np.zeros(shape)
            else:
                bound = np.sqrt(6.0 / shape[0])
                arr = rng.uniform(-bound, bound, size=shape)
            self.params[name] = arr.astype(self.dtype)
        self.bn = {name: ad.BatchNormState(config.hidden, self.dtype) for name in _bn_names(config)}

    # --- bookkeeping -------------------------------------------------------

    def parameter_count(self) -> int:
        return sum(int(p.size) for p in self.params.values())

    def gateau_weight_count(self) -> int:
        """Entries of the six weight matrices of one GATEAU layer."""
        return sum(
            int(np.prod(shape)) for name, shape in _layer_shapes(self.config).items()
            if name.startswith("block0.gat0.w_")
        )

    def copy(self) -> GateauNet:
        other = GateauNet.__new__(GateauNet)
        other.config = self.config
        other.dtype = self.dtype
        other.metadata = dict(self.metadata)
        other.params = {k: v.copy() for k, v in self.params.items()}
        other.bn = {}
        for k, s in self.bn.items():
            t = ad.BatchNormState(self.config.hidden, self.dtype)
            t.mean[...] = s.mean
            t.var[...] = s.var
            other.bn[k] = t
        return other

    def astype(self, dtype) -> GateauNet:
        other = self.copy()
        other.dtype = np.dtype(dtype)
        other.params = {k: v.astype(dtype) for k, v in other.params.items()}
        for s in other.bn.values():
            s.mean = s.mean.astype(dtype)
            s.var = s.var.astype(dtype)
        return other

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Parameters plus running statistics, in a stable order."""
        out = dict(self.params)
        for name, s in self.bn.items():
            out[f"bn:{name}.mean"] = s.mean
            out[f"bn:{name}.var"] = s.var
        return out

    def config_dict(self) -> dict:
        return asdict(self.config)

    # --- forward pass ------------------------------------------------------

    def forward(self, batch: GraphBatch, training: bool = False,
                params: dict[str, Tensor] | None = None) -> tuple[Tensor, Tensor]:
        """Value per graph (tanh, side-to-move view) and one raw logit per edge."""
        if params is None:
            params = {k: Tensor(v, requires_grad=training) for k, v in self.params.items()}
        P = params
        dtype = P["embed.node.w"].data.dtype
        cfg = self.config

        def linear(x, prefix):
            return ad.add(ad.matmul(x, P[prefix + ".w"]), P[prefix + ".b"])

        def bnr(x, name, key=None):
            key = key or name
            return ad.batch_norm(x, P[name + ".gamma"], P[name + ".beta"], self.bn[key], training, relu=True)

        def gateau(h, g, prefix):
            weights = {k: P[f"{prefix}.{k}"] for k in GATEAU_WEIGHTS}
            return gateau_op(h, g, batch.src, batch.dst, weights, cfg.slope, cfg.attention)

        h = linear(Tensor(batch.node_x.astype(dtype, copy=False)), "embed.node")
        g = linear(Tensor(batch.edge_x.astype(dtype, copy=False)), "embed.edge")
        for blk in range(cfg.blocks):
            x, y = h, g
            for j in range(2):
                pre = f"block{blk}.bn{j}"
                x = bnr(x, pre + ".node")
                y = bnr(y, pre + ".edge")
                x, y = gateau(x, y, f"block{blk}.gat{j}")
            h, g = ad.add(h, x), ad.add(g, y)

        v = bnr(h, "value.bn0")
        v = bnr(linear(v, "value.linear"), "value.bn1")
        pooled = attention_pool(v, P["value.pool.a"], batch.node_graph, batch.num_graphs, cfg.slope)
        value = ad.tanh(linear(ad.relu(pooled), "value.out"))

        q = bnr(g, "policy.bn0")
        q = bnr(linear(q, "policy.linear"), "policy.bn1")
        logits = linear(q, "policy.out")
        return ad.reshape(value, (-1,)), ad.reshape(logits, (-1,))

    def evaluate(self, feature_sets: list[FeatureSet], graph: MoveGraph) -> tuple[np.ndarray, np.ndarray]:
        """Inference: values ``(B,)`` and raw edge logits ``(B, E)``."""
        batch = GraphBatch.from_features(feature_sets, graph)
        value, logits = self.forward(batch, training=False)
        return value.data, logits.data.reshape(len(feature_sets), graph.edge_count)


def attention_pool(h, a, node_graph, num_graphs: int, slope: float = 0.2) -> Tensor:
    """Softmax-weighted sum of node rows per graph."""
    h = ad._wrap(h)
    if h.shape[0] == 0:
        raise ValueError("cannot pool an empty graph")
    weights = ad.segment_softmax(ad.leaky_relu(ad.matmul(h, a), slope), node_graph, num_graphs)
    return ad.segment_sum(ad.mul(ad.reshape(weights, (-1, 1)), h), node_graph, num_graphs)


GATEAU_WEIGHTS = ("w_u", "w_v", "w_e", "w_0", "w_h", "w_g", "a")


def _gateau_forward(h, g, src, dst, w, slope, attention):
    seg, nbr = (src, dst) if attention == "out" else (dst, src)
    n = len(h)
    g_new = (h @ w["w_u"])[src] + g @ w["w_e"] + (h @ w["w_v"])[dst]
    h_new = h @ w["w_0"]
    scores = np.zeros(len(src), dtype=g_new.dtype)
    alpha = scores
    if len(src):
        scores = g_new @ w["a"]
        alpha = ad.segment_softmax(np.where(scores > 0, scores, slope * scores), seg, n).data
        msg = (h @ w["w_h"])[nbr] + g @ w["w_g"]
        h_new = h_new + ad._scatter_rows(alpha[:, None] * msg, seg, n)
    return h_new, g_new, scores, alpha


def gateau_layer(h, g, src, dst, weights: dict[str, np.ndarray], slope: float = 0.2,
                 attention: str = "out") -> tuple[np.ndarray, np.ndarray]:
    """One standalone GATEAU layer on plain arrays (inference only)."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    h_new, g_new, _, _ = _gateau_forward(np.asarray(h), np.asarray(g), src, dst, weights, slope, attention)
    return h_new, g_new


def gateau_op(h, g, src, dst, weights: dict, slope: float = 0.2,
              attention: str = "out") -> tuple[Tensor, Tensor]:
    """Differentiable GATEAU layer as one fused op.

    Only the outputs and the per-edge attention weights are kept for the
    backward pass; per-edge messages are recomputed there. This keeps
    training memory to a few edge-sized arrays per layer.
    """
    h, g = ad._wrap(h), ad._wrap(g)
    W = {k: ad._wrap(weights[k]) for k in GATEAU_WEIGHTS}
    w = {k: t.data for k, t in W.items()}
    hd, gd = h.data, g.data
    n = len(hd)
    seg, nbr = (src, dst) if attention == "out" else (dst, src)
    h_new, g_new, scores, alpha = _gateau_forward(hd, gd, src, dst, w, slope, attention)

    def bw(grads):
        dh_new, dg_new = grads
        dt = hd.dtype
        dw = {"w_0": hd.T @ dh_new}
        dh = dh_new @ w["w_0"].T
        dG = dg_new
        if len(src):
            msg = (hd @ w["w_h"])[nbr] + gd @ w["w_g"]
            d_weighted = dh_new[seg]
            d_alpha = np.einsum("ij,ij->i", d_weighted, msg)
            del msg
            d_msg = alpha[:, None] * d_weighted
            del d_weighted
            d_hm = ad._scatter_rows(d_msg, nbr, n)
            dh = dh + d_hm @ w["w_h"].T
            dw["w_h"] = hd.T @ d_hm
            dg = d_msg @ w["w_g"].T
            dw["w_g"] = gd.T @ d_msg
            del d_msg
            inner = ad._scatter_rows(alpha * d_alpha, seg, n)
            d_scores = (alpha * (d_alpha - inner[seg]) * np.where(scores > 0, 1.0, slope)).astype(dt, copy=False)
            dw["a"] = g_new.T @ d_scores
            dG = dG + d_scores[:, None] * w["a"][None, :]
        else:
            dg = np.zeros_like(gd)
            for k in ("w_h", "w_g", "a"):
                dw[k] = np.zeros_like(w[k])
        d_u = ad._scatter_rows(dG, src, n)
        d_v = ad._scatter_rows(dG, dst, n)
        dh = dh + d_u @ w["w_u"].T + d_v @ w["w_v"].T
        dw["w_u"] = hd.T @ d_u
        dw["w_v"] = hd.T @ d_v
        dg = dg + dG @ w["w_e"].T
        dw["w_e"] = gd.T @ dG
        ad._accumulate(h, dh)
        ad._accumulate(g, dg)
        for k, t in W.items():
            ad._accumulate(t, dw[k])

    h_out, g_out = ad.fused([h_new, g_new], (h, g, *W.values()), bw)
    return h_out, g_out


def model_forward(fs: FeatureSet, graph: MoveGraph, net: GateauNet,
                  mode: str = "inference") -> tuple[float, np.ndarray]:
    """Value and the masked policy over the full action space of ``graph``."""
    if mode not in ("train", "inference"):
        raise ValueError("mode must be 'train' or 'inference'")
    batch = GraphBatch.from_features([fs], graph)
    value, logits = net.forward(batch, training=mode == "train")
    edge_policy = masked_softmax(logits.data, batch.legal)
    policy = np.zeros(graph.variant.action_count, dtype=np.float64)
    policy[graph.action] = edge_policy
    return float(value.data[0]), policy


def masked_softmax(logits: np.ndarray, legal: np.ndarray) -> np.ndarray:
    out = np.zeros(len(logits), dtype=np.float64)
    if not legal.any():
        return out
    z = logits[legal].astype(np.float64)
    z = np.exp(z - z.max())
    out[legal] = z / z.sum()
    return out
