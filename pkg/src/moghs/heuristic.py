"""Learned design-value predictor conditioned on the preference weight.

A small message-passing network over the design tree: every node carries a
symbol one-hot, standardized physical attributes, a terminal flag, and the
episode's preference weight; three rounds of neighbor-mean passing feed a
mean+max pooled readout that predicts one value per objective.  Forward,
backward, and the Adam update are written out explicitly in NumPy so the
gradients are exact and auditable; tanh activations keep the loss smooth
for finite-difference verification.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import kernels
from .accel import NUMBA_ENABLED
from .grammar import DesignGraph, Grammar

PHYS_FIELDS = ("length", "radius", "density", "attach_angle", "torque_limit")


@dataclass(frozen=True)
class NetConfig:
    n_symbols: int
    m: int  # preference-weight entries appended to every node
    out_dim: int  # m for the universal net, 1 for fixed-weight subproblems
    hidden: int = 64
    phys_scale: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)

    @property
    def base_dim(self) -> int:
        return self.n_symbols + len(PHYS_FIELDS) + 1

    @property
    def feature_dim(self) -> int:
        return self.base_dim + self.m


def net_config_for(grammar: Grammar, m: int, out_dim: int | None = None, hidden: int = 64) -> NetConfig:
    """Standardization constants come from the grammar's attribute ranges."""
    scale = np.ones(len(PHYS_FIELDS))
    for rule in grammar.rules:
        for node in rule.rhs_nodes:
            for i, name in enumerate(PHYS_FIELDS):
                scale[i] = max(scale[i] if scale[i] != 1.0 else 0.0, abs(getattr(node, name)))
    scale[scale < 1e-9] = 1.0
    return NetConfig(
        n_symbols=len(grammar.symbols),
        m=m,
        out_dim=m if out_dim is None else out_dim,
        hidden=hidden,
        phys_scale=tuple(scale),
    )


class HeuristicParams:
    """Weights, biases, and Adam moment buffers of one network."""

    def __init__(self, cfg: NetConfig, weights, biases, lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.cfg = cfg
        self.W = weights
        self.b = biases
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.adam_m = [np.zeros_like(w) for w in weights] + [np.zeros_like(b) for b in biases]
        self.adam_v = [np.zeros_like(w) for w in weights] + [np.zeros_like(b) for b in biases]

    def tensors(self):
        return self.W + self.b


def init_params(cfg: NetConfig, rng: np.random.Generator, lr: float = 1e-4) -> HeuristicParams:
    """Kaiming-uniform hidden layers; the readout head starts at zero so an
    untrained network is neutral."""
    h = cfg.hidden
    shapes = [
        (2 * cfg.feature_dim, h),
        (2 * h, h),
        (2 * h, h),
        (2 * h, h),  # pooled mean+max readout trunk
        (h, cfg.out_dim),
    ]
    weights = []
    for fan_in, fan_out in shapes[:-1]:
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    weights.append(np.zeros(shapes[-1]))
    biases = [np.zeros(s[1]) for s in shapes]
    return HeuristicParams(cfg, weights, biases, lr=lr)


def featurize_base(design: DesignGraph, cfg: NetConfig):
    """Weight-independent node features and the bidirectional edge list."""
    n = len(design.nodes)
    x = np.zeros((n, cfg.base_dim))
    scale = np.asarray(cfg.phys_scale)
    for i, node in enumerate(design.nodes):
        x[i, node.symbol.id] = 1.0
        phys = np.array([getattr(node, f) for f in PHYS_FIELDS])
        x[i, cfg.n_symbols : cfg.n_symbols + 5] = phys / scale
        x[i, cfg.n_symbols + 5] = 1.0 if node.symbol.terminal else 0.0
    if design.edges:
        e = np.array(design.edges, dtype=np.int64)
        edges = np.vstack([e, e[:, ::-1]])
    else:
        edges = np.empty((0, 2), dtype=np.int64)
    return x, edges


def featurize(design: DesignGraph, omega, cfg: NetConfig):
    """Node feature matrix [n, F] with the weight block, plus edges."""
    base, edges = featurize_base(design, cfg)
    omega = np.asarray(omega, dtype=float)
    x = np.hstack([base, np.tile(omega, (len(base), 1))])
    return x, edges


class FeatureBatch:
    """Several (design, weight) graphs packed into one node matrix.

    Graphs are contiguous segments of rows; adjacency is one block-diagonal
    sparse matrix, so a single forward pass serves the whole batch.
    """

    def __init__(self, x, adj, deg, starts, sizes, seg_ids):
        self.x = x
        self.adj = adj
        self.deg = deg
        self.starts = starts
        self.sizes = sizes
        self.seg_ids = seg_ids

    @classmethod
    def build(cls, items, cfg: NetConfig, base_cache: dict | None = None):
        """items: iterable of (design, omega) or (design, omega, cache_key)."""
        blocks = []
        edge_blocks = []
        sizes = []
        offset = 0
        for item in items:
            design, omega = item[0], item[1]
            key = item[2] if len(item) > 2 else None
            if base_cache is not None and key is not None and key in base_cache:
                base, edges = base_cache[key]
            else:
                base, edges = featurize_base(design, cfg)
                if base_cache is not None and key is not None:
                    base_cache[key] = (base, edges)
            n = len(base)
            omega = np.asarray(omega, dtype=float)
            blocks.append(np.hstack([base, np.tile(omega, (n, 1))]))
            if len(edges):
                edge_blocks.append(edges + offset)
            sizes.append(n)
            offset += n
        x = np.vstack(blocks)
        total = offset
        sizes = np.array(sizes, dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        seg_ids = np.repeat(np.arange(len(sizes)), sizes)
        if edge_blocks:
            ee = np.vstack(edge_blocks)
            adj = sp.csr_matrix(
                (np.ones(len(ee)), (ee[:, 0], ee[:, 1])), shape=(total, total)
            )
        else:
            adj = sp.csr_matrix((total, total))
        deg = np.maximum(np.asarray(adj.sum(axis=1)).reshape(-1, 1), 1.0)
        return cls(x, adj, deg, starts, sizes, seg_ids)

    @classmethod
    def build_grouped(cls, designs, omegas: np.ndarray, cfg: NetConfig,
                      base_cache: dict | None = None):
        """Pack every design paired with every row of ``omegas`` [W, m].

        Graph order is (design 0, omega 0..W-1), (design 1, ...), matching
        a row-major target layout.  Far cheaper than ``build`` when the
        same weight minibatch applies to all designs.
        """
        W = len(omegas)
        x_blocks = []
        edge_blocks = []
        sizes = []
        offset = 0
        for design, key in designs:
            if base_cache is not None and key in base_cache:
                base, edges = base_cache[key]
            else:
                base, edges = featurize_base(design, cfg)
                if base_cache is not None:
                    base_cache[key] = (base, edges)
            n = len(base)
            block = np.hstack([np.tile(base, (W, 1)), np.repeat(omegas, n, axis=0)])
            x_blocks.append(block)
            if len(edges):
                offs = offset + n * np.arange(W)
                edge_blocks.append((edges[None, :, :] + offs[:, None, None]).reshape(-1, 2))
            sizes.extend([n] * W)
            offset += n * W
        x = np.vstack(x_blocks)
        sizes = np.array(sizes, dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        seg_ids = np.repeat(np.arange(len(sizes)), sizes)
        if edge_blocks:
            ee = np.vstack(edge_blocks)
            adj = sp.csr_matrix((np.ones(len(ee)), (ee[:, 0], ee[:, 1])), shape=(offset, offset))
        else:
            adj = sp.csr_matrix((offset, offset))
        deg = np.maximum(np.asarray(adj.sum(axis=1)).reshape(-1, 1), 1.0)
        return cls(x, adj, deg, starts, sizes, seg_ids)


def _seg_pool_forward(h, starts, sizes):
    if NUMBA_ENABLED:
        return kernels.seg_pool_forward(h, starts, sizes)
    mean = np.add.reduceat(h, starts, axis=0) / sizes[:, None]
    mx = np.maximum.reduceat(h, starts, axis=0)
    return mean, mx


def _seg_pool_backward(h, mx, d_mean, d_max, starts, sizes, seg_ids):
    if NUMBA_ENABLED:
        return kernels.seg_pool_backward(h, mx, d_mean, d_max, starts, sizes)
    dh = d_mean[seg_ids] / sizes[seg_ids, None]
    tie = h == mx[seg_ids]
    counts = np.add.reduceat(tie.astype(float), starts, axis=0)
    return dh + tie * (d_max / counts)[seg_ids]


def _forward(params: HeuristicParams, batch: FeatureBatch):
    W, b = params.W, params.b
    hs = [batch.x]
    cats = []
    h = batch.x
    for layer in range(3):
        msg = (batch.adj @ h) / batch.deg
        cat = np.hstack([h, msg])
        h = np.tanh(cat @ W[layer] + b[layer])
        cats.append(cat)
        hs.append(h)
    mean_pool, max_pool = _seg_pool_forward(h, batch.starts, batch.sizes)
    pooled = np.hstack([mean_pool, max_pool])
    q = np.tanh(pooled @ W[3] + b[3])
    out = q @ W[4] + b[4]
    cache = (hs, cats, pooled, max_pool, q)
    return out, cache


def predict_batch(params: HeuristicParams, items, base_cache: dict | None = None) -> np.ndarray:
    batch = FeatureBatch.build(items, params.cfg, base_cache)
    out, _ = _forward(params, batch)
    return out


def predict(params: HeuristicParams, design: DesignGraph, omega) -> np.ndarray:
    """Predicted per-objective values (normalized reward scale)."""
    return predict_batch(params, [(design, omega)])[0]


def loss_and_grads(params: HeuristicParams, batch: FeatureBatch, targets: np.ndarray,
                   sample_weight: np.ndarray | None = None):
    """Summed squared error and exact gradients.

    ``sample_weight`` multiplies each graph's squared error, so a batch with
    duplicate (design, weight) samples can be collapsed to unique rows.
    """
    W = params.W
    out, (hs, cats, pooled, max_pool, q) = _forward(params, batch)
    diff = out - targets
    if sample_weight is None:
        loss = float((diff**2).sum())
        d_out = 2.0 * diff
    else:
        sw = sample_weight[:, None]
        loss = float((sw * diff**2).sum())
        d_out = 2.0 * sw * diff

    gW = [None] * 5
    gb = [None] * 5
    gW[4] = q.T @ d_out
    gb[4] = d_out.sum(axis=0)
    dq = d_out @ W[4].T
    dz4 = dq * (1.0 - q**2)
    gW[3] = pooled.T @ dz4
    gb[3] = dz4.sum(axis=0)
    d_pooled = dz4 @ W[3].T

    hidden = params.cfg.hidden
    d_mean = d_pooled[:, :hidden]
    d_max = d_pooled[:, hidden:]
    dh = _seg_pool_backward(
        hs[3], max_pool, d_mean, d_max, batch.starts, batch.sizes, batch.seg_ids
    )

    for layer in (2, 1, 0):
        h = hs[layer + 1]
        dz = dh * (1.0 - h**2)
        gW[layer] = cats[layer].T @ dz
        gb[layer] = dz.sum(axis=0)
        d_cat = dz @ W[layer].T
        width = d_cat.shape[1] // 2
        dh = d_cat[:, :width] + batch.adj.T @ (d_cat[:, width:] / batch.deg)

    return loss, gW + gb


def adam_step(params: HeuristicParams, grads) -> None:
    params.step += 1
    t = params.step
    b1, b2 = params.beta1, params.beta2
    tensors = params.tensors()
    for i, (p, g) in enumerate(zip(tensors, grads)):
        params.adam_m[i] = b1 * params.adam_m[i] + (1 - b1) * g
        params.adam_v[i] = b2 * params.adam_v[i] + (1 - b2) * g**2
        m_hat = params.adam_m[i] / (1 - b1**t)
        v_hat = params.adam_v[i] / (1 - b2**t)
        p -= params.lr * m_hat / (np.sqrt(v_hat) + params.eps)


def train_step(params: HeuristicParams, items, targets, base_cache: dict | None = None) -> float:
    """One Adam step on the summed squared error; returns the pre-step loss."""
    if not len(items):
        raise ValueError("empty training batch")
    batch = FeatureBatch.build(items, params.cfg, base_cache)
    return train_step_batch(params, batch, targets)


def train_step_batch(params: HeuristicParams, batch: FeatureBatch, targets,
                     sample_weight: np.ndarray | None = None) -> float:
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    loss, grads = loss_and_grads(params, batch, targets, sample_weight)
    if not np.isfinite(loss):
        raise RuntimeError(
            f"non-finite training loss at step {params.step}; "
            f"targets range [{targets.min()}, {targets.max()}]"
        )
    adam_step(params, grads)
    return loss


def save_params(params: HeuristicParams, path) -> None:
    cfg = params.cfg
    np.savez(
        path,
        **{f"W{i}": w for i, w in enumerate(params.W)},
        **{f"b{i}": b for i, b in enumerate(params.b)},
        **{f"m{i}": m for i, m in enumerate(params.adam_m)},
        **{f"v{i}": v for i, v in enumerate(params.adam_v)},
        step=params.step,
        lr=params.lr,
        betas=np.array([params.beta1, params.beta2, params.eps]),
        cfg=np.array(
            [cfg.n_symbols, cfg.m, cfg.out_dim, cfg.hidden], dtype=np.int64
        ),
        phys_scale=np.array(cfg.phys_scale),
    )


def load_params(path) -> HeuristicParams:
    data = np.load(path)
    n_symbols, m, out_dim, hidden = (int(v) for v in data["cfg"])
    cfg = NetConfig(n_symbols, m, out_dim, hidden, tuple(data["phys_scale"]))
    W = [data[f"W{i}"] for i in range(5)]
    b = [data[f"b{i}"] for i in range(5)]
    params = HeuristicParams(cfg, W, b, lr=float(data["lr"]),
                             beta1=float(data["betas"][0]),
                             beta2=float(data["betas"][1]),
                             eps=float(data["betas"][2]))
    params.adam_m = [data[f"m{i}"] for i in range(10)]
    params.adam_v = [data[f"v{i}"] for i in range(10)]
    params.step = int(data["step"])
    return params
