"""Posterior encoder over the temporal graph.

Stacked time-aware attention layers produce one representation per
observation; a temporal self-attention pool summarizes each object's
sequence toward the system start time; a perceptron head maps the summary
to a diagonal Gaussian over the latent initial state.

Variants (ablations): "full", "first", "mean", "no-att", "no-pe",
"fixed-pe".
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import MLP, Linear, Matrix, collect_parameters
from .temporal_graph import TemporalGraph, temporal_encode

VARIANTS = ("full", "first", "mean", "no-att", "no-pe", "fixed-pe")


class GnnLayerParams:
    def __init__(self, rng, d: int, name: str):
        self.w_q = Matrix(rng, d, d, f"{name}.w_q")
        self.w_k_self = Matrix(rng, d, d, f"{name}.w_k_self")
        self.w_k_nbr = Matrix(rng, d, d, f"{name}.w_k_nbr")
        self.w_v_self = Matrix(rng, d, d, f"{name}.w_v_self")
        self.w_v_nbr = Matrix(rng, d, d, f"{name}.w_v_nbr")
        self.w_t = Matrix(rng, d + 1, d, f"{name}.w_t")

    def named_parameters(self):
        return collect_parameters(
            [self.w_q, self.w_k_self, self.w_k_nbr, self.w_v_self, self.w_v_nbr, self.w_t]
        )


class EncoderParams:
    def __init__(self, rng, n_features: int = 4, d: int = 64, d_z: int = 16,
                 n_layers: int = 2, posterior_hidden: int = 128,
                 te_base: float = 10000.0, name: str = "encoder"):
        self.d = d
        self.d_z = d_z
        self.te_base = te_base
        self.embed = Linear(rng, n_features, d, f"{name}.embed")
        self.layers = [GnnLayerParams(rng, d, f"{name}.layer{l}") for l in range(n_layers)]
        self.w_t_pool = Matrix(rng, d + 1, d, f"{name}.w_t_pool")
        self.w_a = Matrix(rng, d, d, f"{name}.w_a")
        self.head = MLP(rng, d, posterior_hidden, 2 * d_z, f"{name}.head")

    def named_parameters(self):
        named = self.embed.named_parameters()
        for lay in self.layers:
            named.extend(lay.named_parameters())
        named.extend(collect_parameters([self.w_t_pool, self.w_a]))
        named.extend(self.head.named_parameters())
        return named


def _expand_cols(v: Tensor, d: int) -> Tensor:
    """(n,) -> (n, d) by explicit outer product with ones."""
    return ad.reshape(v, (-1, 1)) @ Tensor(np.ones((1, d)))


def time_aware_message(h_s: Tensor, dt: np.ndarray, w_t: Matrix, d: int,
                       variant: str = "full", te_base: float = 10000.0,
                       te: Tensor | None = None) -> Tensor:
    """Nonlinear time transform of sender representations.

    h_hat = relu(W_t [h_s || dt]) + TE(dt); the variants drop the TE term
    (no-pe) or the learned path (fixed-pe).
    """
    if te is None and variant != "no-pe":
        te = Tensor(temporal_encode(dt, d, base=te_base))
    if variant == "fixed-pe":
        return h_s + te
    dt_col = Tensor(np.asarray(dt, dtype=np.float64).reshape(-1, 1))
    transformed = ad.relu(w_t(ad.concat([h_s, dt_col], axis=-1)))
    if variant == "no-pe":
        return transformed
    return transformed + te


def attention_weights(scores: Tensor, dst: np.ndarray, n_nodes: int,
                      uniform: bool = False) -> Tensor:
    """Softmax of raw scores over each destination node's incident edges."""
    if uniform:
        deg = np.bincount(dst, minlength=n_nodes).astype(np.float64)
        return Tensor(1.0 / deg[dst])
    # Per-segment max subtraction; a per-segment constant leaves the softmax
    # (and its gradient) unchanged while guarding against overflow.
    seg_max = np.full(n_nodes, -np.inf)
    np.maximum.at(seg_max, dst, scores.values)
    e = ad.exp(scores - Tensor(seg_max[dst]))
    denom = ad.segment_sum(ad.reshape(e, (-1, 1)), dst, n_nodes)
    return e / ad.reshape(ad.gather(denom, dst), (-1,))


def gnn_layer(graph: TemporalGraph, h: Tensor, layer: GnnLayerParams,
              variant: str = "full", te_base: float = 10000.0,
              te: Tensor | None = None) -> Tensor:
    """One propagation step: residual plus relu of attention-weighted messages."""
    if graph.n_edges == 0:
        return h
    d = h.shape[1]
    n_self = graph.n_self_edges

    h_src = ad.gather(h, graph.src)
    h_hat = time_aware_message(h_src, graph.dt, layer.w_t, d, variant, te_base, te)
    hh_self, hh_nbr = h_hat[:n_self], h_hat[n_self:]
    keys = ad.concat([layer.w_k_self(hh_self), layer.w_k_nbr(hh_nbr)], axis=0)
    msgs = ad.concat([layer.w_v_self(hh_self), layer.w_v_nbr(hh_nbr)], axis=0)

    q_dst = ad.gather(layer.w_q(h), graph.dst)
    scores = ad.scale((keys * q_dst).sum(axis=1), 1.0 / math.sqrt(d))
    weights = attention_weights(scores, graph.dst, graph.n_nodes,
                                uniform=(variant == "no-att"))
    weighted = _expand_cols(weights, d) * msgs
    return h + ad.relu(ad.segment_sum(weighted, graph.dst, graph.n_nodes))


def sequence_aggregate(h: Tensor, times: np.ndarray, obj_ids: np.ndarray,
                       n_objects: int, t_start: float, params: EncoderParams,
                       variant: str = "full") -> Tensor:
    """Pool each object's observation representations into one vector.

    Representations are first re-transformed toward t_start, so the pooled
    vector changes when the system start time changes.
    """
    d = params.d
    counts = np.bincount(obj_ids, minlength=n_objects).astype(np.float64)
    if np.any(counts == 0):
        raise ValueError("every object needs at least one observation")
    dt0 = np.asarray(times, dtype=np.float64) - t_start
    agg_variant = variant if variant in ("no-pe", "fixed-pe") else "full"
    h_hat = time_aware_message(h, dt0, params.w_t_pool, d, agg_variant, params.te_base)

    inv = Tensor((1.0 / counts).reshape(-1, 1) * np.ones((1, d)))
    mean_h = ad.segment_sum(h_hat, obj_ids, n_objects) * inv
    if variant == "mean":
        return mean_h
    if variant == "first":
        first_idx = np.zeros(n_objects, dtype=np.intp)
        order = np.lexsort((times, obj_ids))
        seen = set()
        for node in order:
            o = obj_ids[node]
            if o not in seen:
                seen.add(o)
                first_idx[o] = node
        return ad.gather(h_hat, first_idx)
    a = ad.tanh(mean_h @ params.w_a.W)
    gate = ad.sigmoid((h_hat * ad.gather(a, obj_ids)).sum(axis=1))
    return ad.segment_sum(_expand_cols(gate, d) * h_hat, obj_ids, n_objects) * inv


def posterior(u: Tensor, params: EncoderParams) -> tuple[Tensor, Tensor]:
    """Gaussian head: first half mean, second half softplus std (floored)."""
    out = params.head(u)
    d_z = params.d_z
    mu = out[:, :d_z]
    sigma = ad.softplus(out[:, d_z:]) + 1e-6
    return mu, sigma


def encode_graph(graph: TemporalGraph, params: EncoderParams,
                 variant: str = "full") -> tuple[Tensor, Tensor]:
    """Full encoder pass over a (possibly batch-merged) temporal graph."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    counts = np.bincount(graph.obj_ids, minlength=graph.n_objects)
    if np.any(counts == 0):
        raise ValueError("every object needs at least one observation")
    h = params.embed(Tensor(graph.features))
    te = None
    if graph.n_edges and variant != "no-pe":
        te = Tensor(temporal_encode(graph.dt, params.d, base=params.te_base))
    for layer in params.layers:
        h = gnn_layer(graph, h, layer, variant, params.te_base, te)
    u = sequence_aggregate(h, graph.times, graph.obj_ids, graph.n_objects,
                           graph.t_start, params, variant)
    return posterior(u, params)


def encode_all(obs, graph: TemporalGraph, params: EncoderParams,
               variant: str = "full") -> tuple[Tensor, Tensor]:
    """Posterior (mu, sigma) per object for one observation set."""
    if any(c == 0 for c in obs.counts()):
        raise ValueError("every object needs at least one observation")
    return encode_graph(graph, params, variant)
