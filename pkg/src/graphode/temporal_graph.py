"""Observation-level temporal graph construction.

One node per observation; directed edges between observations of related
objects (neighbor kind) and between observations of the same object
(self-temporal kind), each carrying the signed gap dt = t(dst) - t(src).
Edges whose |dt| exceeds the slicing-window threshold are dropped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import InteractionGraph, ObservationSet

log = logging.getLogger(__name__)

KIND_SELF = 0
KIND_NEIGHBOR = 1


@dataclass
class TemporalGraph:
    obj_ids: np.ndarray  # (n_nodes,) owning object per node
    times: np.ndarray  # (n_nodes,)
    features: np.ndarray  # (n_nodes, D)
    src: np.ndarray  # (n_edges,)
    dst: np.ndarray  # (n_edges,)
    dt: np.ndarray  # (n_edges,) t[dst] - t[src]
    kind: np.ndarray  # (n_edges,) KIND_SELF or KIND_NEIGHBOR
    t_start: float
    n_objects: int

    @property
    def n_nodes(self) -> int:
        return len(self.times)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    @property
    def n_self_edges(self) -> int:
        # Edges are stored self-temporal block first.
        return int(np.searchsorted(self.kind, KIND_NEIGHBOR))


def window_threshold(max_len: float, min_len: float, observed_ratio: float) -> float:
    """Slicing-window threshold from the extreme observation-sequence lengths.

    Monotone decreasing in the observed ratio; a negative value is clamped
    to zero (and logged), which filters every edge with a nonzero gap.
    """
    if max_len <= 0:
        raise ValueError("max_len must be positive")
    if not 0.0 < observed_ratio <= 1.0:
        raise ValueError("observed_ratio must lie in (0, 1]")
    value = (max_len - min_len * observed_ratio) / max_len
    if value < 0.0:
        log.warning("window threshold %.6f clamped to 0", value)
        return 0.0
    return value


def build_temporal_graph(obs: ObservationSet, threshold: float,
                         t_start: float = 0.0) -> TemporalGraph:
    """Assemble the full candidate edge set, then apply the window filter.

    Expects timestamps already rescaled so the threshold (dimensionless)
    is meaningful.
    """
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    counts = obs.counts()
    if sum(counts) == 0:
        raise ValueError("empty observation set")

    times = np.concatenate([np.asarray(t, dtype=np.float64) for t in obs.times])
    features = np.concatenate([np.asarray(x, dtype=np.float64) for x in obs.features])
    obj_ids = np.concatenate(
        [np.full(c, i, dtype=np.intp) for i, c in enumerate(counts)]
    )
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.intp)

    def _cross(src_nodes, dst_nodes, drop_diagonal):
        s = np.repeat(src_nodes, len(dst_nodes))
        d = np.tile(dst_nodes, len(src_nodes))
        if drop_diagonal:
            keep = s != d
            s, d = s[keep], d[keep]
        return s, d

    src_parts, dst_parts, kind_parts = [], [], []
    # Self-temporal: all ordered pairs within one object's observations.
    for i in range(obs.n_objects):
        nodes = np.arange(offsets[i], offsets[i + 1], dtype=np.intp)
        if len(nodes) > 1:
            s, d = _cross(nodes, nodes, drop_diagonal=True)
            src_parts.append(s)
            dst_parts.append(d)
            kind_parts.append(np.full(len(s), KIND_SELF, dtype=np.intp))
    # Neighbor: all ordered pairs across each related object pair.
    for i, j in sorted(obs.graph.edges):
        s, d = _cross(
            np.arange(offsets[i], offsets[i + 1], dtype=np.intp),
            np.arange(offsets[j], offsets[j + 1], dtype=np.intp),
            drop_diagonal=False,
        )
        src_parts.append(s)
        dst_parts.append(d)
        kind_parts.append(np.full(len(s), KIND_NEIGHBOR, dtype=np.intp))

    if src_parts:
        src = np.concatenate(src_parts)
        dst = np.concatenate(dst_parts)
        kind = np.concatenate(kind_parts)
    else:
        src = dst = kind = np.zeros(0, dtype=np.intp)

    dt = times[dst] - times[src]
    keep = np.abs(dt) <= threshold
    src, dst, dt, kind = src[keep], dst[keep], dt[keep], kind[keep]

    # Stable sort by kind: self-temporal block first, neighbor block second,
    # so layer code can slice per-kind without a scatter.
    order = np.argsort(kind, kind="stable")
    return TemporalGraph(
        obj_ids=obj_ids, times=times, features=features,
        src=src[order], dst=dst[order], dt=dt[order], kind=kind[order],
        t_start=float(t_start), n_objects=obs.n_objects,
    )


def temporal_encode(dt, d: int, base: float = 10000.0) -> np.ndarray:
    """Sinusoidal encoding of a (possibly vector of) time gap(s).

    Component 2i is sin(dt / base^(2i/d)), component 2i+1 the matching cos.
    """
    if d < 2 or d % 2 != 0:
        raise ValueError("encoding dimension must be even and >= 2")
    dt = np.asarray(dt, dtype=np.float64)
    i = np.arange(d // 2)
    freq = 1.0 / base ** (2.0 * i / d)
    angles = dt[..., None] * freq
    out = np.empty(dt.shape + (d,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def dump_text(graph: TemporalGraph) -> str:
    """Line-oriented debug dump (node table then edge table)."""
    lines = [f"# nodes {graph.n_nodes} objects {graph.n_objects} t_start {graph.t_start:.12g}"]
    for n in range(graph.n_nodes):
        feats = " ".join(f"{v:.12g}" for v in graph.features[n])
        lines.append(f"node {n} obj {graph.obj_ids[n]} t {graph.times[n]:.12g} x {feats}")
    lines.append(f"# edges {graph.n_edges}")
    for e in range(graph.n_edges):
        kind = "self" if graph.kind[e] == KIND_SELF else "nbr"
        lines.append(
            f"edge {graph.src[e]} -> {graph.dst[e]} dt {graph.dt[e]:.12g} kind {kind}"
        )
    return "\n".join(lines) + "\n"
