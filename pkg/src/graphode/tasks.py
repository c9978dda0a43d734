"""Interpolation / extrapolation split construction.

Interpolation: condition on a per-object random subset of observations,
reconstruct every observation on the same horizon, system start at 0.
Extrapolation: condition on a subset of the first half, reconstruct the
second half, system start at the boundary.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .data import ObservationSet
from .temporal_graph import build_temporal_graph, window_threshold

log = logging.getLogger(__name__)


@dataclass
class TaskSplit:
    conditioning: ObservationSet
    targets: ObservationSet
    t_start: float
    observed_ratio: float
    base_counts: list  # pre-subset sequence lengths on the encoder horizon

    def threshold(self) -> float:
        """Slicing-window threshold from the sequence length extremes."""
        counts = [c for c in self.base_counts if c > 0]
        return window_threshold(max(counts), min(counts), self.observed_ratio)

    def encoder_graph(self):
        return build_temporal_graph(self.conditioning, self.threshold(), self.t_start)


def _ratio_subset(times, feats, ratio: float, rng) -> tuple:
    n = len(times)
    k = min(n, max(1, math.ceil(ratio * n)))
    if k < 1:
        log.warning("ratio %.3f left zero conditioning points; keeping one", ratio)
        k = 1
    idx = np.sort(rng.choice(n, size=k, replace=False))
    return times[idx].copy(), feats[idx].copy()


def make_interpolation_split(obs: ObservationSet, ratio: float, rng) -> TaskSplit:
    if not 0.0 < ratio <= 1.0:
        raise ValueError("observed ratio must lie in (0, 1]")
    if isinstance(rng, int):
        rng = np.random.default_rng(rng)
    times, feats = [], []
    for t, x in zip(obs.times, obs.features):
        ts, xs = _ratio_subset(t, x, ratio, rng)
        times.append(ts)
        feats.append(xs)
    cond = ObservationSet(times, feats, obs.graph, obs.horizon)
    return TaskSplit(conditioning=cond, targets=obs, t_start=0.0,
                     observed_ratio=ratio, base_counts=obs.counts())


def split_halves(obs: ObservationSet, boundary: float) -> tuple:
    """Partition observations at a time boundary: strictly-before vs at-or-after."""
    first_t, first_x, second_t, second_x = [], [], [], []
    for t, x in zip(obs.times, obs.features):
        mask = t < boundary
        first_t.append(t[mask].copy())
        first_x.append(x[mask].copy())
        second_t.append(t[~mask].copy())
        second_x.append(x[~mask].copy())
    first = ObservationSet(first_t, first_x, obs.graph, obs.horizon)
    second = ObservationSet(second_t, second_x, obs.graph, obs.horizon)
    return first, second


def make_extrapolation_split(obs_first: ObservationSet, obs_second: ObservationSet,
                             ratio: float, rng, t_start: float) -> TaskSplit:
    if not 0.0 < ratio <= 1.0:
        raise ValueError("observed ratio must lie in (0, 1]")
    if isinstance(rng, int):
        rng = np.random.default_rng(rng)
    if sum(obs_first.counts()) == 0 or sum(obs_second.counts()) == 0:
        raise ValueError("both halves must be non-empty")
    times, feats = [], []
    for t, x in zip(obs_first.times, obs_first.features):
        if len(t) == 0:
            raise ValueError("an object has no first-half observations to condition on")
        ts, xs = _ratio_subset(t, x, ratio, rng)
        times.append(ts)
        feats.append(xs)
    cond = ObservationSet(times, feats, obs_first.graph, obs_first.horizon)
    return TaskSplit(conditioning=cond, targets=obs_second, t_start=float(t_start),
                     observed_ratio=ratio, base_counts=obs_first.counts())


def training_split(sample_obs: ObservationSet, task: str, ratio: float, rng) -> TaskSplit:
    """Split one rescaled-to-[0,1] observation set for a training step."""
    if task == "interpolation":
        return make_interpolation_split(sample_obs, ratio, rng)
    if task == "extrapolation":
        first, second = split_halves(sample_obs, 0.5)
        return make_extrapolation_split(first, second, ratio, rng, t_start=0.5)
    raise ValueError(f"unknown task {task!r}")
