"""Generative half: graph-coupled latent ODE and the Gaussian decoder.

The vector field couples every object to its neighbors through one
relation perceptron and to every non-neighbor through a second one; a
fixed-step fourth-order Runge-Kutta solver integrates on a densified
grid with every step recorded on the tape, so gradients flow straight
back through the integration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import InteractionGraph
from .nn import MLP, Linear, collect_parameters


@dataclass
class PairSet:
    """Ordered index pairs driving the vector field: observed relations
    and latent (non-edge) interactions.  Batched systems concatenate
    their pair lists with row offsets."""

    obs: np.ndarray  # (E, 2)
    lat: np.ndarray  # (E', 2)

    @staticmethod
    def from_graph(graph: InteractionGraph) -> "PairSet":
        return PairSet(obs=graph.directed_pairs(), lat=graph.non_edge_pairs())

    @staticmethod
    def merge(pair_sets, offsets) -> "PairSet":
        obs = [ps.obs + off for ps, off in zip(pair_sets, offsets) if len(ps.obs)]
        lat = [ps.lat + off for ps, off in zip(pair_sets, offsets) if len(ps.lat)]
        empty = np.zeros((0, 2), dtype=np.intp)
        return PairSet(
            obs=np.concatenate(obs) if obs else empty,
            lat=np.concatenate(lat) if lat else empty,
        )


class OdeFuncParams:
    def __init__(self, rng, d_state: int, d_e: int = 128, hidden: int = 128,
                 name: str = "odefunc"):
        self.d_e = d_e
        self.rel_obs = MLP(rng, 2 * d_state, hidden, d_e, f"{name}.rel_obs")
        self.rel_lat = MLP(rng, 2 * d_state, hidden, d_e, f"{name}.rel_lat")
        self.obj = MLP(rng, d_e, hidden, d_state, f"{name}.obj")

    def named_parameters(self):
        return collect_parameters([self.rel_obs, self.rel_lat, self.obj])


class DecoderParams:
    def __init__(self, rng, d_state: int, n_features: int, sigma: float = 0.1,
                 name: str = "decoder"):
        if sigma <= 0:
            raise ValueError("decoder noise std must be positive")
        self.sigma = sigma
        self.out = Linear(rng, d_state, n_features, f"{name}.out")

    def named_parameters(self):
        return self.out.named_parameters()


def ode_func(z: Tensor, pairs, params: OdeFuncParams) -> Tensor:
    """dZ/dt for all objects: per-pair relation embeddings summed into the
    receiving object, then mapped through the object perceptron."""
    if isinstance(pairs, InteractionGraph):
        pairs = PairSet.from_graph(pairs)
    n = z.shape[0]
    agg = None
    for pair_arr, mlp in ((pairs.obs, params.rel_obs), (pairs.lat, params.rel_lat)):
        if len(pair_arr) == 0:
            continue
        zi = ad.gather(z, pair_arr[:, 0])
        zj = ad.gather(z, pair_arr[:, 1])
        contrib = ad.segment_sum(mlp(ad.concat([zi, zj], axis=-1)), pair_arr[:, 0], n)
        agg = contrib if agg is None else agg + contrib
    if agg is None:
        agg = Tensor(np.zeros((n, params.d_e)))
    return params.obj(agg)


def _rk4_step(func, z: Tensor, h: float) -> Tensor:
    k1 = func(z)
    k2 = func(z + ad.scale(k1, 0.5 * h))
    k3 = func(z + ad.scale(k2, 0.5 * h))
    k4 = func(z + ad.scale(k3, h))
    return z + ad.scale(k1 + ad.scale(k2, 2.0) + ad.scale(k3, 2.0) + k4, h / 6.0)


def rk4_solve(func, z0: Tensor, query_times, densify: int = 5,
              t_start: float = 0.0) -> list:
    """Classical RK4 on a densified grid; returns the state at each query time.

    Each interval between consecutive query times (and from t_start to the
    first) is split into `densify` equal steps.
    """
    if densify < 1:
        raise ValueError("densify must be >= 1")
    query_times = np.asarray(query_times, dtype=np.float64)
    if np.any(np.diff(query_times) < 0):
        raise ValueError("query times must be sorted ascending")
    if len(query_times) and query_times[0] < t_start - 1e-12:
        raise ValueError("first query time precedes t_start")
    states = []
    z, t = z0, t_start
    for tq in query_times:
        if tq > t + 1e-15:
            h = (tq - t) / densify
            for _ in range(densify):
                # Checkpointed: only z survives on the tape per step, the
                # four stage evaluations are recomputed during backward.
                z = ad.checkpoint(lambda s, h=h: _rk4_step(func, s, h), z)
            t = tq
        states.append(z)
    return states


def decode(z: Tensor, params: DecoderParams, targets=None):
    """Predicted observations; optionally the Gaussian log-likelihood of
    given targets (summed over feature dims, per row)."""
    o_hat = params.out(z)
    if targets is None:
        return o_hat, None
    targets = targets if isinstance(targets, Tensor) else Tensor(targets)
    d = o_hat.shape[-1]
    resid = (targets - o_hat) * (1.0 / params.sigma)
    const = -d * (math.log(params.sigma) + 0.5 * math.log(2.0 * math.pi))
    loglik = ad.scale((resid * resid).sum(axis=-1), -0.5) + const
    return o_hat, loglik


def append_aux_dims(z: Tensor, d_aux: int) -> Tensor:
    """Zero-initialized auxiliary latent coordinates, appended at t=0."""
    if d_aux == 0:
        return z
    return ad.concat([z, Tensor(np.zeros((z.shape[0], d_aux)))], axis=-1)


def sample_trajectories(mu: Tensor, sigma: Tensor, pairs, ode_params: OdeFuncParams,
                        dec_params: DecoderParams, query_times, d_aux: int = 64,
                        eps=None, densify: int = 5, t_start: float = 0.0) -> list:
    """Draw z0 (or take the mean when eps is None), integrate, decode.

    Returns one predicted observation tensor (N, D) per query time.
    """
    z0 = mu if eps is None else mu + sigma * Tensor(eps)
    z0 = append_aux_dims(z0, d_aux)
    states = rk4_solve(lambda z: ode_func(z, pairs, ode_params), z0,
                       query_times, densify=densify, t_start=t_start)
    return [decode(z, dec_params)[0] for z in states]
