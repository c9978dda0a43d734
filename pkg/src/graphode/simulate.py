"""Ground-truth trajectory generators: springs and charged particles.

Both systems are 2D point particles of unit mass in a square box,
integrated with fixed-step leapfrog (kick-drift-kick) and subsampled on a
regular stride.  An energy accountant runs alongside the integrator so
tests can bound drift without re-deriving the physics.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .data import Dataset, InteractionGraph, ObservationSet, Sample, TrajectorySet


@dataclass
class SimConfig:
    n_objects: int = 5
    box_half_width: float | None = 5.0  # None disables walls
    integration_step: float = 0.001
    total_steps: int = 6000
    subsample_stride: int = 100
    interaction_probability: float = 0.5
    system_kind: str = "spring"
    rng_seed: int = 0
    spring_constant: float = 0.1
    charge_constant: float = 1.0
    softening: float = 1e-3
    init_pos_std: float = 0.5
    init_vel_std: float = 0.5

    def __post_init__(self):
        if self.n_objects < 1 or self.total_steps < 1 or self.subsample_stride < 1:
            raise ValueError("n_objects, total_steps, subsample_stride must be >= 1")
        if not 0.0 <= self.interaction_probability <= 1.0:
            raise ValueError("interaction_probability must lie in [0, 1]")
        if self.system_kind not in ("spring", "charged"):
            raise ValueError(f"unknown system kind {self.system_kind!r}")


def _pair_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    iu = np.triu_indices(n, k=1)
    return iu[0], iu[1]


def spring_accel(pos: np.ndarray, pairs: np.ndarray, k: float) -> np.ndarray:
    """Hooke forces F_ij = -k (x_i - x_j) over sampled undirected pairs."""
    acc = np.zeros_like(pos)
    if len(pairs):
        i, j = pairs[:, 0], pairs[:, 1]
        f = -k * (pos[i] - pos[j])
        np.add.at(acc, i, f)
        np.add.at(acc, j, -f)
    return acc


def charged_accel(pos, charges, c: float, eps_soft: float) -> np.ndarray:
    acc = np.zeros_like(pos)
    n = len(pos)
    i, j = _pair_indices(n)
    if len(i):
        diff = pos[i] - pos[j]
        r = np.sqrt((diff**2).sum(axis=1))
        f = (c * charges[i] * charges[j] / (r**3 + eps_soft))[:, None] * diff
        np.add.at(acc, i, f)
        np.add.at(acc, j, -f)
    return acc


def spring_energy(pos, vel, pairs, k: float) -> float:
    e = 0.5 * float((vel**2).sum())
    if len(pairs):
        diff = pos[pairs[:, 0]] - pos[pairs[:, 1]]
        e += 0.5 * k * float((diff**2).sum())
    return e


def charged_energy(pos, vel, charges, c: float) -> float:
    e = 0.5 * float((vel**2).sum())
    i, j = _pair_indices(len(pos))
    if len(i):
        r = np.sqrt(((pos[i] - pos[j]) ** 2).sum(axis=1))
        e += float((c * charges[i] * charges[j] / r).sum())
    return e


def _reflect(pos, vel, half_width: float):
    # Elastic walls: mirror position, negate the velocity component.
    for _ in range(16):
        over = pos > half_width
        under = pos < -half_width
        if not (over.any() or under.any()):
            break
        pos = np.where(over, 2 * half_width - pos, pos)
        pos = np.where(under, -2 * half_width - pos, pos)
        vel = np.where(over | under, -vel, vel)
    return pos, vel


def leapfrog(pos, vel, accel_fn, step: float, n_steps: int, half_width=None,
             record_every: int = 1, energy_fn=None):
    """Kick-drift-kick integration; records every `record_every` steps.

    Returns (times, positions, velocities, energies); energies is None
    when no energy_fn is given.
    """
    pos = pos.copy()
    vel = vel.copy()
    rec_t, rec_p, rec_v, rec_e = [], [], [], []
    for s in range(1, n_steps + 1):
        vel = vel + 0.5 * step * accel_fn(pos)
        pos = pos + step * vel
        if half_width is not None:
            pos, vel = _reflect(pos, vel, half_width)
        vel = vel + 0.5 * step * accel_fn(pos)
        if s % record_every == 0:
            rec_t.append(s * step)
            rec_p.append(pos.copy())
            rec_v.append(vel.copy())
            if energy_fn is not None:
                rec_e.append(energy_fn(pos, vel))
    times = np.array(rec_t)
    states = np.concatenate([np.stack(rec_p), np.stack(rec_v)], axis=2)
    energies = np.array(rec_e) if energy_fn is not None else None
    return times, states, energies


def sample_relations(n: int, p: float, rng: np.random.Generator) -> InteractionGraph:
    i, j = _pair_indices(n)
    mask = rng.random(len(i)) < p
    return InteractionGraph.from_pairs(n, list(zip(i[mask], j[mask])))


def simulate_springs(config: SimConfig, rng=None) -> TrajectorySet:
    if config.system_kind != "spring":
        raise ValueError("config.system_kind must be 'spring'")
    rng = rng if rng is not None else np.random.default_rng(config.rng_seed)
    graph = sample_relations(config.n_objects, config.interaction_probability, rng)
    pairs = np.array(sorted({(i, j) for (i, j) in graph.edges if i < j}), dtype=np.intp)
    pairs = pairs.reshape(-1, 2)
    pos = rng.normal(0.0, config.init_pos_std, size=(config.n_objects, 2))
    vel = rng.normal(0.0, config.init_vel_std, size=(config.n_objects, 2))
    times, states, energy = leapfrog(
        pos, vel,
        lambda p: spring_accel(p, pairs, config.spring_constant),
        config.integration_step, config.total_steps,
        half_width=config.box_half_width,
        record_every=config.subsample_stride,
        energy_fn=lambda p, v: spring_energy(p, v, pairs, config.spring_constant),
    )
    traj = TrajectorySet(times=times, states=states, graph=graph)
    traj.energy = energy
    return traj


def simulate_charged(config: SimConfig, rng=None) -> TrajectorySet:
    if config.system_kind != "charged":
        raise ValueError("config.system_kind must be 'charged'")
    rng = rng if rng is not None else np.random.default_rng(config.rng_seed)
    charges = np.where(rng.random(config.n_objects) < 0.5, 1.0, -1.0)
    # Attracting pairs (q_i q_j < 0) play the role of relations.
    i, j = _pair_indices(config.n_objects)
    graph = InteractionGraph.from_pairs(
        config.n_objects,
        [(a, b) for a, b in zip(i, j) if charges[a] * charges[b] < 0],
    )
    pos = rng.normal(0.0, config.init_pos_std, size=(config.n_objects, 2))
    vel = rng.normal(0.0, config.init_vel_std, size=(config.n_objects, 2))
    times, states, energy = leapfrog(
        pos, vel,
        lambda p: charged_accel(p, charges, config.charge_constant, config.softening),
        config.integration_step, config.total_steps,
        half_width=config.box_half_width,
        record_every=config.subsample_stride,
        energy_fn=lambda p, v: charged_energy(p, v, charges, config.charge_constant),
    )
    traj = TrajectorySet(times=times, states=states, graph=graph)
    traj.energy = energy
    traj.charges = charges
    return traj


def simulate(config: SimConfig, rng=None) -> TrajectorySet:
    if config.system_kind == "spring":
        return simulate_springs(config, rng)
    return simulate_charged(config, rng)


def subsample_irregular(traj: TrajectorySet, n_min: int, n_max: int, rng,
                        grid_slice: slice | None = None,
                        horizon: tuple | None = None) -> ObservationSet:
    """Independent per-object irregular subsampling of the dense grid.

    Draws n ~ U{n_min..n_max} per object, then n distinct grid indices
    uniformly without replacement, sorted ascending.  `grid_slice`
    restricts the candidate grid (used for future-horizon test splits).
    """
    if isinstance(rng, int):
        rng = np.random.default_rng(rng)
    sl = grid_slice if grid_slice is not None else slice(None)
    grid_times = traj.times[sl]
    grid_states = traj.states[sl]
    n_grid = len(grid_times)
    if n_min > n_max:
        raise ValueError("n_min must not exceed n_max")
    if n_max > n_grid:
        raise ValueError(f"n_max={n_max} exceeds {n_grid} available grid points")
    times, feats = [], []
    for i in range(traj.graph.n_objects):
        n = int(rng.integers(n_min, n_max + 1))
        idx = np.sort(rng.choice(n_grid, size=n, replace=False))
        times.append(grid_times[idx].copy())
        feats.append(grid_states[idx, i, :].copy())
    if horizon is None:
        horizon = (0.0, float(traj.times[-1]))
    return ObservationSet(times=times, features=feats, graph=traj.graph, horizon=horizon)


def normalize_features(trajectories: list) -> tuple[list, dict]:
    """Scale each feature dimension by its global max-abs across all inputs.

    Returns the rescaled trajectories and a scale record usable for
    de-normalization; all-zero dimensions keep scale 1 and are flagged.
    """
    if not trajectories:
        raise ValueError("normalize_features: empty input")
    d = trajectories[0].states.shape[2]
    max_abs = np.zeros(d)
    for tr in trajectories:
        max_abs = np.maximum(max_abs, np.abs(tr.states).reshape(-1, d).max(axis=0))
    flagged = [int(k) for k in range(d) if max_abs[k] == 0.0]
    scale = np.where(max_abs == 0.0, 1.0, max_abs)
    out = []
    for tr in trajectories:
        scaled = dataclasses.replace(tr, states=tr.states / scale)
        if hasattr(tr, "energy"):
            scaled.energy = tr.energy
        if hasattr(tr, "charges"):
            scaled.charges = tr.charges
        out.append(scaled)
    record = {"scale": scale.tolist(), "zero_dimensions": flagged}
    return out, record


def denormalize_features(states: np.ndarray, record: dict) -> np.ndarray:
    return states * np.asarray(record["scale"])


def rescale_times(obs: ObservationSet) -> ObservationSet:
    """Affinely map all timestamps onto [0, 1] using the declared horizon."""
    lo, hi = obs.horizon
    if hi <= lo:
        raise ValueError(f"zero-length horizon {obs.horizon}")
    span = hi - lo
    return ObservationSet(
        times=[(t - lo) / span for t in obs.times],
        features=[x.copy() for x in obs.features],
        graph=obs.graph,
        horizon=(0.0, 1.0),
    )


def generate_dataset(system: str, n_samples: int, seed: int, n_objects: int = 3,
                     n_min: int = 40, n_max: int = 52, with_future: bool = False,
                     config: SimConfig | None = None) -> Dataset:
    """Simulate, normalize, and irregularly subsample `n_samples` systems.

    With `with_future`, each system is run for twice the horizon and 40
    extra observations are drawn from the second half for extrapolation
    evaluation.  Feature normalization is global across the whole set.
    """
    base = config if config is not None else SimConfig()
    total = base.total_steps * (2 if with_future else 1)
    trajs = []
    for k in range(n_samples):
        cfg = dataclasses.replace(
            base, system_kind=system, n_objects=n_objects,
            total_steps=total, rng_seed=seed + k,
        )
        trajs.append(simulate(cfg))
    trajs, scale_record = normalize_features(trajs)

    horizon_steps = base.total_steps // base.subsample_stride
    primary_horizon = (0.0, base.total_steps * base.integration_step)
    rng = np.random.default_rng(seed)
    samples = []
    for tr in trajs:
        obs = subsample_irregular(
            tr, n_min, n_max, rng,
            grid_slice=slice(0, horizon_steps), horizon=primary_horizon,
        )
        future = None
        if with_future:
            future = subsample_irregular(
                tr, 40, 40, rng,
                grid_slice=slice(horizon_steps, 2 * horizon_steps),
                horizon=(0.0, 2 * base.total_steps * base.integration_step),
            )
        samples.append(Sample(obs=obs, future=future))
    header = {
        "config": dataclasses.asdict(dataclasses.replace(base, system_kind=system,
                                                         n_objects=n_objects)),
        "seed": seed,
        "n_samples": n_samples,
        "n_min": n_min,
        "n_max": n_max,
        "with_future": with_future,
        "scale_record": scale_record,
    }
    return Dataset(samples=samples, header=header)
