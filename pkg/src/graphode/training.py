"""Joint training of encoder, ODE function, and decoder via the ELBO.

A minibatch is merged into one disjoint temporal graph and one
block-diagonal interaction pair set, so the encoder and the RK4 solve run
once per batch.  The reconstruction term only sums log-likelihoods at
observed (object, time) targets.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Sample
from .encoder import encode_graph
from .model import LatentDynamicsModel
from .ode_model import PairSet, append_aux_dims, decode, ode_func, rk4_solve
from .simulate import rescale_times
from .tasks import training_split
from .temporal_graph import TemporalGraph

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 32
    epochs: int = 100
    kl_weight: float = 1.0
    seed: int = 0
    observed_ratio: float = 0.4
    observed_ratio_jitter: float = 0.0
    task: str = "interpolation"
    variant: str = "full"
    val_fraction: float = 0.1
    grad_clip: float = 10.0
    log_timing: bool = False
    augment_rotations: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("learning_rate must be > 0 and batch_size >= 1")


@dataclass
class ElboReport:
    elbo: float
    reconstruction_term: float
    kl_term: float
    per_object_recon: np.ndarray
    per_object_kl: np.ndarray
    n_samples: int
    loss: Tensor | None = field(default=None, repr=False)


def kl_per_object(mu: Tensor, sigma: Tensor) -> Tensor:
    """KL(N(mu, sigma) || N(0, 1)) per object (summed over latent dims)."""
    s2 = sigma * sigma
    return ad.scale((s2 + mu * mu - 1.0 - ad.log(s2)).sum(axis=1), 0.5)


def kl_diag_gaussian(mu: Tensor, sigma: Tensor) -> Tensor:
    """Total KL against the standard-normal prior, over objects and dims."""
    return kl_per_object(mu, sigma).sum()


def orthogonal_feature_map(q: np.ndarray, scale=None) -> np.ndarray:
    """Feature-space matrix applying one planar orthogonal map `q` (2x2)
    to positions and velocities together.

    Such a map sends one valid trajectory of an isotropic system to
    another.  `scale` is the per-dimension normalization (sx, sy, svx,
    svy); in normalized coordinates each 2D block becomes S^-1 Q S.
    """
    if scale is None:
        scale = np.ones(4)
    scale = np.asarray(scale, dtype=np.float64)
    out = np.zeros((4, 4))
    for k in (0, 2):
        sub = np.diag(scale[k:k + 2])
        out[k:k + 2, k:k + 2] = np.linalg.inv(sub) @ q @ sub
    return out


def rotation_feature_map(angle: float, scale=None) -> np.ndarray:
    """Feature-space matrix for rotating a planar system by `angle`."""
    c, s = math.cos(angle), math.sin(angle)
    return orthogonal_feature_map(np.array([[c, -s], [s, c]]), scale)


# Symmetries of the bounding box: quarter-turn rotations and reflections.
# Wall-reflected trajectories stay valid only under these eight maps.
_DIHEDRAL = [
    np.array([[c, -s], [s, c]]) @ np.diag([1.0, r])
    for (c, s) in ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))
    for r in (1.0, -1.0)
]


def rotate_observations(obs, angle: float, scale=None):
    """Apply a physical planar rotation to every observed feature row."""
    m = rotation_feature_map(angle, scale)
    return dataclasses.replace(obs, features=[x @ m.T for x in obs.features])


def transform_observations(obs, q: np.ndarray, scale=None):
    """Apply a planar orthogonal map to every observed feature row."""
    m = orthogonal_feature_map(q, scale)
    return dataclasses.replace(obs, features=[x @ m.T for x in obs.features])


def _touches_wall(obs, scale, box_half_width, margin: float = 0.95) -> bool:
    """Whether any de-normalized observed position approaches the walls."""
    if box_half_width is None:
        return False
    sx, sy = scale[0], scale[1]
    limit = margin * box_half_width
    return any(
        len(x) and max(np.abs(x[:, 0] * sx).max(), np.abs(x[:, 1] * sy).max()) > limit
        for x in obs.features
    )


def _augment_sample(obs, rng, scale, near_wall: bool):
    """One random symmetry of the system: a full planar rotation when the
    trajectory stays clear of the walls, otherwise a box symmetry."""
    if near_wall:
        return transform_observations(obs, _DIHEDRAL[int(rng.integers(8))], scale)
    return rotate_observations(obs, rng.uniform(0.0, 2.0 * math.pi), scale)


@dataclass
class CollatedBatch:
    graph: TemporalGraph  # merged disjoint temporal graph
    pairs: PairSet  # merged interaction pairs for the ODE
    n_objects: int  # total across the batch
    object_sample: np.ndarray  # (n_objects,) owning sample
    union_times: np.ndarray  # (T,) sorted unique target times
    target_obj: np.ndarray  # (M,) global object row per target point
    target_time_idx: np.ndarray  # (M,) index into union_times
    target_feats: np.ndarray  # (M, D)
    t_start: float
    n_samples: int


def collate(splits) -> CollatedBatch:
    """Merge per-sample task splits into one batch structure."""
    graphs = [s.encoder_graph() for s in splits]
    t_start = splits[0].t_start

    node_off = np.concatenate([[0], np.cumsum([g.n_nodes for g in graphs])]).astype(np.intp)
    obj_off = np.concatenate([[0], np.cumsum([g.n_objects for g in graphs])]).astype(np.intp)
    src = np.concatenate([g.src + node_off[k] for k, g in enumerate(graphs)])
    dst = np.concatenate([g.dst + node_off[k] for k, g in enumerate(graphs)])
    dt = np.concatenate([g.dt for g in graphs])
    kind = np.concatenate([g.kind for g in graphs])
    # Re-establish the self-block-first edge ordering lost by concatenation.
    order = np.argsort(kind, kind="stable")
    merged = TemporalGraph(
        obj_ids=np.concatenate([g.obj_ids + obj_off[k] for k, g in enumerate(graphs)]),
        times=np.concatenate([g.times for g in graphs]),
        features=np.concatenate([g.features for g in graphs]),
        src=src[order], dst=dst[order], dt=dt[order], kind=kind[order],
        t_start=t_start,
        n_objects=int(obj_off[-1]),
    )

    pairs = PairSet.merge(
        [PairSet.from_graph(s.targets.graph) for s in splits], obj_off[:-1]
    )

    obj_rows, t_all, x_all = [], [], []
    for k, s in enumerate(splits):
        for i, (t, x) in enumerate(zip(s.targets.times, s.targets.features)):
            obj_rows.append(np.full(len(t), obj_off[k] + i, dtype=np.intp))
            t_all.append(t)
            x_all.append(x)
    target_obj = np.concatenate(obj_rows)
    target_t = np.concatenate(t_all)
    union_times = np.unique(target_t)
    return CollatedBatch(
        graph=merged,
        pairs=pairs,
        n_objects=int(obj_off[-1]),
        object_sample=np.concatenate(
            [np.full(g.n_objects, k, dtype=np.intp) for k, g in enumerate(graphs)]
        ),
        union_times=union_times,
        target_obj=target_obj,
        target_time_idx=np.searchsorted(union_times, target_t),
        target_feats=np.concatenate(x_all),
        t_start=t_start,
        n_samples=len(splits),
    )


def elbo(batch, model: LatentDynamicsModel, rng, config: TrainConfig,
         eps=None) -> ElboReport:
    """Single-sample reparameterized ELBO estimate for a minibatch.

    `batch` is a list of Samples or ObservationSets on raw horizons; each
    is time-rescaled, split per the configured task, and merged.  Passing
    an `eps` array freezes the reparameterization noise (used by gradient
    checks); eps="mean" evaluates at the posterior mean.
    """
    obs_sets = [s.obs if isinstance(s, Sample) else s for s in batch]
    # jitter widens the conditioning ratio per sample so the encoder sees a
    # range of observation densities, not just the evaluation ratio
    ratios = np.full(len(obs_sets), config.observed_ratio)
    if config.observed_ratio_jitter:
        ratios += config.observed_ratio_jitter * rng.random(len(obs_sets))
    splits = [training_split(rescale_times(o), config.task, float(r), rng)
              for o, r in zip(obs_sets, ratios)]
    col = collate(splits)

    mu, sigma = encode_graph(col.graph, model.encoder, config.variant)
    if eps is None:
        eps = rng.standard_normal(mu.shape)
    elif isinstance(eps, str) and eps == "mean":
        eps = np.zeros(mu.shape)
    z0 = append_aux_dims(mu + sigma * Tensor(eps), model.config.aux)
    states = rk4_solve(
        lambda z: ode_func(z, col.pairs, model.ode), z0, col.union_times,
        densify=model.config.densify, t_start=col.t_start,
    )

    ll_parts, row_parts = [], []
    for ti, state in enumerate(states):
        rows = np.nonzero(col.target_time_idx == ti)[0]
        if len(rows) == 0:
            continue
        z_sel = ad.gather(state, col.target_obj[rows])
        _, ll = decode(z_sel, model.decoder, col.target_feats[rows])
        ll_parts.append(ll)
        row_parts.append(col.target_obj[rows])
    loglik = ad.concat(ll_parts, axis=0)
    recon_per_obj = ad.segment_sum(ad.reshape(loglik, (-1, 1)),
                                   np.concatenate(row_parts), col.n_objects)
    recon_total = recon_per_obj.sum()
    kl_obj = kl_per_object(mu, sigma)
    kl_total = kl_obj.sum()

    b = float(col.n_samples)
    recon_mean = ad.scale(recon_total, 1.0 / b)
    kl_mean = ad.scale(kl_total, 1.0 / b)
    elbo_mean = recon_mean - ad.scale(kl_mean, config.kl_weight)
    return ElboReport(
        elbo=float(elbo_mean.values),
        reconstruction_term=float(recon_mean.values),
        kl_term=float(kl_mean.values),
        per_object_recon=recon_per_obj.values.reshape(-1).copy(),
        per_object_kl=kl_obj.values.copy(),
        n_samples=col.n_samples,
        loss=ad.scale(elbo_mean, -1.0),
    )


class Adam:
    """Bias-corrected adaptive-moment optimizer with global-norm clipping."""

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, grad_clip: float | None = 10.0):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.grad_clip = grad_clip
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]
        self.skipped = 0

    def grad_norm(self) -> float:
        total = 0.0
        for p in self.params:
            if p.grad is not None:
                total += float((p.grad**2).sum())
        return float(np.sqrt(total))

    def step(self) -> bool:
        """Apply one update; returns False (and logs) on non-finite gradients."""
        grads = [p.grad if p.grad is not None else np.zeros_like(p.values)
                 for p in self.params]
        if not all(np.isfinite(g).all() for g in grads):
            self.skipped += 1
            log.warning("non-finite gradient; optimizer step skipped")
            return False
        norm = np.sqrt(sum(float((g**2).sum()) for g in grads))
        if self.grad_clip is not None and norm > self.grad_clip:
            grads = [g * (self.grad_clip / norm) for g in grads]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.values = p.values - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return True

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def optimizer_step(params, grads, state: Adam | None, config: TrainConfig) -> Adam:
    """Functional wrapper over Adam for callers holding explicit grads."""
    if state is None:
        state = Adam(params, lr=config.learning_rate, grad_clip=config.grad_clip)
    for p, g in zip(params, grads):
        p.grad = g
    state.step()
    state.zero_grad()
    return state


@dataclass
class TrainResult:
    best_checkpoint: Path
    last_checkpoint: Path
    metrics_path: Path
    history: list
    aborted: bool = False


def train(dataset, config: TrainConfig, out_dir, model: LatentDynamicsModel | None = None,
          model_seed: int | None = None) -> TrainResult:
    """Epoch loop with shuffled minibatches, metric log, best-val checkpoint.

    Fully seeded: one RNG stream drives shuffling, conditioning subsets,
    and reparameterization noise in a fixed order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = dataset.samples if hasattr(dataset, "samples") else list(dataset)
    if model is None:
        from .model import ModelConfig

        model = LatentDynamicsModel(
            ModelConfig(variant=config.variant),
            seed=config.seed if model_seed is None else model_seed,
        )

    aug_scale = np.ones(4)
    near_wall = [False] * len(samples)
    if config.augment_rotations:
        header = getattr(dataset, "header", {}) or {}
        record = header.get("scale_record")
        if record:
            aug_scale = np.asarray(record["scale"], dtype=np.float64)
        box = header.get("config", {}).get("box_half_width")
        near_wall = [
            _touches_wall(s.obs if isinstance(s, Sample) else s, aug_scale, box)
            for s in samples
        ]

    rng = np.random.default_rng(config.seed)
    idx = rng.permutation(len(samples))
    n_val = max(1, int(round(config.val_fraction * len(samples)))) if len(samples) > 1 else 0
    val_idx, train_idx = idx[:n_val], idx[n_val:]

    opt = Adam(model.parameters(), lr=config.learning_rate, grad_clip=config.grad_clip)
    metrics_path = out_dir / "metrics.jsonl"
    best_path = out_dir / "best.ckpt"
    last_path = out_dir / "last.ckpt"
    history: list[dict] = []
    best_val = -np.inf
    aborted = False
    t0 = time.perf_counter()

    with open(metrics_path, "w") as mfh:

        def emit(record: dict):
            if config.log_timing:
                record = dict(record, wall_time=time.perf_counter() - t0)
            mfh.write(json.dumps(record, sort_keys=True) + "\n")
            history.append(record)

        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(len(train_idx))
            ep_elbo, ep_recon, ep_kl, ep_gnorm, n_batches = 0.0, 0.0, 0.0, 0.0, 0
            for start in range(0, len(train_idx), config.batch_size):
                batch = [samples[train_idx[k]] for k in order[start:start + config.batch_size]]
                if config.augment_rotations:
                    batch = [
                        _augment_sample(
                            s.obs if isinstance(s, Sample) else s, rng,
                            aug_scale, near_wall[train_idx[k]])
                        for k, s in zip(order[start:start + config.batch_size], batch)
                    ]
                report = elbo(batch, model, rng, config)
                if not np.isfinite(report.elbo):
                    log.error("non-finite loss at epoch %d; aborting", epoch)
                    aborted = True
                    break
                opt.zero_grad()
                ad.backward(report.loss)
                gnorm = opt.grad_norm()
                opt.step()
                ep_elbo += report.elbo
                ep_recon += report.reconstruction_term
                ep_kl += report.kl_term
                ep_gnorm += gnorm
                n_batches += 1
            if aborted:
                break
            emit({
                "epoch": epoch, "split": "train",
                "elbo": ep_elbo / n_batches, "recon": ep_recon / n_batches,
                "kl": ep_kl / n_batches, "grad_norm": ep_gnorm / n_batches,
            })
            model.save(last_path)

            if len(val_idx):
                with ad.no_grad():
                    vrep = elbo([samples[k] for k in val_idx], model,
                                np.random.default_rng(config.seed + 1), config,
                                eps="mean")
                emit({
                    "epoch": epoch, "split": "val",
                    "elbo": vrep.elbo, "recon": vrep.reconstruction_term,
                    "kl": vrep.kl_term, "grad_norm": 0.0,
                })
                if vrep.elbo > best_val:
                    best_val = vrep.elbo
                    model.save(best_path)
            else:
                model.save(best_path)

    if not best_path.exists():
        model.save(best_path)
    if not last_path.exists():
        model.save(last_path)
    return TrainResult(best_checkpoint=best_path, last_checkpoint=last_path,
                       metrics_path=metrics_path, history=history, aborted=aborted)
