"""Evaluation protocols: conditioning splits, MSE reports, baselines,
and the experiment matrix with CSV plus trajectory-figure emission.

Predictions use posterior means only, so evaluation is deterministic
given the split seed.  MSE pools every (object, time, feature) entry
across the evaluated samples.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Dataset, ObservationSet, Sample
from .encoder import encode_graph
from .model import LatentDynamicsModel, ModelConfig
from .ode_model import append_aux_dims, decode, ode_func, rk4_solve
from .simulate import rescale_times
from .tasks import (TaskSplit, make_extrapolation_split,
                    make_interpolation_split, split_halves)
from .training import TrainConfig, collate, train

log = logging.getLogger(__name__)

CSV_HEADER = "task,ratio,variant,mse,ci,seed"


@dataclass
class ExperimentSpec:
    task: str = "interpolation"
    observed_ratio: float = 0.4
    dataset: str | Dataset | None = None
    variant: str = "full"
    out_dir: str = "."
    seed: int = 0
    model_config: ModelConfig | None = None
    eval_batch_size: int = 20

    def __post_init__(self):
        if not 0.0 < self.observed_ratio <= 1.0:
            raise ValueError("observed ratio must lie in (0, 1]")
        if self.task not in ("interpolation", "extrapolation"):
            raise ValueError(f"unknown task {self.task!r}")


@dataclass
class MseReport:
    mse: float
    count: int
    ci: float  # normal-approximation half-width over per-sample MSEs

    def __post_init__(self):
        if self.mse < 0 or self.count <= 0:
            raise ValueError("mse must be >= 0 and count > 0")


def evaluation_split(sample: Sample, task: str, ratio: float, rng) -> TaskSplit:
    """Conditioning/target split for one test sample.

    Interpolation reuses the training split rule on the primary horizon.
    Extrapolation conditions on the primary-horizon observations (first
    half of the doubled horizon after rescaling) and targets the stored
    future observations, with the system start at the boundary.
    """
    if task == "interpolation":
        return make_interpolation_split(rescale_times(sample.obs), ratio, rng)
    if sample.future is None:
        raise ValueError("extrapolation evaluation needs samples with future observations")
    full_horizon = sample.future.horizon
    first = rescale_times(dataclasses.replace(sample.obs, horizon=full_horizon))
    # the primary grid can touch the boundary exactly; conditioning stays
    # strictly before t_start
    first, _ = split_halves(first, 0.5)
    second = rescale_times(sample.future)
    return make_extrapolation_split(first, second, ratio, rng, t_start=0.5)


def predict_targets(model: LatentDynamicsModel, splits, variant: str = "full"):
    """Posterior-mean predictions at every target point of the given splits.

    Returns (pred, target, sample_of_row, obj_of_row, time_of_row), all
    aligned arrays over the pooled target points.
    """
    col = collate(splits)
    with ad.no_grad():
        mu, _ = encode_graph(col.graph, model.encoder, variant)
        z0 = append_aux_dims(mu, model.config.aux)
        states = rk4_solve(lambda z: ode_func(z, col.pairs, model.ode), z0,
                           col.union_times, densify=model.config.densify,
                           t_start=col.t_start)
        pred = np.empty_like(col.target_feats)
        for ti, state in enumerate(states):
            rows = np.nonzero(col.target_time_idx == ti)[0]
            if len(rows) == 0:
                continue
            o_hat, _ = decode(ad.gather(state, col.target_obj[rows]), model.decoder)
            pred[rows] = o_hat.values
    sample_of_row = col.object_sample[col.target_obj]
    return (pred, col.target_feats, sample_of_row, col.target_obj,
            col.union_times[col.target_time_idx])


def _pooled_report(sq_err: np.ndarray, sample_of_row: np.ndarray) -> MseReport:
    per_point = sq_err.mean(axis=-1) if sq_err.ndim > 1 else sq_err
    samples = np.unique(sample_of_row)
    per_sample = np.array([per_point[sample_of_row == s].mean() for s in samples])
    ci = 0.0
    if len(per_sample) > 1:
        ci = 1.96 * per_sample.std(ddof=1) / np.sqrt(len(per_sample))
    return MseReport(mse=float(sq_err.mean()), count=int(sq_err.size), ci=float(ci))


def evaluate(model, spec: ExperimentSpec, dataset: Dataset | None = None) -> MseReport:
    """MSE of posterior-mean predictions over a test dataset.

    `model` may be a LatentDynamicsModel or a checkpoint path; the split
    subsampling is driven by one generator seeded from spec.seed, so the
    report is reproducible.
    """
    if not isinstance(model, LatentDynamicsModel):
        model = LatentDynamicsModel.load(model, variant=spec.variant)
    if dataset is None:
        from .data import load_dataset

        dataset = load_dataset(spec.dataset)
    rng = np.random.default_rng(spec.seed)
    splits = [evaluation_split(s, spec.task, spec.observed_ratio, rng)
              for s in dataset.samples]
    sq_parts, sample_parts = [], []
    offset = 0
    for start in range(0, len(splits), spec.eval_batch_size):
        chunk = splits[start:start + spec.eval_batch_size]
        pred, target, sample_of_row, _, _ = predict_targets(model, chunk, spec.variant)
        sq_parts.append((pred - target) ** 2)
        sample_parts.append(sample_of_row + offset)
        offset += len(chunk)
    return _pooled_report(np.concatenate(sq_parts), np.concatenate(sample_parts))


def zero_baseline(splits) -> MseReport:
    """Constant-zero predictor in normalized feature space."""
    sq_parts, sample_parts = [], []
    for k, sp in enumerate(splits):
        for x in sp.targets.features:
            sq_parts.append(x**2)
            sample_parts.append(np.full(len(x), k, dtype=np.intp))
    return _pooled_report(np.concatenate(sq_parts), np.concatenate(sample_parts))


def locf_baseline(splits) -> MseReport:
    """Per-object last conditioning observation carried forward.

    Targets before the first conditioning time fall back to that first
    observation.
    """
    sq_parts, sample_parts = [], []
    for k, sp in enumerate(splits):
        for ct, cx, tt, tx in zip(sp.conditioning.times, sp.conditioning.features,
                                  sp.targets.times, sp.targets.features):
            idx = np.clip(np.searchsorted(ct, tt, side="right") - 1, 0, len(ct) - 1)
            sq_parts.append((cx[idx] - tx) ** 2)
            sample_parts.append(np.full(len(tt), k, dtype=np.intp))
    return _pooled_report(np.concatenate(sq_parts), np.concatenate(sample_parts))


def baseline_reports(spec: ExperimentSpec, dataset: Dataset) -> dict:
    rng = np.random.default_rng(spec.seed)
    splits = [evaluation_split(s, spec.task, spec.observed_ratio, rng)
              for s in dataset.samples]
    return {"zero": zero_baseline(splits), "locf": locf_baseline(splits)}


def format_csv(rows) -> str:
    """Rows (task, ratio, variant, MseReport, seed) -> stable CSV text.

    Floats use shortest-exact repr, so parsing the CSV back recovers the
    report values bit-for-bit.
    """
    lines = [CSV_HEADER]
    for task, ratio, variant, report, seed in rows:
        lines.append(
            f"{task},{ratio!r},{variant},{report.mse!r},{report.ci!r},{seed}"
        )
    return "\n".join(lines) + "\n"


def parse_csv(text: str) -> list:
    lines = text.strip().split("\n")
    if lines[0] != CSV_HEADER:
        raise ValueError("unexpected CSV header")
    rows = []
    for line in lines[1:]:
        task, ratio, variant, mse, ci, seed = line.split(",")
        rows.append((task, float(ratio), variant,
                     MseReport(mse=float(mse), count=1, ci=float(ci)), int(seed)))
    return rows


@dataclass
class MatrixResult:
    csv_path: Path
    rows: list
    failures: list = field(default_factory=list)
    plot_paths: list = field(default_factory=list)


def run_experiment_matrix(train_data: Dataset, test_data: Dataset, out_dir,
                          tasks=("interpolation",), ratios=(0.4, 0.6, 0.8),
                          variants=("full",), seed: int = 0,
                          train_config: TrainConfig | None = None,
                          model: LatentDynamicsModel | None = None,
                          n_plots: int = 2) -> MatrixResult:
    """Evaluate every (task, ratio, variant) cell; emit CSV and figures.

    Without a pre-trained `model`, one model is trained per (task,
    variant) pair at the first ratio and shared across that pair's ratio
    cells.  A failing cell is logged and reported in the summary; the
    remaining cells still run.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base_cfg = train_config if train_config is not None else TrainConfig(seed=seed)
    rows, failures, plot_paths = [], [], []

    models = {}
    for task in tasks:
        for variant in variants:
            if model is not None:
                models[(task, variant)] = model
                continue
            cfg = dataclasses.replace(base_cfg, task=task, variant=variant,
                                      observed_ratio=ratios[0], seed=seed)
            run_dir = out_dir / f"train_{task}_{variant}"
            try:
                result = train(train_data, cfg, run_dir)
                models[(task, variant)] = LatentDynamicsModel.load(
                    result.best_checkpoint, variant=variant)
            except Exception as exc:  # noqa: BLE001 - cell isolation
                log.error("training failed for (%s, %s): %s", task, variant, exc)
                failures.append((task, None, variant, str(exc)))

    for task in tasks:
        for ratio in ratios:
            for variant in variants:
                if (task, variant) not in models:
                    continue
                spec = ExperimentSpec(task=task, observed_ratio=ratio,
                                      variant=variant, seed=seed)
                try:
                    report = evaluate(models[(task, variant)], spec, test_data)
                    rows.append((task, ratio, variant, report, seed))
                    if n_plots > 0:
                        plot_paths.extend(emit_plots(
                            models[(task, variant)], test_data, spec, out_dir,
                            n_plots=n_plots))
                except Exception as exc:  # noqa: BLE001 - cell isolation
                    log.error("cell (%s, %s, %s) failed: %s", task, ratio, variant, exc)
                    failures.append((task, ratio, variant, str(exc)))

    csv_path = out_dir / "results.csv"
    csv_path.write_text(format_csv(rows))
    return MatrixResult(csv_path=csv_path, rows=rows, failures=failures,
                        plot_paths=plot_paths)


def emit_plots(model: LatentDynamicsModel, dataset: Dataset, spec: ExperimentSpec,
               out_dir, n_plots: int = 2) -> list:
    """Ground-truth versus predicted position paths for the first samples.

    Files are named plot_<task>_<ratio>_<variant>_<sample>.png under
    out_dir.
    """
    from .plots import trajectory_figure

    rng = np.random.default_rng(spec.seed)
    splits = [evaluation_split(s, spec.task, spec.observed_ratio, rng)
              for s in dataset.samples]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for k in range(min(n_plots, len(splits))):
        pred, target, _, obj_rows, t_rows = predict_targets(
            model, [splits[k]], spec.variant)
        path = out_dir / f"plot_{spec.task}_{spec.observed_ratio}_{spec.variant}_{k}.png"
        trajectory_figure(splits[k], pred, obj_rows, t_rows, path)
        paths.append(path)
    return paths
