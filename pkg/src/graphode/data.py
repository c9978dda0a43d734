"""Core data types and the on-disk dataset container."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

DATA_MAGIC = b"GODS"
DATA_VERSION = 1


@dataclass(frozen=True)
class InteractionGraph:
    """Static relation set over `n_objects`; symmetric, no self-loops."""

    n_objects: int
    edges: frozenset  # of ordered pairs (i, j); symmetric closure

    @staticmethod
    def from_pairs(n_objects: int, pairs) -> "InteractionGraph":
        closed = set()
        for i, j in pairs:
            if i == j:
                raise ValueError(f"self-loop on object {i}")
            if not (0 <= i < n_objects and 0 <= j < n_objects):
                raise ValueError(f"edge ({i},{j}) out of range for {n_objects} objects")
            closed.add((int(i), int(j)))
            closed.add((int(j), int(i)))
        return InteractionGraph(n_objects, frozenset(closed))

    def neighbors(self, i: int) -> list[int]:
        return sorted(j for (a, j) in self.edges if a == i)

    def directed_pairs(self) -> np.ndarray:
        """All ordered related pairs, sorted, as an (E, 2) int array."""
        if not self.edges:
            return np.zeros((0, 2), dtype=np.intp)
        return np.array(sorted(self.edges), dtype=np.intp)

    def non_edge_pairs(self) -> np.ndarray:
        """All ordered unrelated pairs (i != j), sorted, as (E', 2)."""
        pairs = [
            (i, j)
            for i in range(self.n_objects)
            for j in range(self.n_objects)
            if i != j and (i, j) not in self.edges
        ]
        if not pairs:
            return np.zeros((0, 2), dtype=np.intp)
        return np.array(pairs, dtype=np.intp)


@dataclass
class TrajectorySet:
    """Densely-sampled ground truth: times (T,), states (T, N, D)."""

    times: np.ndarray
    states: np.ndarray
    graph: InteractionGraph

    def __post_init__(self):
        if not np.all(np.diff(self.times) > 0):
            raise ValueError("trajectory times must be strictly increasing")


@dataclass
class ObservationSet:
    """Per-object irregular observations within a declared time horizon."""

    times: list  # per object: (n_i,) strictly increasing
    features: list  # per object: (n_i, D)
    graph: InteractionGraph
    horizon: tuple

    def __post_init__(self):
        for i, t in enumerate(self.times):
            if len(t) and not np.all(np.diff(t) > 0):
                raise ValueError(f"object {i}: timestamps not strictly increasing")
            lo, hi = self.horizon
            if len(t) and (t[0] < lo - 1e-12 or t[-1] > hi + 1e-12):
                raise ValueError(f"object {i}: timestamps outside horizon {self.horizon}")

    @property
    def n_objects(self) -> int:
        return self.graph.n_objects

    def counts(self) -> list[int]:
        return [len(t) for t in self.times]


@dataclass
class Sample:
    """One system: observations on the primary horizon, plus optional
    future observations for extrapolation evaluation."""

    obs: ObservationSet
    future: ObservationSet | None = None


@dataclass
class Dataset:
    samples: list
    header: dict = field(default_factory=dict)


def _write_obs(fh, obs: ObservationSet | None):
    if obs is None:
        fh.write(struct.pack("<B", 0))
        return
    fh.write(struct.pack("<B", 1))
    fh.write(struct.pack("<dd", *obs.horizon))
    fh.write(struct.pack("<I", obs.n_objects))
    for t, x in zip(obs.times, obs.features):
        x = np.ascontiguousarray(x, dtype="<f8")
        fh.write(struct.pack("<II", len(t), x.shape[1] if x.ndim == 2 else 0))
        fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())
        fh.write(x.tobytes())


def _read_obs(fh, graph: InteractionGraph):
    (present,) = struct.unpack("<B", fh.read(1))
    if not present:
        return None
    horizon = struct.unpack("<dd", fh.read(16))
    (n_objects,) = struct.unpack("<I", fh.read(4))
    times, feats = [], []
    for _ in range(n_objects):
        n, d = struct.unpack("<II", fh.read(8))
        times.append(np.frombuffer(fh.read(8 * n), dtype="<f8").astype(np.float64))
        feats.append(
            np.frombuffer(fh.read(8 * n * d), dtype="<f8").astype(np.float64).reshape(n, d)
        )
    return ObservationSet(times, feats, graph, horizon)


def save_dataset(path, dataset: Dataset) -> None:
    header = json.dumps(dataset.header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(DATA_MAGIC)
        fh.write(struct.pack("<III", DATA_VERSION, len(header), len(dataset.samples)))
        fh.write(header)
        for s in dataset.samples:
            g = s.obs.graph
            undirected = sorted({(i, j) for (i, j) in g.edges if i < j})
            fh.write(struct.pack("<II", g.n_objects, len(undirected)))
            for i, j in undirected:
                fh.write(struct.pack("<II", i, j))
            _write_obs(fh, s.obs)
            _write_obs(fh, s.future)


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        if fh.read(4) != DATA_MAGIC:
            raise ValueError(f"{path}: not a dataset container")
        version, hlen, n_samples = struct.unpack("<III", fh.read(12))
        if version != DATA_VERSION:
            raise ValueError(f"{path}: unsupported dataset version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        samples = []
        for _ in range(n_samples):
            n_objects, n_edges = struct.unpack("<II", fh.read(8))
            pairs = [struct.unpack("<II", fh.read(8)) for _ in range(n_edges)]
            graph = InteractionGraph.from_pairs(n_objects, pairs)
            obs = _read_obs(fh, graph)
            future = _read_obs(fh, graph)
            samples.append(Sample(obs=obs, future=future))
    return Dataset(samples=samples, header=header)
