"""Temporal graph construction and the sinusoidal time encoding."""

import numpy as np
import pytest

from graphode.data import InteractionGraph, ObservationSet
from graphode.temporal_graph import (KIND_NEIGHBOR, KIND_SELF,
                                     build_temporal_graph, dump_text,
                                     temporal_encode, window_threshold)


def _obs(times, graph=None, horizon=(0.0, 1.0)):
    n = len(times)
    if graph is None:
        graph = InteractionGraph.from_pairs(n, [(i, i + 1) for i in range(n - 1)])
    feats = [np.ones((len(t), 4)) * i for i, t in enumerate(times)]
    return ObservationSet([np.asarray(t, float) for t in times], feats, graph, horizon)


def test_temporal_encode_at_zero():
    assert np.array_equal(temporal_encode(0.0, 4), [0.0, 1.0, 0.0, 1.0])


def test_temporal_encode_matches_formula():
    rng = np.random.default_rng(0)
    d = 8
    for dt in rng.uniform(-2, 2, size=10):
        got = temporal_encode(dt, d)
        for i in range(d // 2):
            angle = dt / 10000 ** (2 * i / d)
            assert abs(got[2 * i] - np.sin(angle)) < 1e-14
            assert abs(got[2 * i + 1] - np.cos(angle)) < 1e-14


def test_temporal_encode_vectorized():
    dts = np.array([0.0, 0.5, -1.0])
    out = temporal_encode(dts, 6)
    assert out.shape == (3, 6)
    assert np.allclose(out[1], temporal_encode(0.5, 6))


def test_temporal_encode_rejects_odd_dim():
    with pytest.raises(ValueError):
        temporal_encode(0.0, 5)


def test_window_threshold_value():
    assert abs(window_threshold(52, 40, 0.4) - 36.0 / 52.0) < 1e-12
    assert window_threshold(10, 10, 1.0) == 0.0


def test_window_threshold_clamps_and_warns(caplog):
    with caplog.at_level("WARNING"):
        value = window_threshold(10, 20, 1.0)
    assert value == 0.0
    assert any("clamped" in r.message for r in caplog.records)


def test_window_threshold_validation():
    with pytest.raises(ValueError):
        window_threshold(0, 0, 0.5)
    with pytest.raises(ValueError):
        window_threshold(10, 5, 0.0)


def test_graph_nodes_and_dt_signs():
    obs = _obs([[0.1, 0.3], [0.2]])
    g = build_temporal_graph(obs, threshold=1.0)
    assert g.n_nodes == 3
    assert np.array_equal(g.obj_ids, [0, 0, 1])
    for e in range(g.n_edges):
        assert abs(g.dt[e] - (g.times[g.dst[e]] - g.times[g.src[e]])) < 1e-15
    # self-temporal block comes first
    assert np.all(np.diff(g.kind) >= 0)
    assert g.n_self_edges == int((g.kind == KIND_SELF).sum())


def test_edge_set_matches_brute_force():
    rng = np.random.default_rng(1)
    for trial in range(5):
        times = [np.sort(rng.uniform(0, 1, rng.integers(2, 5))) for _ in range(3)]
        graph = InteractionGraph.from_pairs(3, [(0, 1), (1, 2)])
        obs = _obs(times, graph=graph)
        thr = rng.uniform(0.2, 0.8)
        g = build_temporal_graph(obs, thr)
        got = {(int(s), int(d)) for s, d in zip(g.src, g.dst)}
        node_obj = np.concatenate([np.full(len(t), i) for i, t in enumerate(times)])
        node_t = np.concatenate(times)
        want = set()
        for a in range(len(node_t)):
            for b in range(len(node_t)):
                if a == b:
                    continue
                oa, ob = int(node_obj[a]), int(node_obj[b])
                related = oa == ob or (oa, ob) in graph.edges
                if related and abs(node_t[b] - node_t[a]) <= thr:
                    want.add((a, b))
        assert got == want, f"trial {trial}"


def test_threshold_zero_keeps_only_simultaneous():
    obs = _obs([[0.1, 0.5], [0.1]])
    g = build_temporal_graph(obs, threshold=0.0)
    assert all(g.dt[e] == 0.0 for e in range(g.n_edges))
    kinds = {int(k) for k in g.kind}
    assert kinds <= {KIND_SELF, KIND_NEIGHBOR}


def test_unrelated_objects_have_no_cross_edges():
    obs = _obs([[0.1], [0.2]], graph=InteractionGraph.from_pairs(2, []))
    g = build_temporal_graph(obs, threshold=1.0)
    assert all(g.obj_ids[s] == g.obj_ids[d] for s, d in zip(g.src, g.dst))


def test_empty_observation_set_rejected():
    obs = _obs([[], []], graph=InteractionGraph.from_pairs(2, [(0, 1)]))
    with pytest.raises(ValueError):
        build_temporal_graph(obs, 0.5)


def test_dump_text_mentions_every_edge():
    obs = _obs([[0.1, 0.3], [0.2]])
    g = build_temporal_graph(obs, threshold=1.0)
    text = dump_text(g)
    assert f"# edges {g.n_edges}" in text
    assert text.count("edge ") == g.n_edges
