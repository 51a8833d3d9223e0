import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jointaug.core import MultiGraphDataset
from jointaug.simgen import (DivergentChainError, RocPoint, derive_variants, diff_sets_of,
                             dominance_fraction, edge_diff_metrics, gen_structure, ggm_precision,
                             hamming, lambda1_for_level, method_config, roc_sweep,
                             sample_gaussian, sample_ggm_data, sample_pgm_data, simulate, tp_at_fp)


def _edges(a):
    return int(np.triu(a, 1).sum())


# -- structures ------------------------------------------------------------

def test_banded_superdiagonal():
    a = gen_structure("banded", 5)
    assert _edges(a) == 4
    assert all(a[i, i + 1] == 1 for i in range(4))


def test_banded_bandwidth_two():
    assert _edges(gen_structure("banded", 6, 2)) == 5 + 4


def test_hub_sparsity_scale():
    a = gen_structure("hub", 50, 3)
    # disjoint blocks: each hub joins its block only
    deg = a.sum(axis=1)
    assert sorted(deg)[-3:] == [15, 16, 16]
    # comparable to the 38 edges per hub graph of the reference design
    assert 0.5 * 38 <= _edges(a) <= 1.5 * 38


@pytest.mark.parametrize("seed", range(5))
def test_scale_free_connected_heavy_tailed(seed):
    a = gen_structure("scale_free", 50, seed=seed)
    g = nx.from_numpy_array(a)
    assert nx.is_connected(g)
    deg = a.sum(axis=1)
    assert deg.max() >= 4 * np.median(deg)


def test_scale_free_edge_count_matches_reference_density():
    # 5 attachments per node give 225 edges at p = 50, as in the reference design
    assert _edges(gen_structure("scale_free", 50, 5)) == 225


@pytest.mark.parametrize("kind", ["scale_free", "banded", "hub"])
def test_structures_symmetric_binary(kind):
    a = gen_structure(kind, 12)
    assert np.array_equal(a, a.T) and np.all(np.diag(a) == 0) and set(np.unique(a)) <= {0, 1}


def test_structure_errors():
    with pytest.raises(ValueError):
        gen_structure("banded", 3)
    with pytest.raises(ValueError):
        gen_structure("lattice", 10)
    with pytest.raises(ValueError):
        gen_structure("hub", 10, 6)


# -- variants --------------------------------------------------------------

def test_zero_deviation():
    A0 = gen_structure("banded", 8)
    t = derive_variants(A0, 0.0, 3)
    assert all(np.array_equal(a, A0) for a in t.adjacency)
    assert all(len(s) == 0 for s in t.diff_sets.values())


def test_toggles_flip_exact_count():
    A0 = gen_structure("banded", 10)
    t = derive_variants(A0, 0.0, 3, seed=1, toggles=4)
    assert all(hamming(a, A0) == 4 for a in t.adjacency)


def test_pair_counts_near_reference():
    A0 = gen_structure("scale_free", 50, 5, seed=2)
    t = derive_variants(A0, 0.027, 3, seed=3)
    for count, ref in zip(t.pair_counts().values(), (66, 65, 69)):
        assert 0.7 * ref <= count <= 1.3 * ref


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.09))
def test_diff_sets_consistent(seed, rate):
    t = derive_variants(gen_structure("scale_free", 10, seed=seed), rate, 3, seed=seed)
    assert t.diff_sets == diff_sets_of(t.adjacency)
    for a in t.adjacency:
        assert np.array_equal(a, a.T) and np.all(np.diag(a) == 0)
    for (l, v), s in t.diff_sets.items():
        assert len(s) == hamming(t.adjacency[l], t.adjacency[v])


def test_deviation_rate_bounds():
    with pytest.raises(ValueError):
        derive_variants(np.zeros((5, 5)), 0.2, 2)


# -- samplers --------------------------------------------------------------

def test_empty_adjacency_identity_precision():
    np.testing.assert_array_equal(ggm_precision(np.zeros((4, 4))), np.eye(4))
    x = sample_ggm_data(np.zeros((4, 4)), 50_000, seed=0)
    np.testing.assert_allclose(np.cov(x.T), np.eye(4), atol=0.03)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 1.0))
def test_precision_positive_definite(seed, signal):
    a = gen_structure("scale_free", 15, 2, seed=seed)
    signs = np.random.default_rng(seed).choice([-1.0, 1.0], size=(15, 15))
    signs = np.triu(signs, 1) + np.triu(signs, 1).T
    assert np.linalg.eigvalsh(ggm_precision(a, signal, signs)).min() > 0


def test_two_node_correlation():
    s = 0.4
    a = np.array([[0, 1], [1, 0]])
    om = ggm_precision(a, s)
    x = sample_gaussian(om, 100_000, np.random.default_rng(1))
    # with a unit diagonal the implied correlation is -s
    assert np.corrcoef(x.T)[0, 1] == pytest.approx(-s, rel=0.05)


def test_sample_covariance_converges():
    A = gen_structure("banded", 10)
    om = ggm_precision(A, 0.3)
    x = sample_gaussian(om, 100_000, np.random.default_rng(2))
    cov = np.linalg.inv(om)
    assert np.linalg.norm(np.cov(x.T) - cov) / np.linalg.norm(cov) < 0.05


def test_pgm_empty_graph_is_poisson_two():
    x = sample_pgm_data(np.zeros((3, 3)), 20_000, burn_in=5, seed=3)
    np.testing.assert_allclose(x.mean(axis=0), 2.0, atol=0.05)
    np.testing.assert_allclose(x.var(axis=0), 2.0, atol=0.1)


def test_pgm_negative_interaction():
    a = np.array([[0, 1], [1, 0]])
    x = sample_pgm_data(a, 20_000, signal=-0.3, burn_in=50, seed=4)
    assert np.corrcoef(x.T)[0, 1] < -0.1


def test_pgm_stationary_after_burn_in():
    a = gen_structure("banded", 6)
    m1 = sample_pgm_data(a, 20_000, burn_in=50, seed=5).mean(axis=0)
    m2 = sample_pgm_data(a, 20_000, burn_in=200, seed=6).mean(axis=0)
    np.testing.assert_allclose(m1, m2, atol=0.06)


def test_pgm_divergence_detected():
    a = np.ones((6, 6)) - np.eye(6)
    with pytest.raises(DivergentChainError):
        sample_pgm_data(a, 200, signal=0.5, burn_in=20, seed=7)


def test_simulate_deterministic():
    t1, d1 = simulate("banded", 8, 30, 2, seed=11)
    t2, d2 = simulate("banded", 8, 30, 2, seed=11)
    np.testing.assert_array_equal(t1.adjacency, t2.adjacency)
    for a, b in zip(d1.graphs, d2.graphs):
        np.testing.assert_array_equal(a, b)


# -- evaluation ------------------------------------------------------------

def test_hamming_examples():
    a = gen_structure("banded", 5)
    b = a.copy()
    b[0, 1] = b[1, 0] = 0
    assert hamming(a, a) == 0 and hamming(a, b) == 1
    with pytest.raises(ValueError):
        hamming(a, np.zeros((4, 4)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_partition_identities(seed):
    rng = np.random.default_rng(seed)
    t = derive_variants(gen_structure("banded", 8), 0.08, 3, seed=seed)
    est = derive_variants(gen_structure("banded", 8), 0.08, 3, seed=seed + 1).adjacency
    m = edge_diff_metrics(t, est)
    n_pairs = 3 * 28
    assert m["TP"] + m["FN"] == m["positives"]
    assert m["TP"] + m["FP"] + m["FN"] + m["TN"] == n_pairs
    assert min(m["TP"], m["FP"], m["FN"], m["TN"]) >= 0
    assert sum(a for a, _ in m["per_pair"].values()) == m["TP"]
    del rng


def test_perfect_and_empty_predictions():
    t = derive_variants(gen_structure("banded", 8), 0.05, 3, seed=8, toggles=3)
    perfect = edge_diff_metrics(t, t.adjacency)
    assert perfect["FP"] == perfect["FN"] == 0 and perfect["TP"] == perfect["positives"]
    same = edge_diff_metrics(t, np.zeros_like(t.adjacency))
    assert same["TP"] == 0 and same["FP"] == 0


def test_edge_diff_dimension_mismatch():
    t = derive_variants(gen_structure("banded", 6), 0.0, 2)
    with pytest.raises(ValueError, match="dimension mismatch"):
        edge_diff_metrics(t, np.zeros((3, 6, 6)))


def _pts(pairs):
    return [RocPoint(0.0, fp, tp) for fp, tp in pairs]


def test_tp_at_fp_and_dominance():
    joint = _pts([(0, 0), (2, 5), (10, 8)])
    naive = _pts([(0, 0), (3, 4), (10, 9), (10, 9)])
    assert tp_at_fp(joint, 3) == 5 and tp_at_fp(joint, -1) == 0
    # the repeated naive point counts once
    assert dominance_fraction(joint, naive) == pytest.approx(2 / 3)
    assert dominance_fraction(naive, naive) == 1.0
    assert np.isnan(dominance_fraction(joint, _pts([(None, None)])))


def test_roc_sweep_records_failures_and_extremes():
    t, ds = simulate("banded", 6, 60, 2, seed=9, toggles=2)
    kw = dict(max_iter=5, bank=3, n_e1=200, n_e2=200)
    pts = (roc_sweep(ds, t, "ns_jgl", [1e-9], **kw)
           + roc_sweep(ds, t, "ns_jgl", [1e4], threshold_rule="magnitude", **kw))
    assert all(p.error == "" for p in pts)
    # complete graphs at the small end, empty ones at the large end: no differences either way
    off = 1 - np.eye(6, dtype=int)
    assert np.all(pts[0].adjacency == off) and np.all(pts[1].adjacency == 0)
    assert all(p.fp == 0 and p.tp == 0 for p in pts)
    pois = MultiGraphDataset(tuple(np.ones((10, 6)) for _ in range(2)), "poisson")
    bad = roc_sweep(pois, t, "scio_jgl", [0.1])
    assert bad[0].fp is None and "DataValidationError" in bad[0].error
    with pytest.raises(ValueError):
        roc_sweep(ds, t, "ns_jgl", [0.2, 0.1])


def test_method_config_table_values():
    cfg = method_config("ns_jgl", 0.1)
    assert (cfg.spec.n_e1, cfg.spec.n_e2, cfg.max_iter, cfg.tau0) == (4000, 4000, 80, 1e-4)
    assert cfg.spec.lambda2 == pytest.approx(0.025) and cfg.criterion == "fixed_T"
    assert method_config("scio_jfr", 0.1).max_iter == 150
    naive = method_config("naive", 0.1)
    assert naive.spec.n_e2 == 0 and naive.spec.lambda2 == 0.0
    with pytest.raises(ValueError):
        method_config("glasso", 0.1)


def test_lambda1_for_level():
    assert lambda1_for_level("ns_jgl", 0.2, 200) == pytest.approx(0.2 * 200 / 4000)
    assert lambda1_for_level("scio_jgl", 0.2, 200) == pytest.approx(0.2 / 4000)
