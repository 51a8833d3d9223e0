import numpy as np
import pytest

from jointaug import noise as nz
from jointaug.augment import assemble_cd, assemble_ns, assemble_scio, scio_scale, scio_target
from jointaug.core import MultiGraphDataset, NoiseSpec, ParameterState


def _ds(q=3, p=5, n=20, seed=0):
    rng = np.random.default_rng(seed)
    ns = np.broadcast_to(n, (q,))
    return MultiGraphDataset(tuple(rng.normal(size=(int(k), p)) for k in ns), "gaussian")


def _state(q, p, seed=1):
    rng = np.random.default_rng(seed)
    return ParameterState(rng.uniform(-0.5, 0.5, (q, p, p)), np.zeros(p), np.ones((q, p)))


def test_table_dimensions():
    ds = _ds(3, 50, 100)
    d = 3 * 49
    aug = assemble_ns(ds, 0, np.zeros((4000, d)), np.zeros((4000, d)))
    assert aug.design.shape == (8300, 147)


def test_no_noise_pure_block_diagonal():
    ds = _ds(3, 4, [5, 6, 7])
    aug = assemble_ns(ds, 2, np.zeros((0, 9)), np.zeros((0, 9)))
    X = aug.design
    assert X.shape == (18, 9)
    rows = np.cumsum([0, 5, 6, 7])
    for l in range(3):
        blk = X[rows[l]:rows[l + 1]]
        off = np.delete(blk, np.s_[3 * l:3 * l + 3], axis=1)
        assert np.all(off == 0)
        np.testing.assert_array_equal(blk[:, 3 * l:3 * l + 3], ds.graphs[l][:, [0, 1, 3]])


def test_observed_row_support():
    ds = _ds(3, 6)
    aug = assemble_ns(ds, 1, np.ones((2, 15)), np.ones((2, 15)))
    assert np.count_nonzero(aug.design[0]) == 5
    assert np.all(aug.design[aug.obs_rows:] == 1)


def test_observed_gram_block_diagonal():
    ds = _ds(3, 5, [8, 9, 10])
    rng = np.random.default_rng(2)
    aug = assemble_ns(ds, 0, rng.normal(size=(4, 12)), rng.normal(size=(4, 12)))
    G = aug.observed.T @ aug.observed
    for a in range(3):
        for b in range(3):
            if a != b:
                assert np.all(G[4 * a:4 * a + 4, 4 * b:4 * b + 4] == 0)


def test_layout_mismatch_message():
    ds = _ds(2, 4)
    with pytest.raises(ValueError, match="layout mismatch"):
        assemble_ns(ds, 0, np.zeros((3, 5)), np.zeros((3, 6)))


def test_outcome_and_intercept():
    ds = _ds(2, 3, 4)
    aug = assemble_ns(ds, 2, np.zeros((3, 4)), np.zeros((1, 4)), outcome_value=1.5, intercept=True)
    assert aug.design.shape == (12, 5)
    assert np.all(aug.design[:, -1] == 1)
    np.testing.assert_array_equal(aug.outcome[:8], np.r_[ds.graphs[0][:, 2], ds.graphs[1][:, 2]])
    assert np.all(aug.outcome[8:] == 1.5)
    block, b0 = aug.split(np.arange(5.0))
    np.testing.assert_array_equal(block, [[0, 1], [2, 3]])
    assert b0 == 4.0


def test_cd_design_widths():
    q, p = 3, 6
    ds = _ds(q, p)
    assert assemble_cd(ds, 1, np.zeros((0, q)), np.zeros((0, q))).design.shape[1] == q
    w = q * (p - 1)
    assert assemble_cd(ds, p - 1, np.zeros((0, w)), np.zeros((0, w))).design.shape[1] == w
    with pytest.raises(ValueError):
        assemble_cd(ds, 0, np.zeros((0, 0)), np.zeros((0, 0)))


def test_scio_target():
    xi = scio_target(2, 10, 3)
    assert xi.size == 20 and set(np.flatnonzero(xi)) == {3, 13}


def test_scio_zero_noise_single_graph_is_data():
    ds = _ds(1, 4, 12)
    aug = assemble_scio(ds, 0, np.zeros((0, 4)), np.zeros((0, 4)))
    np.testing.assert_array_equal(aug.design, ds.graphs[0])


def test_scio_row_scaling_matches_mean_n():
    ds = _ds(2, 3, [10, 30])
    aug = assemble_scio(ds, 1, np.zeros((0, 6)), np.zeros((0, 6)))
    nbar = scio_scale(ds)
    G = aug.design.T @ aug.design
    for l, g in enumerate(ds.graphs):
        np.testing.assert_allclose(G[3 * l:3 * l + 3, 3 * l:3 * l + 3], nbar * g.T @ g / g.shape[0])


def test_col_map_bijective():
    ds = _ds(3, 5)
    aug = assemble_ns(ds, 2, np.zeros((0, 12)), np.zeros((0, 12)))
    cm = aug.col_map
    assert sorted(cm.values()) == list(range(12))
    assert len(cm) == 12 and all(k != 2 for _, k in cm)
    # the map agrees with where graph l's column k actually landed
    for (l, k), c in cm.items():
        col = aug.design[:, c]
        start = sum(ds.n[:l])
        np.testing.assert_array_equal(col[start:start + ds.n[l]], ds.graphs[l][:, k])


@pytest.mark.parametrize("kind", ["jgl", "jfr"])
def test_noise_block_gram_converges_to_designed_covariance(kind):
    q, p, j, n_e = 2, 4, 3, 100_000
    ds, st = _ds(q, p), _state(q, p)
    spec = NoiseSpec(lambda1=0.1, lambda2=0.2, e2_kind=kind, n_e1=n_e, n_e2=n_e)
    rng = np.random.default_rng(3)
    e1, e2 = nz.sample_e1(spec, st, j, rng), nz.sample_e2(spec, st, j, rng)
    aug = assemble_ns(ds, j, e1, e2)
    covs = nz.ns_covariates(p, j)
    A1, A2 = nz.noise_factors(spec, nz.e1_variances(spec, st, j, covs), st.theta[:, j, covs])
    for rows, A in ((aug.design[aug.obs_rows:aug.obs_rows + n_e], A1),
                    (aug.design[aug.obs_rows + n_e:], A2)):
        prod = rows[:, :, None] * rows[:, None, :]
        se = prod.std(axis=0, ddof=1) / np.sqrt(n_e)
        assert np.all(np.abs(prod.mean(axis=0) - A.T @ A) <= 5 * se + 1e-12)
