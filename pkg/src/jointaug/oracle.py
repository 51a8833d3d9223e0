"""Expected penalties of noise augmentation and Monte Carlo loss estimates.

The expected augmented loss at fixed coefficients splits into the observed
data loss plus two penalties: ``P1`` from the per-graph noise and ``P2`` from
the cross-graph noise. It is exact for gaussian outcomes. For Poisson and
Bernoulli outcomes a second-order expansion adds a constant ``C``, and the
neglected remainder is reported separately.

Backends differ in which coefficients carry noise:

* ``ns``: node ``j`` on every ``k != j``, loss = SSE or negative log-likelihood;
* ``cd``: node ``j`` on ``k < j``, each node's SSE weighted by ``1/sigma_j^2``
  (requires residual variances shared across graphs);
* ``scio``: column ``j`` of the precision, self entry unpenalized, quadratic loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import noise as nz
from .augment import scio_scale
from .core import MultiGraphDataset, NoiseSpec, ParameterState
from .glm import _cumulant


@dataclass
class PenaltyReport:
    p1: float
    p2: float
    constant: float
    data_loss: float
    total: float
    remainder: float = 0.0


def _families(families, p):
    if families is None:
        return ("gaussian",) * p
    if isinstance(families, str):
        return (families,) * p
    return tuple(families)


def _covs(backend, p, j):
    if backend == "cd":
        return nz.cd_covariates(p, j)
    if backend == "scio":
        return np.arange(p)
    return nz.ns_covariates(p, j)


def _nodes(backend, p):
    return range(1, p) if backend == "cd" else range(p)


def curvature(family: str, eta: float) -> float:
    """``B''(eta)``: 1 for gaussian (SSE scale), ``e^eta`` Poisson, ``p(1-p)`` Bernoulli."""
    if family == "gaussian":
        return 1.0
    _, _, w = _cumulant(family, np.array([float(eta)]))
    return float(w[0])


def _weight(family, eta):
    # gaussian loss is SSE (no 1/2), so its second-order weight is 1
    return 1.0 if family == "gaussian" else 0.5 * curvature(family, eta)


def _e1_var(spec, state, j, covs, backend):
    var = nz.e1_variances(spec, state, j, covs)
    if backend == "scio":
        var = var.copy()
        var[:, j] = 0.0
    return var


def _block(state, j, covs, backend):
    return state.theta[:, j, covs].copy()


def _e2_quad(spec, th, backend, j):
    """``E[(e2 . theta)^2]`` for one noise row, floored JGL variance included."""
    q = th.shape[0]
    if backend == "scio":
        th = th.copy()
        th[:, j] = 0.0
    if spec.e2_kind == "jgl":
        norm = np.sqrt((th ** 2).sum(axis=0))
        return float(spec.lambda2 * np.sum(norm ** 2 / np.maximum(norm, spec.theta_floor)))
    if q < 2:
        return 0.0
    # T'theta has entries theta_s - theta_{s+1 mod q}
    diff = th - np.roll(th, -1, axis=0)
    return float(spec.lambda2 * np.sum(diff ** 2))


def _e1_quad(spec, state, j, covs, backend):
    th = _block(state, j, covs, backend)
    return float(np.sum(th ** 2 * _e1_var(spec, state, j, covs, backend)))


def _check_cd_sigma(state):
    s = state.sigma2
    if not np.allclose(s, s[:1], rtol=0, atol=1e-14):
        raise ValueError("the cd oracle needs residual variances shared across graphs")


def penalty_p1(state: ParameterState, spec: NoiseSpec, families=None, backend: str = "ns") -> float:
    """Expected per-graph noise penalty, ``n_e1 sum w_j sum theta^2 V``.

    ``w_j`` is 1 for gaussian nodes and ``B''(theta_j0)/2`` otherwise. For the
    bridge kind on gaussian data this is ``lambda1 n_e1 sum |theta|^(2-gamma)``.
    """
    fam = _families(families, state.p)
    total = 0.0
    for j in _nodes(backend, state.p):
        covs = _covs(backend, state.p, j)
        total += _weight(fam[j], state.intercept[j]) * _e1_quad(spec, state, j, covs, backend)
    return spec.n_e1 * total


def penalty_p2(state: ParameterState, spec: NoiseSpec, families=None, backend: str = "ns") -> float:
    """Expected cross-graph noise penalty.

    JGL: ``lambda2 n_e2 sum ||theta_jk||``. JFR: ``lambda2 n_e2 sum theta_jk' T T' theta_jk``,
    the sum of squared differences between cyclically adjacent graphs. For
    ``q = 3`` that equals the sum over all pairs, and for ``q = 2`` twice the
    single squared difference (see :func:`pairwise_fused_penalty`).
    """
    fam = _families(families, state.p)
    total = 0.0
    for j in _nodes(backend, state.p):
        covs = _covs(backend, state.p, j)
        total += _weight(fam[j], state.intercept[j]) * _e2_quad(spec, _block(state, j, covs, backend),
                                                               backend, j)
    return spec.n_e2 * total


def pairwise_fused_penalty(theta_vectors, lambda2: float, n_e2: float = 1.0) -> float:
    """``lambda2 n_e2 sum_{l<v} (theta_l - theta_v)^2`` over the last axis of graph vectors.

    ``theta_vectors`` has shape (q,) for one position or (q, ...) for many.
    """
    th = np.asarray(theta_vectors, dtype=float)
    s = sum(np.sum((th[a] - th[b]) ** 2) for a, b in combinations(range(th.shape[0]), 2))
    return float(lambda2 * n_e2 * s)


def remainder(state: ParameterState, spec: NoiseSpec, families=None, backend: str = "ns") -> float:
    """Leading neglected term of the second-order expansion (non-gaussian nodes).

    Per node and noise type: ``n_e B''(theta_j0) s^4 / 8`` with ``s^2`` the
    variance of one noise row's linear predictor, a quantity of order
    ``theta^4 V^2``. Zero for gaussian nodes.
    """
    fam = _families(families, state.p)
    total = 0.0
    for j in _nodes(backend, state.p):
        if fam[j] == "gaussian":
            continue
        covs = _covs(backend, state.p, j)
        s1 = _e1_quad(spec, state, j, covs, backend)
        s2 = _e2_quad(spec, _block(state, j, covs, backend), backend, j)
        total += curvature(fam[j], state.intercept[j]) / 8 * (spec.n_e1 * s1 ** 2 + spec.n_e2 * s2 ** 2)
    return float(total)


def constant_c(state: ParameterState, dataset: MultiGraphDataset, spec: NoiseSpec) -> float:
    """Zero-noise value of the noise rows' loss for non-gaussian nodes.

    Each of the ``n_e1 + n_e2`` rows has outcome equal to the pooled mean
    ``xbar_j`` and linear predictor ``theta_j0``, contributing
    ``B(theta_j0) - xbar_j theta_j0`` (the ``h`` term dropped as everywhere).
    """
    total = 0.0
    for j, fam in enumerate(dataset.family):
        if fam == "gaussian":
            continue
        eta = np.array([state.intercept[j]])
        b, _, _ = _cumulant(fam, eta)
        total += (spec.n_e1 + spec.n_e2) * float(b[0] - nz.outcome_noise(dataset, j) * eta[0])
    return total


def data_loss(state: ParameterState, dataset: MultiGraphDataset, backend: str = "ns") -> float:
    """Loss of the observed rows only, on the data as given (no preprocessing)."""
    p = dataset.p
    total = 0.0
    if backend == "scio":
        for l, g in enumerate(dataset.graphs):
            C = g.T @ g / g.shape[0]
            Th = state.theta[l].T  # column j = theta[l, j, :]
            total += 0.5 * np.sum(Th * (C @ Th)) - np.trace(Th)
        return float(total)
    if backend == "cd":
        _check_cd_sigma(state)
    for j in _nodes(backend, p):
        covs = _covs(backend, p, j)
        fam = dataset.family[j]
        for l, g in enumerate(dataset.graphs):
            eta = g[:, covs] @ state.theta[l, j, covs]
            y = g[:, j]
            if fam == "gaussian":
                r = y - eta
                w = 1.0 / state.sigma2[0, j] if backend == "cd" else 1.0
                total += w * float(r @ r)
            else:
                eta = eta + state.intercept[j]
                b, _, _ = _cumulant(fam, eta)
                total += float(np.sum(b - y * eta))
    return float(total)


def expected_loss(state: ParameterState, dataset: MultiGraphDataset, spec: NoiseSpec,
                  backend: str = "ns") -> PenaltyReport:
    fam = dataset.family
    dl = data_loss(state, dataset, backend)
    p1 = penalty_p1(state, spec, fam, backend)
    p2 = penalty_p2(state, spec, fam, backend)
    c = constant_c(state, dataset, spec) if backend == "ns" else 0.0
    rem = remainder(state, spec, fam, backend) if backend == "ns" else 0.0
    return PenaltyReport(p1, p2, c, dl, dl + p1 + p2 + c, rem)


def scio_expected_loss(state: ParameterState, dataset: MultiGraphDataset, spec: NoiseSpec) -> float:
    """Exact expected SCIO loss: quadratic data loss plus both penalties."""
    return expected_loss(state, dataset, spec, "scio").total


def _noise_rows(backend, spec, state, dataset, j, rng, n1, n2):
    if backend == "ns":
        return (nz.sample_e1(spec, state, j, rng, n_rows=n1),
                nz.sample_e2(spec, state, j, rng, n_rows=n2))
    if backend == "cd":
        return nz.sample_cd_noise(spec, state, j, rng, n_rows=(n1, n2))
    return nz.sample_scio_noise(spec, state, j, scio_scale(dataset), rng, n_rows=(n1, n2))


def mc_expected_loss(state: ParameterState, dataset: MultiGraphDataset, spec: NoiseSpec,
                     draws: int = 100_000, backend: str = "ns", seed: int = 0,
                     chunk: int = 10_000):
    """Monte Carlo mean and standard error of the augmented loss at fixed coefficients.

    Each draw samples a fresh set of ``n_e1 + n_e2`` noise rows per node with
    the estimators' samplers and evaluates the full augmented loss: observed
    rows plus noise rows (outcome ``xbar_j`` for non-gaussian nodes, 0 else).
    """
    p = dataset.p
    fam = dataset.family
    if backend == "cd":
        _check_cd_sigma(state)
    base = data_loss(state, dataset, backend)
    nbar = scio_scale(dataset)
    rng = np.random.default_rng(seed)
    sums = np.zeros(draws)
    for start in range(0, draws, chunk):
        k = min(chunk, draws - start)
        acc = np.zeros(k)
        for j in _nodes(backend, p):
            covs = _covs(backend, p, j)
            c = state.theta[:, j, covs].ravel()
            for n_e, which in ((spec.n_e1, 0), (spec.n_e2, 1)):
                if n_e == 0:
                    continue
                n1, n2 = (k * n_e, 0) if which == 0 else (0, k * n_e)
                rows = _noise_rows(backend, spec, state, dataset, j, rng, n1, n2)[which]
                u = (rows @ c).reshape(k, n_e)
                if backend == "scio":
                    acc += np.sum(u ** 2, axis=1) / (2 * nbar)
                elif fam[j] == "gaussian":
                    w = 1.0 / state.sigma2[0, j] if backend == "cd" else 1.0
                    acc += w * np.sum(u ** 2, axis=1)
                else:
                    eta = u + state.intercept[j]
                    b, _, _ = _cumulant(fam[j], eta)
                    acc += np.sum(b - nz.outcome_noise(dataset, j) * eta, axis=1)
        sums[start:start + k] = acc
    mean = base + float(sums.mean())
    se = float(sums.std(ddof=1) / np.sqrt(draws)) if draws > 1 else 0.0
    return mean, se
