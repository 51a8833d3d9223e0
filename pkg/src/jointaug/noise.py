"""Noise-generating distributions for per-graph and cross-graph regularization.

All samplers return covariate noise in the column-stacked layout used by
:mod:`jointaug.augment`: graph-major, then covariate index, i.e. column
``l * d + c`` holds graph ``l``'s ``c``-th covariate of the current node.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .core import MultiGraphDataset, NoiseSpec, ParameterState


@dataclass
class NoiseBlock:
    e1: np.ndarray
    e2: np.ndarray
    outcome: float = 0.0
    draw_seed: Optional[tuple] = None


def ns_covariates(p: int, j: int) -> np.ndarray:
    return np.delete(np.arange(p), j)


def cd_covariates(p: int, j: int) -> np.ndarray:
    return np.arange(j)


def e1_variance(kind, gamma, lambda1, sigma2, theta, theta_hat=None, floor=1e-6):
    """Variance of the per-graph noise for coefficient(s) ``theta``.

    bridge: ``lambda1 |theta|^-gamma``; elastic_net: ``lambda1 / |theta| + sigma2``;
    adaptive_lasso: ``lambda1 / |theta| / |theta_hat|^gamma``. Magnitudes are
    floored at ``floor`` so the variance stays finite at zero.
    """
    a = np.maximum(np.abs(np.asarray(theta, dtype=float)), floor)
    if kind == "bridge":
        return lambda1 * a ** (-gamma)
    if kind == "elastic_net":
        return lambda1 / a + sigma2
    if kind == "adaptive_lasso":
        if theta_hat is None:
            raise ValueError("adaptive_lasso noise needs a pilot estimate theta_hat")
        ah = np.maximum(np.abs(np.asarray(theta_hat, dtype=float)), floor)
        return lambda1 / a * ah ** (-gamma)
    raise ValueError(f"unknown e1 kind {kind!r}")


def build_T(q: int) -> np.ndarray:
    """Cyclic difference matrix: ``T[s, s] = 1`` and ``T[s+1 mod q, s] = -1``."""
    if q < 2:
        raise ValueError(f"build_T needs q >= 2, got {q}")
    T = np.eye(q)
    for s in range(q):
        T[(s + 1) % q, s] = -1.0
    return T


def _stack(blocks: np.ndarray) -> np.ndarray:
    # (n, q, d) -> (n, q*d), graph-major
    n, q, d = blocks.shape
    return blocks.reshape(n, q * d)


def e1_variances(spec: NoiseSpec, state: ParameterState, j: int, covs: np.ndarray) -> np.ndarray:
    """Per-graph e1 variances for node ``j``, shape (q, len(covs))."""
    q = state.q
    lam = spec.lambda1_for(q)
    theta = state.theta[:, j, covs]
    theta_hat = None if spec.theta_hat is None else np.asarray(spec.theta_hat)[:, j, covs]
    return e1_variance(spec.e1_kind, spec.gamma, lam[:, None], spec.sigma2, theta,
                       theta_hat, spec.theta_floor)


def _draw_e1(var: np.ndarray, n: int, rng) -> np.ndarray:
    q, d = var.shape
    if n == 0:
        return np.zeros((0, q * d))
    z = rng.standard_normal((n, q, d))
    return _stack(z * np.sqrt(var)[None])


def jgl_variance(spec: NoiseSpec, theta_block: np.ndarray) -> np.ndarray:
    """Shared cross-graph variance per covariate, ``lambda2 / ||theta_k||_2``."""
    norm = np.sqrt((theta_block ** 2).sum(axis=0))
    return spec.lambda2 / np.maximum(norm, spec.theta_floor)


def _draw_e2(spec: NoiseSpec, theta_block: np.ndarray, n: int, rng,
             scale: Optional[np.ndarray] = None) -> np.ndarray:
    # scale: per-graph standard-deviation multipliers (CD uses sigma_j^(l))
    q, d = theta_block.shape
    if n == 0 or (q == 1 and spec.e2_kind == "jfr"):
        # a single graph has nothing to fuse with
        return np.zeros((n, q * d))
    if spec.e2_kind == "jgl":
        sd = np.sqrt(jgl_variance(spec, theta_block))
        e = rng.standard_normal((n, q, d)) * sd[None, None, :]
    else:
        T = build_T(q)
        z = rng.standard_normal((n, d, q))
        # each q-vector is sqrt(lambda2) * T z, covariance lambda2 T T'
        e = np.sqrt(spec.lambda2) * np.swapaxes(z @ T.T, 1, 2)
    if scale is not None:
        e = e * np.asarray(scale)[None, :, None]
    return _stack(e)


def sample_e1(spec: NoiseSpec, state: ParameterState, j: int, rng, n_rows: Optional[int] = None):
    """Per-graph regularization noise for NS outcome node ``j``."""
    n = spec.n_e1 if n_rows is None else n_rows
    covs = ns_covariates(state.p, j)
    return _draw_e1(e1_variances(spec, state, j, covs), n, rng)


def sample_e2(spec: NoiseSpec, state: ParameterState, j: int, rng, n_rows: Optional[int] = None):
    """Cross-graph similarity noise (JGL or JFR) for NS outcome node ``j``."""
    n = spec.n_e2 if n_rows is None else n_rows
    covs = ns_covariates(state.p, j)
    return _draw_e2(spec, state.theta[:, j, covs], n, rng)


def outcome_noise(dataset: MultiGraphDataset, j: int) -> float:
    """Pooled mean of node ``j`` over all graphs' observations."""
    total = sum(g[:, j].sum() for g in dataset.graphs)
    return float(total / dataset.n_total)


def sample_cd_noise(spec: NoiseSpec, state: ParameterState, j: int, rng,
                    n_rows: Optional[tuple] = None):
    """Noise pair for the Cholesky-regression of node ``j`` (0-based) on nodes ``< j``.

    Every variance carries the current residual variance ``sigma2[l, j]``; for
    JFR the per-graph standard deviations scale the rows of ``T z``.
    """
    if j < 1:
        raise ValueError("the first node has no Cholesky regression; its variance is "
                         "the sample variance")
    n1, n2 = (spec.n_e1, spec.n_e2) if n_rows is None else n_rows
    covs = cd_covariates(state.p, j)
    s2 = state.sigma2[:, j]
    var1 = e1_variances(spec, state, j, covs) * s2[:, None]
    e1 = _draw_e1(var1, n1, rng)
    e2 = _draw_e2(spec, state.theta[:, j, covs], n2, rng, scale=np.sqrt(s2))
    return e1, e2


def scio_variances(spec: NoiseSpec, state: ParameterState, j: int) -> np.ndarray:
    """e1 variances for SCIO column ``j`` with the self-entry zeroed, shape (q, p)."""
    var = e1_variances(spec, state, j, np.arange(state.p))
    var[:, j] = 0.0
    return var


def sample_scio_noise(spec: NoiseSpec, state: ParameterState, j: int, n_scale: float, rng,
                      n_rows: Optional[tuple] = None):
    """SCIO noise for precision column ``j``, pre-multiplied by ``sqrt(2 n_scale)``.

    The JGL variance carries no residual-variance factor (SCIO defines none).
    The self-entry ``k = j`` receives no noise.
    """
    n1, n2 = (spec.n_e1, spec.n_e2) if n_rows is None else n_rows
    p = state.p
    block = state.theta[:, j, :]
    e1 = _draw_e1(scio_variances(spec, state, j), n1, rng)
    e2 = _draw_e2(spec, block, n2, rng)
    if n2:
        e2.reshape(n2, state.q, p)[:, :, j] = 0.0
    c = np.sqrt(2.0 * n_scale)
    return e1 * c, e2 * c


def grouped_regression_noise(groups: Sequence, theta, lambda1, lambda2: float, kind: str,
                             n_e1: int, n_e2: int, rng, floor: float = 1e-6):
    """Noise for a single regression whose predictors form disjoint groups.

    ``e1`` is lasso noise per coefficient with the group's ``lambda1``.
    ``sgl``: members of group ``l`` share variance ``lambda2 / ||theta_(l)||``.
    ``sfr``: within group ``l`` the row is ``sqrt(lambda2) T z`` with ``T`` of
    size ``p_l``; a singleton group has nothing to fuse and gets zero e2.
    """
    theta = np.asarray(theta, dtype=float)
    P = theta.size
    lam1 = np.broadcast_to(np.asarray(lambda1, dtype=float), (len(groups),))
    e1 = np.zeros((n_e1, P))
    e2 = np.zeros((n_e2, P))
    if kind not in ("sgl", "sfr"):
        raise ValueError(f"unknown grouped noise kind {kind!r}")
    for g, idx in enumerate(groups):
        idx = np.asarray(idx, dtype=int)
        if idx.size == 0:
            raise ValueError(f"group {g} is empty")
        v1 = lam1[g] / np.maximum(np.abs(theta[idx]), floor)
        e1[:, idx] = rng.standard_normal((n_e1, idx.size)) * np.sqrt(v1)
        if lambda2 == 0 or n_e2 == 0:
            continue
        if kind == "sgl":
            v2 = lambda2 / max(np.linalg.norm(theta[idx]), floor)
            e2[:, idx] = rng.standard_normal((n_e2, idx.size)) * np.sqrt(v2)
        elif idx.size > 1:
            T = build_T(idx.size)
            e2[:, idx] = np.sqrt(lambda2) * rng.standard_normal((n_e2, idx.size)) @ T.T
    return e1, e2


def noise_factors(spec: NoiseSpec, var1: np.ndarray, theta_block: np.ndarray,
                  scale: Optional[np.ndarray] = None, mask: Optional[np.ndarray] = None):
    """Square factors ``A1, A2`` with noise rows distributed as ``z @ A``, ``z ~ N(0, I)``.

    ``var1`` holds the (q, d) e1 variances. ``scale`` multiplies graph ``l``'s
    e2 columns (CD's residual standard deviations); ``mask`` (q, d) zeroes e2
    columns (SCIO's self entry). The noise Gram ``E'E`` of ``n`` rows is then
    ``A' W A`` with ``W`` a standard Wishart of ``n`` degrees of freedom.
    """
    q, d = theta_block.shape
    A1 = np.diag(np.sqrt(var1).reshape(q * d))
    col = np.ones((q, d)) if scale is None else np.repeat(np.asarray(scale, float)[:, None], d, 1)
    if mask is not None:
        col = col * mask
    col = col.reshape(q * d)
    if spec.e2_kind == "jgl":
        sd = np.sqrt(jgl_variance(spec, theta_block))
        A2 = np.diag(np.tile(sd, q) * col)
    elif q == 1:
        A2 = np.zeros((d, d))
    else:
        A2 = np.sqrt(spec.lambda2) * np.kron(build_T(q).T, np.eye(d)) * col[None, :]
    return A1, A2


def sample_noise_gram(factor: np.ndarray, n: int, rng) -> np.ndarray:
    """Gram matrix ``E'E`` of ``n`` noise rows ``z @ factor``, drawn directly.

    Uses the Bartlett construction of a standard Wishart, which is exact in
    distribution and avoids materializing the ``n`` rows.
    """
    k = factor.shape[0]
    if n == 0:
        return np.zeros((k, k))
    if n < k:
        z = rng.standard_normal((n, k)) @ factor
        return z.T @ z
    W = stats.wishart(df=n, scale=np.eye(k)).rvs(random_state=rng)
    W = np.atleast_2d(W)
    return factor.T @ W @ factor
