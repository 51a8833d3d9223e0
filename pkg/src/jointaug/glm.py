"""Maximum-likelihood GLM fits (canonical links) on augmented designs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla


class SingularDesignError(np.linalg.LinAlgError):
    """Design (or Gram) matrix is rank deficient."""

    def __init__(self, column: int, message: str = ""):
        self.column = column
        super().__init__(message or f"design is rank deficient at column {column}")


@dataclass
class FitResult:
    coefficients: np.ndarray
    converged: bool
    deviance: float
    irls_iters: int = 0


def _qr_r(X):
    Q, R = np.linalg.qr(X)
    d = np.abs(np.diag(R))
    tol = max(X.shape) * np.finfo(float).eps * (d.max() if d.size else 0.0)
    bad = np.flatnonzero(d <= tol)
    if bad.size:
        raise SingularDesignError(int(bad[0]))
    return Q, R


def fit_ols(design, outcome, method: str = "qr") -> FitResult:
    """Least-squares fit.

    ``qr`` solves through a Householder QR and names the first dependent
    column on rank deficiency. ``cholesky`` solves the normal equations,
    which is much cheaper for tall, noise-conditioned designs, and falls back
    to QR when the Gram matrix is not numerically positive definite.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(outcome, dtype=float)
    if method == "cholesky":
        try:
            c = sla.cho_factor(X.T @ X, check_finite=False)
            beta = sla.cho_solve(c, X.T @ y, check_finite=False)
        except np.linalg.LinAlgError:
            return fit_ols(X, y, "qr")
    elif method == "qr":
        Q, R = _qr_r(X)
        beta = sla.solve_triangular(R, Q.T @ y, check_finite=False)
    else:
        raise ValueError(f"unknown OLS method {method!r}")
    r = y - X @ beta
    return FitResult(beta, True, float(r @ r), 0)


def _cumulant(family, eta):
    """B(eta), B'(eta), B''(eta) for the canonical link."""
    if family == "poisson":
        with np.errstate(over="ignore"):
            mu = np.exp(eta)
        return mu, mu, mu
    if family == "bernoulli":
        b = np.logaddexp(0.0, eta)
        mu = sla_expit(eta)
        return b, mu, mu * (1.0 - mu)
    if family == "gaussian":
        return 0.5 * eta ** 2, eta, np.ones_like(eta)
    raise ValueError(f"unknown family {family!r}")


def sla_expit(x):
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def negloglik(family: str, design, outcome, coefficients) -> float:
    """Gaussian: sum of squared errors. Others: ``sum(B(eta) - y eta)``, h dropped."""
    X = np.asarray(design, dtype=float)
    y = np.asarray(outcome, dtype=float)
    eta = X @ np.asarray(coefficients, dtype=float)
    if family == "gaussian":
        r = y - eta
        return float(r @ r)
    b, _, _ = _cumulant(family, eta)
    return float(np.sum(b - y * eta))


def saturated_negloglik(family: str, outcome) -> float:
    y = np.asarray(outcome, dtype=float)
    if family == "gaussian":
        return 0.0
    if family == "poisson":
        return float(np.sum(y - np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0)), 0.0)))
    if family == "bernoulli":
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = np.where((y > 0) & (y < 1), -y * np.log(y) - (1 - y) * np.log1p(-y), 0.0)
        return float(np.sum(ent))
    raise ValueError(f"unknown family {family!r}")


def _objective(family, X, y, beta, ridge):
    eta = X @ beta
    b, _, _ = _cumulant(family, eta)
    val = np.sum(b - y * eta) + 0.5 * np.sum(ridge * beta ** 2)
    return float(val) if np.isfinite(val) else np.inf


DIVERGENCE_ETA = 30.0


def _diverged(family, eta) -> bool:
    # a saturated linear predictor means the likelihood has no finite maximizer
    if family == "bernoulli":
        return bool(np.max(np.abs(eta)) > DIVERGENCE_ETA)
    return bool(np.min(eta) < -DIVERGENCE_ETA)


def fit_irls(design, outcome, family: str, max_iter: int = 100, tol: float = 1e-8,
             start=None, ridge=0.0) -> FitResult:
    """Newton/IRLS for a Bernoulli or Poisson GLM with step halving.

    Stops when the gradient's infinity norm drops below ``tol`` relative to
    ``1 + max|X'y|`` (never looser than 1e-7), or when no step improves the
    objective any more and the gradient is below 1e-6. ``ridge`` (scalar or
    per-coefficient) adds ``ridge/2 * beta**2`` to the objective.
    Non-convergence, including separation (a linear predictor beyond
    +-30), is reported through the flag with the last iterate.
    """
    if family == "gaussian":
        return fit_ols(design, outcome)
    X = np.asarray(design, dtype=float)
    y = np.asarray(outcome, dtype=float)
    k = X.shape[1]
    ridge = np.broadcast_to(np.asarray(ridge, dtype=float), (k,))
    gtol = min(1e-7, tol * (1.0 + float(np.max(np.abs(X.T @ y)))))
    beta = np.zeros(k) if start is None else np.array(start, dtype=float)
    obj = _objective(family, X, y, beta, ridge)
    if not np.isfinite(obj):
        beta = np.zeros(k)
        obj = _objective(family, X, y, beta, ridge)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = X @ beta
        _, mu, w = _cumulant(family, eta)
        grad = X.T @ (y - mu) - ridge * beta
        gmax = np.max(np.abs(grad))
        if gmax < gtol:
            converged = True
            break
        H = (X * w[:, None]).T @ X + np.diag(ridge)
        try:
            step = sla.cho_solve(sla.cho_factor(H, check_finite=False), grad, check_finite=False)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        s = 1.0
        for _ in range(60):
            cand = beta + s * step
            new = _objective(family, X, y, cand, ridge)
            if new <= obj:
                break
            s *= 0.5
        else:
            converged = bool(gmax < 1e-6)
            break
        moved = np.max(np.abs(cand - beta)) > 1e-15 * (1 + np.max(np.abs(beta)))
        beta, obj = cand, new
        if not moved:
            _, mu, _ = _cumulant(family, X @ beta)
            g = X.T @ (y - mu) - ridge * beta
            converged = bool(np.max(np.abs(g)) < 1e-6)
            break
    if converged and _diverged(family, X @ beta):
        converged = False
    dev = 2.0 * (negloglik(family, X, y, beta) - saturated_negloglik(family, y))
    return FitResult(beta, converged and bool(np.all(np.isfinite(beta))), dev, it)


def fit_glm(design, outcome, family: str, start=None) -> FitResult:
    if family == "gaussian":
        return fit_ols(design, outcome, method="cholesky")
    return fit_irls(design, outcome, family, start=start)


def hat_trace_df(design_augmented, design_observed) -> float:
    """``trace(x (x~' x~)^-1 x')``: degrees of freedom of the observed rows."""
    Xa = np.asarray(design_augmented, dtype=float)
    Xo = np.asarray(design_observed, dtype=float)
    R = sla.qr(Xa, mode="r", check_finite=False)[0][: Xa.shape[1]]
    d = np.abs(np.diag(R))
    bad = np.flatnonzero(d <= max(Xa.shape) * np.finfo(float).eps * d.max())
    if bad.size:
        raise SingularDesignError(int(bad[0]), "Gram matrix of the augmented design is singular")
    A = sla.solve_triangular(R, Xo.T, trans="T", check_finite=False)
    return float(np.sum(A * A))
