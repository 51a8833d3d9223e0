"""Joint estimators: neighborhood selection (NS), Cholesky regression (CD) and SCIO.

All three share one outer loop. Every iteration redraws noise for each node
from the previous moving-average iterate, refits, and averages the last
``ma_window`` fits. Once the loss trace settles (or ``max_iter`` runs out)
``bank`` more iterations are recorded and drive edge thresholding.

For Gaussian outcome nodes the augmented least-squares fit only needs the
Gram matrix of the noise rows, which is drawn directly as a Wishart matrix
(``noise_gram="wishart"``). This is exact in distribution and much cheaper
than materializing ``n_e1 + n_e2`` rows; ``noise_gram="rows"`` uses the row
samplers instead.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from . import noise as nz
from .augment import assemble_ns, scio_scale
from .core import (DataValidationError, JointEstimate, MultiGraphDataset, NoiseSpec,
                   ParameterState, standardize, validate)
from .glm import FitResult, SingularDesignError, fit_glm, fit_irls, negloglik

BACKENDS = ("ns", "cd", "scio")


class EstimationError(RuntimeError):
    """A node fit failed (non-finite coefficients or a singular system)."""


@dataclass
class EstimatorConfig:
    """Loop settings for one estimator run.

    ``criterion`` is ``relative_change`` (stop once the relative change of
    the loss stays below ``tol`` for ``patience`` consecutive iterations) or
    ``fixed_T`` (always run ``max_iter`` iterations). ``ridge_start`` is the
    ridge penalty of the starting fit, which also serves as the pilot
    estimate for adaptive-lasso noise.
    """

    backend: str = "ns"
    spec: NoiseSpec = field(default_factory=NoiseSpec)
    max_iter: int = 80
    ma_window: int = 1
    bank: int = 10
    tau0: float = 1e-4
    threshold_rule: str = "crossing"
    inner: int = 3
    criterion: str = "relative_change"
    tol: float = 1e-3
    patience: int = 3
    seed: int = 0
    threads: int = 1
    noise_gram: str = "wishart"
    ridge_start: float = 1.0
    preprocess: bool = True

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise DataValidationError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if not self.max_iter > self.ma_window >= 1:
            raise DataValidationError(
                f"need max_iter > ma_window >= 1, got max_iter={self.max_iter}, "
                f"ma_window={self.ma_window}")
        if self.bank < 1:
            raise DataValidationError("bank must be >= 1")
        if self.tau0 <= 0:
            raise DataValidationError("tau0 must be positive")
        if self.threshold_rule not in THRESHOLD_RULES:
            raise DataValidationError(f"threshold_rule must be one of {THRESHOLD_RULES}")
        if self.inner < 1:
            raise DataValidationError("inner must be >= 1")
        if self.criterion not in ("relative_change", "fixed_T"):
            raise DataValidationError(f"unknown convergence criterion {self.criterion!r}")
        if self.patience < 1 or self.tol <= 0:
            raise DataValidationError("patience must be >= 1 and tol positive")
        if self.noise_gram not in ("wishart", "rows"):
            raise DataValidationError(f"noise_gram must be wishart or rows, got {self.noise_gram!r}")
        if self.threads < 1:
            raise DataValidationError("threads must be >= 1")
        if self.ridge_start < 0:
            raise DataValidationError("ridge_start must be nonnegative")


# -- small shared pieces ---------------------------------------------------

def check_convergence(loss_trace: Sequence[float], criterion: str = "relative_change",
                      tol: float = 1e-3, patience: int = 3,
                      max_iter: Optional[int] = None) -> bool:
    """True once ``patience`` consecutive relative loss changes fall below ``tol``.

    Under ``fixed_T`` the answer is true only when ``max_iter`` entries exist.
    """
    trace = np.asarray(loss_trace, dtype=float)
    if criterion == "fixed_T":
        return max_iter is not None and trace.size >= max_iter
    if trace.size < patience + 1:
        return False
    prev, cur = trace[-patience - 1:-1], trace[-patience:]
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(cur - prev) / np.abs(prev)
    rel = np.where(cur == prev, 0.0, rel)
    return bool(np.all(rel < tol))


THRESHOLD_RULES = ("crossing", "magnitude")


def _drop_rule(traj: np.ndarray, tau0: float, rule: str = "crossing") -> np.ndarray:
    # traj: (r, ...) banked values; True where the coefficient is declared zero
    prod = traj.max(axis=0) * traj.min(axis=0)
    if rule == "magnitude":
        return np.abs(prod) < tau0
    if rule != "crossing":
        raise ValueError(f"unknown threshold rule {rule!r}")
    return ((prod < 0) & (np.abs(prod) < tau0)) | (prod == 0)


def threshold_edges(banked_jk, banked_kj, tau0: float, rule: str = "crossing") -> bool:
    """Edge decision from the banked trajectories of one coefficient pair.

    ``crossing`` (default): no edge when either direction's ``max * min`` is
    negative with magnitude below ``tau0`` (the trajectory crossed zero while
    staying tiny), or is exactly zero. A trajectory of tiny same-sign values
    stays an edge. ``magnitude``: no edge when either ``|max * min| < tau0``.
    """
    a = np.asarray(banked_jk, dtype=float)
    b = np.asarray(banked_kj, dtype=float)
    return not bool(_drop_rule(a, tau0, rule) or _drop_rule(b, tau0, rule))


def threshold_adjacency(banked: np.ndarray, tau0: float, directions: str = "both",
                        rule: str = "crossing"):
    """Vectorized rule over a bank of shape (r, q, p, p).

    Returns the (q, p, p) 0/1 adjacency and the ``|max * min|`` diagnostics.
    ``directions="lower"`` applies the rule to ``theta[j, k]`` with ``k < j``
    only (CD's triangular coefficients).
    """
    drop = _drop_rule(banked, tau0, rule)
    prod = np.abs(banked.max(axis=0) * banked.min(axis=0))
    if directions == "both":
        drop = drop | np.swapaxes(drop, 1, 2)
    else:
        low = np.tril(np.ones(drop.shape[1:], dtype=bool), -1)
        drop = np.where(low, drop, False)
        drop = drop | np.swapaxes(drop, 1, 2)
        drop = drop | ~(low | low.T)[None]
    adj = (~drop).astype(int)
    for a in adj:
        np.fill_diagonal(a, 0)
    return adj, prod


def symmetrize_min(mat: np.ndarray) -> np.ndarray:
    """Smaller magnitude of the two mirrored entries, kept only on sign agreement."""
    m = np.asarray(mat, dtype=float)
    mt = np.swapaxes(m, -1, -2)
    same = np.sign(m) == np.sign(mt)
    return np.where(same, np.sign(m) * np.minimum(np.abs(m), np.abs(mt)), 0.0)


def recover_precision_ns(theta_hat, sigma2_hat, symmetrize: bool = True) -> np.ndarray:
    """Precision matrices from node-wise regressions.

    ``omega_jj = 1 / sigma2_j`` and ``omega_jk = -theta_jk / sigma2_j``; with
    ``symmetrize`` the mirrored pair is reconciled by :func:`symmetrize_min`.
    """
    theta = np.asarray(theta_hat, dtype=float)
    single = theta.ndim == 2
    if single:
        theta = theta[None]
    s2 = np.asarray(sigma2_hat, dtype=float)
    s2 = np.broadcast_to(s2 if s2.ndim == 2 else s2[None], theta.shape[:2])
    if np.any(s2 <= 0):
        raise ValueError("residual variances must be positive")
    om = -theta / s2[:, :, None]
    if symmetrize:
        om = symmetrize_min(om)
    for l in range(om.shape[0]):
        np.fill_diagonal(om[l], 1.0 / s2[l])
    return om[0] if single else om


def _ma(records: list, t: int, m: int):
    # trailing moving average; the first m iterations use the newest fit
    if t > m and len(records) >= m:
        return sum(records[-m:]) / m
    return records[-1]


def _rng(seed: int, *keys):
    return np.random.default_rng([int(seed), *[int(k) for k in keys]])


def _solve_spd(G, b):
    try:
        return sla.cho_solve(sla.cho_factor(G, check_finite=False), b, check_finite=False)
    except np.linalg.LinAlgError:
        d = np.abs(np.diag(G))
        bad = np.flatnonzero(d <= 1e-14 * max(d.max(), 1.0))
        raise SingularDesignError(int(bad[0]) if bad.size else -1,
                                  "augmented Gram matrix is singular") from None


def _noise_gram(A1, A2, n1, n2, rng):
    return nz.sample_noise_gram(A1, n1, rng) + nz.sample_noise_gram(A2, n2, rng)


def _rows_gram(e1, e2):
    return e1.T @ e1 + e2.T @ e2


def preprocess(dataset: MultiGraphDataset, backend: str = "ns"):
    """Data the estimators actually fit.

    Returns ``(covariates, outcomes, use_intercept)``. All-gaussian data is
    standardized per graph. Otherwise covariates are centered, gaussian
    outcomes centered, and non-gaussian outcomes kept raw with a shared
    intercept.
    """
    if dataset.is_gaussian:
        z = standardize(dataset, "standardize_all")
        return z, z, np.zeros(dataset.p, dtype=bool)
    if backend != "ns":
        raise DataValidationError(f"the {backend} backend requires an all-gaussian dataset")
    xc = standardize(dataset, "center_covariates")
    out = [np.where(np.array(dataset.family) == "gaussian", c, g)
           for c, g in zip(xc.graphs, dataset.graphs)]
    use_int = np.array([f != "gaussian" for f in dataset.family])
    return xc, dataset.replace_graphs(out), use_int


# -- generic outer loop ----------------------------------------------------

@dataclass
class _NodeOut:
    theta_hat: np.ndarray            # (q, p) row of coefficients for this unit
    intercept_hat: float = 0.0
    sigma2: Optional[np.ndarray] = None
    stats: dict = field(default_factory=dict)


def _run_loop(config: EstimatorConfig, state0: ParameterState, nodes: Sequence[int],
              step: Callable, loss_of: Callable) -> dict:
    """Drive the moving-average iteration and banking.

    ``step(j, t, state)`` returns a :class:`_NodeOut` holding the new fit;
    ``loss_of(j, out, theta_bar, intercept_bar)`` evaluates node ``j``'s loss
    at its averaged coefficients on the same noise draw.
    """
    m, T, r = config.ma_window, config.max_iter, config.bank
    state = state0.copy()
    hist_theta = {j: [] for j in nodes}
    hist_int = {j: [] for j in nodes}
    trace, bank_loss, banked, banked_s2, banked_int, bank_stats = [], [], [], [], [], []
    converged = False
    failures = 0

    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    try:
        t = 0
        phase_bank = False
        n_bank = 0
        while True:
            t += 1
            prev = state
            if pool is None:
                outs = [step(j, t, prev) for j in nodes]
            else:
                outs = list(pool.map(lambda j: step(j, t, prev), nodes))
            state = prev.copy()
            loss = 0.0
            for j, out in zip(nodes, outs):
                if not np.all(np.isfinite(out.theta_hat)):
                    raise EstimationError(f"node {j}: non-finite coefficients at iteration {t}")
                failures += int(not out.stats.get("converged", True))
                hist_theta[j].append(out.theta_hat)
                hist_int[j].append(out.intercept_hat)
                del hist_theta[j][:-m], hist_int[j][:-m]
                tb = _ma(hist_theta[j], t, m)
                ib = _ma(hist_int[j], t, m)
                state.theta[:, j, :] = tb
                state.intercept[j] = ib
                if out.sigma2 is not None:
                    state.sigma2[:, j] = out.sigma2
                loss += loss_of(j, out, tb, ib)
                out.stats.pop("aug", None)
            if phase_bank:
                bank_loss.append(loss)
                banked.append(state.theta.copy())
                banked_s2.append(state.sigma2.copy())
                banked_int.append(state.intercept.copy())
                bank_stats.append({j: o.stats for j, o in zip(nodes, outs)})
                n_bank += 1
                if n_bank == r:
                    break
                continue
            trace.append(loss)
            if config.criterion == "fixed_T":
                done = len(trace) >= T
                converged = done
            else:
                converged = check_convergence(trace, "relative_change", config.tol,
                                              config.patience)
                done = converged or len(trace) >= T
            if done:
                phase_bank = True
    finally:
        if pool is not None:
            pool.shutdown()
    return dict(trace=trace, bank_loss=bank_loss, banked=np.array(banked),
                banked_s2=np.array(banked_s2), banked_int=np.array(banked_int),
                bank_stats=bank_stats, converged=converged, iterations=len(trace),
                glm_nonconverged=failures, state=state)


# -- starting values -------------------------------------------------------

def _ridge_start_ns(cov, out, use_int, alpha):
    q, p = cov.q, cov.p
    st = ParameterState.zeros(q, p)
    ints = np.zeros((q, p))
    for l in range(q):
        X, Y = cov.graphs[l], out.graphs[l]
        S = X.T @ X
        for j in range(p):
            c = nz.ns_covariates(p, j)
            if use_int[j]:
                D = np.column_stack([X[:, c], np.ones(X.shape[0])])
                pen = np.r_[np.full(c.size, alpha), 0.0]
                fit = fit_irls(D, Y[:, j], cov.family[j], ridge=pen)
                st.theta[l, j, c] = fit.coefficients[:-1]
                ints[l, j] = fit.coefficients[-1]
            else:
                st.theta[l, j, c] = np.linalg.solve(S[np.ix_(c, c)] + alpha * np.eye(c.size),
                                                    X[:, c].T @ Y[:, j])
    st.intercept = ints.mean(axis=0)
    return st


def _with_pilot(spec: NoiseSpec, theta):
    if spec.e1_kind == "adaptive_lasso" and spec.theta_hat is None:
        return dataclasses.replace(spec, theta_hat=np.array(theta))
    return spec


def _blockdiag(blocks):
    return sla.block_diag(*blocks)


# -- neighborhood selection ------------------------------------------------

def run_ns(config: EstimatorConfig, dataset: MultiGraphDataset) -> JointEstimate:
    """Joint neighborhood selection over ``q`` graphs.

    Each node is regressed on all others in every graph at once, through the
    combined augmented design. Non-gaussian nodes use IRLS on explicitly
    sampled noise rows with the pooled outcome mean as the noise outcome.
    """
    validate(dataset)
    spec = config.spec
    q, p = dataset.q, dataset.p
    spec.lambda1_for(q)
    spec.check_feasible(dataset.n_total, q, p)
    if config.preprocess:
        cov, out, use_int = preprocess(dataset, "ns")
    else:
        cov, out, use_int = dataset, dataset, np.array([f != "gaussian" for f in dataset.family])
    state0 = _ridge_start_ns(cov, out, use_int, config.ridge_start)
    spec = _with_pilot(spec, state0.theta)
    n_total = dataset.n_total
    grams = [g.T @ g for g in cov.graphs]
    cross = [c.T @ o for c, o in zip(cov.graphs, out.graphs)]
    yy = sum(np.sum(o * o, axis=0) for o in out.graphs)
    ybar = np.array([nz.outcome_noise(dataset, j) for j in range(p)])

    def step(j, t, state):
        covs = nz.ns_covariates(p, j)
        rng = _rng(config.seed, t, j)
        fam = dataset.family[j]
        if fam == "gaussian":
            if config.noise_gram == "wishart":
                var1 = nz.e1_variances(spec, state, j, covs)
                A1, A2 = nz.noise_factors(spec, var1, state.theta[:, j, covs])
                Gn = _noise_gram(A1, A2, spec.n_e1, spec.n_e2, rng)
            else:
                Gn = _rows_gram(nz.sample_e1(spec, state, j, rng), nz.sample_e2(spec, state, j, rng))
            Gd = _blockdiag([S[np.ix_(covs, covs)] for S in grams])
            G = Gd + Gn
            b = np.concatenate([C[covs, j] for C in cross])
            coef = _solve_spd(G, b)
            row = np.zeros((q, p))
            row[:, covs] = coef.reshape(q, p - 1)
            return _NodeOut(row, 0.0, None, {"G": G, "b": b, "Gd": Gd})
        e1 = nz.sample_e1(spec, state, j, rng)
        e2 = nz.sample_e2(spec, state, j, rng)
        aug = assemble_ns(cov, j, e1, e2, outcome_value=ybar[j], intercept=bool(use_int[j]),
                          outcomes=out)
        start = np.r_[state.theta[:, j, covs].ravel(), state.intercept[j]] if use_int[j] else None
        fit = fit_glm(aug.design, aug.outcome, fam, start=start)
        block, b0 = aug.split(fit.coefficients)
        row = np.zeros((q, p))
        row[:, covs] = block
        return _NodeOut(row, b0, None, {"aug": aug, "converged": fit.converged})

    def loss_of(j, o, tb, ib):
        covs = nz.ns_covariates(p, j)
        c = tb[:, covs].ravel()
        if "G" in o.stats:
            return float(yy[j] - 2 * c @ o.stats["b"] + c @ o.stats["G"] @ c)
        aug = o.stats["aug"]
        coef = np.r_[c, ib] if aug.intercept else c
        return negloglik(dataset.family[j], aug.design, aug.outcome, coef)

    res = _run_loop(config, state0, list(range(p)), step, loss_of)
    banked = res["banked"]
    adj, prod = threshold_adjacency(banked, config.tau0, rule=config.threshold_rule)
    theta = banked.mean(axis=0) * adj
    intercept = res["banked_int"].mean(axis=0)

    sigma2 = precision = None
    gauss = np.array([f == "gaussian" for f in dataset.family])
    if gauss.any():
        sigma2 = np.ones((q, p))
        for j in np.flatnonzero(gauss):
            covs = nz.ns_covariates(p, j)
            nus = []
            for st in res["bank_stats"]:
                s = st[j]
                Gi = _solve_spd(s["G"], s["Gd"])
                nus.append(float(np.trace(Gi)))
            nu = float(np.mean(nus))
            sse = 0.0
            for l in range(q):
                c = theta[l, j, covs]
                S = grams[l]
                sse += _sumsq(out, l, j) - 2 * c @ cross[l][covs, j] + c @ S[np.ix_(covs, covs)] @ c
            sigma2[:, j] = sse / max(n_total - nu, 1.0)
        if gauss.all():
            precision = recover_precision_ns(theta, sigma2)
    return JointEstimate(
        backend="ns", theta=theta, adjacency=adj, banked=banked, loss_trace=res["trace"],
        iterations_used=res["iterations"], converged=res["converged"], intercept=intercept,
        sigma2=sigma2, precision=precision,
        diagnostics={"abs_max_min": prod, "bank_loss": res["bank_loss"],
                     "glm_nonconverged": res["glm_nonconverged"]})


def _sumsq(out, l, j):
    x = out.graphs[l][:, j]
    return float(x @ x)


# -- Cholesky regression ---------------------------------------------------

def _ldl_precision(theta_lower, d):
    p = theta_lower.shape[0]
    L = np.eye(p) - np.tril(theta_lower, -1)
    om = L.T @ (L / d[:, None])
    return 0.5 * (om + om.T)


def run_cd(config: EstimatorConfig, dataset: MultiGraphDataset) -> JointEstimate:
    """Joint precision estimation through the LDL form ``Omega = L' D^-1 L``.

    Node ``j`` is regressed on nodes ``0..j-1``; coefficient and residual
    variance updates alternate ``inner`` times per outer iteration. The
    output precision is positive semidefinite by construction.
    """
    validate(dataset)
    if not dataset.is_gaussian:
        raise DataValidationError("the cd backend requires an all-gaussian dataset")
    spec = config.spec
    q, p = dataset.q, dataset.p
    spec.lambda1_for(q)
    spec.check_feasible(dataset.n_total, q, p)
    z = standardize(dataset, "standardize_all") if config.preprocess else dataset
    n = z.n.astype(float)
    grams = [g.T @ g for g in z.graphs]
    alpha = config.ridge_start
    state0 = ParameterState.zeros(q, p)
    for l, S in enumerate(grams):
        state0.sigma2[l, 0] = S[0, 0] / n[l]
        for j in range(1, p):
            c = slice(0, j)
            th = np.linalg.solve(S[c, c] + alpha * np.eye(j), S[c, j])
            state0.theta[l, j, :j] = th
            state0.sigma2[l, j] = _cd_rss(S, j, th) / n[l]
    spec = _with_pilot(spec, state0.theta)

    def step(j, t, state):
        covs = nz.cd_covariates(p, j)
        s2 = state.sigma2[:, j].copy()
        th_bar = state.theta[:, j, :j]
        Gd = _blockdiag([S[:j, :j] for S in grams])
        b = np.concatenate([S[:j, j] for S in grams])
        var_base = nz.e1_variances(spec, state, j, covs)
        for k in range(config.inner):
            rng = _rng(config.seed, t, j, k)
            if config.noise_gram == "wishart":
                A1, A2 = nz.noise_factors(spec, var_base * s2[:, None], th_bar, scale=np.sqrt(s2))
                Gn = _noise_gram(A1, A2, spec.n_e1, spec.n_e2, rng)
            else:
                tmp = ParameterState(state.theta, state.intercept, state.sigma2.copy())
                tmp.sigma2[:, j] = s2
                Gn = _rows_gram(*nz.sample_cd_noise(spec, tmp, j, rng))
            coef = _solve_spd(Gd + Gn, b).reshape(q, j)
            s2 = np.array([_cd_rss(grams[l], j, coef[l]) / n[l] for l in range(q)])
            s2 = np.maximum(s2, 1e-12)
        row = np.zeros((q, p))
        row[:, :j] = coef
        return _NodeOut(row, 0.0, s2)

    def loss_of(j, o, tb, ib):
        return float(n @ o.sigma2)

    res = _run_loop(config, state0, list(range(1, p)), step, loss_of)
    const = float(n @ state0.sigma2[:, 0])
    trace = [v + const for v in res["trace"]]
    banked = res["banked"]
    keep, prod = threshold_adjacency(banked, config.tau0, directions="lower",
                                     rule=config.threshold_rule)
    theta = np.tril(banked.mean(axis=0), -1) * keep
    d = res["banked_s2"].mean(axis=0)
    precision = np.array([_ldl_precision(theta[l], d[l]) for l in range(q)])
    adj = np.zeros((q, p, p), dtype=int)
    for l in range(q):
        om = precision[l]
        tol = 1e-12 * np.abs(om).max()
        adj[l] = (np.abs(om) > tol).astype(int)
        np.fill_diagonal(adj[l], 0)
    return JointEstimate(
        backend="cd", theta=theta, adjacency=adj, banked=banked, loss_trace=trace,
        iterations_used=res["iterations"], converged=res["converged"], sigma2=d,
        precision=precision,
        diagnostics={"abs_max_min": prod, "bank_loss": [v + const for v in res["bank_loss"]],
                     "cholesky_support": keep})


def _cd_rss(S, j, th):
    return float(S[j, j] - 2 * th @ S[:j, j] + th @ S[:j, :j] @ th)


# -- SCIO ------------------------------------------------------------------

def scio_column_solve(gram, target, n_scale: float) -> np.ndarray:
    """Minimizer of ``(2 n)^-1 t' G t - t' target``, i.e. ``n G^-1 target``."""
    return n_scale * _solve_spd(np.asarray(gram, dtype=float), np.asarray(target, dtype=float))


def run_scio(config: EstimatorConfig, dataset: MultiGraphDataset) -> JointEstimate:
    """Joint column-wise precision estimation with the SCIO quadratic loss.

    Precision column ``j`` of every graph solves
    ``(2n)^-1 t' X'X t - t' Xi_j`` on the augmented design, in closed form
    ``t = n (X'X)^-1 Xi_j``.
    """
    validate(dataset)
    if not dataset.is_gaussian:
        raise DataValidationError("the scio backend requires an all-gaussian dataset")
    spec = config.spec
    q, p = dataset.q, dataset.p
    spec.lambda1_for(q)
    spec.check_feasible(dataset.n_total, q, p)
    z = standardize(dataset, "standardize_all") if config.preprocess else dataset
    nbar = scio_scale(z)
    # block l of the observed Gram: nbar times graph l's second-moment matrix
    Gd = _blockdiag([nbar * (g.T @ g) / g.shape[0] for g in z.graphs])
    state0 = ParameterState.zeros(q, p)
    for l in range(q):
        blk = Gd[l * p:(l + 1) * p, l * p:(l + 1) * p]
        om = nbar * np.linalg.inv(blk + config.ridge_start * np.eye(p))
        state0.theta[l] = om.T  # theta[l, j, :] is column j
    spec = _with_pilot(spec, state0.theta)

    def step(j, t, state):
        rng = _rng(config.seed, t, j)
        if config.noise_gram == "wishart":
            var1 = nz.scio_variances(spec, state, j)
            mask = np.ones((q, p))
            mask[:, j] = 0.0
            A1, A2 = nz.noise_factors(spec, var1, state.theta[:, j, :], mask=mask)
            Gn = 2.0 * nbar * _noise_gram(A1, A2, spec.n_e1, spec.n_e2, rng)
        else:
            Gn = _rows_gram(*nz.sample_scio_noise(spec, state, j, nbar, rng))
        G = Gd + Gn
        xi = np.zeros(q * p)
        xi[np.arange(q) * p + j] = 1.0
        th = scio_column_solve(G, xi, nbar)
        return _NodeOut(th.reshape(q, p), 0.0, None, {"G": G, "xi": xi})

    def loss_of(j, o, tb, ib):
        c = tb.ravel()
        return float(c @ o.stats["G"] @ c / (2 * nbar) - c @ o.stats["xi"])

    res = _run_loop(config, state0, list(range(p)), step, loss_of)
    banked = res["banked"]
    adj, prod = threshold_adjacency(banked, config.tau0, rule=config.threshold_rule)
    mean = banked.mean(axis=0)
    # mean[l, j, k] is entry k of column j, i.e. Omega[k, j]
    omega = np.swapaxes(mean, 1, 2)
    sym = symmetrize_min(omega) * adj
    for l in range(q):
        np.fill_diagonal(sym[l], np.diag(omega[l]))
    adj = adj * (sym != 0)
    return JointEstimate(
        backend="scio", theta=np.swapaxes(sym, 1, 2), adjacency=adj.astype(int), banked=banked,
        loss_trace=res["trace"], iterations_used=res["iterations"], converged=res["converged"],
        precision=sym, diagnostics={"abs_max_min": prod, "bank_loss": res["bank_loss"]})


def run(config: EstimatorConfig, dataset: MultiGraphDataset) -> JointEstimate:
    return {"ns": run_ns, "cd": run_cd, "scio": run_scio}[config.backend](config, dataset)


# -- grouped regression ----------------------------------------------------

def fit_grouped_regression(design, outcome, groups, spec: NoiseSpec, kind: str = "sgl",
                           config: Optional[EstimatorConfig] = None,
                           family: str = "gaussian") -> FitResult:
    """Single regression with grouped predictors, regularized by noise rows.

    ``sgl`` noise behaves like a sparse group lasso in expectation, ``sfr``
    adds a fused ridge within each group. Columns outside every group (an
    intercept, say) get no noise. Returns the mean of the banked averaged
    iterates.
    """
    config = config or EstimatorConfig()
    X = np.asarray(design, dtype=float)
    y = np.asarray(outcome, dtype=float)
    groups = [np.asarray(g, dtype=int) for g in groups]
    lam1 = spec.lambda1_for(len(groups))
    ybar = float(y.mean()) if family != "gaussian" else 0.0
    if family == "gaussian":
        beta = np.linalg.solve(X.T @ X + config.ridge_start * np.eye(X.shape[1]), X.T @ y)
    else:
        beta = fit_irls(X, y, family, ridge=config.ridge_start).coefficients
    hist, trace, bank = [], [], []
    converged = False
    t = 0
    banking = False
    while True:
        t += 1
        rng = _rng(config.seed, t)
        e1, e2 = nz.grouped_regression_noise(groups, beta, lam1, spec.lambda2, kind,
                                             spec.n_e1, spec.n_e2, rng, spec.theta_floor)
        Xa = np.vstack([X, e1, e2])
        ya = np.r_[y, np.full(e1.shape[0] + e2.shape[0], ybar)]
        fit = fit_glm(Xa, ya, family, start=beta if family != "gaussian" else None)
        if not np.all(np.isfinite(fit.coefficients)):
            raise EstimationError(f"grouped regression: non-finite coefficients at iteration {t}")
        hist.append(fit.coefficients)
        del hist[:-config.ma_window]
        beta = _ma(hist, t, config.ma_window)
        loss = negloglik(family, Xa, ya, beta)
        if banking:
            bank.append(beta.copy())
            if len(bank) == config.bank:
                break
            continue
        trace.append(loss)
        if config.criterion == "fixed_T":
            converged = len(trace) >= config.max_iter
            banking = converged
        else:
            converged = check_convergence(trace, "relative_change", config.tol, config.patience)
            banking = converged or len(trace) >= config.max_iter
    coef = np.mean(bank, axis=0)
    return FitResult(coef, converged, float(trace[-1]), len(trace))
