"""Synthetic multi-graph structures, data samplers and edge-difference ROC evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence

import networkx as nx
import numpy as np
import scipy.linalg as sla

from .core import MultiGraphDataset, NoiseSpec
from .estimators import EstimatorConfig, run

METHODS = ("ns_jgl", "ns_jfr", "scio_jgl", "scio_jfr", "cd_jgl", "cd_jfr", "naive")


def _sym01(a):
    a = np.asarray(a).astype(int)
    a = ((a + a.T) > 0).astype(int)
    np.fill_diagonal(a, 0)
    return a


def gen_structure(kind: str, p: int, extra: Optional[int] = None, seed: int = 0) -> np.ndarray:
    """Baseline adjacency.

    ``scale_free``: preferential attachment, ``extra`` edges per new node
    (default 1). ``banded``: edges with ``|i-j| <= extra`` (default 1).
    ``hub``: ``extra`` hubs (default 3), each joined to every node of its own
    contiguous block.
    """
    if p < 4:
        raise ValueError(f"need p >= 4, got {p}")
    if kind == "scale_free":
        m = 1 if extra is None else int(extra)
        if not 1 <= m < p:
            raise ValueError(f"attachment count must lie in [1, p), got {m}")
        g = nx.barabasi_albert_graph(p, m, seed=seed)
        return nx.to_numpy_array(g, nodelist=range(p), dtype=int)
    if kind == "banded":
        b = 1 if extra is None else int(extra)
        if not 1 <= b < p:
            raise ValueError(f"bandwidth must lie in [1, p), got {b}")
        i, j = np.indices((p, p))
        a = ((np.abs(i - j) <= b) & (i != j)).astype(int)
        return a
    if kind == "hub":
        h = 3 if extra is None else int(extra)
        if not 1 <= h <= p // 2:
            raise ValueError(f"hub count must lie in [1, p/2], got {h}")
        a = np.zeros((p, p), dtype=int)
        for block in np.array_split(np.arange(p), h):
            a[block[0], block[1:]] = 1
        return _sym01(a)
    raise ValueError(f"unknown structure kind {kind!r}")


@dataclass
class StructureTruth:
    adjacency: np.ndarray          # (q, p, p)
    baseline: np.ndarray           # (p, p)
    diff_sets: dict = field(default_factory=dict)   # (l, v) -> frozenset of (j, k), j < k

    @property
    def q(self):
        return self.adjacency.shape[0]

    def pair_counts(self) -> dict:
        return {k: len(v) for k, v in self.diff_sets.items()}


def diff_sets_of(adjacency) -> dict:
    adj = np.asarray(adjacency)
    q, p = adj.shape[0], adj.shape[1]
    iu = np.triu_indices(p, 1)
    out = {}
    for l, v in combinations(range(q), 2):
        d = adj[l][iu] != adj[v][iu]
        out[(l, v)] = frozenset((int(a), int(b)) for a, b in zip(iu[0][d], iu[1][d]))
    return out


def derive_variants(A0, deviation_rate: float, q: int, seed: int = 0,
                    toggles: Optional[int] = None) -> StructureTruth:
    """Per-graph copies of ``A0`` with a sparse random toggle mask each.

    Every node pair flips independently with probability ``deviation_rate``,
    or exactly ``toggles`` random pairs flip when that is given. Toggling both
    adds and removes edges, so matrices stay 0/1.
    """
    if not 0 <= deviation_rate < 0.1:
        raise ValueError(f"deviation_rate must lie in [0, 0.1), got {deviation_rate}")
    A0 = _sym01(A0)
    p = A0.shape[0]
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(p, 1)
    mats = []
    for _ in range(q):
        if toggles is None:
            flip = rng.random(iu[0].size) < deviation_rate
        else:
            flip = np.zeros(iu[0].size, dtype=bool)
            flip[rng.choice(iu[0].size, size=int(toggles), replace=False)] = True
        a = A0.copy()
        a[iu[0][flip], iu[1][flip]] ^= 1
        a[iu[1][flip], iu[0][flip]] ^= 1
        mats.append(a)
    adj = np.array(mats)
    return StructureTruth(adj, A0, diff_sets_of(adj))


def ggm_precision(adjacency, signal: float = 0.3, signs: Optional[np.ndarray] = None,
                  margin: float = 0.1) -> np.ndarray:
    """Precision with ``signal`` on edges and a diagonal raised to strict dominance.

    The diagonal is ``max(1, sum_k |omega_jk| + margin)``, so an edge-free
    node keeps unit precision.
    """
    a = _sym01(adjacency)
    om = signal * a.astype(float)
    if signs is not None:
        om = om * signs
    off = np.abs(om).sum(axis=1)
    np.fill_diagonal(om, np.where(off > 0, np.maximum(1.0, off + margin), 1.0))
    return om


def sample_gaussian(precision, n: int, rng) -> np.ndarray:
    """Rows from ``N(0, precision^-1)`` through the Cholesky factor of the precision."""
    Lo = np.linalg.cholesky(precision)
    z = rng.standard_normal((n, precision.shape[0]))
    return sla.solve_triangular(Lo.T, z.T, lower=False).T


def sample_ggm_data(adjacency, n: int, signal: float = 0.3, seed: int = 0) -> np.ndarray:
    om = ggm_precision(adjacency, signal)
    return sample_gaussian(om, n, np.random.default_rng(seed))


class DivergentChainError(RuntimeError):
    pass


def sample_pgm_data(adjacency, n: int, signal: float = -0.2, burn_in: int = 200, seed: int = 0,
                    theta0: float = float(np.log(2.0)), cap: int = 50) -> np.ndarray:
    """Poisson Markov random field draws from ``n`` parallel Gibbs chains.

    Node ``j`` is conditionally Poisson with mean
    ``exp(theta0 + signal * sum of neighbour values)``, censored at ``cap``.
    Each chain runs ``burn_in`` full sweeps and contributes its final state.
    Raises when more than 5% of the final values sit at the cap.
    """
    a = _sym01(adjacency).astype(float)
    p = a.shape[0]
    rng = np.random.default_rng(seed)
    x = rng.poisson(np.exp(theta0), size=(n, p)).astype(float)
    for _ in range(int(burn_in)):
        for j in range(p):
            eta = theta0 + signal * (x @ a[:, j])
            x[:, j] = np.minimum(rng.poisson(np.exp(np.minimum(eta, 30.0))), cap)
    if np.mean(x >= cap) > 0.05:
        raise DivergentChainError(
            f"{np.mean(x >= cap):.1%} of values hit the cap {cap}; the chain diverges")
    return x


def simulate(kind: str, p: int, n, q: int, deviation_rate: float = 0.03, signal: float = 0.3,
             seed: int = 0, extra: Optional[int] = None, toggles: Optional[int] = None,
             family: str = "gaussian", burn_in: int = 200):
    """Baseline, variants and one dataset per graph. Returns (truth, dataset)."""
    ss = np.random.SeedSequence(seed)
    s_struct, s_var, s_data = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    A0 = gen_structure(kind, p, extra, seed=s_struct)
    truth = derive_variants(A0, deviation_rate, q, seed=s_var, toggles=toggles)
    ns = np.broadcast_to(np.asarray(n, dtype=int), (q,))
    graphs = []
    for l in range(q):
        sd = s_data + l
        if family == "gaussian":
            graphs.append(sample_ggm_data(truth.adjacency[l], int(ns[l]), signal, seed=sd))
        elif family == "poisson":
            graphs.append(sample_pgm_data(truth.adjacency[l], int(ns[l]), -abs(signal), burn_in, sd))
        else:
            raise ValueError(f"cannot simulate family {family!r}")
    return truth, MultiGraphDataset(tuple(graphs), family)


# -- evaluation ------------------------------------------------------------

def hamming(a, b) -> int:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    iu = np.triu_indices(a.shape[0], 1)
    return int(np.sum(a[iu] != b[iu]))


def edge_diff_metrics(truth: StructureTruth, estimates) -> dict:
    """TP / FP / FN / TN of predicted cross-graph edge disagreements, summed over pairs.

    A node pair is predicted positive for graphs ``(l, v)`` iff the two
    estimated adjacencies disagree there.
    """
    est = np.asarray(estimates)
    if est.shape != truth.adjacency.shape:
        raise ValueError(f"dimension mismatch: estimates {est.shape}, truth {truth.adjacency.shape}")
    pred = diff_sets_of(est)
    p = est.shape[1]
    n_pairs = p * (p - 1) // 2
    tp = fp = fn = 0
    per_pair = {}
    for key, true_set in truth.diff_sets.items():
        ps = pred[key]
        a, b = len(ps & true_set), len(ps - true_set)
        c = len(true_set - ps)
        per_pair[key] = (a, b)
        tp, fp, fn = tp + a, fp + b, fn + c
    total = len(truth.diff_sets) * n_pairs
    positives = sum(len(s) for s in truth.diff_sets.values())
    return {"TP": tp, "FP": fp, "FN": fn, "TN": total - positives - fp,
            "positives": positives, "per_pair": per_pair}


@dataclass
class RocPoint:
    lambda1: float
    fp: Optional[int]
    tp: Optional[int]
    converged: Optional[bool] = None
    error: str = ""
    adjacency: Optional[np.ndarray] = field(default=None, repr=False)


# settings per backend and e2 kind: (n_e1, n_e2, max_iter, ma_window)
TABLE_SETTINGS = {
    ("ns", "jgl"): (4000, 4000, 80, 1),
    ("ns", "jfr"): (2000, 2000, 80, 1),
    ("scio", "jgl"): (2000, 2000, 150, 1),
    ("scio", "jfr"): (2000, 2000, 150, 1),
    ("cd", "jgl"): (2000, 2000, 150, 1),
    ("cd", "jfr"): (2000, 2000, 150, 1),
}


def method_config(method: str, lambda1: float, ratio: float = 0.25, **overrides) -> EstimatorConfig:
    """Estimator config for a named method at one lambda1, lambda2 = ratio * lambda1.

    Defaults are bridge noise with gamma 1, tau0 1e-4 and a fixed iteration
    count (``max_iter`` from ``TABLE_SETTINGS``, no early stopping). ``overrides`` may set
    any :class:`EstimatorConfig` field and ``n_e1`` / ``n_e2``. For ``naive``
    the config describes one single-graph fit (no cross-graph noise).
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    if method == "naive":
        backend, e2 = "ns", "jgl"
    else:
        backend, e2 = method.split("_")
    n1, n2, T, m = TABLE_SETTINGS[(backend, e2)]
    n1 = overrides.pop("n_e1", n1)
    n2 = overrides.pop("n_e2", n2)
    lam2 = ratio * lambda1
    if method == "naive":
        n2, lam2 = 0, 0.0
    spec = NoiseSpec(e1_kind="bridge", gamma=1.0, lambda1=lambda1, sigma2=0.0, e2_kind=e2,
                     lambda2=lam2, n_e1=n1, n_e2=n2)
    kw = dict(backend=backend, spec=spec, max_iter=T, ma_window=m, tau0=1e-4, criterion="fixed_T")
    kw.update(overrides)
    return EstimatorConfig(**kw)


def estimate_adjacency(dataset: MultiGraphDataset, method: str, lambda1: float,
                       ratio: float = 0.25, **overrides):
    """Adjacency stack from one method; ``naive`` fits every graph on its own."""
    cfg = method_config(method, lambda1, ratio, **overrides)
    if method == "naive":
        adj, conv = [], True
        for g in dataset.graphs:
            single = MultiGraphDataset((g,), dataset.family, dataset.labels)
            est = run(cfg, single)
            adj.append(est.adjacency[0])
            conv = conv and est.converged
        return np.array(adj), conv
    est = run(cfg, dataset)
    return est.adjacency, est.converged


def roc_sweep(dataset: MultiGraphDataset, truth: StructureTruth, method: str,
              lambda1_grid: Sequence[float], ratio: float = 0.25, **overrides) -> list:
    """One (FP, TP) point per lambda1; failures are recorded per point."""
    grid = [float(v) for v in lambda1_grid]
    if grid != sorted(grid):
        raise ValueError("lambda1_grid must be sorted")
    points = []
    for lam in grid:
        try:
            adj, conv = estimate_adjacency(dataset, method, lam, ratio, **overrides)
        except Exception as exc:  # recorded, sweep continues
            points.append(RocPoint(lam, None, None, None, f"{type(exc).__name__}: {exc}"))
            continue
        m = edge_diff_metrics(truth, adj)
        points.append(RocPoint(lam, m["FP"], m["TP"], conv, "", adj))
    return points


def tp_at_fp(points, fp: float) -> int:
    """Best TP among curve points whose FP does not exceed ``fp`` (0 if none)."""
    ok = [pt.tp for pt in points if pt.fp is not None and pt.fp <= fp]
    return max(ok) if ok else 0


def dominance_fraction(joint_points, naive_points) -> float:
    """Share of naive grid points where the joint curve reaches at least naive's TP
    at no more than naive's FP.

    Repeated naive (FP, TP) points, e.g. from a saturated end of the grid,
    count once.
    """
    ref = sorted({(pt.fp, pt.tp) for pt in naive_points if pt.fp is not None})
    if not ref:
        return float("nan")
    wins = sum(tp_at_fp(joint_points, fp) >= tp for fp, tp in ref)
    return wins / len(ref)


def lambda1_for_level(method: str, level: float, n_per_graph: float, **overrides) -> float:
    """``lambda1`` giving ``method`` a lasso weight of ``level`` on a mean-loss scale.

    The expected e1 penalty is ``lambda1 n_e1 sum |theta|``. Regression
    backends compare it with a per-graph sum of squares (``n`` rows), SCIO
    with a half quadratic form, so equal levels mean comparable shrinkage
    across methods with different ``n_e1``.
    """
    cfg = method_config(method, 1.0, **overrides)
    n_e1 = cfg.spec.n_e1
    if n_e1 <= 0:
        raise ValueError("level scaling needs n_e1 > 0")
    if cfg.backend == "scio":
        return float(level / (2.0 * n_e1))
    return float(level * n_per_graph / n_e1)
