"""Shared domain types, validation, preprocessing and CSV ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

FAMILIES = ("gaussian", "bernoulli", "poisson")
E1_KINDS = ("bridge", "elastic_net", "adaptive_lasso")
E2_KINDS = ("jgl", "jfr")


class DataValidationError(ValueError):
    """Raised when a dataset or configuration violates a type invariant."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MultiGraphDataset:
    """Observations for ``q`` graphs that share the same ``p`` nodes.

    Parameters
    ----------
    graphs : sequence of arrays, each shape (n_l, p)
        One data matrix per graph; rows are observations.
    family : sequence of str, length p
        Node distribution tag, one of ``gaussian``, ``bernoulli``, ``poisson``.
        The same tags apply to every graph.
    labels : sequence of str, optional
        Node names. Defaults to ``X1..Xp``.
    """

    graphs: tuple
    family: tuple
    labels: tuple = ()

    def __post_init__(self):
        graphs = tuple(_frozen(g) for g in self.graphs)
        object.__setattr__(self, "graphs", graphs)
        p = graphs[0].shape[1] if graphs and graphs[0].ndim == 2 else 0
        fam = self.family
        if isinstance(fam, str):
            fam = (fam,) * p
        object.__setattr__(self, "family", tuple(fam))
        labels = tuple(self.labels) if len(self.labels) else tuple(f"X{k + 1}" for k in range(p))
        object.__setattr__(self, "labels", labels)

    @property
    def q(self) -> int:
        return len(self.graphs)

    @property
    def p(self) -> int:
        return self.graphs[0].shape[1]

    @property
    def n(self) -> np.ndarray:
        return np.array([g.shape[0] for g in self.graphs])

    @property
    def n_total(self) -> int:
        return int(self.n.sum())

    @property
    def is_gaussian(self) -> bool:
        return all(f == "gaussian" for f in self.family)

    def replace_graphs(self, graphs) -> "MultiGraphDataset":
        return MultiGraphDataset(tuple(graphs), self.family, self.labels)


def validate(dataset: MultiGraphDataset, min_graphs: int = 1) -> MultiGraphDataset:
    """Check every dataset invariant, raising on the first violation."""
    if dataset.q < min_graphs:
        raise DataValidationError(f"need at least {min_graphs} graphs, got {dataset.q}")
    if dataset.q == 0:
        raise DataValidationError("dataset holds no graphs")
    for l, g in enumerate(dataset.graphs):
        if g.ndim != 2:
            raise DataValidationError(f"graph {l} is not a 2-d matrix")
        if g.shape[0] == 0:
            raise DataValidationError(f"graph {l} is empty")
    p = dataset.graphs[0].shape[1]
    for l, g in enumerate(dataset.graphs):
        if g.shape[1] != p:
            raise DataValidationError(
                f"dimension mismatch: graph 0 has p={p}, graph {l} has p={g.shape[1]}")
        if not np.all(np.isfinite(g)):
            raise DataValidationError(f"graph {l} contains non-finite values")
    if len(dataset.family) != p:
        raise DataValidationError(f"family has {len(dataset.family)} tags for p={p} nodes")
    if len(dataset.labels) != p:
        raise DataValidationError(f"labels has {len(dataset.labels)} names for p={p} nodes")
    for k, fam in enumerate(dataset.family):
        if fam not in FAMILIES:
            raise DataValidationError(f"node {k}: unknown family {fam!r}")
        for l, g in enumerate(dataset.graphs):
            col = g[:, k]
            if fam == "poisson" and (np.any(col < 0) or np.any(col != np.round(col))):
                raise DataValidationError(
                    f"family mismatch: node {k} ({dataset.labels[k]}) in graph {l} "
                    "is poisson but holds non-count values")
            if fam == "bernoulli" and not np.all((col == 0) | (col == 1)):
                raise DataValidationError(
                    f"family mismatch: node {k} ({dataset.labels[k]}) in graph {l} "
                    "is bernoulli but holds values outside {0,1}")
    return dataset


def standardize(dataset: MultiGraphDataset, mode: str = "standardize_all") -> MultiGraphDataset:
    """Center (and optionally scale) every column, per graph independently.

    ``center_covariates`` subtracts per-graph column means. Estimators use the
    centered copy only for covariate columns and keep outcome columns raw.
    ``standardize_all`` also divides by the sample standard deviation
    (denominator ``n_l - 1``); it is only allowed for all-gaussian data.
    """
    if mode not in ("center_covariates", "standardize_all"):
        raise ValueError(f"unknown standardization mode {mode!r}")
    if mode == "standardize_all" and not dataset.is_gaussian:
        raise DataValidationError("standardize_all requires an all-gaussian dataset")
    out = []
    for l, g in enumerate(dataset.graphs):
        c = g - g.mean(axis=0)
        if mode == "standardize_all":
            if g.shape[0] < 2:
                raise DataValidationError(f"graph {l} needs at least 2 rows to standardize")
            sd = c.std(axis=0, ddof=1)
            bad = np.flatnonzero(sd <= 1e-12 * max(1.0, np.abs(g).max()))
            if bad.size:
                raise DataValidationError(
                    f"zero-variance column {dataset.labels[bad[0]]} in graph {l}")
            c = c / sd
        out.append(c)
    return dataset.replace_graphs(out)


@dataclass(frozen=True)
class NoiseSpec:
    """Noise-generating distributions and their tuning values.

    ``lambda1`` may be a scalar (shared) or one value per graph. ``theta_hat``
    is the consistent pilot estimate used by adaptive-lasso noise, shape
    (q, p, p); estimators fill it in from their ridge start when absent.
    """

    e1_kind: str = "bridge"
    gamma: float = 1.0
    lambda1: object = 0.1
    sigma2: float = 0.0
    e2_kind: str = "jgl"
    lambda2: float = 0.025
    n_e1: int = 1000
    n_e2: int = 1000
    theta_floor: float = 1e-6
    theta_hat: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.e1_kind not in E1_KINDS:
            raise DataValidationError(f"e1_kind must be one of {E1_KINDS}, got {self.e1_kind!r}")
        if self.e2_kind not in E2_KINDS:
            raise DataValidationError(f"e2_kind must be one of {E2_KINDS}, got {self.e2_kind!r}")
        if not 0 < self.gamma <= 2:
            raise DataValidationError(f"gamma must lie in (0, 2], got {self.gamma}")
        lam = np.atleast_1d(np.asarray(self.lambda1, dtype=float))
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise DataValidationError("lambda1 must be finite and nonnegative")
        object.__setattr__(self, "lambda1", tuple(lam.tolist()) if lam.size > 1 else float(lam[0]))
        if self.lambda2 < 0 or self.sigma2 < 0:
            raise DataValidationError("lambda2 and sigma2 must be nonnegative")
        if self.n_e1 < 0 or self.n_e2 < 0:
            raise DataValidationError("n_e1 and n_e2 must be nonnegative")
        if self.theta_floor <= 0:
            raise DataValidationError("theta_floor must be positive")

    def lambda1_for(self, q: int) -> np.ndarray:
        lam = np.atleast_1d(np.asarray(self.lambda1, dtype=float))
        if lam.size == 1:
            return np.full(q, lam[0])
        if lam.size != q:
            raise DataValidationError(f"lambda1 has {lam.size} values for {q} graphs")
        return lam

    def check_feasible(self, n_total: int, q: int, p: int) -> None:
        if n_total + self.n_e1 + self.n_e2 <= q * p:
            raise DataValidationError(
                f"infeasible augmentation: sum(n)={n_total} + n_e1={self.n_e1} + "
                f"n_e2={self.n_e2} must exceed q*p={q * p}")


@dataclass
class ParameterState:
    """Coefficients iterated by the estimators.

    ``theta[l, j, k]`` is the coefficient of covariate node ``k`` in the
    regression of outcome node ``j`` for graph ``l`` (NS, CD). For SCIO it is
    entry ``k`` of precision column ``j``, diagonal included. CD uses only the
    strictly lower triangle. ``intercept[j]`` is the intercept shared by all
    graphs for node ``j``; ``sigma2[l, j]`` the residual variance.
    """

    theta: np.ndarray
    intercept: np.ndarray
    sigma2: np.ndarray

    @classmethod
    def zeros(cls, q: int, p: int) -> "ParameterState":
        return cls(np.zeros((q, p, p)), np.zeros(p), np.ones((q, p)))

    @property
    def q(self) -> int:
        return self.theta.shape[0]

    @property
    def p(self) -> int:
        return self.theta.shape[1]

    def copy(self) -> "ParameterState":
        return ParameterState(self.theta.copy(), self.intercept.copy(), self.sigma2.copy())


@dataclass
class JointEstimate:
    """Output of a joint estimator run."""

    backend: str
    theta: np.ndarray
    adjacency: np.ndarray
    banked: np.ndarray
    loss_trace: list
    iterations_used: int
    converged: bool
    intercept: Optional[np.ndarray] = None
    sigma2: Optional[np.ndarray] = None
    precision: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def q(self) -> int:
        return self.adjacency.shape[0]

    def edge_counts(self) -> np.ndarray:
        return np.array([int(np.triu(a, 1).sum()) for a in self.adjacency])


def read_graph_csv(path) -> tuple:
    """Read one graph's CSV: header of node names, one observation per row."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataValidationError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    try:
        data = np.array([[float(v) for v in r] for r in body], dtype=float)
    except ValueError as exc:
        raise DataValidationError(f"{path}: non-numeric value ({exc})") from None
    if data.size == 0:
        raise DataValidationError(f"{path}: no observations")
    if data.ndim != 2 or data.shape[1] != len(header):
        raise DataValidationError(f"{path}: ragged rows or header/column count mismatch")
    return header, data


def load_dataset(paths: Sequence, family="gaussian") -> MultiGraphDataset:
    graphs, header0 = [], None
    for path in paths:
        header, data = read_graph_csv(path)
        if header0 is None:
            header0 = header
        elif header != header0:
            raise DataValidationError(f"{path}: node names differ from {paths[0]}")
        graphs.append(data)
    if isinstance(family, str):
        family = (family,) * len(header0)
    return validate(MultiGraphDataset(tuple(graphs), tuple(family), tuple(header0)))


def write_matrix_csv(path, matrix, labels, fmt="{:.10g}") -> None:
    matrix = np.asarray(matrix)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(labels)
        for row in matrix:
            if matrix.dtype.kind in "iub":
                w.writerow([str(int(v)) for v in row])
            else:
                w.writerow([fmt.format(v) for v in row])


def read_adjacency_csv(path) -> tuple:
    header, data = read_graph_csv(path)
    a = data.astype(int)
    if a.shape[0] != a.shape[1] or not np.all((a == 0) | (a == 1)):
        raise DataValidationError(f"{path}: adjacency must be a square 0/1 grid")
    return header, a
