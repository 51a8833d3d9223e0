"""Assembly of the combined noise-augmented design for one outcome node.

Observed rows are block-diagonal across graphs: a row from graph ``l`` is zero
outside graph ``l``'s column block. Noise rows are dense across all blocks.
Columns are graph-major then covariate index; an intercept, when present, is
the last column.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import MultiGraphDataset
from .noise import cd_covariates, ns_covariates


@dataclass
class AugmentedDesign:
    design: np.ndarray
    outcome: np.ndarray
    obs_rows: int
    covariates: np.ndarray
    q: int
    intercept: bool = False

    @property
    def col_map(self) -> dict:
        """``(graph, covariate node) -> column`` for every coefficient column."""
        d = self.covariates.size
        return {(l, int(k)): l * d + c for l in range(self.q) for c, k in enumerate(self.covariates)}

    @property
    def observed(self) -> np.ndarray:
        return self.design[: self.obs_rows]

    def split(self, coef: np.ndarray):
        """Return coefficients as a (q, d) block plus the intercept (0 if none)."""
        d = self.covariates.size
        block = np.asarray(coef[: self.q * d]).reshape(self.q, d)
        return block, (float(coef[-1]) if self.intercept else 0.0)


def _assemble(dataset: MultiGraphDataset, covs, e1, e2, outcome_obs, outcome_value,
              intercept, row_scale=None) -> AugmentedDesign:
    q, d = dataset.q, covs.size
    width = q * d
    for name, e in (("e1", e1), ("e2", e2)):
        if e.ndim != 2 or e.shape[1] != width:
            raise ValueError(f"layout mismatch: {name} has shape {e.shape}, "
                             f"expected (*, {width}) for q={q}, d={d}")
    n_obs = dataset.n_total
    n_rows = n_obs + e1.shape[0] + e2.shape[0]
    X = np.zeros((n_rows, width + int(intercept)))
    r = 0
    for l, g in enumerate(dataset.graphs):
        block = g[:, covs]
        if row_scale is not None:
            block = block * row_scale[l]
        X[r:r + g.shape[0], l * d:(l + 1) * d] = block
        r += g.shape[0]
    X[n_obs:n_obs + e1.shape[0], :width] = e1
    X[n_obs + e1.shape[0]:, :width] = e2
    if intercept:
        X[:, -1] = 1.0
    y = None
    if outcome_obs is not None:
        y = np.empty(n_rows)
        y[:n_obs] = outcome_obs
        y[n_obs:] = outcome_value
    return AugmentedDesign(X, y, n_obs, covs, q, intercept)


def _outcome_column(dataset: MultiGraphDataset, j: int) -> np.ndarray:
    return np.concatenate([g[:, j] for g in dataset.graphs])


def assemble_ns(dataset: MultiGraphDataset, j: int, e1, e2, outcome_value: float = 0.0,
                intercept: bool = False,
                outcomes: Optional[MultiGraphDataset] = None) -> AugmentedDesign:
    """Neighborhood-selection design for outcome node ``j``.

    ``dataset`` supplies covariate columns; ``outcomes`` (default the same
    dataset) supplies the outcome, so non-gaussian fits can pair centered
    covariates with raw outcomes. Noise rows take ``outcome_value``.
    """
    covs = ns_covariates(dataset.p, j)
    y = _outcome_column(outcomes if outcomes is not None else dataset, j)
    return _assemble(dataset, covs, np.asarray(e1), np.asarray(e2), y, outcome_value, intercept)


def assemble_cd(dataset: MultiGraphDataset, j: int, e1, e2) -> AugmentedDesign:
    """Cholesky-regression design: node ``j`` (0-based) on nodes ``0..j-1``."""
    if j < 1:
        raise ValueError("the first node has no Cholesky regression")
    covs = cd_covariates(dataset.p, j)
    y = _outcome_column(dataset, j)
    return _assemble(dataset, covs, np.asarray(e1), np.asarray(e2), y, 0.0, False)


def scio_scale(dataset: MultiGraphDataset) -> float:
    """The ``n`` of the SCIO quadratic loss: the mean per-graph sample size."""
    return float(dataset.n.mean())


def scio_target(q: int, p: int, j: int) -> np.ndarray:
    xi = np.zeros(q * p)
    xi[np.arange(q) * p + j] = 1.0
    return xi


def assemble_scio(dataset: MultiGraphDataset, j: int, e1, e2,
                  n_scale: Optional[float] = None) -> AugmentedDesign:
    """SCIO design for precision column ``j``: all ``p`` columns per graph.

    ``outcome`` holds the stacked indicator target ``Xi_j``. Graph ``l``'s rows
    are scaled by ``sqrt(n_scale / n_l)`` so each graph's block Gram equals
    ``n_scale`` times its sample second-moment matrix (a no-op when the graphs
    have equal sample sizes).
    """
    n_scale = scio_scale(dataset) if n_scale is None else n_scale
    row_scale = np.sqrt(n_scale / dataset.n)
    covs = np.arange(dataset.p)
    aug = _assemble(dataset, covs, np.asarray(e1), np.asarray(e2), None, 0.0, False, row_scale)
    aug.outcome = scio_target(dataset.q, dataset.p, j)
    return aug
