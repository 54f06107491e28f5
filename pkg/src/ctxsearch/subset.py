"""D-optimal background subset selection by greedy row exchange.

Positive rows are always in the design; negative rows are swapped in and
out to maximise log det(X_S^T X_S), the inverse of the coefficient variance
of a least-squares fit on the selected rows.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

GAIN_TOL = 1e-10


class ExchangeRejected(ArithmeticError):
    """A rank-one downdate would leave the covariance singular."""


class RankDeficiencyWarning(UserWarning):
    pass


def center_features(X_raw) -> np.ndarray:
    X = np.asarray(X_raw, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("centering needs a 2-D matrix with at least two rows")
    return X - X.mean(axis=0)


def logdet_add_remove(cov, logdet, x_add=None, x_remove=None, floor=1e-12):
    """Rank-one update of (cov, log det cov) via the matrix determinant lemma.

    cov' = cov + a a^T - r r^T, and each term multiplies det by (1 +/- v^T A^-1 v).
    """
    cov = np.array(cov, dtype=float)
    if x_add is not None:
        a = np.asarray(x_add, dtype=float)
        ratio = 1.0 + a @ np.linalg.solve(cov, a)
        cov += np.outer(a, a)
        logdet += np.log(ratio)
    if x_remove is not None:
        r = np.asarray(x_remove, dtype=float)
        ratio = 1.0 - r @ np.linalg.solve(cov, r)
        if ratio <= floor:
            raise ExchangeRejected(f"downdate ratio {ratio:.3g} leaves the matrix singular")
        cov -= np.outer(r, r)
        logdet += np.log(ratio)
    return cov, float(logdet)


@dataclass
class SubsetProblem:
    X: np.ndarray
    fixed_rows: np.ndarray
    k: int
    ridge: float = 0.0
    selection: np.ndarray = field(default=None)
    cov: np.ndarray = field(default=None)
    logdet: float = float("nan")

    @property
    def candidate_rows(self) -> np.ndarray:
        return np.setdiff1d(np.arange(len(self.X)), self.fixed_rows)

    def design_cov(self, rows) -> np.ndarray:
        Xs = self.X[np.asarray(rows, dtype=int)]
        return Xs.T @ Xs + self.ridge * np.eye(self.X.shape[1])


def design_logdet(X, rows, ridge: float = 0.0) -> float:
    Xs = np.asarray(X, dtype=float)[np.asarray(rows, dtype=int)]
    sign, ld = np.linalg.slogdet(Xs.T @ Xs + ridge * np.eye(Xs.shape[1]))
    return ld if sign > 0 else -np.inf


def make_problem(X, fixed_rows, k) -> SubsetProblem:
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    fixed = np.unique(np.asarray(fixed_rows, dtype=int))
    if k > n or (k < len(fixed) + p and k != n):
        raise ValueError(f"subset size k={k} must lie in [{len(fixed) + p}, {n}]")
    ridge = 0.0
    if np.linalg.matrix_rank(X) < p:
        ridge = 1e-8 * np.trace(X.T @ X) / p or 1e-8
        warnings.warn(f"rank-deficient design; adding ridge {ridge:.3g}",
                      RankDeficiencyWarning, stacklevel=2)
    return SubsetProblem(X, fixed, k, ridge)


def select_subset(problem: SubsetProblem, max_passes: int = 20, seed: int = 0) -> np.ndarray:
    """Greedy best-swap row exchange; returns sorted selected row indices.

    Each iteration evaluates every (selected negative, unselected negative)
    swap with the Fedorov exchange formula and applies the best one.  A pass
    is ``k`` iterations; the search stops at the first iteration without a
    gain above 1e-10 or after ``max_passes`` passes.
    """
    X, p = problem.X, problem.X.shape[1]
    n = len(X)
    fixed = problem.fixed_rows
    cands = problem.candidate_rows
    n_free = problem.k - len(fixed)
    rng = np.random.default_rng(seed)
    if n_free == len(cands):
        problem.selection = np.arange(n)
        problem.cov = problem.design_cov(problem.selection)
        problem.logdet = float(np.linalg.slogdet(problem.cov)[1])
        return problem.selection

    inside = np.zeros(n, dtype=bool)
    inside[fixed] = True
    init = rng.choice(cands, size=n_free, replace=False)
    inside[init] = True
    cov = problem.design_cov(np.flatnonzero(inside))
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        # a singular random start; fall back to a ridge so exchanges can proceed
        problem.ridge = problem.ridge or 1e-8 * max(np.trace(cov), 1.0) / p
        cov = problem.design_cov(np.flatnonzero(inside))
        sign, logdet = np.linalg.slogdet(cov)
    is_cand = np.zeros(n, dtype=bool)
    is_cand[cands] = True

    for _ in range(max_passes * max(problem.k, 1)):
        sel = np.flatnonzero(inside & is_cand)
        out = np.flatnonzero(~inside & is_cand)
        if len(sel) == 0 or len(out) == 0:
            break
        M_inv = np.linalg.inv(cov)
        XS, XO = X[sel], X[out]
        d_in = np.einsum("ij,jk,ik->i", XS, M_inv, XS)
        d_out = np.einsum("ij,jk,ik->i", XO, M_inv, XO)
        cross = XS @ M_inv @ XO.T
        # det ratio of swapping sel[i] out and out[j] in
        ratio = (1.0 + d_out[None, :]) * (1.0 - d_in[:, None]) + cross ** 2
        i, j = np.unravel_index(np.argmax(ratio), ratio.shape)
        if not ratio[i, j] > 0 or np.log(ratio[i, j]) <= GAIN_TOL:
            break
        try:
            cov, logdet = logdet_add_remove(cov, logdet, X[out[j]], X[sel[i]])
        except ExchangeRejected:
            break
        inside[sel[i]], inside[out[j]] = False, True

    problem.selection = np.flatnonzero(inside)
    problem.cov = cov
    problem.logdet = float(logdet)
    return problem.selection


def background_subset(features, labels, k: int | None = None, max_passes: int = 20,
                      seed: int = 0) -> tuple[np.ndarray, float]:
    """Row indices (positives plus chosen negatives) for training, and their log det.

    ``features`` are raw unary features; they are mean-centred here.  The
    default ``k`` is five times the positive count.
    """
    labels = np.asarray(labels).astype(bool)
    fixed = np.flatnonzero(labels)
    X = center_features(features)
    if k is None:
        k = max(5 * len(fixed), len(fixed) + X.shape[1])
    k = min(k, len(X))
    problem = make_problem(X, fixed, k)
    rows = select_subset(problem, max_passes, seed)
    log.info("subset: kept %d of %d rows, logdet %.6g", len(rows), len(X), problem.logdet)
    return rows, problem.logdet
