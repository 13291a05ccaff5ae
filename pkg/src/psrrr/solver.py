"""Penalised least-squares engines.

Group lasso via block coordinate descent for a univariate working
response, plain lasso coordinate descent, the penalty ceiling
``lambda_max``, an optimality (KKT) certificate, and an active-set
screening wrapper.  Design columns must be mean-centred with unit
Euclidean norm (zero columns are tolerated and stay inert).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import _kernels
from ._validation import (
    as_float_matrix,
    as_float_vector,
    check_block_sizes,
    check_weights,
)

logger = logging.getLogger(__name__)


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class SolverResult:
    """Outcome of a penalised solve.

    ``selected`` lists the groups (or coordinates, for the lasso) whose
    coefficient blocks are not exactly zero.
    """

    coef: np.ndarray
    selected: np.ndarray
    lam: float
    n_iter: int
    converged: bool
    kkt_violation: float
    objective: float


def _prepare(X, z, sizes, weights):
    X = np.asfortranarray(np.asarray(X, dtype=np.float64))
    z = as_float_vector(z, "z")
    if z.size != X.shape[0]:
        raise ValueError("z length does not match the design row count")
    offsets, sizes = check_block_sizes(sizes, X.shape[1])
    weights = check_weights(weights, sizes.size, sizes)
    return X, z, offsets, sizes, weights


def _group_norms(vec, offsets, sizes):
    return np.array(
        [np.linalg.norm(vec[o: o + s]) for o, s in zip(offsets, sizes)]
    )


def lambda_max(X, z, sizes, weights=None):
    """Smallest penalty at which the all-zero solution is optimal.

    Equals ``max_l ||X_l' z||_2 / w_l``; solving with any ``lam`` at or
    above this value returns the zero vector.  An all-zero working
    response yields 0, which is logged since no finite penalty threshold
    exists there.
    """
    X, z, offsets, sizes, weights = _prepare(X, z, sizes, weights)
    if not np.any(z):
        logger.warning("lambda_max of an all-zero working response is 0")
        return 0.0
    norms = _group_norms(X.T @ z, offsets, sizes)
    return float(np.max(norms / weights))


def group_objective(coef, X, z, sizes, weights, lam):
    """0.5*||z - X b||^2 + lam * sum_l w_l ||b_l||_2."""
    X, z, offsets, sizes, weights = _prepare(X, z, sizes, weights)
    coef = as_float_vector(coef, "coef")
    resid = z - X @ coef
    penalty = float(np.sum(weights * _group_norms(coef, offsets, sizes)))
    return 0.5 * float(resid @ resid) + lam * penalty


def kkt_check(coef, X, z, sizes, weights, lam):
    """Maximum violation of the group-lasso optimality conditions.

    For exactly-zero blocks the violation is ``max(0, ||X_l' r|| - lam*w_l)``;
    for nonzero blocks it is ``||X_l' r - lam*w_l*b_l/||b_l|| ||``; the
    maximum over groups is returned (0 certifies optimality).
    """
    X, z, offsets, sizes, weights = _prepare(X, z, sizes, weights)
    coef = as_float_vector(coef, "coef")
    corr = X.T @ (z - X @ coef)
    worst = 0.0
    for l, (o, s) in enumerate(zip(offsets, sizes)):
        block = coef[o: o + s]
        corr_l = corr[o: o + s]
        norm_b = np.linalg.norm(block)
        if norm_b == 0.0:
            viol = max(0.0, np.linalg.norm(corr_l) - lam * weights[l])
        else:
            viol = np.linalg.norm(corr_l - lam * weights[l] * block / norm_b)
        worst = max(worst, float(viol))
    return worst


def group_lasso_bcd(
    X,
    z,
    sizes,
    weights=None,
    lam=1.0,
    tol=1e-6,
    max_outer=1000,
    max_inner=1000,
    recompute_every=50,
    coef_init=None,
    group_subset=None,
    warn=True,
):
    """Group lasso solve by block coordinate descent.

    Cycles over groups: a block is zeroed when its partial-residual
    correlation norm is at most ``lam * w_l``, and otherwise refined by
    within-block cyclic coordinate descent with the locally reweighted
    update ``b_j <- (X_j' r + b_j) / (1 + lam*w_l/||b_l||)``.  Iteration
    stops when the largest absolute coefficient change over a sweep drops
    below ``tol``.

    Parameters
    ----------
    X : (N, P*) array with mean-centred, unit-norm columns.
    z : (N,) working response.
    sizes : contiguous group sizes summing to P*.
    weights : positive group weights; default sqrt(sizes).
    lam : penalty level, >= 0.
    coef_init : optional warm-start coefficients.
    group_subset : optional group indices to sweep; other blocks are
        frozen at their ``coef_init`` values (used by the active-set
        wrapper).

    Returns
    -------
    SolverResult with the coefficient vector, selected groups, the
    achieved KKT violation, and the objective value.
    """
    X, z, offsets, sizes, weights = _prepare(X, z, sizes, weights)
    if lam < 0:
        raise ValueError("lam must be >= 0")
    b = (
        np.zeros(X.shape[1])
        if coef_init is None
        else np.array(coef_init, dtype=np.float64, copy=True)
    )
    if b.size != X.shape[1]:
        raise ValueError("coef_init has the wrong length")
    r = z - X @ b if b.any() else z.copy()
    group_ids = (
        np.arange(sizes.size, dtype=np.int64)
        if group_subset is None
        else np.asarray(group_subset, dtype=np.int64)
    )
    lam_w = lam * weights
    n_iter, converged = _kernels.group_bcd(
        X, z, offsets, sizes, lam_w, group_ids, b, r,
        tol, max_outer, max_inner, recompute_every,
    )
    if not converged and warn:
        warnings.warn(
            f"group lasso did not converge in {max_outer} sweeps",
            ConvergenceWarning,
        )
    selected = np.array(
        [l for l, (o, s) in enumerate(zip(offsets, sizes)) if np.any(b[o: o + s])],
        dtype=np.int64,
    )
    return SolverResult(
        coef=b,
        selected=selected,
        lam=float(lam),
        n_iter=int(n_iter),
        converged=bool(converged),
        kkt_violation=kkt_check(b, X, z, sizes, weights, lam),
        objective=group_objective(b, X, z, sizes, weights, lam),
    )


def active_set_solve(
    X,
    z,
    sizes,
    weights=None,
    lam=1.0,
    screen_multiple=1.0,
    kkt_slack=1e-8,
    max_rounds=50,
    warn=True,
    **solver_kwargs,
):
    """Group lasso solve restricted to a screened active set.

    Groups with ``||X_l' z|| / w_l >= screen_multiple * lam`` form the
    initial active set.  After solving the restricted problem, every
    excluded group is checked against the optimality condition
    ``||X_l' r|| <= lam * w_l * (1 + kkt_slack)``; violators are admitted
    and the problem re-solved until no violations remain, so the result
    matches the unscreened solve.
    """
    X, z, offsets, sizes, weights = _prepare(X, z, sizes, weights)
    stats = _group_norms(X.T @ z, offsets, sizes) / weights
    active = stats >= screen_multiple * lam
    coef = np.zeros(X.shape[1])
    result = None
    for _round in range(max_rounds):
        if active.any():
            result = group_lasso_bcd(
                X, z, sizes, weights, lam,
                coef_init=coef,
                group_subset=np.flatnonzero(active),
                warn=warn,
                **solver_kwargs,
            )
            coef = result.coef
        corr = X.T @ (z - X @ coef)
        norms = _group_norms(corr, offsets, sizes)
        violators = (~active) & (norms > lam * weights * (1.0 + kkt_slack))
        if not violators.any():
            break
        active |= violators
    else:
        warnings.warn("active-set loop hit its round limit", ConvergenceWarning)
    if result is None:
        zero = np.zeros(X.shape[1])
        result = SolverResult(
            coef=zero,
            selected=np.array([], dtype=np.int64),
            lam=float(lam),
            n_iter=0,
            converged=True,
            kkt_violation=kkt_check(zero, X, z, sizes, weights, lam),
            objective=group_objective(zero, X, z, sizes, weights, lam),
        )
    return result


def lasso_lambda_max(X, z):
    """Smallest lasso penalty with an all-zero solution: max_j |X_j' z|."""
    X = np.asfortranarray(np.asarray(X, dtype=np.float64))
    z = as_float_vector(z, "z")
    return float(np.max(np.abs(X.T @ z))) if np.any(z) else 0.0


def lasso_cd(
    X,
    z,
    lam,
    tol=1e-6,
    max_iter=1000,
    recompute_every=50,
    coef_init=None,
    warn=True,
):
    """Lasso solve by cyclic coordinate descent with soft thresholding.

    Minimises ``0.5*||z - X b||^2 + lam*||b||_1`` for a design with
    unit-norm columns.  Returns a :class:`SolverResult` whose
    ``selected`` holds the nonzero coordinate indices.
    """
    X = np.asfortranarray(np.asarray(X, dtype=np.float64))
    z = as_float_vector(z, "z")
    if z.size != X.shape[0]:
        raise ValueError("z length does not match the design row count")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    b = (
        np.zeros(X.shape[1])
        if coef_init is None
        else np.array(coef_init, dtype=np.float64, copy=True)
    )
    r = z - X @ b if b.any() else z.copy()
    n_iter, converged = _kernels.lasso_cd(
        X, z, float(lam), b, r, tol, max_iter, recompute_every
    )
    if not converged and warn:
        warnings.warn(
            f"lasso did not converge in {max_iter} sweeps", ConvergenceWarning
        )
    resid = z - X @ b
    corr = X.T @ resid
    nonzero = b != 0
    viol = float(
        max(
            np.max(np.abs(corr[~nonzero]) - lam, initial=0.0),
            np.max(np.abs(corr[nonzero] - lam * np.sign(b[nonzero])), initial=0.0),
        )
    )
    objective = 0.5 * float(resid @ resid) + lam * float(np.abs(b).sum())
    return SolverResult(
        coef=b,
        selected=np.flatnonzero(nonzero),
        lam=float(lam),
        n_iter=int(n_iter),
        converged=bool(converged),
        kkt_violation=max(viol, 0.0),
        objective=objective,
    )


class GroupLasso(BaseEstimator):
    """Group-lasso regression estimator over contiguous column blocks.

    Parameters
    ----------
    sizes : sequence of int
        Contiguous group sizes; group l owns columns
        ``sum(sizes[:l]) .. sum(sizes[:l+1]) - 1``.
    weights : sequence of float, optional
        Positive group weights; defaults to sqrt(sizes).
    lam : float
        Penalty level.
    active_set : bool
        Solve via screening plus a full optimality recheck; the result
        matches the direct solve.
    """

    def __init__(
        self,
        sizes=None,
        weights=None,
        lam=1.0,
        tol=1e-6,
        max_outer=1000,
        max_inner=1000,
        active_set=True,
    ):
        self.sizes = sizes
        self.weights = weights
        self.lam = lam
        self.tol = tol
        self.max_outer = max_outer
        self.max_inner = max_inner
        self.active_set = active_set

    def fit(self, X, y):
        X = as_float_matrix(X, "X", order="F")
        solve = active_set_solve if self.active_set else group_lasso_bcd
        result = solve(
            X,
            y,
            self.sizes,
            weights=self.weights,
            lam=self.lam,
            tol=self.tol,
            max_outer=self.max_outer,
            max_inner=self.max_inner,
        )
        self.coef_ = result.coef
        self.selected_ = result.selected
        self.n_iter_ = result.n_iter
        self.converged_ = result.converged
        self.kkt_violation_ = result.kkt_violation
        self.objective_ = result.objective
        return self

    def predict(self, X):
        return np.asarray(X, dtype=np.float64) @ self.coef_
