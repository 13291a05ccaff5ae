"""Rank-1 group-sparse reduced-rank regression and pathway-weight tuning.

The model ``Y = X b a + E`` couples a group-sparse genotype loading
vector ``b`` (estimated by the group-lasso solver at a penalty set to a
fixed fraction ``gamma`` of the current ``lambda_max``) with a phenotype
loading vector ``a`` (closed-form least squares), alternating until both
stabilise.  Both loadings are normalised to unit Euclidean norm after
each update; the factorisation's sign ambiguity is resolved by aligning
each iterate to its predecessor.

Group weights start at sqrt(group size) and can be tuned so that, under
permuted (null) phenotypes with the penalty adjusted until a single
group is selected, every group is selected with equal frequency.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator

from ._validation import (
    DegenerateFactorError,
    as_float_matrix,
    check_block_sizes,
    check_unit_interval,
    check_weights,
)
from .solver import (
    active_set_solve,
    group_lasso_bcd,
    lambda_max,
    lasso_cd,
    lasso_lambda_max,
)

logger = logging.getLogger(__name__)


def update_a(b, X, Y):
    """Closed-form phenotype loading for a fixed genotype loading.

    Setting the gradient of the residual sum of squares to zero gives
    ``a = b'X'Y / (b'X'Xb)``; the result is returned normalised to unit
    Euclidean norm.  Raises :class:`DegenerateFactorError` when ``Xb``
    is zero (no genotype factor) or orthogonal to every phenotype.
    """
    xb = np.asarray(X) @ np.asarray(b, dtype=np.float64)
    denom = float(xb @ xb)
    if denom <= 0.0:
        raise DegenerateFactorError("genotype latent factor Xb is zero")
    a = (xb @ np.asarray(Y)) / denom
    norm = np.linalg.norm(a)
    if norm == 0.0:
        raise DegenerateFactorError("phenotypes are orthogonal to the factor Xb")
    return a / norm


class PsRRR(BaseEstimator):
    """Rank-1 pathways sparse reduced-rank regression estimator.

    Alternates between a group-lasso estimate of the genotype loading
    ``b`` (penalty ``gamma * lambda_max`` recomputed at each pass) and
    the closed-form phenotype loading ``a``, starting from a uniform
    ``a``, until the relative change of both (after sign alignment)
    falls below ``tol``.

    Parameters
    ----------
    sizes : sequence of int
        Contiguous group (pathway) sizes of the expanded design.
    weights : sequence of float, optional
        Positive group weights; defaults to sqrt(sizes).
    gamma : float
        Penalty fraction in (0, 1).
    tol : float
        Convergence threshold on the Euclidean change of the unit-norm
        loadings between alternations.
    max_alt : int
        Cap on alternations.
    active_set : bool
        Use screened solves with a full optimality recheck.

    Attributes
    ----------
    b_ : (P*,) genotype loading, unit norm unless nothing was selected.
    a_ : (Q,) phenotype loading, unit norm.
    selected_ : indices of pathways with nonzero blocks.
    lam_ : penalty used in the final alternation.
    n_alt_ : alternations performed.
    converged_ : True when both loadings stabilised within ``tol``.
    empty_selection_ : True when the solver returned b = 0 (penalty too
        aggressive for the data); not an error.
    """

    def __init__(
        self,
        sizes=None,
        weights=None,
        gamma=0.8,
        tol=1e-4,
        max_alt=100,
        solver_tol=1e-6,
        solver_max_outer=1000,
        active_set=True,
        validate=True,
    ):
        self.sizes = sizes
        self.weights = weights
        self.gamma = gamma
        self.tol = tol
        self.max_alt = max_alt
        self.solver_tol = solver_tol
        self.solver_max_outer = solver_max_outer
        self.active_set = active_set
        self.validate = validate

    def fit(self, X, Y):
        X = np.asfortranarray(np.asarray(X, dtype=np.float64))
        Y = as_float_matrix(Y, "Y")
        if X.shape[0] != Y.shape[0]:
            raise ValueError("X and Y have different numbers of rows")
        check_unit_interval(self.gamma, "gamma", open_low=True, open_high=True)
        offsets, sizes = check_block_sizes(self.sizes, X.shape[1])
        weights = check_weights(self.weights, sizes.size, sizes)
        if self.validate:
            _check_design_columns(X)
            _check_centred(Y)
        n_traits = Y.shape[1]
        a = np.full(n_traits, 1.0 / np.sqrt(n_traits))
        b_prev = None
        a_prev = a
        b = np.zeros(X.shape[1])
        lam = 0.0
        selected = np.array([], dtype=np.int64)
        converged = False
        empty = False
        kkt = 0.0
        n_alt = 0
        for n_alt in range(1, self.max_alt + 1):
            z = Y @ a
            lam_ceiling = lambda_max(X, z, sizes, weights)
            if lam_ceiling == 0.0:
                empty = True
                b = np.zeros(X.shape[1])
                selected = np.array([], dtype=np.int64)
                break
            lam = self.gamma * lam_ceiling
            solve = active_set_solve if self.active_set else group_lasso_bcd
            result = solve(
                X, z, sizes, weights, lam,
                tol=self.solver_tol, max_outer=self.solver_max_outer,
            )
            kkt = result.kkt_violation
            if result.selected.size == 0:
                empty = True
                b = np.zeros(X.shape[1])
                selected = np.array([], dtype=np.int64)
                break
            b = result.coef / np.linalg.norm(result.coef)
            selected = result.selected
            a = update_a(b, X, Y)
            if b_prev is not None and float(b @ b_prev) < 0.0:
                b = -b
                a = -a
            if b_prev is not None:
                db = np.linalg.norm(b - b_prev)
                da = np.linalg.norm(a - a_prev)
                if db < self.tol and da < self.tol:
                    b_prev, a_prev = b, a
                    converged = True
                    break
            b_prev, a_prev = b, a
        if empty:
            converged = True
        elif not converged:
            warnings.warn(
                f"alternating estimation did not converge in {self.max_alt} passes",
                UserWarning,
            )
        self.b_ = b
        self.a_ = a_prev if not empty else a
        self.selected_ = selected
        self.lam_ = float(lam)
        self.n_alt_ = int(n_alt)
        self.converged_ = bool(converged)
        self.empty_selection_ = bool(empty)
        self.kkt_violation_ = float(kkt)
        return self

    def predict(self, X):
        """Fitted phenotype matrix X b a for new genotype rows."""
        score = np.asarray(X, dtype=np.float64) @ self.b_
        return np.outer(score, self.a_)

    def block_norms(self):
        """Euclidean norm of each selected pathway's coefficient block."""
        offsets, sizes = check_block_sizes(self.sizes, self.b_.size)
        return {
            int(l): float(np.linalg.norm(self.b_[offsets[l]: offsets[l] + sizes[l]]))
            for l in self.selected_
        }


def _check_design_columns(X, tol=1e-6):
    norms2 = np.einsum("ij,ij->j", X, X)
    bad = ~((np.abs(norms2 - 1.0) <= tol) | (norms2 == 0.0))
    if bad.any():
        raise ValueError(
            f"{int(bad.sum())} design columns are neither unit-norm nor zero; "
            "standardize the genotype matrix first"
        )
    means = X.mean(axis=0)
    if np.max(np.abs(means)) > tol:
        raise ValueError("design columns must be mean-centred")


def _check_centred(Y, tol=1e-6):
    scale = max(float(np.max(np.abs(Y))), 1.0)
    if np.max(np.abs(Y.mean(axis=0))) > tol * scale:
        raise ValueError("phenotype columns must be mean-centred")


def fit_rank1_lasso(X, Y, gamma=0.8, tol=1e-4, max_alt=100,
                    lasso_tol=1e-6, lasso_max_iter=1000):
    """Rank-1 sparse RRR with a plain lasso penalty on the SNP loading.

    Same alternating scheme as :class:`PsRRR` but with coordinate-wise
    soft thresholding in place of the group solver; used for the
    second-level SNP selection over deduplicated pathway columns.

    Returns ``(beta, a, lam, n_alt, converged)`` where ``beta`` is the
    unnormalised sparse SNP loading of the final pass.
    """
    X = np.asfortranarray(np.asarray(X, dtype=np.float64))
    Y = as_float_matrix(Y, "Y")
    check_unit_interval(gamma, "gamma", open_low=True, open_high=True)
    n_traits = Y.shape[1]
    a = np.full(n_traits, 1.0 / np.sqrt(n_traits))
    b_prev = None
    a_prev = a
    beta = np.zeros(X.shape[1])
    lam = 0.0
    converged = False
    n_alt = 0
    for n_alt in range(1, max_alt + 1):
        z = Y @ a
        ceiling = lasso_lambda_max(X, z)
        if ceiling == 0.0:
            return np.zeros(X.shape[1]), a, 0.0, n_alt, True
        lam = gamma * ceiling
        result = lasso_cd(X, z, lam, tol=lasso_tol, max_iter=lasso_max_iter)
        beta = result.coef
        if result.selected.size == 0:
            return beta, a, lam, n_alt, True
        b = beta / np.linalg.norm(beta)
        a = update_a(b, X, Y)
        if b_prev is not None and float(b @ b_prev) < 0.0:
            b, a, beta = -b, -a, -beta
        if b_prev is not None:
            if (np.linalg.norm(b - b_prev) < tol
                    and np.linalg.norm(a - a_prev) < tol):
                converged = True
                b_prev, a_prev = b, a
                break
        b_prev, a_prev = b, a
    return beta, a_prev, float(lam), n_alt, converged


@dataclass
class WeightState:
    """State of the iterative pathway-weight tuning procedure."""

    weights: np.ndarray
    iteration: int
    frequencies: np.ndarray      # empirical single-selection distribution
    discrepancy: np.ndarray      # frequencies - 1/L
    eta: float
    epsilon: float
    converged: bool
    n_fits_per_iter: int
    seed: int
    history: list = field(default_factory=list)

    def write_tsv(self, path, names=None, sizes=None):
        L = self.weights.size
        names = names if names is not None else [f"group{l}" for l in range(L)]
        sizes = sizes if sizes is not None else [0] * L
        with open(path, "w") as fh:
            fh.write("#pathway\tsize\tweight\tfrequency\tdiscrepancy\titeration\n")
            for l in range(L):
                fh.write(
                    f"{names[l]}\t{int(sizes[l])}\t{self.weights[l]:.12g}\t"
                    f"{self.frequencies[l]:.8g}\t{self.discrepancy[l]:.8g}\t"
                    f"{self.iteration}\n"
                )


def weight_update(weights, discrepancy, eta):
    """One multiplicative weight adjustment from selection discrepancies.

    Applies ``w_l <- w_l * (1 - sign(d_l) * (eta - 1) * L^2 * d_l^2)``
    with the discrepancy clipped to ``[-1/L, 1/L]``, so every factor lies
    in ``[eta, 2 - eta]``.  A never-selected group (``d_l = -1/L``) is
    reduced by exactly the factor ``eta``, the largest allowed
    single-step reduction.  Without the clip an over-selected group's
    weight can be multiplied by ``1 + (1-eta) L^2 d^2`` (two orders of
    magnitude for strongly biased starts), which knocks it to zero
    selections next round and sets up a limit cycle instead of
    convergence; clipping keeps the fixed point (d = 0) unchanged.
    """
    check_unit_interval(eta, "eta", open_low=True, open_high=True)
    w = np.asarray(weights, dtype=np.float64)
    L = w.size
    d = np.clip(np.asarray(discrepancy, dtype=np.float64), -1.0 / L, 1.0 / L)
    factor = 1.0 - np.sign(d) * (eta - 1.0) * (L * L) * (d * d)
    return w * factor


class BlockEigenCache:
    """Per-group eigendecompositions of the block Grams X_l' X_l.

    The within-block subproblem of the group solver has the closed form
    b_l = (G_l + kappa I)^-1 v with kappa = lam*w_l/||b_l||, where
    ||b_l|| solves a one-dimensional monotone (secular) equation in the
    eigenbasis of G_l.  Caching the eigendecompositions makes repeated
    solves against a fixed design (thousands of permutation fits during
    weight tuning) cheap and exact, sidestepping the sublinear crawl of
    coordinate descent near the selection boundary.
    """

    def __init__(self, X, offsets, sizes):
        self.offsets = offsets
        self.sizes = sizes
        self.eigvals = []
        self.eigvecs = []
        for o, s in zip(offsets, sizes):
            block = X[:, o: o + s]
            vals, vecs = np.linalg.eigh(block.T @ block)
            self.eigvals.append(np.maximum(vals, 0.0))
            self.eigvecs.append(vecs)

    def solve_block(self, l, v, lam_w):
        """Exact minimiser of 0.5*||r - X_l b||^2 + lam_w*||b|| given
        v = X_l' r; returns None when the zero block is optimal."""
        vnorm = np.linalg.norm(v)
        if vnorm <= lam_w:
            return None
        lam = self.eigvals[l]
        u = self.eigvecs[l].T @ v
        u2 = u * u
        # h(theta) = sum u_i^2/(lam_i*theta + lam_w)^2 - 1 is strictly
        # decreasing with h(0) > 0, so the root is unique
        theta = (vnorm - lam_w) / max(lam.max(), 1e-30)
        for _ in range(100):
            denom = lam * theta + lam_w
            h = np.sum(u2 / (denom * denom)) - 1.0
            dh = -2.0 * np.sum(u2 * lam / (denom * denom * denom))
            step = h / dh
            theta_new = theta - step
            if theta_new <= 0:
                theta_new = 0.5 * theta
            if abs(theta_new - theta) <= 1e-14 * max(theta, 1.0):
                theta = theta_new
                break
            theta = theta_new
        coef = self.eigvecs[l] @ (u * theta / (lam * theta + lam_w))
        return coef


def _block_norms(vec, offsets):
    return np.sqrt(np.add.reduceat(vec * vec, offsets))


def _exact_group_solve(X, z, sizes, weights, lam, cache, corr0=None,
                       tol=1e-8, max_sweeps=100):
    """Group-lasso selection via block minimisation with exact block
    solves; equivalent to the coordinate-descent solver at convergence.
    Returns the selected group indices as a sorted tuple."""
    offsets = cache.offsets
    corr = X.T @ z if corr0 is None else corr0
    stats = _block_norms(corr, offsets) / weights
    active = set(int(l) for l in np.flatnonzero(stats >= lam))
    blocks = {}
    r = z.copy()
    for _round in range(len(sizes) + 1):
        for _sweep in range(max_sweeps):
            delta = 0.0
            for l in sorted(active):
                o, s = offsets[l], sizes[l]
                old = blocks.get(l)
                if old is not None:
                    r += X[:, o: o + s] @ old
                v = X[:, o: o + s].T @ r
                new = cache.solve_block(l, v, lam * weights[l])
                if new is None:
                    blocks.pop(l, None)
                    change = np.max(np.abs(old)) if old is not None else 0.0
                else:
                    r -= X[:, o: o + s] @ new
                    change = (
                        np.max(np.abs(new - old)) if old is not None
                        else np.max(np.abs(new))
                    )
                    blocks[l] = new
                delta = max(delta, change)
            if delta < tol:
                break
        # optimality scan over every excluded group
        scan = _block_norms(X.T @ r, offsets) / weights
        violators = [
            int(l) for l in np.flatnonzero(scan > lam * (1 + 1e-9))
            if l not in active
        ]
        if not violators:
            break
        active.update(violators)
    return tuple(sorted(blocks))


def _single_selection_exact(X, z, sizes, weights, cache,
                            gamma_init=0.9, max_bisect=20):
    corr0 = X.T @ z
    stats = _block_norms(corr0, cache.offsets) / weights
    ceiling = float(stats.max())
    if ceiling == 0.0:
        return ()
    lo, hi = 0.0, 1.0
    gamma = gamma_init
    best = None
    best_k = -10 ** 9
    for _ in range(max_bisect):
        selected = _exact_group_solve(
            X, z, sizes, weights, gamma * ceiling, cache, corr0=corr0
        )
        k = len(selected)
        if k == 1:
            return selected
        if best is None or abs(k - 1) < abs(best_k - 1):
            best, best_k = selected, k
        if k == 0:
            hi = gamma
        else:
            lo = gamma
        gamma = 0.5 * (lo + hi)
    return best


def single_selection_fit(X, z, sizes, weights, offsets=None,
                         gamma_init=0.9, max_bisect=20,
                         solver_tol=1e-5, solver_max_outer=1000,
                         solver_max_inner=50, cache=None):
    """Selected groups of a one-pass fit tuned towards single selection.

    Bisects the penalty fraction ``gamma`` until exactly one group is
    selected; on hitting the bisection cap the selection whose
    cardinality is closest to 1 is accepted (typically 1 or 2 when the
    top statistics tie).  Returns a tuple of selected group indices.

    With a :class:`BlockEigenCache` the solves use exact block
    minimisation (fast against a fixed design); otherwise they fall back
    to the screened coordinate-descent solver at selection-level
    precision.
    """
    if cache is not None:
        return _single_selection_exact(
            X, z, sizes, weights, cache,
            gamma_init=gamma_init, max_bisect=max_bisect,
        )
    ceiling = lambda_max(X, z, sizes, weights)
    if ceiling == 0.0:
        return ()
    lo, hi = 0.0, 1.0
    gamma = gamma_init
    best = None
    best_k = -10 ** 9
    for _ in range(max_bisect):
        result = active_set_solve(
            X, z, sizes, weights, gamma * ceiling,
            tol=solver_tol, max_outer=solver_max_outer,
            max_inner=solver_max_inner, warn=False,
        )
        k = result.selected.size
        if k == 1:
            return tuple(int(l) for l in result.selected)
        if best is None or abs(k - 1) < abs(best_k - 1):
            best, best_k = result.selected, k
        if k == 0:
            hi = gamma
        else:
            lo = gamma
        gamma = 0.5 * (lo + hi)
    return tuple(int(l) for l in best)


def _selection_counts(X, z0, sizes, weights, seed, iteration, fit_indices,
                      gamma_init, max_bisect, solver_tol, solver_max_outer,
                      solver_max_inner, cache):
    n = z0.size
    L = len(sizes)
    counts = np.zeros(L, dtype=np.int64)
    for b in fit_indices:
        rng = np.random.default_rng(
            np.random.SeedSequence([seed, iteration, int(b)])
        )
        z = z0[rng.permutation(n)]
        for l in single_selection_fit(
            X, z, sizes, weights,
            gamma_init=gamma_init, max_bisect=max_bisect,
            solver_tol=solver_tol, solver_max_outer=solver_max_outer,
            solver_max_inner=solver_max_inner, cache=cache,
        ):
            counts[l] += 1
    return counts


def tune_weights(
    X,
    Y,
    sizes,
    weights=None,
    eta=0.5,
    epsilon=0.05,
    fits_per_iter=None,
    max_iter=30,
    seed=0,
    n_jobs=1,
    gamma_init=0.9,
    max_bisect=20,
    solver_tol=1e-5,
    solver_max_outer=1000,
    solver_max_inner=50,
):
    """Tune pathway weights towards uniform null selection frequencies.

    Each iteration estimates the selection distribution over
    ``fits_per_iter`` one-pass fits on row-permuted phenotypes (the
    permutation relabels subjects, breaking any genotype link while
    preserving the phenotype structure), each fit tuned so a single
    pathway is selected.  Weights are adjusted multiplicatively from the
    discrepancies ``d_l`` against the uniform distribution until
    ``sum_l |d_l| < epsilon`` or ``max_iter`` is reached.

    Notes
    -----
    The Monte-Carlo noise floor of ``sum_l |d_l|`` at ``n`` fits is about
    ``L * sqrt(2 (1 - 1/L) / (pi * n * L))``; ``fits_per_iter`` must be
    large enough to push that floor below ``epsilon`` or the stop rule
    can never fire (a warning is emitted).  Measurements start at an
    eighth of ``fits_per_iter`` and double whenever the discrepancy
    nears the current resolution's floor, so early iterations stay
    cheap.  Each multiplicative update is backtracked (halving its
    exponent) until the measured discrepancy improves; the raw update
    overshoots the narrow equilibrium region and orbits it indefinitely
    on annotations with strongly heterogeneous group sizes.  Empty
    selections count in the denominator but increment no group.
    """
    X = np.asfortranarray(np.asarray(X, dtype=np.float64))
    Y = as_float_matrix(Y, "Y")
    offsets, sizes_arr = check_block_sizes(sizes, X.shape[1])
    weights = check_weights(weights, sizes_arr.size, sizes_arr).copy()
    check_unit_interval(eta, "eta", open_low=True, open_high=True)
    L = sizes_arr.size
    if fits_per_iter is None:
        fits_per_iter = 50 * L
    if fits_per_iter < L:
        warnings.warn(
            f"fits_per_iter={fits_per_iter} is below the number of groups "
            f"({L}); the selection distribution estimate will be coarse",
            UserWarning,
        )
    noise_floor = L * np.sqrt(2.0 * (1.0 - 1.0 / L) / (np.pi * fits_per_iter * L))
    if noise_floor > epsilon:
        warnings.warn(
            f"fits_per_iter={fits_per_iter} gives a sum|d| noise floor of "
            f"about {noise_floor:.3g}, above epsilon={epsilon:g}; "
            "convergence is unlikely to trigger",
            UserWarning,
        )
    n_traits = Y.shape[1]
    z0 = Y @ np.full(n_traits, 1.0 / np.sqrt(n_traits))
    cache = BlockEigenCache(X, offsets, sizes_arr)
    uniform = 1.0 / L

    tag = [0]

    def measure(w, n_fits):
        tag[0] += 1
        chunks = _split_indices(n_fits, n_jobs)
        parts = Parallel(n_jobs=n_jobs, backend="threading")(
            delayed(_selection_counts)(
                X, z0, sizes_arr, w, seed, tag[0], chunk,
                gamma_init, max_bisect, solver_tol, solver_max_outer,
                solver_max_inner, cache,
            )
            for chunk in chunks
        )
        return np.sum(parts, axis=0) / float(n_fits)

    def floor_of(n_fits):
        return L * np.sqrt(2.0 * uniform * (1.0 - uniform) / (np.pi * n_fits))

    # start at a coarse measurement resolution and refine as the
    # discrepancy approaches each resolution's Monte-Carlo floor
    n_cur = int(min(fits_per_iter, max(10 * L, fits_per_iter // 8)))
    freq = measure(weights, n_cur)
    d = freq - uniform
    history = []
    converged = False
    iteration = 0
    for iteration in range(max_iter):
        sum_abs = float(np.abs(d).sum())
        history.append(
            {"iteration": iteration, "sum_abs_d": sum_abs, "n_fits": n_cur}
        )
        logger.info(
            "weight tuning iteration %d: sum|d| = %.4f (n_fits=%d)",
            iteration, sum_abs, n_cur,
        )
        if n_cur >= fits_per_iter and sum_abs < epsilon:
            converged = True
            break
        if n_cur < fits_per_iter and sum_abs < 2.0 * floor_of(n_cur):
            n_cur = int(min(2 * n_cur, fits_per_iter))
            freq = measure(weights, n_cur)
            d = freq - uniform
            continue
        # multiplicative step, safeguarded by backtracking on the step
        # exponent: a full step overshoots the narrow basin around
        # uniformity and orbits it instead of entering
        factor = weight_update(np.ones(L), d, eta)
        trial_w, trial_freq = weights, freq
        for exponent in (1.0, 0.5, 0.25, 0.125):
            trial_w = weights * factor ** exponent
            trial_freq = measure(trial_w, n_cur)
            if float(np.abs(trial_freq - uniform).sum()) < sum_abs:
                break
        weights = trial_w
        freq = trial_freq
        d = freq - uniform
    if not converged:
        warnings.warn(
            f"weight tuning did not converge in {max_iter} iterations",
            UserWarning,
        )
    return WeightState(
        weights=weights,
        iteration=iteration,
        frequencies=freq,
        discrepancy=d,
        eta=eta,
        epsilon=epsilon,
        converged=converged,
        n_fits_per_iter=int(fits_per_iter),
        seed=int(seed),
        history=history,
    )


def _split_indices(total, n_jobs):
    n_chunks = max(1, min(total, n_jobs * 4))
    return [chunk for chunk in np.array_split(np.arange(total), n_chunks) if chunk.size]
