"""Compiled coordinate-descent kernels.

Both kernels operate on a Fortran-ordered design matrix with unit-norm
columns, maintain the full residual ``r = z - X b`` incrementally, and
stop when the largest absolute coefficient change over a full sweep
falls below ``tol``.  The residual is recomputed from scratch every
``recompute_every`` sweeps to control drift.
"""

import numpy as np
from numba import njit

# Blocks whose Euclidean norm falls below this during within-block descent
# are snapped to exactly zero: the step-size denominator 1 + lam*w/||b_l||
# degenerates at the penalty's non-differentiable point.
BLOCK_COLLAPSE_NORM = 1e-12


@njit(cache=True, nogil=True)
def _refresh_residual(X, z, b, r):
    n, p = X.shape
    for i in range(n):
        r[i] = z[i]
    for j in range(p):
        bj = b[j]
        if bj != 0.0:
            for i in range(n):
                r[i] -= X[i, j] * bj


@njit(cache=True, nogil=True)
def group_bcd(X, z, offsets, sizes, lam_w, group_ids, b, r,
              tol, max_outer, max_inner, recompute_every):
    """Block coordinate descent for group-penalised least squares.

    Minimises 0.5*||z - X b||^2 + sum_l lam_w[l] * ||b_l||_2 over the
    groups listed in ``group_ids`` (other blocks of ``b`` are held
    fixed).  For each group in turn the block is zeroed when the partial
    residual correlation norm is at most lam_w[l]; otherwise coordinates
    are updated cyclically via

        b_j <- (X_j' r + b_j) / (1 + lam_w[l] / ||b_l||_2)

    with ||b_l||_2 evaluated at the current iterate.  ``b`` and ``r``
    are updated in place; ``r`` must equal ``z - X b`` on entry.

    Returns (sweeps_used, converged).
    """
    n = X.shape[0]
    max_size = 0
    for gi in range(group_ids.shape[0]):
        s = sizes[group_ids[gi]]
        if s > max_size:
            max_size = s
    v = np.empty(max_size, dtype=np.float64)
    b_prev = np.empty(max_size, dtype=np.float64)
    sweeps = 0
    converged = False
    for outer in range(max_outer):
        sweeps = outer + 1
        sweep_delta = 0.0
        for gi in range(group_ids.shape[0]):
            l = group_ids[gi]
            o = offsets[l]
            s = sizes[l]
            # save the block and fold its contribution back into r, so r
            # becomes the partial residual excluding this group
            block_nonzero = False
            for k in range(s):
                bj = b[o + k]
                b_prev[k] = bj
                if bj != 0.0:
                    block_nonzero = True
                    for i in range(n):
                        r[i] += X[i, o + k] * bj
            # group correlation with the partial residual
            vnorm2 = 0.0
            for k in range(s):
                acc = 0.0
                for i in range(n):
                    acc += X[i, o + k] * r[i]
                v[k] = acc
                vnorm2 += acc * acc
            vnorm = np.sqrt(vnorm2)
            if vnorm <= lam_w[l]:
                for k in range(s):
                    b[o + k] = 0.0
                    d = abs(b_prev[k])
                    if d > sweep_delta:
                        sweep_delta = d
                continue
            if not block_nonzero:
                # enter from zero along the group-thresholded gradient;
                # exact for an orthonormal block, a warm start otherwise
                scale = 1.0 - lam_w[l] / vnorm
                for k in range(s):
                    b[o + k] = scale * v[k]
            # subtract the (possibly re-initialised) block from r again
            for k in range(s):
                bj = b[o + k]
                if bj != 0.0:
                    for i in range(n):
                        r[i] -= X[i, o + k] * bj
            # cyclic coordinate descent within the block
            collapsed = False
            for _inner in range(max_inner):
                nb2 = 0.0
                for k in range(s):
                    nb2 += b[o + k] * b[o + k]
                inner_delta = 0.0
                for k in range(s):
                    col = o + k
                    bold = b[col]
                    nb = np.sqrt(nb2)
                    if nb < BLOCK_COLLAPSE_NORM:
                        collapsed = True
                        break
                    c = bold
                    for i in range(n):
                        c += X[i, col] * r[i]
                    bnew = c / (1.0 + lam_w[l] / nb)
                    diff = bnew - bold
                    if diff != 0.0:
                        for i in range(n):
                            r[i] -= X[i, col] * diff
                        nb2 += bnew * bnew - bold * bold
                        if nb2 < 0.0:
                            nb2 = 0.0
                        b[col] = bnew
                    ad = abs(diff)
                    if ad > inner_delta:
                        inner_delta = ad
                if collapsed or inner_delta < tol:
                    break
            # collapse guard: snap a vanishing block to exact zero
            if not collapsed:
                nb2 = 0.0
                for k in range(s):
                    nb2 += b[o + k] * b[o + k]
                collapsed = np.sqrt(nb2) < BLOCK_COLLAPSE_NORM
            if collapsed:
                for k in range(s):
                    bj = b[o + k]
                    if bj != 0.0:
                        for i in range(n):
                            r[i] += X[i, o + k] * bj
                    b[o + k] = 0.0
            for k in range(s):
                d = abs(b[o + k] - b_prev[k])
                if d > sweep_delta:
                    sweep_delta = d
        if recompute_every > 0 and (outer + 1) % recompute_every == 0:
            _refresh_residual(X, z, b, r)
        if sweep_delta < tol:
            converged = True
            break
    return sweeps, converged


@njit(cache=True, nogil=True)
def lasso_cd(X, z, lam, b, r, tol, max_iter, recompute_every):
    """Cyclic coordinate descent for the lasso with unit-norm columns.

    Minimises 0.5*||z - X b||^2 + lam*||b||_1 with soft-threshold
    updates.  ``b`` and ``r`` are updated in place; ``r`` must equal
    ``z - X b`` on entry.  Returns (sweeps_used, converged).
    """
    n, p = X.shape
    sweeps = 0
    converged = False
    for it in range(max_iter):
        sweeps = it + 1
        delta = 0.0
        for j in range(p):
            bold = b[j]
            c = bold
            for i in range(n):
                c += X[i, j] * r[i]
            if c > lam:
                bnew = c - lam
            elif c < -lam:
                bnew = c + lam
            else:
                bnew = 0.0
            diff = bnew - bold
            if diff != 0.0:
                for i in range(n):
                    r[i] -= X[i, j] * diff
                b[j] = bnew
            ad = abs(diff)
            if ad > delta:
                delta = ad
        if recompute_every > 0 and (it + 1) % recompute_every == 0:
            _refresh_residual(X, z, b, r)
        if delta < tol:
            converged = True
            break
    return sweeps, converged
