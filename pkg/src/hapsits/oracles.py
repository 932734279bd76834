"""Reference solvers used to check the allocation module.

Deliberately independent of :mod:`hapsits.allocsolver`: objectives and
derivatives are re-derived here with plain numpy, and the methods
(projected gradient descent, pairwise grid refinement) share nothing with the
dual bisection or the square-root rule.
"""
from __future__ import annotations

import numpy as np


def bandwidth_objective(b, O, H):
    """Sum over members of O / (b log2(1 + H/b)); works row-wise on 2-D input."""
    b = np.asarray(b, dtype=float)
    return np.sum(O / (b * np.log2(1.0 + H / b)), axis=-1)


def _bandwidth_grad(b, O, H):
    # d/db of O / (b log2(1+H/b)), written from the quotient rule
    r = np.log2(1.0 + H / b)
    dr = -(H / (b * b)) / ((1.0 + H / b) * np.log(2.0))
    denom = b * r
    return -O * (r + b * dr) / denom ** 2


def project_simplex(y, total: float = 1.0):
    """Euclidean projection of each row of ``y`` onto {x >= 0, sum x = total} (sort method)."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n = y.shape[1]
    u = -np.sort(-y, axis=1)
    css = np.cumsum(u, axis=1) - total
    idx = np.arange(1, n + 1)
    cond = u - css / idx > 0
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(y.shape[0]), rho] / (rho + 1)
    return np.maximum(y - theta[:, None], 0.0)


def pgd_bandwidth(O, H, iters: int = 100_000, floor: float = 1e-9, tol: float = 1e-15):
    """Projected gradient descent on {b >= floor, sum b = 1}, row-wise over a batch.

    The step adapts per row: a trial point is accepted when it satisfies the
    Armijo sufficient-decrease test (and the step then grows by 1.5x),
    otherwise the step halves. Rows stop once an accepted move is shorter
    than ``tol``.
    """
    O = np.atleast_2d(np.asarray(O, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    m, n = O.shape
    b = np.full((m, n), 1.0 / n)
    if n == 1:
        return b
    slack = 1.0 - n * floor
    step = np.ones((m, 1))
    val = bandwidth_objective(b, O, H)
    active = np.ones(m, dtype=bool)
    for _ in range(iters):
        grad = _bandwidth_grad(b, O, H)
        trial = floor + project_simplex(b - step * grad - floor, slack)
        trial_val = bandwidth_objective(trial, O, H)
        move = trial - b
        ok = active & (trial_val <= val + 1e-4 * np.sum(grad * move, axis=1))
        b[ok], val[ok] = trial[ok], trial_val[ok]
        step[ok] *= 1.5
        step[~ok] *= 0.5
        active &= ~(ok & (np.max(np.abs(move), axis=1) < tol))
        active &= step[:, 0] > 1e-300
        if not active.any():
            break
    return b


def computing_objective(f, U):
    return np.sum(np.asarray(U, dtype=float) / np.asarray(f, dtype=float), axis=-1)


def grid_computing(U, points: int = 101, zooms: int = 8, sweeps: int = 200, tol: float = 1e-15):
    """Minimise sum U_i / f_i on the simplex by repeated pairwise grid search.

    Each pass visits every pair (i, j) and grid-searches how to split
    f_i + f_j between them, zooming the grid around the best point.
    """
    U = np.asarray(U, dtype=float)
    n = U.size
    f = np.full(n, 1.0 / n)
    if n == 1:
        return f
    prev = computing_objective(f, U)
    for _ in range(sweeps):
        for i in range(n):
            for j in range(i + 1, n):
                s = f[i] + f[j]
                lo, hi = 0.0, s
                best = f[i]
                for _z in range(zooms):
                    t = np.linspace(lo, hi, points)[1:-1] if _z == 0 else np.linspace(lo, hi, points)
                    t = t[(t > 0) & (t < s)]
                    vals = U[i] / t + U[j] / (s - t)
                    best = t[np.argmin(vals)]
                    width = (hi - lo) / (points - 1)
                    lo, hi = max(best - width, 0.0), min(best + width, s)
                f[i], f[j] = best, s - best
        cur = computing_objective(f, U)
        if prev - cur <= tol * cur:
            break
        prev = cur
    return f


def random_feasible(rng: np.random.Generator, n: int, size: int):
    """Random strictly positive allocations with sum <= 1."""
    f = rng.dirichlet(np.ones(n), size=size)
    scale = rng.uniform(0.5, 1.0, size=(size, 1))
    return f * scale


def central_difference(fun, x: float, h: float = 1e-6) -> float:
    return (fun(x + h) - fun(x - h)) / (2 * h)
