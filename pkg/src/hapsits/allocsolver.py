"""Optimal bandwidth and computing allocation for a fixed set of decisions.

Bandwidth: each communication group solves

    min  sum_i g_i(b_i),  g_i(b) = O_i / (b * log2(1 + H_i / b))
    s.t. sum_i b_i <= 1,  b_i > 0

by bisection on the group multiplier eta; for a trial eta every member's
ratio is the unique root of g_i'(b) = -eta.

Computing: each server splits its capacity in proportion to sqrt(U_i),
which is the exact minimiser of sum_i U_i / f_i on the simplex.
"""
from __future__ import annotations

import logging
import math
import sys
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from numba import njit

from .config import SolverConfig
from .delaymodel import Allocation, equal_allocation
from .grouping import Groups

log = logging.getLogger(__name__)

LN2 = math.log(2.0)


class SolverError(RuntimeError):
    pass


# --- objective pieces (vectorised; accept scalars or arrays) -------------------

def _phi(x):
    """(1+x) ln(1+x) - x, with a series branch where cancellation bites."""
    x = np.asarray(x, dtype=float)
    small = x < 1e-4
    xs = np.where(small, x, 0.0)
    series = xs ** 2 / 2 - xs ** 3 / 6 + xs ** 4 / 12
    xl = np.where(small, 1.0, x)
    direct = (1 + xl) * np.log1p(xl) - xl
    return np.where(small, series, direct)


def w(b, H):
    """Spectral efficiency times ratio: b * log2(1 + H / b)."""
    b = np.asarray(b, dtype=float)
    return b * np.log1p(H / b) / LN2


def g(b, O, H):
    """Transfer delay of one member as a function of its bandwidth ratio."""
    return O / w(b, H)


def g_prime(b, O, H):
    b = np.asarray(b, dtype=float)
    if np.any(b <= 0):
        raise ValueError("bandwidth ratio must be positive")
    x = H / b
    L = np.log1p(x)
    return -LN2 * O * _phi(x) / (b ** 2 * (1 + x) * L ** 2)


def w_second(b, H):
    b = np.asarray(b, dtype=float)
    return -H ** 2 / (LN2 * b * (b + H) ** 2)


def g_second(b, O, H):
    b = np.asarray(b, dtype=float)
    x = H / b
    ww = w(b, H)
    w1 = _phi(x) / ((1 + x) * LN2)
    return O * (2 * w1 ** 2 - w_second(b, H) * ww) / ww ** 3


def z(f, U):
    return U / np.asarray(f, dtype=float)


def z_second(f, U):
    return 2 * U / np.asarray(f, dtype=float) ** 3


# --- compiled scalar kernels -------------------------------------------------------

_EPS = sys.float_info.epsilon
_OK, _NO_BRACKET, _ETA_TOO_SMALL = 0, 1, 2
_MAX_TRACE = 256


@njit(cache=True)
def _slope_and_curvature(b, O, H):
    x = H / b
    L = math.log1p(x)
    if x < 1e-4:
        phi = x * x / 2 - x ** 3 / 6 + x ** 4 / 12
    else:
        phi = (1 + x) * L - x
    gp = -LN2 * O * phi / (b * b * (1 + x) * L * L)
    ww = b * L / LN2
    w1 = phi / ((1 + x) * LN2)
    w2 = -x * x / (LN2 * b * (1 + x) ** 2)
    gpp = O * (2 * w1 * w1 - w2 * ww) / ww ** 3
    return gp, gpp


@njit(cache=True)
def _root(eta, O, H, tol, b_floor, lo, hi, guess):
    """Root of g'(b) + eta on (0, 1], or 1 when g'(1) + eta <= 0.

    ``lo``/``hi`` are bracket hints; each is checked and widened when wrong.
    The residual tolerance shrinks with eta below 1: small multipliers mean
    flat slopes, where an absolute residual would leave b visibly off.
    Returns (b, status).
    """
    if 0.0 < lo < guess < hi < 1.0:
        # Hints from the outer bisection are roots at neighbouring multipliers,
        # so the root almost surely lies between them; verify by the residual.
        b, a, c = guess, lo, hi
        for _ in range(60):
            gp, gpp = _slope_and_curvature(b, O, H)
            h = gp + eta
            if abs(h) <= tol * min(1.0, eta):
                return b, _OK
            if h < 0:
                a = b
            else:
                c = b
            if c - a <= 4 * _EPS * c:
                break
            nb = b - h / gpp
            b = nb if a < nb < c else 0.5 * (a + c)
    gp1, _ = _slope_and_curvature(1.0, O, H)
    if gp1 + eta <= 0:
        return 1.0, _OK
    if not (0.0 < hi < 1.0) or _slope_and_curvature(hi, O, H)[0] + eta <= 0:
        hi = 1.0
    if not (0.0 < lo < hi):
        lo = 0.5 * hi
    while True:
        gp, _ = _slope_and_curvature(lo, O, H)
        if gp + eta < 0:
            break
        hi = lo
        lo *= 0.5
        if lo < b_floor:
            return lo, _NO_BRACKET
    b = guess if lo < guess < hi else 0.5 * (lo + hi)
    for _ in range(200):
        gp, gpp = _slope_and_curvature(b, O, H)
        h = gp + eta
        if abs(h) <= tol * min(1.0, eta):
            return b, _OK
        if h < 0:
            lo = b
        else:
            hi = b
        if hi - lo <= 4 * _EPS * hi:
            return b, _OK
        nb = b - h / gpp
        b = nb if lo < nb < hi else 0.5 * (lo + hi)
    return b, _OK


@njit(cache=True)
def _roots_into(out, eta, O, H, tol, b_floor, lo, hi, scale):
    """Fill ``out`` with every member's root; ``lo``/``hi`` are per-member bracket hints.

    The starting point is ``lo * scale`` when that stays inside the hints:
    at high SNR the root grows roughly like eta ** -1/2, so scaling the root
    found at a larger multiplier lands close.
    """
    for i in range(O.size):
        guess = lo[i] * scale
        if not lo[i] < guess < hi[i]:
            guess = 0.5 * (lo[i] + hi[i])
        b, status = _root(eta, O[i], H[i], tol, b_floor, lo[i], hi[i], guess)
        if status != _OK:
            return status
        out[i] = b
    return _OK


@njit(cache=True)
def _group_objective(b, O, H):
    total = 0.0
    for i in range(b.size):
        total += O[i] * LN2 / (b[i] * math.log1p(H[i] / b[i]))
    return total


@njit(cache=True)
def _bisect(O, H, eta_max, delta, tol, b_floor, trace):
    """Outer bisection on eta over (0, eta_max].

    Returns (b, its eta, iterations, status, trace
    table). The trace has one row per iteration: eta, sum of b, objective.
    """
    n = O.size
    rows = np.zeros((_MAX_TRACE, 3))
    ones = np.ones(n)
    b_hi = np.empty(n)
    status = _roots_into(b_hi, eta_max, O, H, tol, b_floor, np.zeros(n), ones, 1.0)
    if status != _OK:
        return b_hi, eta_max, 0, status, rows[:0]
    if b_hi.sum() > 1.0:
        return b_hi, eta_max, 0, _ETA_TOO_SMALL, rows[:0]
    b_lo = ones.copy()
    b = np.empty(n)
    lo, hi = 0.0, eta_max
    q = 0
    while abs(hi - lo) >= delta:
        eta = 0.5 * (hi + lo)
        status = _roots_into(b, eta, O, H, tol, b_floor, b_hi, b_lo, math.sqrt(hi / eta))
        if status != _OK:
            return b, eta, q, status, rows[:0]
        total = b.sum()
        if trace and q < _MAX_TRACE:
            rows[q, 0] = eta
            rows[q, 1] = total
            rows[q, 2] = _group_objective(b, O, H)
        q += 1
        if total > 1.0:
            lo = eta
            b_lo[:] = b
        else:
            hi = eta
            b_hi[:] = b
    # The bracket on eta is absolute, so when the multiplier is small the sum
    # at its upper end can still sit a few ppm below 1. One secant step across
    # the final bracket fixes that: the sum is convex and decreasing in eta,
    # so the chord's crossing has sum(b) <= 1 up to the inner root tolerance;
    # any such overshoot is divided out. The polished point is kept only when
    # it is closer to a full allocation than the bracket end.
    if lo > 0.0:
        s_lo, s_hi = b_lo.sum(), b_hi.sum()
        if s_lo > 1.0 > s_hi:
            eta = hi - (1.0 - s_hi) * (hi - lo) / (s_lo - s_hi)
            if lo < eta < hi:
                status = _roots_into(b, eta, O, H, tol, b_floor, b_hi, b_lo, math.sqrt(hi / eta))
                total = b.sum()
                if status == _OK and abs(total - 1.0) < 1.0 - s_hi:
                    if total > 1.0:
                        b /= total
                    return b, eta, q, _OK, rows[:min(q, _MAX_TRACE)]
    return b_hi, hi, q, _OK, rows[:min(q, _MAX_TRACE)]


def solve_b_root(eta: float, O: float, H: float, tol: float = 1e-8, b_floor: float = 1e-12,
                 guess: Optional[float] = None) -> float:
    """Ratio b with g'(b) = -eta, capped at 1.

    The bracket [lo, 1] is widened downwards by halving ``lo`` until it holds
    the root; failure to bracket above ``b_floor`` raises :class:`SolverError`.
    Inside the bracket, Newton steps are taken when they land strictly inside
    it and bisection otherwise.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    g0 = -1.0 if guess is None else min(max(float(guess), b_floor), 1.0)
    b, status = _root(float(eta), float(O), float(H), float(tol), float(b_floor), 0.5 * g0, 1.0, g0)
    if status != _OK:
        raise SolverError(f"cannot bracket root above b_floor={b_floor:g} for eta={eta:g}")
    return b


@dataclass
class BandwidthProblem:
    O: Sequence[float]
    H: Sequence[float]
    eta_max: float = 50.0
    delta: float = 1e-8
    inner_tol: float = 1e-8
    b_floor: float = 1e-12
    max_eta_doublings: int = 10

    def __post_init__(self) -> None:
        self.O = np.asarray(self.O, dtype=float)
        self.H = np.asarray(self.H, dtype=float)
        if self.O.shape != self.H.shape or self.O.ndim != 1:
            raise ValueError("O and H must be equal-length vectors")
        if np.any(self.O <= 0) or np.any(self.H <= 0):
            raise ValueError("O and H must be strictly positive")
        if min(self.eta_max, self.delta, self.inner_tol, self.b_floor) <= 0:
            raise ValueError("solver parameters must be positive")

    @classmethod
    def from_config(cls, O, H, solver: SolverConfig) -> "BandwidthProblem":
        return cls(O, H, solver.eta_max, solver.delta, solver.inner_tol, solver.b_floor,
                   solver.max_eta_doublings)

    def objective(self, b) -> float:
        return float(np.sum(g(np.asarray(b, dtype=float), self.O, self.H)))


@dataclass
class BandwidthSolution:
    b: np.ndarray
    eta: float
    iterations: int
    eta_max: float
    objective: float
    trace: List[Dict[str, float]] = field(default_factory=list)


def allocate_bandwidth(problem: BandwidthProblem, trace: bool = False) -> BandwidthSolution:
    """Bisection on the group multiplier until the bracket is narrower than delta.

    The returned ratios are the roots at the upper end of the final bracket,
    which are feasible (sum <= 1), unless one secant step across that bracket
    gets closer to a full allocation (see ``_bisect``). Member roots at the two
    bracket ends bound the roots at the midpoint, which keeps the inner solves
    short.
    """
    p = problem
    n = len(p.O)
    if n == 0:
        return BandwidthSolution(np.zeros(0), 0.0, 0, p.eta_max, 0.0)
    if n == 1:
        b = np.ones(1)
        eta = -float(g_prime(1.0, p.O[0], p.H[0]))
        return BandwidthSolution(b, eta, 0, p.eta_max, p.objective(b))

    b, eta, q, eta_max, table = _solve_group(p.O, p.H, float(p.eta_max), float(p.delta), float(p.inner_tol),
                                             float(p.b_floor), p.max_eta_doublings, trace)
    return BandwidthSolution(b, eta, q, eta_max, float(_group_objective(b, p.O, p.H)), table)


def _solve_group(O: np.ndarray, H: np.ndarray, eta_max: float, delta: float, tol: float, b_floor: float,
                 max_doublings: int, trace: bool = False):
    """Run the bisection kernel, doubling ``eta_max`` while it fails to bracket the multiplier."""
    doublings = 0
    while True:
        b, eta, q, status, rows = _bisect(O, H, eta_max, delta, tol, b_floor, trace)
        if status == _NO_BRACKET:
            raise SolverError(f"cannot bracket a member root above b_floor={b_floor:g}")
        if status == _OK:
            break
        if doublings >= max_doublings:
            raise SolverError(f"sum of ratios still exceeds 1 at eta_max={eta_max:g}")
        eta_max *= 2.0
        doublings += 1
        log.warning("bandwidth bisection: raising eta_max to %g", eta_max)
    table = [{"iteration": k + 1, "eta": float(r[0]), "sum_b": float(r[1]), "objective": float(r[2])}
             for k, r in enumerate(rows)] if trace else []
    return b, float(eta), int(q), eta_max, table


def warm_up() -> None:
    """Load or compile the kernels now so the first timed solve does not pay for it."""
    allocate_bandwidth(BandwidthProblem([1e-2, 2e-2], [10.0, 20.0]))


def allocate_computing(U: Sequence[float]) -> np.ndarray:
    """Ratios proportional to sqrt(U)."""
    r = np.sqrt(np.asarray(U, dtype=float))
    if r.size == 0:
        return r
    if np.any(r <= 0):
        raise ValueError("U must be strictly positive")
    return r / r.sum()


def computing_multiplier(U: Sequence[float]) -> float:
    """Server multiplier at the optimum, (sum sqrt U)^2."""
    return float(np.sum(np.sqrt(np.asarray(U, dtype=float)))) ** 2


@dataclass
class KKTReport:
    bw_stationarity: float
    bw_slackness: float
    bw_primal_gap: float
    comp_stationarity: float
    comp_slackness: float
    comp_primal_gap: float

    def max_residual(self) -> float:
        return max(self.bw_stationarity, self.bw_slackness, self.bw_primal_gap,
                   self.comp_stationarity, self.comp_slackness, self.comp_primal_gap)


def kkt_residuals(problem: Optional[BandwidthProblem], b, f=None, eta: float = 0.0, mu: float = 0.0,
                  U=None) -> KKTReport:
    """Residuals of the first-order system for one bandwidth group and one server group.

    Either part may be omitted (``problem=None`` or ``U=None``); its residuals are then 0.
    """
    bw = [0.0, 0.0, 0.0]
    if problem is not None and len(problem.O):
        b = np.asarray(b, dtype=float)
        bw[0] = float(np.max(np.abs(g_prime(b, problem.O, problem.H) + eta)))
        bw[1] = abs(eta * (b.sum() - 1.0))
        bw[2] = max(0.0, float(b.sum()) - 1.0)
    cp = [0.0, 0.0, 0.0]
    if U is not None and len(U):
        U = np.asarray(U, dtype=float)
        f = np.asarray(f, dtype=float)
        cp[0] = float(np.max(np.abs(-U / f ** 2 + mu)))
        cp[1] = abs(mu * (f.sum() - 1.0))
        cp[2] = max(0.0, float(f.sum()) - 1.0)
    return KKTReport(*bw, *cp)


def optimal_allocation(groups: Groups, solver: SolverConfig, bandwidth: str = "opt",
                       computing: str = "opt") -> Allocation:
    """Allocation for every group of a slot; ``bandwidth``/``computing`` are 'opt' or 'equal'."""
    for name, mode in (("bandwidth", bandwidth), ("computing", computing)):
        if mode not in ("opt", "equal"):
            raise ValueError(f"{name} allocation must be 'opt' or 'equal', got {mode!r}")
    alloc = equal_allocation(groups)
    if bandwidth == "opt":
        for k, members in groups.comm.items():
            if len(members) < 2:
                continue
            # members come from the grouping stage with positive O and H, so the
            # kernel is called directly without re-validating a BandwidthProblem
            b = _solve_group(np.array([m.O for m in members]), np.array([m.H for m in members]),
                             float(solver.eta_max), float(solver.delta), float(solver.inner_tol),
                             float(solver.b_floor), solver.max_eta_doublings)[0]
            for m, bi in zip(members, b):
                alloc.b[(m.cav_id, k)] = float(bi)
    if computing == "opt":
        for name, grp in groups.comp.items():
            if not grp.is_server or len(grp.members) < 2:
                continue
            # same rule as allocate_computing; plain floats are cheaper for a handful of members
            roots = [math.sqrt(u) for u in grp.U]
            total = sum(roots)
            for i, r in zip(grp.members, roots):
                alloc.f[(i, name)] = r / total
    return alloc
