import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hapsits import oracles
from hapsits.allocsolver import (BandwidthProblem, SolverError, allocate_bandwidth, allocate_computing,
                                 computing_multiplier, g, g_prime, g_second, kkt_residuals, optimal_allocation,
                                 solve_b_root, z_second)
from hapsits.config import ScenarioConfig, SolverConfig
from hapsits.delaymodel import equal_allocation, evaluate

pos = st.floats(1e-4, 10.0)
snr = st.floats(1e-1, 1e5)


def test_g_prime_example():
    fd = oracles.central_difference(lambda b: float(g(b, 1.0, 1.0)), 1.0)
    assert float(g_prime(1.0, 1.0, 1.0)) == pytest.approx(-0.2786, abs=1e-4)
    assert float(g_prime(1.0, 1.0, 1.0)) == pytest.approx(fd, rel=1e-7)


def test_g_prime_rejects_nonpositive():
    with pytest.raises(ValueError):
        g_prime(0.0, 1.0, 1.0)


@settings(max_examples=300, deadline=None)
@given(b=st.floats(1e-4, 1.0), O=pos, H=snr)
def test_g_prime_sign_and_linearity(b, O, H):
    gp = float(g_prime(b, O, H))
    assert gp < 0
    assert float(g_prime(b, 2 * O, H)) == pytest.approx(2 * gp, rel=1e-12)
    assert float(g_second(b, O, H)) > 0


def test_g_second_matches_finite_difference():
    for b, O, H in [(0.3, 0.2, 50.0), (0.9, 1.0, 1.0), (0.05, 0.01, 1e4)]:
        fd = oracles.central_difference(lambda v: float(g_prime(v, O, H)), b, 1e-6)
        assert float(g_second(b, O, H)) == pytest.approx(fd, rel=1e-5)
    assert float(z_second(0.5, 2.0)) == pytest.approx(32.0)


@settings(max_examples=200, deadline=None)
@given(eta=st.floats(1e-3, 50.0), O=st.floats(1e-3, 1.0), H=st.floats(1.0, 1e4))
def test_root_residual_and_monotone(eta, O, H):
    b = solve_b_root(eta, O, H, tol=1e-8)
    if b < 1.0:
        assert abs(float(g_prime(b, O, H)) + eta) <= 1e-8
        assert solve_b_root(eta * 1.5, O, H) < b
    else:
        assert float(g_prime(1.0, O, H)) + eta <= 0


def test_root_identical_members():
    assert solve_b_root(2.0, 0.1, 30.0) == solve_b_root(2.0, 0.1, 30.0)


def test_root_bracket_failure():
    with pytest.raises(SolverError):
        solve_b_root(1e300, 1.0, 1.0, b_floor=1e-3)
    with pytest.raises(ValueError):
        solve_b_root(0.0, 1.0, 1.0)


def test_singleton_and_symmetric():
    assert allocate_bandwidth(BandwidthProblem([0.1], [10.0])).b.tolist() == [1.0]
    sol = allocate_bandwidth(BandwidthProblem([0.1, 0.1], [10.0, 10.0]))
    assert sol.b == pytest.approx([0.5, 0.5], abs=1e-7)
    assert allocate_bandwidth(BandwidthProblem([], [])).b.size == 0


def test_bad_problem():
    with pytest.raises(ValueError):
        BandwidthProblem([0.1, -1.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        BandwidthProblem([0.1], [1.0, 2.0])


def random_problem(rng, n):
    return BandwidthProblem(10 ** rng.uniform(-3, 0, n), 10 ** rng.uniform(0, 4, n))


def test_matches_pgd_oracle(rng):
    probs = [random_problem(rng, n) for n in (2, 3, 5, 8)]
    for p in probs:
        sol = allocate_bandwidth(p)
        ref = oracles.pgd_bandwidth(p.O, p.H)[0]
        ref_val = float(oracles.bandwidth_objective(ref, p.O, p.H))
        assert sol.objective <= ref_val * (1 + 1e-4)
        assert abs(sol.b.sum() - 1.0) <= 1e-6
        assert sol.iterations <= 33


def test_kkt_residuals(rng):
    p = random_problem(rng, 5)
    sol = allocate_bandwidth(p)
    U = rng.uniform(0.01, 1.0, 4)
    f = allocate_computing(U)
    rep = kkt_residuals(p, sol.b, f, sol.eta, computing_multiplier(U), U)
    assert rep.max_residual() <= 1e-6
    eq = kkt_residuals(p, np.full(5, 0.2), eta=sol.eta)
    assert eq.bw_stationarity > 1e-3


def test_permutation_equivariance(rng):
    p = random_problem(rng, 6)
    perm = rng.permutation(6)
    a = allocate_bandwidth(p).b
    b = allocate_bandwidth(BandwidthProblem(p.O[perm], p.H[perm])).b
    assert b == pytest.approx(a[perm], abs=1e-7)


def test_refinement_non_increasing(rng):
    p = random_problem(rng, 4)
    vals = [allocate_bandwidth(BandwidthProblem(p.O, p.H, delta=d)).objective for d in (1e-2, 1e-4, 1e-6, 1e-8)]
    for coarse, fine in zip(vals, vals[1:]):
        assert fine <= coarse * (1 + 1e-9)


def test_eta_max_doubling(caplog):
    # tiny payloads make the optimal multiplier small, large ones push it past eta_max
    p = BandwidthProblem([50.0, 60.0], [1.0, 2.0], eta_max=1.0)
    with caplog.at_level(logging.WARNING):
        sol = allocate_bandwidth(p)
    assert sol.eta_max > 1.0 and "eta_max" in caplog.text
    assert abs(sol.b.sum() - 1.0) <= 1e-6
    with pytest.raises(SolverError):
        allocate_bandwidth(BandwidthProblem([50.0, 60.0], [1.0, 2.0], eta_max=1e-6, max_eta_doublings=2))


def test_trace_rows(rng):
    sol = allocate_bandwidth(random_problem(rng, 3), trace=True)
    assert len(sol.trace) == sol.iterations
    assert [r["iteration"] for r in sol.trace] == list(range(1, sol.iterations + 1))
    assert abs(sol.trace[-1]["sum_b"] - 1.0) < 1e-6


def test_computing_examples():
    assert allocate_computing([1.0, 4.0]) == pytest.approx([1 / 3, 2 / 3])
    assert allocate_computing([2.0, 2.0, 2.0]) == pytest.approx([1 / 3] * 3)
    assert computing_multiplier([1.0, 4.0]) == pytest.approx(9.0)
    f = allocate_computing([1.0, 4.0])
    mus = np.array([1.0, 4.0]) / f ** 2
    assert mus[0] == pytest.approx(mus[1])


@settings(max_examples=100, deadline=None)
@given(U=st.lists(st.floats(1e-3, 10.0), min_size=1, max_size=10))
def test_computing_sum_and_dominance(U):
    f = allocate_computing(U)
    assert abs(f.sum() - 1.0) <= 1e-12
    rand = oracles.random_feasible(np.random.default_rng(0), len(U), 200)
    best = float(oracles.computing_objective(f, U))
    assert np.all(oracles.computing_objective(rand, U) >= best * (1 - 1e-12))


def test_optimal_allocation_beats_equal(slot):
    cfg = slot.cfg
    for x in ([1, 1, 2, 2, 0, 1], [2] * 6, [1] * 6, [0] * 6):
        grp = slot.groups(x)
        opt = optimal_allocation(grp, cfg.solver)
        opt.check_feasible(tol=1e-6)
        d_opt = evaluate(grp, opt, slot.tasks, slot.cavs, cfg).total
        d_eq = evaluate(grp, equal_allocation(grp), slot.tasks, slot.cavs, cfg).total
        assert d_opt <= d_eq * (1 + 1e-9)


def test_optimal_allocation_modes(slot):
    grp = slot.groups([1, 1, 2, 2, 1, 2])
    eq = equal_allocation(grp)
    bw_only = optimal_allocation(grp, SolverConfig(), bandwidth="opt", computing="equal")
    assert bw_only.f == eq.f and bw_only.b != eq.b
    comp_only = optimal_allocation(grp, SolverConfig(), bandwidth="equal", computing="opt")
    assert comp_only.b == eq.b and comp_only.f != eq.f
    with pytest.raises(ValueError):
        optimal_allocation(grp, SolverConfig(), bandwidth="best")
