import io

import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mimofl.cvx import (
    ConvexExpr, InfeasibleProblem, SpecBuilder, SubproblemSpec, check_kkt, phase1, solve,
)


def test_active_bound():
    obj = ConvexExpr().add_quad({0: 1.0})
    spec = SubproblemSpec(1, obj, [ConvexExpr({0: -1.0}, const=1.0)])
    sol = solve(spec, [3.0])
    assert sol.x[0] == pytest.approx(1.0, abs=1e-6)
    assert sol.objective_value == pytest.approx(1.0, abs=1e-6 * 2)  # tol * (1 + |f|)


def test_recip_plus_linear():
    obj = ConvexExpr({0: 1.0}).add_recip({0: 1.0})
    spec = SubproblemSpec(1, obj, lo=[0.0])
    sol = solve(spec, [5.0])
    assert sol.x[0] == pytest.approx(1.0, abs=1e-5)
    assert sol.objective_value == pytest.approx(2.0, abs=1e-8)


def test_equality_and_box():
    # min (x0-3)^2 + (x1+1)^2  s.t.  x0 + x1 = 1, 0 <= x <= 5
    obj = ConvexExpr().add_quad({0: 1.0}, -3.0).add_quad({1: 1.0}, 1.0)
    spec = SubproblemSpec(2, obj, eq_A=[[1.0, 1.0]], eq_b=[1.0], lo=[0, 0], hi=[5, 5])
    sol = solve(spec)
    assert sol.x == pytest.approx([1.0, 0.0], abs=1e-5)
    assert sol.max_eq_residual < 1e-9


# ---------------------------------------------------------------------------
# random specs: one generator, two oracles (grid search, cvxpy)


def random_spec(rng, n):
    """Strictly convex objective over a box with one quadratic, one 1/x and one -log row."""
    lo, hi = np.zeros(n), np.full(n, 2.0)
    obj = ConvexExpr({i: rng.normal() for i in range(n)})
    for i in range(n):
        obj.add_quad({i: 1.0}, -rng.uniform(0, 2), rng.uniform(0.2, 2))
    obj.add_recip({i: rng.uniform(0.5, 1.5) for i in range(n)}, 0.2, rng.uniform(0.1, 1))
    g1 = ConvexExpr(const=-rng.uniform(0.5, 2)).add_quad({i: rng.normal() for i in range(n)})
    g2 = ConvexExpr({i: rng.normal() * 0.3 for i in range(n)}, const=-1.0)
    g2.add_neglog({i: rng.uniform(0.5, 1.5) for i in range(n)}, 0.1, 0.5)
    return SubproblemSpec(n, obj, [g1, g2], lo=lo, hi=hi)


def to_cvxpy(spec):
    x = cp.Variable(spec.n_vars)

    def expr(e):
        out = e.const + sum(c * x[i] for i, c in e.affine.items())
        lin = lambda m, d: sum(c * x[i] for i, c in m.items()) + d
        for m, d, w in e.quads:
            out = out + w * cp.square(lin(m, d))
        for m, d, w in e.recips:
            out = out + w * cp.inv_pos(lin(m, d))
        for m, d, w in e.neglogs:
            out = out - w * cp.log(lin(m, d))
        return out

    cons = [x >= spec.lo, x <= spec.hi]
    cons += [expr(e) <= 0 for e in spec.ineqs.to_exprs()]
    prob = cp.Problem(cp.Minimize(expr(spec.objective.to_exprs()[0])), cons)
    return prob, x


def grid_min(spec, pts=201, rounds=3):
    """Nested grid search over the box of a 2-variable spec."""
    lo, hi = spec.lo.copy(), spec.hi.copy()
    best = (np.inf, None)
    for _ in range(rounds):
        g0, g1 = np.meshgrid(np.linspace(lo[0], hi[0], pts), np.linspace(lo[1], hi[1], pts))
        X = np.column_stack([g0.ravel(), g1.ravel()])
        f = spec.objective.value(X.T.copy()) if False else np.array([spec.objective_value(p) for p in X])
        g = np.array([np.max(spec.ineqs.value(p)) for p in X])
        f[~(g <= 0)] = np.inf
        k = int(np.argmin(f))
        best = min(best, (f[k], X[k]), key=lambda b: b[0])
        h = (hi - lo) / (pts - 1)
        lo = np.maximum(spec.lo, best[1] - 3 * h)
        hi = np.minimum(spec.hi, best[1] + 3 * h)
    return best


@pytest.mark.parametrize("seed", range(4))
def test_random_spec_against_grid(seed):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, 2)
    try:
        sol = solve(spec)
    except InfeasibleProblem:
        pytest.skip("random instance infeasible")
    f_grid, _ = grid_min(spec, pts=61)
    assert sol.objective_value == pytest.approx(f_grid, abs=1e-4)
    assert sol.objective_value <= f_grid + 1e-9


@pytest.mark.parametrize("seed", range(6))
def test_random_spec_against_cvxpy(seed):
    rng = np.random.default_rng(100 + seed)
    spec = random_spec(rng, 4)
    prob, _ = to_cvxpy(spec)
    prob.solve(solver=cp.CLARABEL)
    if prob.status == "infeasible":
        with pytest.raises(InfeasibleProblem):
            solve(spec)
        return
    sol = solve(spec)
    assert sol.objective_value == pytest.approx(prob.value, abs=1e-5 * (1 + abs(prob.value)))
    assert sol.max_ineq_residual <= 1e-6
    assert check_kkt(spec, sol).ok(1e-5)


# ---------------------------------------------------------------------------
# phase 1


def test_phase1_no_inequalities_gives_box_center():
    spec = SubproblemSpec(2, ConvexExpr(), lo=[0, -1], hi=[2, 3])
    ph = phase1(spec)
    assert ph.feasible and ph.x == pytest.approx([1.0, 1.0])


def test_phase1_contradiction():
    g1 = ConvexExpr({0: 1.0})                  # x <= 0
    g2 = ConvexExpr({0: -1.0}, const=1.0)      # x >= 1
    spec = SubproblemSpec(1, ConvexExpr().add_quad({0: 1.0}), [g1, g2])
    assert not phase1(spec).feasible
    with pytest.raises(InfeasibleProblem):
        solve(spec)


def test_phase1_finds_interior_point():
    rng = np.random.default_rng(7)
    spec = random_spec(rng, 3)
    ph = phase1(spec, np.full(3, 2.0))
    assert ph.feasible
    assert np.all(spec.ineqs.value(ph.x) < 0)


def test_phase1_session_subproblem(paper_cfg, drop1):
    from mimofl.sca import PenaltyConfig, build_sb_subproblem, initial_point

    spec = build_sb_subproblem(drop1, paper_cfg, PenaltyConfig(), initial_point(drop1, paper_cfg, "sb"))
    ph = phase1(spec)
    assert ph.feasible
    ineq, eq = spec.residuals(ph.x)
    assert ineq == 0.0 and eq <= 1e-8
    assert np.all(spec.ineqs.value(ph.x) < 0)


# ---------------------------------------------------------------------------
# KKT report


def test_kkt_analytic_qp():
    # min (x-2)^2  s.t. x - 1 <= 0  ->  x = 1, lambda = 2
    spec = SubproblemSpec(1, ConvexExpr().add_quad({0: 1.0}, -2.0), [ConvexExpr({0: 1.0}, const=-1.0)])
    mult = {"ineq": np.array([2.0]), "lo": np.zeros(1), "hi": np.zeros(1), "eq": np.zeros(0)}

    class Sol:
        x = np.array([1.0])
        multipliers = mult

    assert check_kkt(spec, Sol()).residual < 1e-8
    Sol.x = np.array([1.05])
    assert check_kkt(spec, Sol()).residual > 1e-3
    # multiplier estimation path
    assert check_kkt(spec, np.array([1.0])).residual < 1e-8


def test_solution_passes_kkt():
    rng = np.random.default_rng(11)
    spec = random_spec(rng, 3)
    sol = solve(spec)
    rep = check_kkt(spec, sol)
    assert rep.residual == pytest.approx(sol.kkt_residual)
    assert rep.ok(1e-6)
    ineq, eq = spec.residuals(sol.x)
    assert (ineq, eq) == (sol.max_ineq_residual, sol.max_eq_residual)


# ---------------------------------------------------------------------------
# invariants


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_barrier_descent_and_start_independence(seed):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, 3)
    ph = phase1(spec)
    if not ph.feasible:
        return
    s1 = solve(spec, ph.x)
    # within one barrier weight the merit never goes up
    for (t0, _, m0, *_), (t1, _, m1, *_) in zip(s1.history, s1.history[1:]):
        if t0 == t1:
            assert m1 <= m0 + 1e-12 * max(1.0, abs(m0))
    other = spec.lo + rng.uniform(0.05, 0.95, 3) * (spec.hi - spec.lo)
    s2 = solve(spec, other)
    assert s2.objective_value == pytest.approx(s1.objective_value, abs=1e-6 * (1 + abs(s1.objective_value)))
    assert np.allclose(s1.x, s2.x, atol=1e-3)


def test_builder_and_dump():
    b = SpecBuilder()
    x = b.var("x", 2, lo=0.0)
    y = b.var("y", (), hi=4.0)
    b.ineq("cap", 1, lin=[(x[None, :], 1.0)], const=-1.0)
    b.eq("tie", 1, [(y, 1.0), (x[0], -1.0)], 0.5)
    b.objective(lin=[(y, 1.0)], terms=[("quad", 1.0, [(x[1], 1.0)], -0.3)])
    spec = b.build()
    sol = solve(spec)
    # y = x0 + 0.5 and the objective pushes x0 -> 0, x1 -> 0.3
    assert sol.x == pytest.approx([0.0, 0.3, 0.5], abs=1e-5)
    buf = io.StringIO()
    spec.dump(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "n_vars 3"
    assert "np." not in buf.getvalue()
    assert any(line.startswith("quad ") for line in lines)
    assert any(line.startswith("eq 0 rhs=0.5") for line in lines)


def test_convex_expr_rejects_negative_weight():
    with pytest.raises(ValueError):
        ConvexExpr().add_recip({0: 1.0}, 0.0, -1.0)
