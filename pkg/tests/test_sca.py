import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq, minimize_scalar

from mimofl.models import (
    SessionSchedule, energy_sb, energy_single, rate_dl_single, rate_ul_single,
    validate_schedule_feasibility,
)
from mimofl.netgen import NetworkConfig, make_drop
from mimofl.sca import (
    PenaltyConfig, ScaTrace, binarize_and_polish, build_asyn_subproblem, build_sb_subproblem,
    build_syn_subproblem, fill_compute, initial_point, penalty_values, round_schedule,
    run_algorithm1, run_algorithm2,
)
from mimofl.sca.problems import sb_to_internal, single_to_internal


def test_penalty_config_validation():
    assert PenaltyConfig().weights == pytest.approx((0.1, 0.01, 0.01, 0.01))
    for bad in (dict(lam=-1), dict(gammas=(1, 1, 1)), dict(gammas=(1, 0, 1, 1)), dict(epsilon=0)):
        with pytest.raises(ValueError):
            PenaltyConfig(**bad)


# ---------------------------------------------------------------------------
# penalties


def test_v1_binary_and_half(paper_cfg, drop1):
    v = initial_point(drop1, paper_cfg, "sb")
    sched = SessionSchedule.from_orders(range(10), range(10))
    v.schedule = sched
    assert penalty_values(v, paper_cfg)[0] == 0.0
    v.schedule = SessionSchedule(np.full((10, 10), 0.5), sched.b)
    assert penalty_values(v, paper_cfg)[0] == pytest.approx(0.25 * 100)


def test_v2_v4_definitions(paper_cfg, drop1):
    v = initial_point(drop1, paper_cfg, "sb")
    V1, V2, V3, V4 = penalty_values(v, paper_cfg)
    aux = v.aux
    mb = 8e6
    assert V2 == pytest.approx(np.sum(aux["r_til_d"] * aux["t_til_d"] - v.s_d) / mb)
    assert V3 == pytest.approx(np.sum(aux["r_til_u"] * aux["t_til_u"] - v.s_u) / mb)
    tc = paper_cfg.cycles / v.f
    assert V4 == pytest.approx(np.sum(aux["t"] - aux["t_hat_d"].sum(1) - tc - aux["t_hat_u"].sum(1)))


# ---------------------------------------------------------------------------
# builders


def _tight(spec, z, tol=1e-9):
    x = spec.layout.pack(z)
    ineq, eq = spec.residuals(x)
    return ineq <= tol and eq <= tol * 10


def test_sb_counts_and_iterate_feasible(paper_cfg, drop1):
    v = initial_point(drop1, paper_cfg, "sb")
    spec = build_sb_subproblem(drop1, paper_cfg, PenaltyConfig(), v)
    assert spec.n_vars == 16 * 100 + 50 + 2 == spec.paper_count == 1652
    assert _tight(spec, sb_to_internal(v))
    # objective at the iterate equals the penalized objective (surrogates are tight)
    from mimofl.sca import sb_lagrangian
    z = sb_to_internal(v)
    assert spec.objective_value(spec.layout.pack(z)) == pytest.approx(
        sb_lagrangian(z, paper_cfg, PenaltyConfig()), rel=1e-10)


def test_single_counts_and_iterate_feasible(paper_cfg, drop1):
    v = initial_point(drop1, paper_cfg, "asyn")
    spec = build_asyn_subproblem(drop1, paper_cfg, v)
    assert spec.n_vars == 9 * 10 + 1 == spec.paper_count
    assert _tight(spec, single_to_internal(v))
    v = initial_point(drop1, paper_cfg, "syn")
    spec = build_syn_subproblem(drop1, paper_cfg, v)
    # paper formula 7K+4 = 74; the packing drops the unused round-time scalar
    assert spec.paper_count == 74 and spec.n_vars == 73
    assert _tight(spec, single_to_internal(v))


def test_sb_counts_small_k():
    cfg = NetworkConfig.paper_defaults(M=20, K=3)
    st_ = make_drop(cfg, 2)[1]
    spec = build_sb_subproblem(st_, cfg, PenaltyConfig(), initial_point(st_, cfg, "sb"))
    assert spec.n_vars == 16 * 9 + 15 + 2


# ---------------------------------------------------------------------------
# initial points


@pytest.mark.parametrize("design", ["sb", "asyn", "syn"])
def test_initial_point_feasible(paper_cfg, drop1, design):
    v = initial_point(drop1, paper_cfg, design)
    rep = validate_schedule_feasibility(v, drop1, paper_cfg, design)
    assert rep.ok(1e-9), rep.worst()
    assert np.all(v.f <= paper_cfg.f_max)
    eta = v.eta if design != "sb" else v.eta[:, 0]
    assert np.allclose(eta, eta[0])                     # equal split without a seed
    assert eta.sum() == pytest.approx(1.0, abs=2e-3)


@pytest.mark.parametrize("design", ["sb", "asyn", "syn"])
def test_initial_point_seeds(paper_cfg, drop1, design):
    a = initial_point(drop1, paper_cfg, design, seed=1)
    b = initial_point(drop1, paper_cfg, design, seed=2)
    c = initial_point(drop1, paper_cfg, design, seed=1)
    assert not np.allclose(a.eta, b.eta)
    assert np.array_equal(a.eta, c.eta) and np.array_equal(a.f, c.f)
    assert validate_schedule_feasibility(b, drop1, paper_cfg, design).ok(1e-9)


def test_initial_point_too_tight(paper_cfg, drop1):
    from mimofl.sca import InitialPointError

    with pytest.raises(InitialPointError):
        initial_point(drop1, paper_cfg.replace(t_qos_s=1e-3), "syn")


# ---------------------------------------------------------------------------
# Algorithm 2


@pytest.fixture(scope="module")
def alg2_runs(paper_cfg, drop1):
    return {d: run_algorithm2(drop1, paper_cfg, d) for d in ("asyn", "syn")}


def test_alg2_descent_and_feasible(alg2_runs, paper_cfg, drop1):
    for design, res in alg2_runs.items():
        obj = np.array(res.trace.objective)
        assert np.all(np.diff(obj) <= 1e-6 * (1 + np.abs(obj[1:])))
        assert res.converged and res.iterations <= 60
        assert validate_schedule_feasibility(res.vars, drop1, paper_cfg, design).ok(1e-6)


def test_asyn_not_worse_than_syn(alg2_runs, paper_cfg, drop1):
    e_a = energy_single(alg2_runs["asyn"].vars, drop1, paper_cfg).total
    e_s = energy_single(alg2_runs["syn"].vars, drop1, paper_cfg).total
    assert e_a <= e_s * 1.01


def test_trace_csv(alg2_runs):
    buf = io.StringIO()
    alg2_runs["syn"].trace.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "iter,objective,V1,V2,V3,V4"
    assert len(lines) == len(alg2_runs["syn"].trace) + 1


# ---------------------------------------------------------------------------
# Algorithm 1 on one UE against a scalar KKT reduction


def _k1_oracle(state, cfg):
    """min p_d eta S/R_d + p_u zeta S/R_u + kappa f^2  s.t. S/R_d + c/f + S/R_u = T."""
    S, c = cfg.s_d_bits, cfg.cycles[0]
    kap = cfg.L * cfg.alpha / 2 * cfg.c_k[0] * cfg.d_k[0]
    p_d, p_u = cfg.rho_d * cfg.noise_w, cfg.rho_u * cfg.noise_w
    R_d = lambda e: rate_dl_single(state, cfg, np.array([e]))[0]
    R_u = lambda z: rate_ul_single(state, cfg, np.array([z]))[0]

    def best(mu):
        ed = minimize_scalar(lambda e: (p_d * e + mu) * S / R_d(e), bounds=(1e-9, 1.0),
                             method="bounded", options={"xatol": 1e-12})
        eu = minimize_scalar(lambda z: (p_u * z + mu) * S / R_u(z), bounds=(1e-9, 1.0),
                             method="bounded", options={"xatol": 1e-12})
        f = min((mu * c / (2 * kap)) ** (1 / 3), cfg.f_max)
        return ed.x, eu.x, f

    def slack(mu):
        e, z, f = best(mu)
        return S / R_d(e) + c / f + S / R_u(z) - cfg.t_qos_s

    mu = brentq(slack, 1e-12, 1e3, xtol=1e-16, rtol=1e-12)
    e, z, f = best(mu)
    return p_d * e * S / R_d(e) + p_u * z * S / R_u(z) + kap * f**2


def test_alg1_k1_matches_scalar_reduction():
    cfg = NetworkConfig.paper_defaults(M=10, K=1)
    state = make_drop(cfg, 3)[1]
    res = run_algorithm1(state, cfg)
    v, info = binarize_and_polish(res, state, cfg)
    e = energy_sb(v, state, cfg).total
    ref = _k1_oracle(state, cfg)
    assert e == pytest.approx(ref, rel=0.01)
    assert validate_schedule_feasibility(v, state, cfg, "sb", strict=True).ok(1e-6)


@pytest.fixture(scope="module")
def small_sb():
    cfg = NetworkConfig.paper_defaults(M=20, K=3)
    state = make_drop(cfg, 5)[1]
    res = run_algorithm1(state, cfg)
    return cfg, state, res


def test_alg1_small_descent_and_penalties(small_sb):
    cfg, state, res = small_sb
    obj = np.array(res.trace.objective)
    lam = np.array(res.trace.lambdas)
    same = lam[1:] == lam[:-1]
    assert np.all(np.diff(obj)[same] <= 1e-6 * (1 + np.abs(obj[1:][same])))
    assert res.converged
    assert max(res.trace.penalties[-1]) <= 1e-3


def test_polish_small(small_sb):
    cfg, state, res = small_sb
    v, info = binarize_and_polish(res, state, cfg)
    assert v.schedule.is_binary()
    assert validate_schedule_feasibility(v, state, cfg, "sb", strict=True).ok(1e-6)
    assert info["energy"] <= info["relaxed_energy"] * 1.01
    # polishing an already binary schedule keeps it
    v2, info2 = binarize_and_polish(v, state, cfg)
    assert np.array_equal(v2.schedule.a, v.schedule.a) and not info2["repaired"]


# ---------------------------------------------------------------------------
# rounding


@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_round_schedule_always_valid(K, seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, (K, K))
    b = rng.uniform(0, 1, (K, K))
    sched, _ = round_schedule(SessionSchedule(a, b))
    assert sched.is_binary() and sched.max_violation() == 0.0
    assert np.array_equal(sched.a.sum(axis=0), K - np.arange(K))
    assert np.array_equal(sched.b.sum(axis=0), np.arange(K) + 1)


@given(st.permutations(range(5)), st.permutations(range(5)))
def test_round_binary_unchanged(dl, ul):
    s = SessionSchedule.from_orders(dl, ul)
    r, repaired = round_schedule(s)
    assert not repaired and np.array_equal(r.a, s.a) and np.array_equal(r.b, s.b)


def test_fill_compute_uses_all_slack(paper_cfg, drop1):
    from mimofl.heur import heu_sb

    v = heu_sb(drop1, paper_cfg)
    v.f = np.full(10, paper_cfg.f_max)
    w = fill_compute(v, paper_cfg)
    dl, ul = w.schedule.a @ w.t_d, w.schedule.b @ w.t_u
    assert np.allclose(dl + paper_cfg.cycles / w.f + ul, paper_cfg.t_qos_s)
    assert energy_sb(w, drop1, paper_cfg).total < energy_sb(v, drop1, paper_cfg).total


def test_trace_append_and_rows():
    tr = ScaTrace()
    tr.append(2.0, (1, 2, 3, 4), 1.0)
    tr.append(1.0)
    rows = list(tr.rows())
    assert rows[0] == [0, 2.0, 1.0, 2.0, 3.0, 4.0]
    assert len(tr) == 2 and np.isnan(rows[1][2])


@pytest.mark.parametrize("design", ["sb", "asyn", "syn"])
def test_initial_point_weak_ue_fallback(paper_cfg, design):
    # drop 10 has a UE near -129 dB: the equal split is too slow for it
    state = make_drop(paper_cfg, 10)[1]
    v = initial_point(state, paper_cfg, design)
    assert validate_schedule_feasibility(v, state, paper_cfg, design).ok(1e-9)
    eta = v.eta if design != "sb" else v.eta[:, 0]
    weakest = int(np.argmin(state.beta))
    assert eta[weakest] == eta.max()


def test_exact_fixed_start_feasible(paper_cfg, drop1):
    from mimofl.sca.algorithms import _fixed_start
    from mimofl.sca.problems import sb_from_internal

    from mimofl.heur import heu_sb

    # heuristic orders and powers give positive exact session lengths
    h = heu_sb(drop1, paper_cfg)
    sched = h.schedule
    z = {"eta": h.eta, "zeta": h.zeta}
    assert _fixed_start(drop1, paper_cfg.replace(t_qos_s=0.05), sched, z, exact=True) is None
    w = _fixed_start(drop1, paper_cfg, sched, z, exact=True)
    v = sb_from_internal(w)
    from mimofl.models import session_rate_matrices, sb_ue_times
    R_d, R_u = session_rate_matrices(drop1, paper_cfg, v.eta, v.zeta)
    assert np.all((R_d * sched.a * v.t_d).sum(axis=1) > paper_cfg.s_d_bits)
    assert np.all((R_u * sched.b * v.t_u).sum(axis=1) > paper_cfg.s_u_bits)
    dl, tc, ul = sb_ue_times(v, paper_cfg)
    assert np.all(dl + tc + ul < paper_cfg.t_qos_s)
    spec = build_sb_subproblem(drop1, paper_cfg, PenaltyConfig(), v, fixed_schedule=True)
    assert _tight(spec, w, tol=1e-12)


def test_exact_fixed_start_collapsed_session():
    from conftest import identical_state
    from mimofl.sca.algorithms import _fixed_start
    from mimofl.sca.problems import sb_from_internal

    # twin UEs at equal power: the leaver's session-1 data also completes the stayer,
    # so the exact second downlink session has zero length
    cfg = NetworkConfig.paper_defaults(M=20, K=2)
    state = identical_state(2)
    sched = SessionSchedule([[1, 1], [1, 0]], [[1, 1], [0, 1]])
    z = {"eta": np.array([[0.4, 0.8], [0.4, 0.0]]), "zeta": np.array([[0.9, 0.9], [0.0, 0.9]])}
    w = _fixed_start(state, cfg, sched, z, exact=True)
    assert w is not None
    v = sb_from_internal(w)
    assert np.all(v.t_d > 0) and v.t_d[1] < 1e-3 * v.t_d[0]
    spec = build_sb_subproblem(state, cfg, PenaltyConfig(), v, fixed_schedule=True)
    assert _tight(spec, w, tol=1e-12)
