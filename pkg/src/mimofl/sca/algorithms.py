"""SCA loops: penalized session-based design and the single-session designs."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..cvx import SolverError, solve
from ..models import (
    SbVariables, SessionSchedule, SingleSessionVariables, energy_sb, session_rate_matrices,
    single_times,
)
from .problems import (
    DATA, PenaltyConfig, Units, build_asyn_subproblem, build_sb_subproblem, build_syn_subproblem,
    initial_point, sb_energy_epi, sb_from_internal, sb_lagrangian, sb_penalties, sb_to_internal,
    single_from_internal, single_objective, single_to_internal,
)

log = logging.getLogger(__name__)

# warm-started subproblems once L moves by less than WARM_BELOW (relative)
WARM_BELOW = 0.05
WARM_T_SCALE = 100.0


@dataclass
class ScaTrace:
    """Per-iteration record; V columns are empty for the single-session designs."""

    objective: list = field(default_factory=list)
    penalties: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)
    seconds: float = 0.0

    def append(self, obj, pens=(np.nan,) * 4, lam=np.nan):
        self.objective.append(float(obj))
        self.penalties.append(tuple(float(v) for v in pens))
        self.lambdas.append(float(lam))

    def __len__(self):
        return len(self.objective)

    def rows(self):
        for i, (obj, pens) in enumerate(zip(self.objective, self.penalties)):
            yield [i, obj, *pens]

    def to_csv(self, path_or_file):
        close = not hasattr(path_or_file, "write")
        fh = open(path_or_file, "w", newline="") if close else path_or_file
        try:
            w = csv.writer(fh)
            w.writerow(["iter", "objective", "V1", "V2", "V3", "V4"])
            for row in self.rows():
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        finally:
            if close:
                fh.close()


@dataclass
class ScaResult:
    vars: object
    trace: ScaTrace
    iterations: int
    converged: bool
    design: str
    penalty: PenaltyConfig | None = None

    @property
    def objective(self):
        return self.trace.objective[-1]


def _settled(new, old, tol):
    """``|L_n - L_{n-1}| <= tol * (1 + |L_n|)``."""
    return abs(new - old) <= tol * (1.0 + abs(new))


# ---------------------------------------------------------------------------
# session-based design


def _sb_step(state, config, penalty, z, tol, fixed_schedule=False, warm=False):
    spec = build_sb_subproblem(state, config, penalty, z, fixed_schedule=fixed_schedule)
    x0 = spec.layout.pack(z)
    if warm:
        # late iterates are near the subproblem optimum: start deeper on the central path
        try:
            sol = solve(spec, x0, tol=tol, t_scale=WARM_T_SCALE, max_newton=150)
            return spec.layout.unpack(sol.x), sol
        except SolverError:
            pass
    sol = solve(spec, x0, tol=tol)
    return spec.layout.unpack(sol.x), sol


def run_algorithm1(state, config, penalty: PenaltyConfig | None = None, tol=1e-4, max_iter=100,
                   start=None, seed=None, escalate=True, max_escalations=3, solver_tol=1e-6):
    """Penalized SCA for the relaxed session-based problem.

    Stops when ``|L_n - L_{n-1}| <= tol * (1 + |L_n|)`` for the penalized objective ``L``.
    If the penalties are still above ``penalty.epsilon`` at that point and
    ``escalate`` is set, lambda is multiplied by 10 (at most
    ``max_escalations`` times) and the iterations continue.
    """
    penalty = PenaltyConfig() if penalty is None else penalty
    pen = PenaltyConfig(penalty.lam, tuple(penalty.gammas), penalty.epsilon)
    start = initial_point(state, config, "sb", seed=seed) if start is None else start
    z = sb_to_internal(start)
    trace = ScaTrace()
    t0 = time.perf_counter()
    prev = sb_lagrangian(z, config, pen)
    trace.append(prev, sb_penalties(z, config), pen.lam)
    converged = False
    escalations = 0
    it = 0
    newton = 0
    warm = False
    while it < max_iter:
        it += 1
        z, sol = _sb_step(state, config, pen, z, solver_tol, warm=warm)
        newton += sol.iterations
        cur = sb_lagrangian(z, config, pen)
        pens = sb_penalties(z, config)
        trace.append(cur, pens, pen.lam)
        log.debug("alg1 it=%d L=%.6g V=%s newton=%d", it, cur, pens, sol.iterations)
        if _settled(cur, prev, tol):
            if max(abs(v) for v in pens) <= pen.epsilon or not escalate or escalations >= max_escalations:
                converged = True
                break
            pen = PenaltyConfig(pen.lam * 10.0, pen.gammas, pen.epsilon)
            escalations += 1
            cur = sb_lagrangian(z, config, pen)
        warm = abs(cur - prev) <= WARM_BELOW * (1.0 + abs(cur))
        prev = cur
    trace.seconds = time.perf_counter() - t0
    return ScaResult(sb_from_internal(z), trace, it, converged, "sb", pen)


def _repair_orders(a, b):
    """Turn relaxed indicators into leave/join orders."""
    dl_order = np.lexsort((np.arange(a.shape[0]), a.sum(axis=1)))      # fewest sessions leaves first
    ul_order = np.lexsort((np.arange(b.shape[0]), -b.sum(axis=1)))     # most sessions joins first
    return dl_order, ul_order


def round_schedule(schedule: SessionSchedule):
    """Round at 0.5, falling back to the order-based repair if the result is invalid."""
    a = (schedule.a >= 0.5).astype(float)
    b = (schedule.b >= 0.5).astype(float)
    rounded = SessionSchedule(a, b)
    if rounded.max_violation() == 0.0:
        return rounded, False
    return SessionSchedule.from_orders(*_repair_orders(schedule.a, schedule.b)), True


def _fixed_start(state, config, schedule, z_relaxed, margin=1e-3, exact=False):
    """Strictly feasible start for the fixed-schedule program built from the rounded schedule.

    Sessions get equal lengths sized for the slowest UE, or with ``exact``
    the lengths that deliver every update exactly (a triangular system for a
    valid schedule), stretched by the margin.
    """
    K = state.K
    u = Units.of(config)
    a, b = schedule.a, schedule.b
    eta = np.where(a > 0, np.maximum(z_relaxed["eta"], 1e-6), 0.0)
    eta = eta * np.minimum(1.0, (1 - margin) / np.maximum(eta.sum(axis=0, keepdims=True), 1e-300))
    zeta = np.where(b > 0, np.clip(z_relaxed["zeta"], 1e-6, 1 - margin), 0.0)
    R_d, R_u = session_rate_matrices(state, config, eta, zeta)
    R_d, R_u = R_d / DATA * a, R_u / DATA * b
    rhd, rtd = R_d * (1 - margin), R_d * (1 + margin)
    rhu, rtu = R_u * (1 - margin), R_u * (1 + margin)

    def lengths(rh, ind, total):
        if exact:
            t = np.linalg.solve(rh * ind, np.full(K, total))
            # sessions the relaxed solution collapsed come back as ~0; longer only delivers more
            t = np.maximum(t, 1e-6 * np.max(t))
            return t * (1 + 10 * margin) / (1 - margin)
        per = (rh * ind).sum(axis=1)
        return np.full(K, total * (1 + 10 * margin) / (np.min(per) * (1 - margin)))

    try:
        td = lengths(rhd, a, u.s_d)
        tu = lengths(rhu, b, u.s_u)
    except np.linalg.LinAlgError:
        return None
    if np.any(td <= 0) or np.any(tu <= 0):
        return None
    thd, ttd = a * td * (1 - margin), a * td * (1 + margin)
    thu, ttu = b * tu * (1 - margin), b * tu * (1 + margin)
    cap_d = rhd * thd
    cap_u = rhu * thu
    sd = u.s_d * cap_d / cap_d.sum(axis=1, keepdims=True)
    su = u.s_u * cap_u / cap_u.sum(axis=1, keepdims=True)
    vd = eta * ttd * (1 + margin)
    vu = zeta * ttu * (1 + margin)
    dl_til = ttd.sum(axis=1)
    q1 = thd.sum(axis=1) * (1 - margin)
    need = (np.max(dl_til) * (1 + margin) - q1) / (1 - margin)
    t_c = np.maximum(u.cycles / ((1 - margin) * u.f_max), need)
    f = u.cycles / t_c
    q2 = t_c * (1 - margin)
    q = 0.5 * (np.max(dl_til) + np.min(q1 + q2))
    t = np.max(dl_til + t_c + ttu.sum(axis=1)) * (1 + margin)
    if t >= u.t_qos:
        return None
    return dict(a=a, b=b, eta=eta, zeta=zeta, sd=sd, su=su, rhd=rhd, rtd=0 * rtd, thd=thd, ttd=ttd,
                vd=vd, rhu=rhu, rtu=0 * rtu, thu=thu, ttu=ttu, vu=vu, f=f, q1=q1, q2=q2, td=td, tu=tu,
                t=np.array(t), q=np.array(q))


def _masked_start(z, schedule, floor=1e-6):
    """Relaxed iterate restricted to the rounded schedule (may need a phase 1)."""
    a, b = schedule.a, schedule.b
    w = {k: np.array(v, dtype=float) for k, v in z.items()}
    w["a"], w["b"] = a.copy(), b.copy()
    for ind, keys, power in ((a, ("eta", "sd", "rhd", "rtd", "thd", "ttd", "vd"), "eta"),
                             (b, ("zeta", "su", "rhu", "rtu", "thu", "ttu", "vu"), "zeta")):
        for key in keys:
            w[key] = np.where(ind > 0, w[key], 0.0)
        w[power] = np.where(ind > 0, np.maximum(w[power], floor), 0.0)
    for key in ("rhd", "thd", "ttd", "rhu", "thu", "ttu"):
        w[key] = np.maximum(w[key], 0.0)
    w["rtd"] = np.zeros_like(a)
    w["rtu"] = np.zeros_like(b)
    return w


def fill_compute(vars: SbVariables, config):
    """Slow every CPU so each UE finishes exactly at ``t_QoS`` (less energy, same schedule)."""
    v = vars.copy()
    dl = v.schedule.a @ v.t_d
    ul = v.schedule.b @ v.t_u
    slack = config.t_qos_s - dl - ul
    if np.all(slack > 0):
        v.f = np.minimum(config.cycles / slack, v.f)
    return v


def _sb_cleanup(z, state, config):
    """Exact session data split and compute fill of a fixed-schedule solution."""
    v = sb_from_internal(z)
    a, b = v.schedule.a, v.schedule.b
    R_d, R_u = session_rate_matrices(state, config, v.eta, v.zeta)
    cap_d = R_d * a * v.t_d[None, :]
    cap_u = R_u * b * v.t_u[None, :]
    v.s_d = config.s_d_bits * cap_d / cap_d.sum(axis=1, keepdims=True)
    v.s_u = config.s_u_bits * cap_u / cap_u.sum(axis=1, keepdims=True)
    return fill_compute(v, config)


def binarize_and_polish(result_or_vars, state, config, tol=1e-4, max_iter=30, solver_tol=1e-6):
    """Round the relaxed schedule and re-optimize everything else with it fixed.

    Returns ``(vars, info)``; ``info`` records whether the rounding needed a
    repair and the energy before and after polishing.
    """
    relaxed = result_or_vars.vars if isinstance(result_or_vars, ScaResult) else result_or_vars
    z_rel = sb_to_internal(relaxed)
    schedule, repaired = round_schedule(relaxed.schedule)
    candidates = [_masked_start(z_rel, schedule), _fixed_start(state, config, schedule, z_rel),
                  _fixed_start(state, config, schedule, z_rel, exact=True)]
    dummy = PenaltyConfig()
    z = None
    for cand in candidates:
        if cand is None:
            continue
        try:
            z, _ = _sb_step(state, config, dummy, cand, solver_tol, fixed_schedule=True)
            break
        except (SolverError, ValueError) as exc:
            log.debug("polish start rejected: %s", exc)
    if z is None:
        raise SolverError("no feasible start for the rounded schedule")
    dummy = PenaltyConfig()
    prev = sb_energy_epi(z, config)
    energies = [prev]
    it = 0
    for it in range(1, max_iter + 1):
        z, _ = _sb_step(state, config, dummy, z, solver_tol, fixed_schedule=True)
        cur = sb_energy_epi(z, config)
        energies.append(cur)
        if _settled(cur, prev, tol):
            break
        prev = cur
    v = _sb_cleanup(z, state, config)
    info = {"repaired": repaired, "iterations": it, "energies": energies,
            "relaxed_energy": sb_energy_epi(z_rel, config), "energy": energy_sb(v, state, config).total}
    return v, info


def solve_sb(state, config, penalty=None, tol=1e-4, max_iter=100, seed=None, **kw):
    """Algorithm 1 followed by binarization; returns ``(vars, relaxed_result, info)``."""
    res = run_algorithm1(state, config, penalty, tol=tol, max_iter=max_iter, seed=seed, **kw)
    v, info = binarize_and_polish(res, state, config)
    return v, res, info


# ---------------------------------------------------------------------------
# single-session designs


def run_algorithm2(state, config, design, tol=1e-4, max_iter=60, start=None, seed=None, solver_tol=1e-6):
    """SCA for the asynchronous (``"asyn"``) or synchronous (``"syn"``) design."""
    if design not in ("asyn", "syn"):
        raise ValueError("design must be 'asyn' or 'syn'")
    builder = build_asyn_subproblem if design == "asyn" else build_syn_subproblem
    start = initial_point(state, config, design, seed=seed) if start is None else start
    z = single_to_internal(start)
    trace = ScaTrace()
    t0 = time.perf_counter()
    prev = single_objective(z, config)
    trace.append(prev)
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        spec = builder(state, config, z)
        sol = solve(spec, spec.layout.pack(z), tol=solver_tol)
        z = spec.layout.unpack(sol.x)
        cur = single_objective(z, config)
        trace.append(cur)
        log.debug("alg2[%s] it=%d obj=%.6g", design, it, cur)
        if _settled(cur, prev, tol):
            converged = True
            break
        prev = cur
    trace.seconds = time.perf_counter() - t0
    v = single_from_internal(z)
    if design == "syn":
        v = _syn_fill(v, state, config)
    return ScaResult(v, trace, it, converged, design)


def _syn_fill(v: SingleSessionVariables, state, config):
    """Give the computation step all the time the communication steps leave."""
    t_d, _, t_u = single_times(v, state, config)
    slack = config.t_qos_s - np.max(t_d) - np.max(t_u)
    if slack > 0:
        v = v.copy()
        v.f = np.minimum(v.f, config.cycles / slack)
    return v


def solve_single(state, config, design, **kw):
    return run_algorithm2(state, config, design, **kw)
