"""Log-barrier interior-point solver for :class:`SubproblemSpec` programs.

Newton centering steps solve the sparse KKT system ``[[H, A^T], [A, 0]]``
from a start satisfying the equalities and strictly inside the inequalities
and the box; a backtracking line search keeps every iterate in the domain of
the barrier and of the recip/neglog terms. Starts violating the equalities are
projected onto them first, and :func:`phase1` takes over if that fails.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import linprog, lsq_linear

from .expr import QUAD, ExprBlock, SubproblemSpec


class SolverError(RuntimeError):
    pass


class InfeasibleProblem(SolverError):
    pass


class UnboundedProblem(SolverError):
    pass


class MaxIterations(SolverError):
    pass


class DomainError(SolverError, ValueError):
    pass


@dataclass
class PrimalSolution:
    x: np.ndarray
    objective_value: float
    max_ineq_residual: float
    max_eq_residual: float
    kkt_residual: float
    iterations: int
    multipliers: dict | None = None
    t: float | None = None
    status: str = "optimal"
    history: list = field(default_factory=list, repr=False)
    path: list = field(default_factory=list, repr=False)


@dataclass
class Phase1Result:
    feasible: bool
    x: np.ndarray | None
    max_slack: float
    lower_bound: float
    iterations: int = 0


@dataclass
class KktReport:
    stationarity: float
    complementarity: float
    primal: float
    equality: float
    dual_sign: float

    @property
    def residual(self):
        return max(self.stationarity, self.complementarity, self.primal, self.equality, self.dual_sign)

    def ok(self, tol):
        return self.residual <= tol


# ---------------------------------------------------------------------------


class _Barrier:
    """Evaluates ``t*f0(x) - sum log(-g) - sum log(box slack)`` and derivatives."""

    def __init__(self, spec: SubproblemSpec):
        self.spec = spec
        self.n = spec.n_vars
        lo, hi = spec.lo, spec.hi
        fixed = np.flatnonzero(lo == hi)
        A, b = spec.eq_A.tocsr(), spec.eq_b
        if fixed.size:
            E = sp.csr_matrix((np.ones(fixed.size), (np.arange(fixed.size), fixed)), shape=(fixed.size, self.n))
            A = sp.vstack([A, E], format="csr")
            b = np.concatenate([b, lo[fixed]])
        self.A, self.b = A, b
        free = lo != hi
        self.lo_idx = np.flatnonzero(np.isfinite(lo) & free)
        self.hi_idx = np.flatnonzero(np.isfinite(hi) & free)
        self.m = spec.n_ineqs + self.lo_idx.size + self.hi_idx.size
        self.obj = spec.objective
        self.ineq = spec.ineqs

    def slacks(self, x):
        return x[self.lo_idx] - self.spec.lo[self.lo_idx], self.spec.hi[self.hi_idx] - x[self.hi_idx]

    def inside(self, x):
        if not (self.obj.in_domain(x) and self.ineq.in_domain(x)):
            return False
        sl, sh = self.slacks(x)
        if np.any(sl <= 0) or np.any(sh <= 0):
            return False
        return bool(np.all(self.ineq.value(x) < 0)) if self.ineq.n_rows else True

    def merit(self, x, t):
        if not self.inside(x):
            return np.inf
        f0 = self.obj.value(x)[0]
        g = self.ineq.value(x) if self.ineq.n_rows else np.zeros(0)
        sl, sh = self.slacks(x)
        return t * f0 - np.sum(np.log(-g)) - np.sum(np.log(sl)) - np.sum(np.log(sh))

    def derivatives(self, x, t):
        f0, J0, c0 = self.obj.derivatives(x)
        grad = t * np.asarray(J0.todense()).ravel()
        H = self.obj.weighted_hessian(c0, np.array([t]))
        if self.ineq.n_rows:
            g, J, curv = self.ineq.derivatives(x)
            inv = 1.0 / (-g)
            grad = grad + J.T @ inv
            H = H + J.T @ sp.diags(inv**2) @ J + self.ineq.weighted_hessian(curv, inv)
        else:
            g = np.zeros(0)
        sl, sh = self.slacks(x)
        dg = np.zeros(self.n)
        np.add.at(grad, self.lo_idx, -1.0 / sl)
        np.add.at(grad, self.hi_idx, 1.0 / sh)
        np.add.at(dg, self.lo_idx, 1.0 / sl**2)
        np.add.at(dg, self.hi_idx, 1.0 / sh**2)
        H = sp.csc_matrix(H + sp.diags(dg))
        return float(f0[0]), grad, H, g

    def multipliers(self, x, t, nu):
        g = self.ineq.value(x) if self.ineq.n_rows else np.zeros(0)
        sl, sh = self.slacks(x)
        lam = 1.0 / (-t * g)
        mu_lo = np.zeros(self.n)
        mu_hi = np.zeros(self.n)
        mu_lo[self.lo_idx] = 1.0 / (t * sl)
        mu_hi[self.hi_idx] = 1.0 / (t * sh)
        p = self.spec.n_eqs
        return {"ineq": lam, "lo": mu_lo, "hi": mu_hi, "eq": nu[:p], "fixed": nu[p:]}


def _kkt_solve(H, A, rhs_x, rhs_eq):
    """Solve ``[[H, A^T], [A, 0]] [dx; w] = [rhs_x; rhs_eq]`` with symmetric diagonal scaling.

    Barrier Hessians mix entries of wildly different size near the boundary;
    scaling by ``diag(H)^-1/2`` keeps the factorization accurate there.
    """
    n = H.shape[0]
    p = A.shape[0]
    diag = np.abs(H.diagonal())
    d = 1.0 / np.sqrt(np.maximum(diag, 1.0))
    D = sp.diags(d)
    Hs = sp.csc_matrix(D @ H @ D)
    if p:
        As = sp.csr_matrix(A @ D)
        rn = np.sqrt(np.asarray(As.multiply(As).sum(axis=1)).ravel())
        e = 1.0 / np.where(rn > 0, rn, 1.0)
        As = sp.diags(e) @ As
    for reg in (0.0, 1e-14, 1e-11, 1e-8, 1e-6):
        Hr = Hs + reg * sp.eye(n, format="csc") if reg else Hs
        K = sp.bmat([[Hr, As.T], [As, None]], format="csc") if p else Hr
        rhs = np.concatenate([d * rhs_x, e * rhs_eq]) if p else d * rhs_x
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                sol = spla.splu(K, permc_spec="COLAMD").solve(rhs)
        except RuntimeError:
            continue
        dx = d * sol[:n]
        if np.all(np.isfinite(sol)) and float((d * rhs_x) @ sol[:n]) >= -1e-9 * (1.0 + float(np.abs(d * rhs_x) @ np.abs(sol[:n]))):
            return dx, e * sol[n:] if p else sol[n:]
    raise SolverError("KKT system is singular")


def _center(bar: _Barrier, x, t, nu, max_steps, history, eps=1e-8, stop=None):
    """Newton centering from ``x`` (which must satisfy ``Ax = b``); returns (x, nu, steps)."""
    A, b = bar.A, bar.b
    alpha, beta = 0.01, 0.5
    steps = 0
    while steps < max_steps:
        f0, grad, H, _ = bar.derivatives(x, t)
        dx, w = _kkt_solve(H, A, -grad, np.zeros(A.shape[0]))
        steps += 1
        dec2 = float(-grad @ dx)
        if dec2 / 2.0 <= eps:
            nu = w
            history.append((t, f0, bar.merit(x, t), dec2))
            break
        phi0 = bar.merit(x, t)
        s = 1.0
        while s > 1e-14 and not bar.inside(x + s * dx):
            s *= beta
        while s > 1e-14 and bar.merit(x + s * dx, t) > phi0 - alpha * s * dec2:
            s *= beta
        nu = w
        if s <= 1e-14:
            history.append((t, f0, phi0, dec2))
            if dec2 > 1e-4:
                raise SolverError("line search failed during centering")
            break
        x = x + s * dx
        phi1 = bar.merit(x, t)
        history.append((t, bar.obj.value(x)[0], phi1, dec2, s))
        if phi0 - phi1 <= 1e-14 * max(abs(phi0), 1.0):
            break  # stagnation at the floating point floor
        if stop is not None and stop(x):
            break
        if np.max(np.abs(x), initial=0.0) > 1e15:
            raise UnboundedProblem("iterates diverge")
    return x, nu, steps


def _initial_t(bar: _Barrier, x, tol):
    f0, J0, _ = bar.obj.derivatives(x)
    g0 = np.asarray(J0.todense()).ravel()
    _, gb, _, _ = bar.derivatives(x, 0.0)
    A = bar.A
    if A.shape[0]:
        # project both gradients onto null(A) in the least-squares sense
        P = lambda v: v - A.T @ spla.lsqr(A.T, v, atol=1e-12, btol=1e-12)[0]
        g0, gb = P(g0), P(gb)
    denom = float(g0 @ g0)
    t_ls = -float(g0 @ gb) / denom if denom > 0 else np.nan
    f = abs(float(f0[0]))
    t_min = bar.m / (1e3 * (1.0 + f)) if bar.m else 1.0
    t_max = bar.m / (tol * (1.0 + f)) if bar.m else 1.0
    if not np.isfinite(t_ls) or t_ls <= 0:
        t_ls = bar.m / (1.0 + f) if bar.m else 1.0
    # never start with a gap estimate below |f0|: starts may be far from optimal
    t_cap = bar.m / (1.0 + f) if bar.m else 1.0
    return float(np.clip(min(t_ls, t_cap), t_min, max(t_min, t_max)))


def solve(spec: SubproblemSpec, start=None, tol=1e-6, t0=None, mu=10.0, max_newton=600, loose_eps=1e-2,
          t_scale=1.0):
    """Minimize ``spec``; ``start`` must lie strictly inside the inequalities.

    ``t_scale`` multiplies the automatic first barrier weight; warm starts that
    are close to optimal converge faster with a larger one.

    A start outside the strict interior triggers :func:`phase1`.
    """
    bar = _Barrier(spec)
    x = np.asarray(spec_center(spec) if start is None else start, dtype=float).copy()
    if x.size != spec.n_vars:
        raise ValueError("start has the wrong dimension")
    iters = 0
    if not _eq_ok(bar, x):
        x = _project_eq(bar, x)
    if not (bar.inside(x) and _eq_ok(bar, x)):
        ph = phase1(spec, x)
        iters += ph.iterations
        if not ph.feasible:
            raise InfeasibleProblem(f"phase 1 lower bound {ph.lower_bound:.3e} > 0")
        x = ph.x
    history = []
    path = []
    if bar.m == 0:
        t = 1.0
        nu = np.zeros(bar.A.shape[0])
        x, nu, steps = _center(bar, x, t, nu, max_newton, history)
        iters += steps
    else:
        t = _initial_t(bar, x, tol) * t_scale if t0 is None else float(t0)
        nu = np.zeros(bar.A.shape[0])
        while True:
            # intermediate centerings only need to be approximate
            f_prev = bar.obj.value(x)[0]
            final = bar.m / t <= tol * (1.0 + abs(f_prev))
            x, nu, steps = _center(bar, x, t, nu, max_newton - iters, history,
                                   eps=1e-8 if final else loose_eps)
            iters += steps
            path.append((t, x.copy()))
            f0 = bar.obj.value(x)[0]
            if not np.isfinite(f0) or f0 < -1e15:
                raise UnboundedProblem("objective unbounded below")
            if bar.m / t <= tol * (1.0 + abs(f0)):
                if not final:
                    x, nu, steps = _center(bar, x, t, nu, max_newton - iters, history)
                    iters += steps
                break
            if iters >= max_newton:
                raise MaxIterations(f"no convergence within {max_newton} Newton steps")
            t *= mu
    mult = bar.multipliers(x, t, nu / t if bar.m else nu)
    sol = _finish(spec, x, iters, mult, t, history, tol)
    sol.path = path
    return sol


def _eq_ok(bar, x, rtol=1e-9):
    if not bar.A.shape[0]:
        return True
    return np.max(np.abs(bar.A @ x - bar.b)) <= rtol * (1.0 + np.max(np.abs(bar.b)))


def _project_eq(bar, x):
    """Minimum-norm correction onto ``Ax = b``."""
    r = bar.b - bar.A @ x
    dx = spla.lsqr(bar.A, r, atol=1e-15, btol=1e-15, iter_lim=10 * bar.n + 100)[0]
    return x + dx


def _finish(spec, x, iters, mult, t, history, tol):
    ineq, eq = spec.residuals(x)
    sol = PrimalSolution(
        x=x, objective_value=spec.objective_value(x), max_ineq_residual=ineq,
        max_eq_residual=eq, kkt_residual=np.nan, iterations=iters, multipliers=mult, t=t,
        history=history,
    )
    sol.kkt_residual = check_kkt(spec, sol, tol).residual
    return sol


def spec_center(spec):
    """Box center; ``lo + 1`` / ``hi - 1`` for half-infinite boxes, 0 if free."""
    lo, hi = spec.lo, spec.hi
    x = np.zeros(spec.n_vars)
    both = np.isfinite(lo) & np.isfinite(hi)
    x[both] = 0.5 * (lo[both] + hi[both])
    only_lo = np.isfinite(lo) & ~np.isfinite(hi)
    only_hi = ~np.isfinite(lo) & np.isfinite(hi)
    x[only_lo] = lo[only_lo] + 1.0
    x[only_hi] = hi[only_hi] - 1.0
    return x


# ---------------------------------------------------------------------------
# phase 1


def _domain_rows(block: ExprBlock):
    keep = block.term_kind != QUAD
    return block.inner[keep], block.inner_off[keep]


def _phase0(spec: SubproblemSpec, bar: _Barrier):
    """LP for a point strictly inside every affine domain and the box."""
    rows, offs = [], []
    for blk in (spec.objective, spec.ineqs):
        U, d = _domain_rows(blk)
        if U.shape[0]:
            rows.append(U)
            offs.append(d)
    n = spec.n_vars
    U = sp.vstack(rows, format="csr") if rows else sp.csr_matrix((0, n))
    d = np.concatenate(offs) if offs else np.zeros(0)
    norms = np.sqrt(np.asarray(U.multiply(U).sum(axis=1)).ravel())
    norms[norms == 0] = 1.0
    # maximize s:  U x + d >= s * ||u||,  x - lo >= s,  hi - x >= s,  s <= 1
    n_lo, n_hi = bar.lo_idx.size, bar.hi_idx.size
    Elo = sp.csr_matrix((-np.ones(n_lo), (np.arange(n_lo), bar.lo_idx)), shape=(n_lo, n))
    Ehi = sp.csr_matrix((np.ones(n_hi), (np.arange(n_hi), bar.hi_idx)), shape=(n_hi, n))
    A_ub = sp.vstack([
        sp.hstack([-U, sp.csr_matrix(norms[:, None])]),
        sp.hstack([Elo, sp.csr_matrix(np.ones((n_lo, 1)))]),
        sp.hstack([Ehi, sp.csr_matrix(np.ones((n_hi, 1)))]),
    ], format="csr")
    b_ub = np.concatenate([d, -spec.lo[bar.lo_idx], spec.hi[bar.hi_idx]])
    A_eq = sp.hstack([bar.A, sp.csr_matrix((bar.A.shape[0], 1))], format="csr") if bar.A.shape[0] else None
    c = np.zeros(n + 1)
    c[-1] = -1.0
    bounds = [(None, None)] * n + [(None, 1.0)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=bar.b if A_eq is not None else None,
                  bounds=bounds, method="highs")
    if res.status != 0 or res.x[-1] <= 0:
        return None
    return res.x[:n]


def phase1(spec: SubproblemSpec, start=None, delta=1e-3, tol=1e-8, max_newton=400):
    """Find a strictly feasible point or certify infeasibility.

    Solves ``min s  s.t.  g(x) <= s``, box and equalities, stopping early once
    ``s <= -delta``. ``lower_bound > 0`` certifies infeasibility.
    """
    n = spec.n_vars
    bar0 = _Barrier(spec)
    x = spec_center(spec) if start is None else np.asarray(start, dtype=float).copy()
    # pull the start strictly inside the box
    lo, hi = spec.lo, spec.hi
    width = np.where(np.isfinite(hi - lo), hi - lo, np.inf)
    pad = np.minimum(1e-3 * np.maximum(np.abs(x), 1.0), 0.25 * width)
    fin_lo = np.isfinite(lo) & (width > 0)
    fin_hi = np.isfinite(hi) & (width > 0)
    x[fin_lo] = np.maximum(x[fin_lo], lo[fin_lo] + pad[fin_lo])
    x[fin_hi] = np.minimum(x[fin_hi], hi[fin_hi] - pad[fin_hi])
    x[width == 0] = lo[width == 0]
    if not _eq_ok(bar0, x):
        x = _project_eq(bar0, x)
    sl, sh = bar0.slacks(x)
    if not (spec.objective.in_domain(x) and spec.ineqs.in_domain(x) and _eq_ok(bar0, x)
            and np.all(sl > 0) and np.all(sh > 0)):
        x = _phase0(spec, bar0)
        if x is None:
            return Phase1Result(False, None, -np.inf, np.inf)
    if spec.n_ineqs == 0:
        return Phase1Result(True, x, np.inf, -np.inf)
    g = spec.ineqs.value(x) if spec.n_ineqs else np.zeros(0)
    if spec.n_ineqs:
        s0 = max(float(np.max(g)), 0.0) + 1.0
    else:
        s0 = 1.0

    # objective domain terms become affine rows  -z - s <= 0
    Uo, do = _domain_rows(spec.objective)
    ineq = spec.ineqs
    blocks = []
    if ineq.n_rows:
        blocks.append(ExprBlock(n + 1, ineq.n_rows,
                                sp.hstack([ineq.lin, -np.ones((ineq.n_rows, 1))]),
                                ineq.const, ineq.term_row, ineq.term_kind, ineq.term_weight,
                                sp.hstack([ineq.inner, sp.csr_matrix((ineq.term_row.size, 1))]),
                                ineq.inner_off))
    if Uo.shape[0]:
        R = Uo.shape[0]
        blocks.append(ExprBlock(n + 1, R, sp.hstack([-Uo, -np.ones((R, 1))]), -do,
                                [], [], [], sp.csr_matrix((0, n + 1)), []))
        s0 = max(s0, float(np.max(-(Uo @ x + do))) + 1.0)
    aug_ineq = ExprBlock.stack(blocks, n + 1)
    obj = ExprBlock(n + 1, 1, sp.csr_matrix(([1.0], ([0], [n])), shape=(1, n + 1)), [0.0],
                    [], [], [], sp.csr_matrix((0, n + 1)), [])
    A = sp.hstack([spec.eq_A, sp.csr_matrix((spec.n_eqs, 1))], format="csr")
    # a generous box around the start keeps the phase 1 barrier bounded below
    reach = 1e3 * (1.0 + np.abs(x))
    lo1 = np.where(lo == hi, lo, np.maximum(lo, x - reach))
    hi1 = np.where(lo == hi, hi, np.minimum(hi, x + reach))
    aug = SubproblemSpec(n + 1, obj, aug_ineq, A, spec.eq_b,
                         np.concatenate([lo1, [-1.0]]), np.concatenate([hi1, [s0 + 1e3 * (1.0 + s0)]]))
    bar = _Barrier(aug)
    z = np.concatenate([x, [s0]])
    if not bar.inside(z):
        z[-1] = s0 + 1.0
    t = 1.0
    nu = np.zeros(bar.A.shape[0])
    iters = 0
    history = []
    stop = lambda zz: zz[-1] <= -delta
    while True:
        try:
            z, nu, steps = _center(bar, z, t, nu, max_newton - iters, history, stop=stop)
        except UnboundedProblem:
            break
        iters += steps
        s = z[-1]
        gap = bar.m / t
        if s <= -delta:
            return Phase1Result(True, z[:n], -s, s - gap, iters)
        if s - gap > 0:
            return Phase1Result(False, None, -s, s - gap, iters)
        if gap <= tol or iters >= max_newton:
            break
        t *= 10.0
    feasible = bool(z[-1] < 0)
    return Phase1Result(feasible, z[:n] if feasible else None, -z[-1], z[-1] - bar.m / t, iters)


# ---------------------------------------------------------------------------
# KKT residuals


def check_kkt(spec: SubproblemSpec, solution, tol=1e-6):
    """Stationarity, complementarity and feasibility residuals at ``solution``.

    Uses the solution's multipliers when present; otherwise estimates them by
    bounded least squares over the near-active constraints.
    """
    x = np.asarray(solution.x if hasattr(solution, "x") else solution, dtype=float)
    mult = getattr(solution, "multipliers", None)
    n = spec.n_vars
    f0, J0, _ = spec.objective.derivatives(x)
    grad0 = np.asarray(J0.todense()).ravel()
    if spec.n_ineqs:
        g, J, _ = spec.ineqs.derivatives(x)
    else:
        g, J = np.zeros(0), sp.csr_matrix((0, n))
    A = spec.eq_A
    lo, hi = spec.lo, spec.hi
    lo_gap = np.where(np.isfinite(lo), x - lo, np.inf)
    hi_gap = np.where(np.isfinite(hi), hi - x, np.inf)
    if mult is None:
        act = np.flatnonzero(g >= -np.sqrt(tol) * (1 + np.abs(g)))
        act_lo = np.flatnonzero(lo_gap <= np.sqrt(tol) * (1 + np.abs(x)))
        act_hi = np.flatnonzero(hi_gap <= np.sqrt(tol) * (1 + np.abs(x)))
        cols = [J[act].T, sp.csr_matrix((-np.ones(act_lo.size), (act_lo, np.arange(act_lo.size))), shape=(n, act_lo.size)),
                sp.csr_matrix((np.ones(act_hi.size), (act_hi, np.arange(act_hi.size))), shape=(n, act_hi.size)),
                A.T]
        M = sp.hstack(cols, format="csr")
        k1, k2, k3 = act.size, act_lo.size, act_hi.size
        lb = np.concatenate([np.zeros(k1 + k2 + k3), np.full(A.shape[0], -np.inf)])
        ub = np.full(lb.size, np.inf)
        if M.shape[1]:
            y = lsq_linear(M.toarray() if M.shape[1] * n < 4e6 else M, -grad0, bounds=(lb, ub),
                           lsmr_tol="auto").x
        else:
            y = np.zeros(0)
        lam = np.zeros(g.size); lam[act] = y[:k1]
        mu_lo = np.zeros(n); mu_lo[act_lo] = y[k1:k1 + k2]
        mu_hi = np.zeros(n); mu_hi[act_hi] = y[k1 + k2:k1 + k2 + k3]
        nu = y[k1 + k2 + k3:]
        fixed = np.zeros(0)
    else:
        lam, mu_lo, mu_hi, nu = mult["ineq"], mult["lo"], mult["hi"], mult["eq"]
        fixed = mult.get("fixed", np.zeros(0))
    r = grad0 + J.T @ lam - mu_lo + mu_hi
    if A.shape[0]:
        r = r + A.T @ nu
    if fixed.size:
        fidx = np.flatnonzero(lo == hi)
        r[fidx] += fixed
    scale = 1.0 + np.max(np.abs(grad0), initial=0.0)
    stationarity = float(np.max(np.abs(r), initial=0.0)) / scale
    fin = lambda v: np.where(np.isfinite(v), v, 0.0)
    comp_terms = np.concatenate([lam * np.abs(g), mu_lo * fin(lo_gap), mu_hi * fin(hi_gap)])
    complementarity = float(np.sum(np.abs(comp_terms))) / (1.0 + abs(float(f0[0])))
    ineq, eq = spec.residuals(x)
    dual_sign = float(max(np.max(-lam, initial=0.0), np.max(-mu_lo, initial=0.0), np.max(-mu_hi, initial=0.0), 0.0))
    return KktReport(stationarity, complementarity, ineq, eq, dual_sign)
