"""Convexified subproblems of the three designs and their starting points.

Internally every program works in scaled units so the solver sees numbers of
order one: data in MB, rates in MB/s, CPU frequencies in MHz (so
workloads are in Mcycles), times in s and energies in J. The public
:class:`~mimofl.models.SbVariables` / ``SingleSessionVariables`` stay in SI.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..cvx import SpecBuilder
from ..models import (
    SbVariables, SessionSchedule, SingleSessionVariables, dl_rates, rate_dl_single,
    rate_ul_single, session_rate_matrices, ul_rates,
)
from .bounds import (
    RateSurrogate, SurrogateDomainError, _dl_terms, _ul_terms, bilinear_bounds, reciprocal_bound,
)

MEGA = 1e6          # frequencies in MHz
DATA = 8e6          # data in MB (8e6 bit), rates in MB/s


class InitialPointError(RuntimeError):
    """No strictly feasible starting point could be constructed."""


@dataclass(frozen=True)
class Units:
    s_d: float
    s_u: float
    cycles: np.ndarray
    kappa: np.ndarray
    f_max: float
    p_d: float
    p_u: float
    t_qos: float

    @classmethod
    def of(cls, config):
        return cls(
            s_d=config.s_d_bits / DATA,
            s_u=config.s_u_bits / DATA,
            cycles=config.cycles / MEGA,
            kappa=config.L * config.alpha / 2.0 * config.c_k * config.d_k * MEGA**2,
            f_max=config.f_max / MEGA,
            p_d=config.rho_d * config.noise_w,
            p_u=config.rho_u * config.noise_w,
            t_qos=config.t_qos_s,
        )


@dataclass
class PenaltyConfig:
    lam: float = 1.0
    gammas: tuple = (0.1, 0.01, 0.01, 0.01)
    epsilon: float = 1e-3

    def __post_init__(self):
        if self.lam < 0 or self.epsilon <= 0 or len(self.gammas) != 4 or min(self.gammas) <= 0:
            raise ValueError("need lambda >= 0, four positive gammas and epsilon > 0")

    @property
    def weights(self):
        return tuple(self.lam * g for g in self.gammas)


# ---------------------------------------------------------------------------
# internal <-> SI conversion

SB_KEYS_KK = ("a", "eta", "sd", "rhd", "rtd", "thd", "ttd", "vd",
              "b", "zeta", "su", "rhu", "rtu", "thu", "ttu", "vu")
_AUX = {"rhd": "r_hat_d", "rtd": "r_til_d", "thd": "t_hat_d", "ttd": "t_til_d", "vd": "v_d",
        "rhu": "r_hat_u", "rtu": "r_til_u", "thu": "t_hat_u", "ttu": "t_til_u", "vu": "v_u",
        "q1": "q1", "q2": "q2", "t": "t", "q": "q"}
_RATE_KEYS = {"rhd", "rtd", "rhu", "rtu"}


def sb_to_internal(v: SbVariables):
    z = {
        "a": v.schedule.a, "b": v.schedule.b, "eta": v.eta, "zeta": v.zeta,
        "sd": v.s_d / DATA, "su": v.s_u / DATA, "f": v.f / MEGA, "td": v.t_d, "tu": v.t_u,
    }
    for key, name in _AUX.items():
        val = np.asarray(v.aux[name], dtype=float)
        z[key] = val / DATA if key in _RATE_KEYS else val
    return {k: np.array(val, dtype=float) for k, val in z.items()}


def sb_from_internal(z):
    aux = {}
    for key, name in _AUX.items():
        val = np.array(z[key], dtype=float)
        aux[name] = val * DATA if key in _RATE_KEYS else val
    return SbVariables(
        SessionSchedule(np.array(z["a"]), np.array(z["b"])), np.array(z["eta"]), np.array(z["zeta"]),
        np.array(z["f"]) * MEGA, np.array(z["sd"]) * DATA, np.array(z["su"]) * DATA,
        np.array(z["td"]), np.array(z["tu"]), aux,
    )


_SINGLE_AUX = {"rd": "r_d", "ru": "r_u", "wd": "omega_d", "wu": "omega_u",
               "q": "q", "q1": "q1", "q2": "q2", "td": "t_d", "tc": "t_c", "tu": "t_u"}


def single_to_internal(v: SingleSessionVariables):
    z = {"eta": v.eta, "zeta": v.zeta, "f": v.f / MEGA}
    for key, name in _SINGLE_AUX.items():
        if name in v.aux:
            val = np.asarray(v.aux[name], dtype=float)
            if key in ("rd", "ru"):
                val = val / DATA
            elif key in ("wd", "wu"):
                val = val * DATA
            z[key] = val
    return {k: np.array(val, dtype=float) for k, val in z.items()}


def single_from_internal(z):
    aux = {}
    for key, name in _SINGLE_AUX.items():
        if key in z:
            val = np.array(z[key], dtype=float)
            if key in ("rd", "ru"):
                val = val * DATA
            elif key in ("wd", "wu"):
                val = val / DATA
            aux[name] = val
    return SingleSessionVariables(np.array(z["eta"]), np.array(z["zeta"]), np.array(z["f"]) * MEGA, aux)


class Layout:
    """Name -> index map of a built spec, with pack/unpack helpers."""

    def __init__(self, blocks, n):
        self.blocks = dict(blocks)
        self.n = n

    def pack(self, z):
        x = np.zeros(self.n)
        for name, idx in self.blocks.items():
            x[np.asarray(idx).ravel()] = np.asarray(z[name], dtype=float).ravel()
        return x

    def unpack(self, x):
        return {name: np.array(x[idx]) for name, idx in self.blocks.items()}


def _finish(b: SpecBuilder, **info):
    spec = b.build()
    spec.layout = Layout(b.blocks, b.n)
    for key, val in info.items():
        setattr(spec, key, val)
    return spec


# ---------------------------------------------------------------------------
# shared constraint families


def _surrogate_sessions(state, config, powers, downlink):
    """One :class:`RateSurrogate` per session (column of ``powers``)."""
    K = state.K
    out = []
    for i in range(K):
        n_act = K - i if downlink else i + 1
        terms = _dl_terms if downlink else _ul_terms
        pre, G, W = terms(state, config, n_act, DATA)
        p = np.asarray(powers[:, i], dtype=float)
        if np.any(p <= 0):
            raise SurrogateDomainError("zero power at the linearization point")
        out.append(RateSurrogate.build(pre, G, W, p))
    return out


def _rate_rows(b, name, surs, p_idx, r_lo_idx, r_hi_idx, rows=None, upper=True):
    """``r_lo <= Rhat(p)`` and ``r_hi >= Rtilde(p)`` for every (UE, session) pair.

    ``p_idx``/``r_*_idx`` are K x S index arrays (column = session); ``rows``
    optionally masks the pairs that get constraints.
    """
    K, S = p_idx.shape
    mask = np.ones((K, S), dtype=bool) if rows is None else rows
    ks, ss = np.nonzero(mask)
    if ks.size == 0:
        return
    R = ks.size
    pre = np.array([surs[s].pre for s in ss])
    A = np.array([surs[s].A[k] for k, s in zip(ks, ss)])
    B = np.array([surs[s].B[k] for k, s in zip(ks, ss)])
    C = np.array([surs[s].C[k] for k, s in zip(ks, ss)])
    D = np.array([surs[s].D[k] for k, s in zip(ks, ss)])
    E = np.array([surs[s].E[k] for k, s in zip(ks, ss)])
    G = np.array([surs[s].G[k] for k, s in zip(ks, ss)])
    W = np.stack([surs[s].W[k] for k, s in zip(ks, ss)])        # R x K
    sess_idx = p_idx[:, ss].T                                   # R x K powers of that session
    own = p_idx[ks, ss]
    # lower: r - pre*(A - B/(G p) - C*(1 + W.p)) <= 0
    b.ineq(f"{name}_rate_lb", R,
           lin=[(r_lo_idx[ks, ss], 1.0), (sess_idx, (pre * C)[:, None] * W)],
           const=pre * (C - A),
           terms=[("recip", pre * B / G, [(own, 1.0)], 0.0)])
    if not upper:
        return
    # upper: pre*(D + E*(G p + 1 + W.p) - log(1 + W.p)) - r <= 0
    b.ineq(f"{name}_rate_ub", R,
           lin=[(r_hi_idx[ks, ss], -1.0), (own, pre * E * G), (sess_idx, (pre * E)[:, None] * W)],
           const=pre * (D + E),
           terms=[("neglog", pre, [(sess_idx, W)], 1.0)])


def _product_le(b, name, x_idx, y_idx, z_idx, xn, yn, extra_lin=(), mask=None, balanced=True):
    """``z <= x*y`` through the concave-side majorant of ``z - x*y``."""
    sur = bilinear_bounds(np.maximum(xn, 0.0), np.maximum(yn, 0.0), balanced=balanced)
    cx, cy, c0 = sur.z_minus_xy_terms()
    sel = np.ones(np.shape(x_idx), dtype=bool) if mask is None else mask
    s = np.broadcast_to(sur.s, sel.shape)[sel]
    cx, cy, c0 = (np.broadcast_to(v, sel.shape)[sel] for v in (cx, cy, c0))
    xi, yi, zi = (np.broadcast_to(v, sel.shape)[sel] for v in (x_idx, y_idx, z_idx))
    R = xi.size
    if R == 0:
        return
    b.ineq(name, R, lin=[(xi, cx), (yi, cy), (zi, 1.0), *extra_lin], const=c0,
           terms=[("quad", 0.25, [(xi, s), (yi, -1.0 / s)], 0.0)])


def _product_ge(b, name, x_idx, y_idx, z_idx, xn, yn, mask=None, balanced=True):
    """``x*y <= z`` through the majorant of ``x*y - z``."""
    sur = bilinear_bounds(np.maximum(xn, 0.0), np.maximum(yn, 0.0), balanced=balanced)
    cx, cy, c0 = sur.xy_minus_z_terms()
    sel = np.ones(np.shape(x_idx), dtype=bool) if mask is None else mask
    s = np.broadcast_to(sur.s, sel.shape)[sel]
    cx, cy, c0 = (np.broadcast_to(v, sel.shape)[sel] for v in (cx, cy, c0))
    xi, yi, zi = (np.broadcast_to(v, sel.shape)[sel] for v in (x_idx, y_idx, z_idx))
    R = xi.size
    if R == 0:
        return
    b.ineq(name, R, lin=[(xi, cx), (yi, cy), (zi, -1.0)], const=c0,
           terms=[("quad", 0.25, [(xi, s), (yi, 1.0 / s)], 0.0)])


def _product_penalty(b, weight, x_idx, y_idx, z_idx, xn, yn, mask=None, balanced=True):
    """Objective term ``weight * sum majorant(x*y - z)``."""
    sur = bilinear_bounds(np.maximum(xn, 0.0), np.maximum(yn, 0.0), balanced=balanced)
    cx, cy, c0 = sur.xy_minus_z_terms()
    sel = np.ones(np.shape(x_idx), dtype=bool) if mask is None else mask
    s = np.broadcast_to(sur.s, sel.shape)[sel]
    cx, cy, c0 = (np.broadcast_to(v, sel.shape)[sel] for v in (cx, cy, c0))
    xi, yi, zi = (v[sel] for v in (x_idx, y_idx, z_idx))
    if xi.size == 0:
        return
    b.objective(lin=[(xi, weight * cx), (yi, weight * cy), (zi, -weight)], const=weight * np.sum(c0),
                terms=[("quad", 0.25 * weight, [(xi, s), (yi, 1.0 / s)], 0.0)])


# ---------------------------------------------------------------------------
# session-based design


def sb_paper_count(K):
    return 16 * K * K + 5 * K + 2


def build_sb_subproblem(state, config, penalty: PenaltyConfig, iterate, fixed_schedule=False,
                        balanced=True):
    """Convex approximation of the relaxed session-based problem at ``iterate``.

    ``iterate`` is an :class:`SbVariables` (SI) or an internal dict. With
    ``fixed_schedule`` the indicators are frozen at their (binary) values,
    pairs with ``a = 0`` / ``b = 0`` are pinned to zero and the penalty terms
    are dropped, which is the re-optimization used after binarization.

    Every (UE, session) quantity is a K x K variable block and the session
    indicators of the always-served first downlink session / always-active
    last uplink session are kept as variables pinned by equalities, so the
    packed dimension equals ``16K^2 + 5K + 2`` (reported as ``spec.n_vars``
    next to ``spec.paper_count``).
    """
    z = sb_to_internal(iterate) if isinstance(iterate, SbVariables) else iterate
    K = state.K
    u = Units.of(config)
    w1, w2, w3, w4 = (0.0,) * 4 if fixed_schedule else penalty.weights
    if fixed_schedule:
        act_d = z["a"] > 0.5
        act_u = z["b"] > 0.5
    else:
        act_d = np.ones((K, K), dtype=bool)
        act_u = np.ones((K, K), dtype=bool)
    zero = lambda act: np.where(act, 0.0, 0.0)
    free_lo = lambda act, lo: np.where(act, lo, 0.0)
    free_hi = lambda act, hi: np.where(act, hi, 0.0)

    bld = SpecBuilder()
    if fixed_schedule:
        a = bld.var("a", (K, K), lo=z["a"].round(), hi=z["a"].round())
    else:
        lo_a = np.zeros((K, K)); hi_a = np.ones((K, K))
        lo_a[:, 0] = -np.inf; hi_a[:, 0] = np.inf
        a = bld.var("a", (K, K), lo=lo_a, hi=hi_a)
    eta = bld.var("eta", (K, K), lo=zero(act_d), hi=free_hi(act_d, np.inf))
    sd = bld.var("sd", (K, K), lo=zero(act_d), hi=free_hi(act_d, np.inf))
    rhd = bld.var("rhd", (K, K), lo=free_lo(act_d, -np.inf), hi=free_hi(act_d, np.inf))
    rtd = bld.var("rtd", (K, K), lo=free_lo(act_d & (not fixed_schedule), -np.inf),
                  hi=free_hi(act_d & (not fixed_schedule), np.inf))
    thd = bld.var("thd", (K, K), lo=zero(act_d), hi=free_hi(act_d, np.inf))
    ttd = bld.var("ttd", (K, K), lo=zero(act_d), hi=free_hi(act_d, np.inf))
    vd = bld.var("vd", (K, K), lo=free_lo(act_d, -np.inf), hi=free_hi(act_d, np.inf))
    if fixed_schedule:
        bb = bld.var("b", (K, K), lo=z["b"].round(), hi=z["b"].round())
    else:
        lo_b = np.zeros((K, K)); hi_b = np.ones((K, K))
        lo_b[:, -1] = -np.inf; hi_b[:, -1] = np.inf
        bb = bld.var("b", (K, K), lo=lo_b, hi=hi_b)
    zeta = bld.var("zeta", (K, K), lo=zero(act_u), hi=free_hi(act_u, 1.0))
    su = bld.var("su", (K, K), lo=zero(act_u), hi=free_hi(act_u, np.inf))
    rhu = bld.var("rhu", (K, K), lo=free_lo(act_u, -np.inf), hi=free_hi(act_u, np.inf))
    rtu = bld.var("rtu", (K, K), lo=free_lo(act_u & (not fixed_schedule), -np.inf),
                  hi=free_hi(act_u & (not fixed_schedule), np.inf))
    thu = bld.var("thu", (K, K), lo=zero(act_u), hi=free_hi(act_u, np.inf))
    ttu = bld.var("ttu", (K, K), lo=zero(act_u), hi=free_hi(act_u, np.inf))
    vu = bld.var("vu", (K, K), lo=free_lo(act_u, -np.inf), hi=free_hi(act_u, np.inf))
    f = bld.var("f", K, lo=0.0, hi=u.f_max)
    q1 = bld.var("q1", K)
    q2 = bld.var("q2", K)
    td = bld.var("td", K, lo=0.0)
    tu = bld.var("tu", K, lo=0.0)
    t = bld.var("t", (), hi=u.t_qos)
    q = bld.var("q", ())

    rows = np.arange(K)
    if not fixed_schedule:
        # session structure
        bld.eq("a_first", K, [(a[:, 0], 1.0)], np.ones(K))
        bld.eq("a_count", K - 1, [(a[:, 1:].T, 1.0)], K - np.arange(1, K))
        bld.eq("b_last", K, [(bb[:, -1], 1.0)], np.ones(K))
        bld.eq("b_count", K - 1, [(bb[:, :-1].T, 1.0)], np.arange(1, K))
        if K > 1:
            bld.ineq("a_monotone", K * (K - 1), lin=[(a[:, 1:].ravel(), 1.0), (a[:, :-1].ravel(), -1.0)])
            bld.ineq("b_monotone", K * (K - 1), lin=[(bb[:, :-1].ravel(), 1.0), (bb[:, 1:].ravel(), -1.0)])
        bld.ineq("eta_le_a", K * K, lin=[(eta.ravel(), 1.0), (a.ravel(), -1.0)])
        bld.ineq("zeta_le_b", K * K, lin=[(zeta.ravel(), 1.0), (bb.ravel(), -1.0)])
    bld.ineq("eta_sum", K, lin=[(eta.T, 1.0)], const=-1.0)
    bld.eq("data_d", K, [(sd, 1.0)], np.full(K, u.s_d))
    bld.eq("data_u", K, [(su, 1.0)], np.full(K, u.s_u))

    # rates
    surs_d = _surrogate_sessions(state, config, np.where(act_d, z["eta"], 1.0), True)
    surs_u = _surrogate_sessions(state, config, np.where(act_u, z["zeta"], 1.0), False)
    if fixed_schedule:
        # inactive UEs carry no power; keep them out of the interference sums
        for i, s in enumerate(surs_d):
            s.W = s.W * act_d[:, i][None, :]
        for j, s in enumerate(surs_u):
            s.W = s.W * act_u[:, j][None, :]
        surs_d = [RateSurrogate.build(s.pre, s.G, s.W, np.where(act_d[:, i], z["eta"][:, i], 1.0))
                  for i, s in enumerate(surs_d)]
        surs_u = [RateSurrogate.build(s.pre, s.G, s.W, np.where(act_u[:, j], z["zeta"][:, j], 1.0))
                  for j, s in enumerate(surs_u)]
    # the rate over-estimates only feed the penalties; frozen at 0 without them
    _rate_rows(bld, "d", surs_d, eta, rhd, rtd, rows=act_d, upper=not fixed_schedule)
    _rate_rows(bld, "u", surs_u, zeta, rhu, rtu, rows=act_u, upper=not fixed_schedule)

    # per-pair times t_hat <= a t_d <= t_til
    td_kk = np.broadcast_to(td[None, :], (K, K))
    tu_kk = np.broadcast_to(tu[None, :], (K, K))
    if fixed_schedule:
        for name, th, tt, tk, act in (("d", thd, ttd, td_kk, act_d), ("u", thu, ttu, tu_kk, act_u)):
            R = int(act.sum())
            bld.ineq(f"t_hat_{name}", R, lin=[(th[act], 1.0), (tk[act], -1.0)])
            bld.ineq(f"t_til_{name}", R, lin=[(tk[act], 1.0), (tt[act], -1.0)])
    else:
        tdn = np.broadcast_to(z["td"][None, :], (K, K))
        tun = np.broadcast_to(z["tu"][None, :], (K, K))
        _product_le(bld, "t_hat_d", a, td_kk, thd, z["a"], tdn, balanced=balanced)
        _product_ge(bld, "t_til_d", a, td_kk, ttd, z["a"], tdn, balanced=balanced)
        _product_le(bld, "t_hat_u", bb, tu_kk, thu, z["b"], tun, balanced=balanced)
        _product_ge(bld, "t_til_u", bb, tu_kk, ttu, z["b"], tun, balanced=balanced)
    # delivered data and energy epigraphs
    _product_le(bld, "data_le_d", rhd, thd, sd, z["rhd"], z["thd"], mask=act_d, balanced=balanced)
    _product_le(bld, "data_le_u", rhu, thu, su, z["rhu"], z["thu"], mask=act_u, balanced=balanced)
    _product_ge(bld, "energy_d", eta, ttd, vd, z["eta"], z["ttd"], mask=act_d, balanced=balanced)
    _product_ge(bld, "energy_u", zeta, ttu, vu, z["zeta"], z["ttu"], mask=act_u, balanced=balanced)

    # round time, QoS and uplink synchronization
    cyc = u.cycles
    rb = reciprocal_bound(z["f"])
    bld.ineq("qos", K, lin=[(ttd, 1.0), (ttu, 1.0), (t, -1.0)],
             terms=[("recip", cyc, [(f, 1.0)], 0.0)])
    bld.ineq("sync_1", K, lin=[(ttd, 1.0), (q, -1.0)])
    bld.ineq("sync_2", K, lin=[(q, 1.0), (q1, -1.0), (q2, -1.0)])
    bld.ineq("sync_3", K, lin=[(q1, 1.0), (thd, -1.0)])
    bld.ineq("sync_4", K, lin=[(q2, 1.0), (f, -cyc * rb.slope)], const=-cyc * rb.intercept)

    # objective
    bld.objective(lin=[(vd[act_d], u.p_d), (vu[act_u], u.p_u)],
                  terms=[("quad", u.kappa, [(f, 1.0)], 0.0)])
    if not fixed_schedule:
        # V1 majorant: sum a - 2 a_n a + a_n^2
        bld.objective(lin=[(a, w1 * (1.0 - 2.0 * z["a"])), (bb, w1 * (1.0 - 2.0 * z["b"]))],
                      const=w1 * (np.sum(z["a"] ** 2) + np.sum(z["b"] ** 2)))
        _product_penalty(bld, w2, rtd, ttd, sd, z["rtd"], z["ttd"], balanced=balanced)
        _product_penalty(bld, w3, rtu, ttu, su, z["rtu"], z["ttu"], balanced=balanced)
        # V4 majorant: sum_k t - sum t_hat_d - cyc(2/f_n - f/f_n^2) - sum t_hat_u
        bld.objective(lin=[(np.full(K, t), w4), (thd, -w4), (thu, -w4), (f, -w4 * cyc * rb.slope)],
                      const=-w4 * float(np.sum(cyc * rb.intercept)))
    return _finish(bld, design="sb", paper_count=sb_paper_count(K), fixed_schedule=fixed_schedule,
                   act_d=act_d, act_u=act_u)


# ---------------------------------------------------------------------------
# single-session designs


def asyn_paper_count(K):
    return 9 * K + 1


def syn_paper_count(K):
    return 7 * K + 4


def _single_common(bld, state, config, z, K, u, balanced):
    eta = bld.var("eta", K, lo=0.0)
    zeta = bld.var("zeta", K, lo=0.0, hi=1.0)
    rd = bld.var("rd", K)
    ru = bld.var("ru", K)
    f = bld.var("f", K, lo=0.0, hi=u.f_max)
    wd = bld.var("wd", K, lo=0.0)
    wu = bld.var("wu", K, lo=0.0)
    bld.ineq("eta_sum", 1, lin=[(eta[None, :], 1.0)], const=-1.0)
    pre, G, W = _dl_terms(state, config, K, DATA)
    sd_ = RateSurrogate.build(pre, G, W, z["eta"])
    pre, G, W = _ul_terms(state, config, K, DATA)
    su_ = RateSurrogate.build(pre, G, W, z["zeta"])
    # lower rate bounds only (no upper bounds in the single-session designs)
    for name, sur, p, r in (("d", sd_, eta, rd), ("u", su_, zeta, ru)):
        bld.ineq(f"{name}_rate_lb", K,
                 lin=[(r, 1.0), (np.broadcast_to(p, (K, K)), sur.pre * sur.C[:, None] * sur.W)],
                 const=sur.pre * (sur.C - sur.A),
                 terms=[("recip", sur.pre * sur.B / sur.G, [(p, 1.0)], 0.0)])
    # p <= r * omega
    _product_le(bld, "omega_d", rd, wd, eta, z["rd"], z["wd"], balanced=balanced)
    _product_le(bld, "omega_u", ru, wu, zeta, z["ru"], z["wu"], balanced=balanced)
    bld.objective(lin=[(wd, u.p_d * u.s_d), (wu, u.p_u * u.s_u)],
                  terms=[("quad", u.kappa, [(f, 1.0)], 0.0)])
    return eta, zeta, rd, ru, f, wd, wu


def build_asyn_subproblem(state, config, iterate, balanced=True):
    z = single_to_internal(iterate) if isinstance(iterate, SingleSessionVariables) else iterate
    K = state.K
    u = Units.of(config)
    bld = SpecBuilder()
    eta, zeta, rd, ru, f, wd, wu = _single_common(bld, state, config, z, K, u, balanced)
    q1 = bld.var("q1", K, lo=0.0)
    q2 = bld.var("q2", K, lo=0.0)
    q = bld.var("q", ())
    cyc = u.cycles
    bld.ineq("qos", K, const=-u.t_qos, terms=[
        ("recip", u.s_d, [(rd, 1.0)], 0.0), ("recip", cyc, [(f, 1.0)], 0.0),
        ("recip", u.s_u, [(ru, 1.0)], 0.0)])
    bld.ineq("sync_a", K, lin=[(q, -1.0)], terms=[("recip", u.s_d, [(rd, 1.0)], 0.0)])
    bld.ineq("sync_b", K, lin=[(q, 1.0), (q1, -1.0), (q2, -1.0)])
    rr = reciprocal_bound(z["rd"])
    bld.ineq("sync_d", K, lin=[(q1, 1.0), (rd, -u.s_d * rr.slope)], const=-u.s_d * rr.intercept)
    rf = reciprocal_bound(z["f"])
    bld.ineq("sync_e", K, lin=[(q2, 1.0), (f, -cyc * rf.slope)], const=-cyc * rf.intercept)
    return _finish(bld, design="asyn", paper_count=asyn_paper_count(K))


def build_syn_subproblem(state, config, iterate, balanced=True):
    """Synchronous design; packs ``7K + 3`` variables (the step times are three scalars)."""
    z = single_to_internal(iterate) if isinstance(iterate, SingleSessionVariables) else iterate
    K = state.K
    u = Units.of(config)
    bld = SpecBuilder()
    eta, zeta, rd, ru, f, wd, wu = _single_common(bld, state, config, z, K, u, balanced)
    td = bld.var("td", (), lo=0.0)
    tc = bld.var("tc", (), lo=0.0)
    tu = bld.var("tu", (), lo=0.0)
    bld.ineq("qos", 1, lin=[(td, 1.0), (tc, 1.0), (tu, 1.0)], const=-u.t_qos)
    bld.ineq("step_d", K, lin=[(td, -1.0)], terms=[("recip", u.s_d, [(rd, 1.0)], 0.0)])
    bld.ineq("step_c", K, lin=[(tc, -1.0)], terms=[("recip", u.cycles, [(f, 1.0)], 0.0)])
    bld.ineq("step_u", K, lin=[(tu, -1.0)], terms=[("recip", u.s_u, [(ru, 1.0)], 0.0)])
    return _finish(bld, design="syn", paper_count=syn_paper_count(K))


# ---------------------------------------------------------------------------
# objective of the (nonconvex) problems at a point, penalty values


def sb_penalties(z, config):
    """``(V1, V2, V3, V4)`` at an internal-unit point (V2, V3 in MB, V4 in s)."""
    u = Units.of(config)
    a, b = z["a"], z["b"]
    v1 = float(np.sum(a - a**2) + np.sum(b - b**2))
    v2 = float(np.sum(z["rtd"] * z["ttd"] - z["sd"]))
    v3 = float(np.sum(z["rtu"] * z["ttu"] - z["su"]))
    with np.errstate(divide="ignore"):
        tc = np.where(z["f"] > 0, u.cycles / np.where(z["f"] > 0, z["f"], 1.0), np.inf)
    v4 = float(np.sum(z["t"] - z["thd"].sum(axis=1) - tc - z["thu"].sum(axis=1)))
    return v1, v2, v3, v4


def penalty_values(vars: SbVariables, config):
    """V1..V4 of an :class:`SbVariables`; V2 and V3 in MB, V4 in seconds."""
    return sb_penalties(sb_to_internal(vars), config)


def sb_energy_epi(z, config):
    u = Units.of(config)
    return float(u.p_d * np.sum(z["vd"]) + np.sum(u.kappa * z["f"] ** 2) + u.p_u * np.sum(z["vu"]))


def sb_lagrangian(z, config, penalty: PenaltyConfig):
    w = penalty.weights
    return sb_energy_epi(z, config) + float(np.dot(w, sb_penalties(z, config)))


def single_objective(z, config):
    u = Units.of(config)
    return float(u.p_d * u.s_d * np.sum(z["wd"]) + np.sum(u.kappa * z["f"] ** 2)
                 + u.p_u * u.s_u * np.sum(z["wu"]))


# ---------------------------------------------------------------------------
# starting points


def _weights(K, rng, tilt=None):
    w = np.ones(K) if rng is None else rng.uniform(0.5, 1.5, size=K)
    return w if tilt is None else w * tilt


def _uplink_weights(K, rng, tilt):
    """Per-UE uplink power fractions in (0, 1]; full power unless reweighted."""
    if rng is None and tilt is None:
        return np.ones(K)
    w = _weights(K, rng, tilt)
    if tilt is not None:
        w = w / w.max()
    return np.minimum(w, 1.0)


def initial_point(state, config, design, seed=None, margin=1e-3):
    """Strictly feasible start for ``design`` in SI units.

    Powers split the budget equally (randomly reweighted when ``seed`` is
    given) and CPUs run at ``f_max`` unless the uplink synchronization needs
    a slower clock; every auxiliary is set just inside its constraint.
    If the equal split leaves a weak UE too slow, the downlink split is
    retried with inverse large-scale-fading weights.
    """
    if design not in ("sb", "asyn", "syn"):
        raise ValueError(f"unknown design {design!r}")
    err = None
    for tilt in (None, 1.0 / np.asarray(state.beta)):
        rng = None if seed is None else np.random.default_rng(seed)
        try:
            if design == "sb":
                return _initial_sb(state, config, rng, margin, tilt)
            return _initial_single(state, config, design, rng, margin, tilt)
        except InitialPointError as exc:
            err = exc
    raise err


def _fit_clock(u, q1, dl_til_max, margin):
    """Per-UE clock (MHz) at most ``(1-m) f_max`` with ``(1-m) t_C + q1 > max dl_til``."""
    need = (dl_til_max * (1 + margin) - q1) / (1 - margin)
    t_c = np.maximum(u.cycles / ((1 - margin) * u.f_max), need)
    return u.cycles / t_c


def _initial_single(state, config, design, rng, margin, tilt=None):
    K = state.K
    u = Units.of(config)
    w = _weights(K, rng, tilt)
    eta = (1 - margin) * w / w.sum()
    zeta = (1 - margin) * _uplink_weights(K, rng, tilt)
    rd_true = rate_dl_single(state, config, eta) / DATA
    ru_true = rate_ul_single(state, config, zeta) / DATA
    rd = rd_true * (1 - margin)
    ru = ru_true * (1 - margin)
    wd = eta / rd * (1 + margin)
    wu = zeta / ru * (1 + margin)
    td_k = u.s_d / rd
    tu_k = u.s_u / ru
    z = {"eta": eta, "zeta": zeta, "rd": rd, "ru": ru, "wd": wd, "wu": wu}
    if design == "asyn":
        q1 = td_k * (1 - margin)
        f = _fit_clock(u, q1, np.max(td_k), margin)
        tc = u.cycles / f
        q2 = tc * (1 - margin)
        q = 0.5 * (np.max(td_k) + np.min(q1 + q2))
        if not (np.max(td_k) < q < np.min(q1 + q2)) or np.any(td_k + tc + tu_k >= u.t_qos):
            raise InitialPointError("no strictly feasible asynchronous start (t_QoS too tight?)")
        z.update(f=f, q=np.array(q), q1=q1, q2=q2)
    else:
        f = np.full(K, (1 - margin) * u.f_max)
        tc = u.cycles / f
        t_d = np.max(td_k) * (1 + margin)
        t_c = np.max(tc) * (1 + margin)
        t_u = np.max(tu_k) * (1 + margin)
        if t_d + t_c + t_u >= u.t_qos:
            raise InitialPointError("no strictly feasible synchronous start (t_QoS too tight?)")
        z.update(f=f, td=np.array(t_d), tc=np.array(t_c), tu=np.array(t_u))
    return single_from_internal(z)


def _initial_sb(state, config, rng, margin, tilt=None):
    K = state.K
    u = Units.of(config)
    sess = np.arange(K)
    a = np.tile((K - sess) / K, (K, 1))
    b = np.tile((sess + 1) / K, (K, 1))
    w = _weights(K, rng, tilt)[:, None] * np.ones((1, K))
    eta = (1 - margin) * w * a / np.sum(w * a, axis=0)
    eta = np.minimum(eta, a * (1 - margin))
    zeta = (1 - margin) * b * _uplink_weights(K, rng, tilt)[:, None]
    R_d, R_u = session_rate_matrices(state, config, eta, zeta)
    R_d, R_u = R_d / DATA, R_u / DATA
    rhd, rtd = R_d * (1 - margin), R_d * (1 + margin)
    rhu, rtu = R_u * (1 - margin), R_u * (1 + margin)
    # equal session lengths, long enough to deliver every update
    cap_d = np.sum(rhd * a * (1 - margin), axis=1)      # MB per second of session length
    cap_u = np.sum(rhu * b * (1 - margin), axis=1)
    td = np.full(K, u.s_d * (1 + 10 * margin) / np.min(cap_d))
    tu = np.full(K, u.s_u * (1 + 10 * margin) / np.min(cap_u))
    thd, ttd = a * td * (1 - margin), a * td * (1 + margin)
    thu, ttu = b * tu * (1 - margin), b * tu * (1 + margin)
    def split(rh, th, total):
        cap = rh * th
        return total * cap / cap.sum(axis=1, keepdims=True)
    sd = split(rhd, thd, u.s_d)
    su = split(rhu, thu, u.s_u)
    vd = eta * ttd * (1 + margin)
    vu = zeta * ttu * (1 + margin)
    dl_til = ttd.sum(axis=1)
    dl_hat = thd.sum(axis=1)
    q1 = dl_hat * (1 - margin)
    f = _fit_clock(u, q1, np.max(dl_til), margin)
    tc = u.cycles / f
    q2 = tc * (1 - margin)
    q = 0.5 * (np.max(dl_til) + np.min(q1 + q2))
    t = np.max(dl_til + tc + ttu.sum(axis=1)) * (1 + margin)
    if not (np.max(dl_til) < q < np.min(q1 + q2)) or t >= u.t_qos:
        raise InitialPointError("no strictly feasible session-based start (t_QoS too tight?)")
    z = dict(a=a, b=b, eta=eta, zeta=zeta, sd=sd, su=su, rhd=rhd, rtd=rtd, thd=thd, ttd=ttd,
             vd=vd, rhu=rhu, rtu=rtu, thu=thu, ttu=ttu, vu=vu, f=f, q1=q1, q2=q2, td=td, tu=tu,
             t=np.array(t), q=np.array(q))
    return sb_from_internal(z)
