"""Rates, delays and energies of one FL round for the three transmission designs.

Everything here is in SI units: bits, bit/s, seconds, cycles/s, joules.
Schedules may be relaxed (entries in [0, 1]); the number of UEs served in a
session is then taken from the schedule constraints (``K - i + 1`` downlink
UEs in session ``i``, ``j`` uplink UEs in session ``j``, both 1-based).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .netgen import ChannelState, NetworkConfig

DESIGNS = ("sb", "asyn", "syn")


class InfeasibleError(ValueError):
    """A rate/energy expression is undefined for the requested operating point."""


@dataclass
class SessionSchedule:
    """Session indicators; ``a[k, i]`` downlink, ``b[k, j]`` uplink (0-based sessions)."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)

    @property
    def K(self):
        return self.a.shape[0]

    @classmethod
    def from_orders(cls, dl_finish_order, ul_join_order):
        """Binary schedule where ``dl_finish_order[i]`` leaves after session ``i``
        and ``ul_join_order[j]`` joins the uplink in session ``j``."""
        dl = np.asarray(dl_finish_order)
        ul = np.asarray(ul_join_order)
        K = dl.size
        a = np.zeros((K, K))
        b = np.zeros((K, K))
        for pos, k in enumerate(dl):
            a[k, : pos + 1] = 1.0
        for pos, k in enumerate(ul):
            b[k, pos:] = 1.0
        return cls(a, b)

    def residuals(self):
        """Violations of the session-structure constraints (all should be ~0)."""
        a, b, K = self.a, self.b, self.K
        sessions = np.arange(K)
        return {
            "a_first": np.abs(a[:, 0] - 1.0),
            "a_count": np.abs(a.sum(axis=0) - (K - sessions)),
            "a_monotone": np.maximum(a[:, 1:] - a[:, :-1], 0.0).ravel(),
            "b_last": np.abs(b[:, -1] - 1.0),
            "b_count": np.abs(b.sum(axis=0) - (sessions + 1)),
            "b_monotone": np.maximum(b[:, :-1] - b[:, 1:], 0.0).ravel(),
            "box": np.concatenate([
                np.maximum(-a, 0).ravel(), np.maximum(a - 1, 0).ravel(),
                np.maximum(-b, 0).ravel(), np.maximum(b - 1, 0).ravel(),
            ]),
        }

    def is_binary(self, tol=0.0):
        both = np.concatenate([self.a.ravel(), self.b.ravel()])
        return bool(np.all(np.minimum(np.abs(both), np.abs(both - 1.0)) <= tol))

    def max_violation(self):
        return max(float(np.max(r, initial=0.0)) for r in self.residuals().values())


@dataclass
class SbVariables:
    schedule: SessionSchedule
    eta: np.ndarray
    zeta: np.ndarray
    f: np.ndarray
    s_d: np.ndarray
    s_u: np.ndarray
    t_d: np.ndarray
    t_u: np.ndarray
    aux: dict = field(default_factory=dict)

    def copy(self):
        return SbVariables(
            SessionSchedule(self.schedule.a.copy(), self.schedule.b.copy()),
            self.eta.copy(), self.zeta.copy(), self.f.copy(), self.s_d.copy(),
            self.s_u.copy(), self.t_d.copy(), self.t_u.copy(),
            {k: np.copy(v) for k, v in self.aux.items()},
        )


@dataclass
class SingleSessionVariables:
    eta: np.ndarray
    zeta: np.ndarray
    f: np.ndarray
    aux: dict = field(default_factory=dict)

    def copy(self):
        return SingleSessionVariables(
            self.eta.copy(), self.zeta.copy(), self.f.copy(),
            {k: np.copy(v) for k, v in self.aux.items()},
        )


@dataclass
class EnergyBreakdown:
    e_dl: float
    e_comp: float
    e_ul: float

    @property
    def total(self):
        return self.e_dl + self.e_comp + self.e_ul

    @property
    def e_tx(self):
        return self.e_dl + self.e_ul

    def as_row(self, design=""):
        return {"design": design, "e_dl": self.e_dl, "e_comp": self.e_comp,
                "e_ul": self.e_ul, "total": self.total}


# ---------------------------------------------------------------------------
# rates


def dl_prefactor(config: NetworkConfig):
    return (config.tau_c - config.tau_dp) / config.tau_c * config.bandwidth_hz


def ul_prefactor(config: NetworkConfig):
    return (config.tau_c - config.tau_up) / config.tau_c * config.bandwidth_hz


def dl_sinr(state: ChannelState, config: NetworkConfig, eta, n_active):
    """Downlink ZF SINR of every UE for per-UE powers ``eta`` with ``n_active`` UEs served."""
    if config.M <= n_active:
        raise InfeasibleError(f"ZF needs M > active UEs ({config.M} <= {n_active})")
    eta = np.asarray(eta, dtype=float)
    signal = (config.M - n_active) * config.rho_d * state.sigma2_dl_hat * eta
    interf = config.rho_d * (state.beta - state.sigma2_dl_hat) * eta.sum() + 1.0
    return signal / interf


def ul_sinr(state: ChannelState, config: NetworkConfig, zeta, n_active):
    if config.M <= n_active:
        raise InfeasibleError(f"ZF needs M > active UEs ({config.M} <= {n_active})")
    zeta = np.asarray(zeta, dtype=float)
    signal = (config.M - n_active) * config.rho_u * state.sigma2_ul_bar * zeta
    interf = config.rho_u * np.sum((state.beta - state.sigma2_ul_bar) * zeta) + 1.0
    return signal / interf


def dl_rates(state, config, eta, n_active):
    return dl_prefactor(config) * np.log2(1.0 + dl_sinr(state, config, eta, n_active))


def ul_rates(state, config, zeta, n_active):
    return ul_prefactor(config) * np.log2(1.0 + ul_sinr(state, config, zeta, n_active))


def _session_powers(eta_i, active):
    eta_i = np.asarray(eta_i, dtype=float)
    active = np.asarray(sorted(active), dtype=int)
    mask = np.zeros(eta_i.size, dtype=bool)
    mask[active] = True
    if np.any(eta_i[~mask] != 0):
        raise ValueError("power allocated to a UE outside the active set")
    return eta_i, active


def rate_dl_session(state, config, eta_i, active, k):
    """Achievable downlink rate (bit/s) of UE ``k`` in a session serving ``active``."""
    eta_i, active = _session_powers(eta_i, active)
    if k not in set(active.tolist()):
        raise ValueError(f"UE {k} is not served in this session")
    return float(dl_rates(state, config, eta_i, active.size)[k])


def rate_ul_session(state, config, zeta_j, active, k):
    zeta_j, active = _session_powers(zeta_j, active)
    if k not in set(active.tolist()):
        raise ValueError(f"UE {k} does not transmit in this session")
    return float(ul_rates(state, config, zeta_j, active.size)[k])


def rate_dl_single(state, config, eta):
    return dl_rates(state, config, eta, state.K)


def rate_ul_single(state, config, zeta):
    return ul_rates(state, config, zeta, state.K)


def session_rate_matrices(state, config, eta, zeta):
    """``R_d[k, i]`` and ``R_u[k, j]`` for K x K power matrices (session sizes K-i+1 / j+1)."""
    K = state.K
    R_d = np.empty((K, K))
    R_u = np.empty((K, K))
    for i in range(K):
        R_d[:, i] = dl_rates(state, config, eta[:, i], K - i)
        R_u[:, i] = ul_rates(state, config, zeta[:, i], i + 1)
    return R_d, R_u


# ---------------------------------------------------------------------------
# computation


def compute_time(f_k, L, D_k, c_k):
    f_k = np.asarray(f_k, dtype=float)
    if np.any(f_k <= 0):
        raise ValueError("CPU frequency must be positive")
    out = L * np.asarray(D_k) * np.asarray(c_k) / f_k
    return float(out) if np.ndim(out) == 0 else out


def compute_energy(f_k, L, D_k, c_k, alpha):
    f_k = np.asarray(f_k, dtype=float)
    if np.any(f_k < 0):
        raise ValueError("CPU frequency must be nonnegative")
    out = L * (alpha / 2.0) * np.asarray(c_k) * np.asarray(D_k) * f_k**2
    return float(out) if np.ndim(out) == 0 else out


def _comp_energy(config, f):
    return float(np.sum(compute_energy(f, config.L, config.d_k, config.c_k, config.alpha)))


def _comp_time(config, f):
    f = np.asarray(f, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(f > 0, config.cycles / np.where(f > 0, f, 1.0), np.inf)


# ---------------------------------------------------------------------------
# energies


def energy_sb(vars: SbVariables, state, config, check=True):
    a, b = vars.schedule.a, vars.schedule.b
    if check:
        bad = [
            np.any(vars.eta < -1e-12), np.any(vars.zeta < -1e-12),
            np.any(vars.t_d < -1e-12), np.any(vars.t_u < -1e-12),
            np.any(vars.eta.sum(axis=0) > 1 + 1e-9), np.any(vars.zeta > 1 + 1e-9),
            np.any(vars.eta > a + 1e-9), np.any(vars.zeta > b + 1e-9),
        ]
        if any(bad):
            raise ValueError("SbVariables violate the power/schedule invariants")
    e_dl = config.rho_d * config.noise_w * float(np.sum(vars.eta * a * vars.t_d[None, :]))
    e_ul = config.rho_u * config.noise_w * float(np.sum(vars.zeta * b * vars.t_u[None, :]))
    return EnergyBreakdown(e_dl, _comp_energy(config, vars.f), e_ul)


def single_times(vars: SingleSessionVariables, state, config):
    """Per-UE downlink, computation and uplink durations (s)."""
    r_d = rate_dl_single(state, config, vars.eta)
    r_u = rate_ul_single(state, config, vars.zeta)
    with np.errstate(divide="ignore"):
        t_d = np.where(r_d > 0, config.s_d_bits / np.where(r_d > 0, r_d, 1.0), np.inf)
        t_u = np.where(r_u > 0, config.s_u_bits / np.where(r_u > 0, r_u, 1.0), np.inf)
    return t_d, _comp_time(config, vars.f), t_u


def energy_single(vars: SingleSessionVariables, state, config):
    r_d = rate_dl_single(state, config, vars.eta)
    r_u = rate_ul_single(state, config, vars.zeta)
    if np.any(r_d <= 0) or np.any(r_u <= 0):
        raise InfeasibleError("zero rate for a UE that must receive/send its update")
    e_dl = config.rho_d * config.noise_w * float(np.sum(vars.eta * config.s_d_bits / r_d))
    e_ul = config.rho_u * config.noise_w * float(np.sum(vars.zeta * config.s_u_bits / r_u))
    return EnergyBreakdown(e_dl, _comp_energy(config, vars.f), e_ul)


def sb_ue_times(vars: SbVariables, config):
    """Per-UE downlink, computation and uplink durations (s) of a session schedule."""
    a, b = vars.schedule.a, vars.schedule.b
    dl = a @ vars.t_d
    ul = b @ vars.t_u
    return dl, _comp_time(config, vars.f), ul


# ---------------------------------------------------------------------------
# feasibility


@dataclass
class FeasibilityReport:
    design: str
    residuals: dict

    @property
    def max_violation(self):
        return max((float(np.max(r, initial=0.0)) for r in self.residuals.values()), default=0.0)

    def worst(self):
        name = max(self.residuals, key=lambda n: float(np.max(self.residuals[n], initial=0.0)))
        return name, float(np.max(self.residuals[name], initial=0.0))

    def ok(self, tol=1e-6):
        return self.max_violation <= tol


def _power_residuals(eta, zeta, f, config):
    return {
        "eta_sum": np.atleast_1d(np.asarray(eta).sum(axis=0) - 1.0),
        "eta_nonneg": -np.ravel(eta),
        "zeta_cap": np.ravel(zeta) - 1.0,
        "zeta_nonneg": -np.ravel(zeta),
        "f_box": np.concatenate([-np.ravel(f), np.ravel(f) - config.f_max]) / config.f_max,
    }


def validate_schedule_feasibility(vars, state, config, design, strict=False):
    """Residuals (positive = violated) of the constraints of ``design``.

    Times are reported in seconds, data in fractions of the update size and
    powers/frequencies as normalized fractions.
    """
    if design not in DESIGNS:
        raise ValueError(f"unknown design {design!r}")
    t_qos = config.t_qos_s
    if design == "sb":
        a, b = vars.schedule.a, vars.schedule.b
        res = {f"schedule_{k}": v for k, v in vars.schedule.residuals().items()}
        if strict:
            both = np.concatenate([a.ravel(), b.ravel()])
            res["schedule_binary"] = np.minimum(np.abs(both), np.abs(both - 1.0))
        res.update(_power_residuals(vars.eta, vars.zeta, vars.f, config))
        res["eta_vs_a"] = np.ravel(vars.eta - a)
        res["zeta_vs_b"] = np.ravel(vars.zeta - b)
        res["time_nonneg"] = -np.concatenate([vars.t_d, vars.t_u])
        R_d, R_u = session_rate_matrices(state, config, vars.eta, vars.zeta)
        res["data_dl_conservation"] = np.abs(vars.s_d.sum(axis=1) - config.s_d_bits) / config.s_d_bits
        res["data_ul_conservation"] = np.abs(vars.s_u.sum(axis=1) - config.s_u_bits) / config.s_u_bits
        res["data_dl_delivery"] = np.ravel(vars.s_d - R_d * a * vars.t_d[None, :]) / config.s_d_bits
        res["data_ul_delivery"] = np.ravel(vars.s_u - R_u * b * vars.t_u[None, :]) / config.s_u_bits
        res["data_nonneg"] = -np.concatenate([vars.s_d.ravel(), vars.s_u.ravel()]) / config.s_d_bits
        dl, tc, ul = sb_ue_times(vars, config)
        total = dl + tc + ul
        t_round = float(np.max(total))
        res["qos"] = np.array([t_round - t_qos])
        res["round_equal"] = t_round - total
        res["sync"] = np.array([np.max(dl) - np.min(dl + tc)])
        return FeasibilityReport(design, res)

    res = _power_residuals(vars.eta, vars.zeta, vars.f, config)
    t_d, t_c, t_u = single_times(vars, state, config)
    if design == "asyn":
        res["qos"] = t_d + t_c + t_u - t_qos
        res["sync"] = np.array([np.max(t_d) - np.min(t_d + t_c)])
    else:
        res["qos"] = np.array([np.max(t_d) + np.max(t_c) + np.max(t_u) - t_qos])
    return FeasibilityReport(design, res)
