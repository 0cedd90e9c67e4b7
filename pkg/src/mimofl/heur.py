"""Baseline allocations: inverse-large-scale-fading power weights, no optimization.

Each heuristic returns the variables of its design.  When the construction
breaks down (negative session lengths, no time left for computing, a CPU
that would have to run above ``f_max``) a :class:`HeuristicInfeasible` is
raised; it carries the partially built variables and a short reason so
callers can log the drop instead of aborting.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, solve_triangular

from .models import (
    SbVariables, SessionSchedule, SingleSessionVariables, session_rate_matrices, single_times,
)
from .netgen import ChannelState, NetworkConfig


class HeuristicInfeasible(ValueError):
    def __init__(self, reason, vars=None):
        super().__init__(reason)
        self.reason = reason
        self.vars = vars


def inverse_beta_weights(beta, active=None):
    """``(1/beta_k) / sum_{k' active} (1/beta_k')`` on the active set, 0 elsewhere."""
    beta = np.asarray(beta, dtype=float)
    active = np.ones(beta.size, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    w = np.where(active, 1.0 / beta, 0.0)
    return w / w.sum()


def _check_m(state, config):
    if config.M <= state.K:
        raise ValueError("heuristics need M > K")


def _frequencies(config, busy, vars):
    """``f_k = cycles / (t_QoS - busy_k)``; infeasible if the budget is gone or f > f_max."""
    budget = config.t_qos_s - np.asarray(busy, dtype=float)
    if np.any(~np.isfinite(budget)) or np.any(budget <= 0):
        raise HeuristicInfeasible("no time left for local computation", vars)
    f = config.cycles / budget
    if np.any(f > config.f_max):
        vars.f = np.minimum(f, config.f_max)
        raise HeuristicInfeasible("required CPU frequency exceeds f_max", vars)
    return f


def _session_times(R, ind, total, order):
    """Solve ``sum_i R[k,i] ind[k,i] t_i = total`` for every UE.

    ``order[p]`` is the UE pinned by session ``p``; with that permutation the
    masked matrix is triangular.  Falls back to a dense solve.
    """
    A = (R * ind)[np.asarray(order)]
    rhs = np.full(A.shape[0], float(total))
    try:
        lower = np.allclose(np.triu(A, 1), 0.0)
        t = solve_triangular(A, rhs, lower=lower)
    except (LinAlgError, ValueError):
        t = np.full(A.shape[0], np.nan)
    if not np.all(np.isfinite(t)):
        try:
            t = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError:
            raise HeuristicInfeasible("singular session rate matrix") from None
    return t


def heu_sb(state: ChannelState, config: NetworkConfig) -> SbVariables:
    """Session-based heuristic: drop the fastest UE after every downlink session
    and add UEs to the uplink in the mirrored way."""
    _check_m(state, config)
    K = state.K
    beta = state.beta
    eta = np.zeros((K, K))
    zeta = np.zeros((K, K))

    # downlink: session i serves K - i UEs; the fastest one leaves afterwards
    active = np.ones(K, dtype=bool)
    dl_order = []
    for i in range(K):
        eta[:, i] = inverse_beta_weights(beta, active)
        if i < K - 1:
            R_d, _ = session_rate_matrices(state, config, eta, zeta)
            k = int(np.argmax(np.where(active, R_d[:, i], -np.inf)))
        else:
            k = int(np.flatnonzero(active)[0])
        dl_order.append(k)
        active[k] = False

    # uplink, built backwards from the last session where everybody transmits
    active = np.ones(K, dtype=bool)
    ul_rev = []
    for j in range(K - 1, -1, -1):
        zeta[:, j] = inverse_beta_weights(beta, active)
        if j > 0:
            _, R_u = session_rate_matrices(state, config, eta, zeta)
            k = int(np.argmax(np.where(active, R_u[:, j], -np.inf)))
        else:
            k = int(np.flatnonzero(active)[0])
        ul_rev.append(k)
        active[k] = False
    ul_order = ul_rev[::-1]

    schedule = SessionSchedule.from_orders(dl_order, ul_order)
    a, b = schedule.a, schedule.b
    R_d, R_u = session_rate_matrices(state, config, eta, zeta)
    R_d, R_u = R_d * a, R_u * b
    # the UE leaving after session i is the last one still fixing t_d[i]
    t_d = _session_times(R_d, a, config.s_d_bits, dl_order)
    t_u = _session_times(R_u[:, ::-1], b[:, ::-1], config.s_u_bits, ul_order[::-1])[::-1]
    s_d = R_d * t_d[None, :]
    s_u = R_u * t_u[None, :]
    v = SbVariables(schedule, eta, zeta, np.full(K, config.f_max), s_d, s_u, t_d, t_u)
    if np.any(t_d < 0) or np.any(t_u < 0):
        raise HeuristicInfeasible("negative session length", v)
    v.f = _frequencies(config, a @ t_d + b @ t_u, v)
    return v


def _single(state, config, sync):
    _check_m(state, config)
    w = inverse_beta_weights(state.beta)
    v = SingleSessionVariables(w.copy(), w.copy(), np.full(state.K, config.f_max))
    t_d, _, t_u = single_times(v, state, config)
    busy = np.full(state.K, np.max(t_d) + np.max(t_u)) if sync else t_d + t_u
    v.f = _frequencies(config, busy, v)
    return v


def heu_asyn(state: ChannelState, config: NetworkConfig) -> SingleSessionVariables:
    """Inverse-beta powers; every UE computes until its own deadline."""
    return _single(state, config, sync=False)


def heu_syn(state: ChannelState, config: NetworkConfig) -> SingleSessionVariables:
    """Inverse-beta powers; computation squeezed between the slowest DL and UL."""
    return _single(state, config, sync=True)


HEURISTICS = {"sb": heu_sb, "asyn": heu_asyn, "syn": heu_syn}
