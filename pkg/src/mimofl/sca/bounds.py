"""Convex surrogates used by the SCA iterations.

All bounds are tight at the linearization point ``*_n``:

* ``log(1 + x/y) >= A - B/x - C*y``             (concave minorant)
* ``log(1 + x/y) <= D + E*(x + y) - log(y)``    (convex majorant)
* ``x*y - z`` and ``z - x*y`` majorized by convex quadratics
* ``1/x >= 2/x_n - x/x_n**2``
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..cvx import ConvexExpr
from ..models import dl_prefactor, ul_prefactor
from ..netgen import ChannelState, NetworkConfig


class SurrogateDomainError(ValueError):
    """Linearization point outside the domain of a bound."""


def log_lb_coeffs(xn, yn):
    """``(A, B, C)`` with ``log(1+x/y) >= A - B/x - C*y`` for x, y > 0."""
    xn = np.asarray(xn, dtype=float)
    yn = np.asarray(yn, dtype=float)
    if np.any(xn <= 0) or np.any(yn <= 0):
        raise SurrogateDomainError("log lower bound needs x_n > 0 and y_n > 0")
    s = xn + yn
    A = np.log1p(xn / yn) + 2.0 * xn / s
    B = xn**2 / s
    C = xn / (s * yn)
    return A, B, C


def log_ub_coeffs(xn, yn):
    """``(D, E)`` with ``log(1+x/y) <= D + E*(x+y) - log(y)``."""
    xn = np.asarray(xn, dtype=float)
    yn = np.asarray(yn, dtype=float)
    if np.any(xn < 0) or np.any(yn <= 0):
        raise SurrogateDomainError("log upper bound needs x_n >= 0 and y_n > 0")
    s = xn + yn
    return np.log(s) - 1.0, 1.0 / s


@dataclass
class RateSurrogate:
    """Bounds on ``R_k(p) = pre * ln(1 + G_k p_k / (1 + W_k . p))`` around ``p_n``.

    ``pre`` already includes the ``1/ln 2`` of the log2 rate, so rates come
    out in the unit chosen when the surrogate was built.
    """

    pre: float
    G: np.ndarray
    W: np.ndarray
    p_n: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray

    @classmethod
    def build(cls, pre, G, W, p_n, lower=True, upper=True):
        p_n = np.asarray(p_n, dtype=float)
        x = G * p_n
        y = 1.0 + W @ p_n
        nan = np.full_like(x, np.nan)
        A, B, C = log_lb_coeffs(x, y) if lower else (nan, nan, nan)
        D, E = log_ub_coeffs(x, y) if upper else (nan, nan)
        return cls(float(pre), np.asarray(G, float), np.asarray(W, float), p_n, A, B, C, D, E)

    def exact(self, p):
        p = np.asarray(p, dtype=float)
        return self.pre * np.log1p(self.G * p / (1.0 + self.W @ p))

    def lower(self, p):
        p = np.asarray(p, dtype=float)
        with np.errstate(divide="ignore"):
            return self.pre * (self.A - self.B / (self.G * p) - self.C * (1.0 + self.W @ p))

    def upper(self, p):
        p = np.asarray(p, dtype=float)
        y = 1.0 + self.W @ p
        return self.pre * (self.D + self.E * (self.G * p + y) - np.log(y))

    def lower_rows(self, p_idx, r_idx):
        """``r_k - Rhat_k(p) <= 0`` as one :class:`ConvexExpr` per UE."""
        out = []
        for k in range(self.G.size):
            lin = {int(r_idx[k]): 1.0}
            for l in range(self.G.size):
                c = self.pre * self.C[k] * self.W[k, l]
                if c:
                    lin[int(p_idx[l])] = lin.get(int(p_idx[l]), 0.0) + c
            e = ConvexExpr(lin, const=self.pre * (self.C[k] - self.A[k]))
            e.add_recip({int(p_idx[k]): 1.0}, 0.0, self.pre * self.B[k] / self.G[k])
            out.append(e)
        return out

    def upper_rows(self, p_idx, r_idx):
        """``Rtilde_k(p) - r_k <= 0`` as one :class:`ConvexExpr` per UE."""
        out = []
        for k in range(self.G.size):
            lin = {int(r_idx[k]): -1.0}
            lin[int(p_idx[k])] = self.pre * self.E[k] * self.G[k]
            inner = {}
            for l in range(self.G.size):
                c = self.pre * self.E[k] * self.W[k, l]
                if c:
                    lin[int(p_idx[l])] = lin.get(int(p_idx[l]), 0.0) + c
                if self.W[k, l]:
                    inner[int(p_idx[l])] = self.W[k, l]
            e = ConvexExpr(lin, const=self.pre * (self.D[k] + self.E[k]))
            e.add_neglog(inner, 1.0, self.pre)
            out.append(e)
        return out


def _dl_terms(state: ChannelState, config: NetworkConfig, n_active, unit):
    if config.M <= n_active:
        raise SurrogateDomainError("ZF needs M > number of active UEs")
    K = state.K
    pre = dl_prefactor(config) / np.log(2.0) / unit
    G = (config.M - n_active) * config.rho_d * state.sigma2_dl_hat
    W = np.repeat((config.rho_d * (state.beta - state.sigma2_dl_hat))[:, None], K, axis=1)
    return pre, G, W


def _ul_terms(state: ChannelState, config: NetworkConfig, n_active, unit):
    if config.M <= n_active:
        raise SurrogateDomainError("ZF needs M > number of active UEs")
    K = state.K
    pre = ul_prefactor(config) / np.log(2.0) / unit
    G = (config.M - n_active) * config.rho_u * state.sigma2_ul_bar
    W = np.repeat((config.rho_u * (state.beta - state.sigma2_ul_bar))[None, :], K, axis=0)
    return pre, G, W


def lower_bound_rate_dl(state, config, eta_n, n_active=None, unit=1.0):
    """Concave minorant of the downlink rates around ``eta_n`` (all entries > 0)."""
    pre, G, W = _dl_terms(state, config, state.K if n_active is None else n_active, unit)
    return RateSurrogate.build(pre, G, W, eta_n, lower=True, upper=False)


def upper_bound_rate_dl(state, config, eta_n, n_active=None, unit=1.0):
    """Convex majorant of the downlink rates around ``eta_n``."""
    pre, G, W = _dl_terms(state, config, state.K if n_active is None else n_active, unit)
    return RateSurrogate.build(pre, G, W, eta_n, lower=False, upper=True)


def lower_bound_rate_ul(state, config, zeta_n, n_active=None, unit=1.0):
    pre, G, W = _ul_terms(state, config, state.K if n_active is None else n_active, unit)
    return RateSurrogate.build(pre, G, W, zeta_n, lower=True, upper=False)


def upper_bound_rate_ul(state, config, zeta_n, n_active=None, unit=1.0):
    pre, G, W = _ul_terms(state, config, state.K if n_active is None else n_active, unit)
    return RateSurrogate.build(pre, G, W, zeta_n, lower=False, upper=True)


def rate_surrogates(pre, G, W, p_n):
    """Both bounds at once (builders use this)."""
    return RateSurrogate.build(pre, G, W, p_n, upper=True)


# ---------------------------------------------------------------------------
# products and reciprocals


def balanced_scale(xn, yn, lo=1e-8, hi=1e8):
    """``s`` with ``s*x_n == y_n/s``; the bilinear bounds below hold for any s > 0."""
    xn = np.asarray(xn, dtype=float)
    yn = np.asarray(yn, dtype=float)
    ratio = np.where((xn > 0) & (yn > 0), yn / np.where(xn > 0, xn, 1.0), 1.0)
    return np.sqrt(np.clip(ratio, lo, hi))


@dataclass
class BilinearSurrogate:
    """Quadratic majorants of ``x*y - z`` and ``z - x*y`` around ``(x_n, y_n)``.

    Evaluated on the scaled pair ``(s*x, y/s)``, which leaves the product
    unchanged; ``s = 1`` gives the textbook form.
    """

    xn: np.ndarray
    yn: np.ndarray
    s: np.ndarray

    def xy_minus_z(self, x, y, z):
        X, Y = self.s * x, y / self.s
        Xn, Yn = self.s * self.xn, self.yn / self.s
        return 0.25 * ((X + Y) ** 2 - 2 * (Xn - Yn) * (X - Y) + (Xn - Yn) ** 2 - 4 * z)

    def z_minus_xy(self, x, y, z):
        X, Y = self.s * x, y / self.s
        Xn, Yn = self.s * self.xn, self.yn / self.s
        return 0.25 * (4 * z + (X - Y) ** 2 - 2 * (Xn + Yn) * (X + Y) + (Xn + Yn) ** 2)

    # coefficient form used by the spec builders -----------------------------
    # xy - z <= 0.25 (X+Y)^2 + lin + const - z  with X = s x, Y = y/s

    def xy_minus_z_terms(self):
        """``(cx, cy, const)`` so the majorant is ``0.25*(s x + y/s)^2 + cx x + cy y + const - z``."""
        Xn, Yn = self.s * self.xn, self.yn / self.s
        d = Xn - Yn
        return -0.5 * d * self.s, 0.5 * d / self.s, 0.25 * d**2

    def z_minus_xy_terms(self):
        """``(cx, cy, const)`` so the majorant is ``0.25*(s x - y/s)^2 + cx x + cy y + const + z``."""
        Xn, Yn = self.s * self.xn, self.yn / self.s
        t = Xn + Yn
        return -0.5 * t * self.s, -0.5 * t / self.s, 0.25 * t**2

    def exprs(self, ix, iy, iz):
        """Two :class:`ConvexExpr` (scalar case): ``xy - z`` majorant and ``z - xy`` majorant."""
        s = float(self.s)
        cx, cy, c0 = (float(v) for v in self.xy_minus_z_terms())
        up = ConvexExpr({ix: cx, iy: cy, iz: -1.0}, const=c0).add_quad({ix: s, iy: 1.0 / s}, 0.0, 0.25)
        cx, cy, c0 = (float(v) for v in self.z_minus_xy_terms())
        lo = ConvexExpr({ix: cx, iy: cy, iz: 1.0}, const=c0).add_quad({ix: s, iy: -1.0 / s}, 0.0, 0.25)
        return up, lo


def bilinear_bounds(x_n, y_n, balanced=False):
    """Majorants of ``x*y - z`` and ``z - x*y`` tight at ``(x_n, y_n, x_n*y_n)``."""
    x_n = np.asarray(x_n, dtype=float)
    y_n = np.asarray(y_n, dtype=float)
    if np.any(x_n < 0) or np.any(y_n < 0):
        raise SurrogateDomainError("bilinear bounds need a nonnegative linearization point")
    s = balanced_scale(x_n, y_n) if balanced else np.ones_like(x_n * y_n)
    return BilinearSurrogate(x_n, y_n, s)


@dataclass
class ReciprocalBound:
    x_n: np.ndarray

    @property
    def intercept(self):
        return 2.0 / self.x_n

    @property
    def slope(self):
        return -1.0 / self.x_n**2

    def __call__(self, x):
        return self.intercept + self.slope * np.asarray(x, dtype=float)


def reciprocal_bound(x_n):
    """Affine minorant ``2/x_n - x/x_n^2`` of ``1/x`` on ``x > 0``."""
    x_n = np.asarray(x_n, dtype=float)
    if np.any(x_n <= 0):
        raise SurrogateDomainError("reciprocal bound needs x_n > 0")
    return ReciprocalBound(x_n)
