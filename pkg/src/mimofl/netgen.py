"""Network drops and large-scale channel statistics.

UEs are dropped uniformly in a ``side_km x side_km`` square with the BS at
the centre. Drops use numpy's ``PCG64`` bit generator
(``numpy.random.default_rng(seed)``) and draw, in this order: ``K`` x-coords,
``K`` y-coords (both uniform on ``[-side/2, side/2)``) and ``K`` shadowing
values ``N(0, 7^2)`` in dB. Any implementation reproducing that draw order
with PCG64 reproduces the drops bit for bit.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

MIN_DISTANCE_KM = 0.035
SHADOWING_STD_DB = 7.0
PATHLOSS_INTERCEPT_DB = -148.1
PATHLOSS_SLOPE = 37.6


class ConfigError(ValueError):
    """Scenario parameters violate a model invariant."""


def dbm_to_watt(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass
class NetworkConfig:
    """Scenario constants.

    Powers ``rho_*`` are normalized by the noise power ``noise_w``; data sizes
    are in bits; ``d_k_samples`` and ``c_k_cycles`` may be scalars or per-UE
    sequences of length ``K``.
    """

    M: int = 75
    K: int = 10
    side_km: float = 0.25
    tau_c: int = 200
    tau_dp: int = 10
    tau_up: int = 10
    bandwidth_hz: float = 20e6
    rho_d: float = 10.0 / dbm_to_watt(-92.0)
    rho_u: float = 0.2 / dbm_to_watt(-92.0)
    rho_p: float = 0.2 / dbm_to_watt(-92.0)
    noise_w: float = dbm_to_watt(-92.0)
    s_d_bits: float = 8e6
    s_u_bits: float = 8e6
    t_qos_s: float = 1.0
    L: int = 5
    alpha: float = 5e-21
    f_max: float = 5e9
    d_k_samples: float | list = 1e4
    c_k_cycles: float | list = 20.0
    shadowing_std_db: float = SHADOWING_STD_DB

    @classmethod
    def paper_defaults(cls, M=75, K=10, t_qos_s=1.0, **overrides):
        """Settings of the paper's numerical section (pilot lengths = K)."""
        noise = dbm_to_watt(-92.0)
        params = dict(
            M=M, K=K, tau_dp=K, tau_up=K, t_qos_s=t_qos_s,
            rho_d=10.0 / noise, rho_u=0.2 / noise, rho_p=0.2 / noise,
            noise_w=noise,
        )
        params.update(overrides)
        return cls(**params)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if int(self.K) < 1 or int(self.M) < 1:
            raise ConfigError("M and K must be positive integers")
        if self.M < self.K:
            raise ConfigError(f"zero-forcing needs M >= K (M={self.M}, K={self.K})")
        if self.tau_dp < self.K or self.tau_up < self.K:
            raise ConfigError("pilot lengths must be at least K")
        if not (self.tau_dp < self.tau_c and self.tau_up < self.tau_c):
            raise ConfigError("pilot lengths must be shorter than the coherence block")
        positive = (
            "side_km", "bandwidth_hz", "rho_d", "rho_u", "rho_p", "noise_w",
            "s_d_bits", "s_u_bits", "t_qos_s", "L", "alpha", "f_max",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be strictly positive")
        for name in ("d_k_samples", "c_k_cycles"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim > 1 or (arr.ndim == 1 and arr.size != self.K):
                raise ConfigError(f"{name} must be a scalar or have K entries")
            if np.any(arr <= 0):
                raise ConfigError(f"{name} must be strictly positive")

    @property
    def d_k(self):
        return np.broadcast_to(np.asarray(self.d_k_samples, dtype=float), (self.K,)).copy()

    @property
    def c_k(self):
        return np.broadcast_to(np.asarray(self.c_k_cycles, dtype=float), (self.K,)).copy()

    @property
    def cycles(self):
        """Per-UE workload ``L * D_k * c_k`` in cycles."""
        return self.L * self.d_k * self.c_k

    def replace(self, **changes):
        data = dataclasses.asdict(self)
        data.update(changes)
        return NetworkConfig(**data)

    def to_dict(self):
        out = dataclasses.asdict(self)
        for key in ("d_k_samples", "c_k_cycles"):
            if isinstance(out[key], np.ndarray):
                out[key] = out[key].tolist()
        return out


def load_config(path) -> NetworkConfig:
    """Read a key/value scenario file (YAML syntax, keys = field names).

    ``preset: paper`` starts from :meth:`NetworkConfig.paper_defaults` so a
    file may override only ``M``/``K``/``t_qos_s``.
    """
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a key/value mapping")
    known = {f.name for f in dataclasses.fields(NetworkConfig)}
    preset = data.pop("preset", None)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        if preset == "paper":
            return NetworkConfig.paper_defaults(**data)
        if preset is not None:
            raise ConfigError(f"unknown preset {preset!r}")
        return NetworkConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def save_config(config: NetworkConfig, path):
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)


@dataclass
class UEPlacement:
    distances_km: np.ndarray
    shadowing_db: np.ndarray
    seed: int | None = None
    positions_km: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.distances_km = np.asarray(self.distances_km, dtype=float)
        self.shadowing_db = np.asarray(self.shadowing_db, dtype=float)
        if np.any(self.distances_km < MIN_DISTANCE_KM - 1e-12):
            raise ValueError("UE distance below the 35 m floor")


def place_ues(config: NetworkConfig, seed: int) -> UEPlacement:
    rng = np.random.default_rng(seed)
    half = config.side_km / 2.0
    xs = rng.uniform(-half, half, size=config.K)
    ys = rng.uniform(-half, half, size=config.K)
    z = rng.normal(0.0, config.shadowing_std_db, size=config.K)
    d = np.maximum(np.hypot(xs, ys), MIN_DISTANCE_KM)
    return UEPlacement(d, z, seed=seed, positions_km=np.column_stack([xs, ys]))


def large_scale_coeff(d_km, z_db=0.0):
    """Linear large-scale fading ``beta`` for distance ``d_km`` and shadowing ``z_db``."""
    d = np.asarray(d_km, dtype=float)
    if np.any(d < MIN_DISTANCE_KM - 1e-12):
        raise ValueError(f"distance below {MIN_DISTANCE_KM} km")
    beta_db = PATHLOSS_INTERCEPT_DB - PATHLOSS_SLOPE * np.log10(d) + np.asarray(z_db, dtype=float)
    out = 10.0 ** (beta_db / 10.0)
    return float(out) if out.ndim == 0 else out


def mmse_variance(tau_p, rho_p, beta):
    """Variance ``tau rho beta^2 / (tau rho beta + 1)`` of the MMSE channel estimate."""
    beta = np.asarray(beta, dtype=float)
    if tau_p <= 0 or rho_p <= 0 or np.any(beta <= 0):
        raise ValueError("mmse_variance needs strictly positive inputs")
    snr = tau_p * rho_p * beta
    out = snr * beta / (snr + 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class ChannelState:
    beta: np.ndarray
    sigma2_dl_hat: np.ndarray
    sigma2_ul_bar: np.ndarray

    @property
    def K(self):
        return self.beta.size

    def subset(self, ues):
        ues = np.asarray(ues)
        return ChannelState(self.beta[ues], self.sigma2_dl_hat[ues], self.sigma2_ul_bar[ues])


def build_channel_state(config: NetworkConfig, placement: UEPlacement) -> ChannelState:
    beta = np.atleast_1d(large_scale_coeff(placement.distances_km, placement.shadowing_db))
    return ChannelState(
        beta=beta,
        sigma2_dl_hat=np.atleast_1d(mmse_variance(config.tau_dp, config.rho_p, beta)),
        sigma2_ul_bar=np.atleast_1d(mmse_variance(config.tau_up, config.rho_p, beta)),
    )


def make_drop(config: NetworkConfig, seed: int):
    placement = place_ues(config, seed)
    return placement, build_channel_state(config, placement)


def write_placement_csv(path, placement: UEPlacement, state: ChannelState):
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ue", "d_km", "z_db", "beta", "sigma2_dl", "sigma2_ul"])
        for k in range(state.K):
            writer.writerow([
                k, repr(float(placement.distances_km[k])), repr(float(placement.shadowing_db[k])),
                repr(float(state.beta[k])), repr(float(state.sigma2_dl_hat[k])),
                repr(float(state.sigma2_ul_bar[k])),
            ])
