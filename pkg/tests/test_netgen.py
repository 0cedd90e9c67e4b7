import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mimofl.netgen import (
    MIN_DISTANCE_KM, ConfigError, NetworkConfig, UEPlacement, build_channel_state, dbm_to_watt,
    large_scale_coeff, load_config, make_drop, mmse_variance, place_ues, save_config,
    write_placement_csv,
)


def test_noise_conversion():
    assert dbm_to_watt(-92.0) == pytest.approx(10 ** (-12.2))
    assert dbm_to_watt(30.0) == pytest.approx(1.0)


def test_placement_deterministic(paper_cfg):
    p1, s1 = make_drop(paper_cfg, 11)
    p2, s2 = make_drop(paper_cfg, 11)
    assert np.array_equal(p1.distances_km, p2.distances_km)
    assert np.array_equal(p1.shadowing_db, p2.shadowing_db)
    for f in dataclasses.fields(s1):
        assert np.array_equal(getattr(s1, f.name), getattr(s2, f.name))
    p3 = place_ues(paper_cfg, 12)
    assert not np.array_equal(p1.distances_km, p3.distances_km)


def test_placement_inside_square(paper_cfg):
    p = place_ues(paper_cfg.replace(K=50, M=60, tau_dp=50, tau_up=50), 3)
    half = paper_cfg.side_km / 2
    assert np.all(np.abs(p.positions_km) <= half)
    assert np.all(p.distances_km >= MIN_DISTANCE_KM)
    d = np.maximum(np.hypot(*p.positions_km.T), MIN_DISTANCE_KM)
    assert np.allclose(d, p.distances_km)


def test_center_clipped_to_floor():
    cfg = NetworkConfig(K=1, M=2, tau_dp=1, tau_up=1, side_km=1e-6)
    p = place_ues(cfg, 0)
    assert p.distances_km[0] == MIN_DISTANCE_KM


def test_placement_rejects_short_distance():
    with pytest.raises(ValueError):
        UEPlacement([0.01], [0.0])


def test_shadowing_statistics():
    cfg = NetworkConfig(K=100_000, M=100_001, tau_dp=100_000, tau_up=100_000, tau_c=200_000)
    z = place_ues(cfg, 5).shadowing_db
    assert abs(np.std(z) - 7.0) / 7.0 < 0.02
    assert abs(np.mean(z)) < 0.1


def test_pathloss_reference_distance():
    assert large_scale_coeff(1.0, 0.0) == pytest.approx(10 ** -14.81, rel=1e-12)


def test_pathloss_db_linearity():
    assert large_scale_coeff(0.2, 10.0) == pytest.approx(10 * large_scale_coeff(0.2, 0.0), rel=1e-12)


def test_pathloss_closed_form_100m():
    beta_db = -148.1 - 37.6 * math.log10(0.1)
    assert large_scale_coeff(0.1) == pytest.approx(10 ** (beta_db / 10), rel=1e-12)
    assert large_scale_coeff(0.1) == pytest.approx(10 ** -11.05, rel=1e-9)


def test_pathloss_domain():
    with pytest.raises(ValueError):
        large_scale_coeff(0.01)


@given(st.floats(0.035, 5.0), st.floats(0.035, 5.0), st.floats(-20, 20))
def test_pathloss_decreasing_in_distance(d1, d2, z):
    if d1 < d2:
        assert large_scale_coeff(d1, z) > large_scale_coeff(d2, z)


def test_mmse_limits():
    beta = 3e-11
    assert mmse_variance(10, 1e30, beta) == pytest.approx(beta, rel=1e-12)
    tau, rho = 4.0, 1.0 / (4.0 * beta)
    assert mmse_variance(tau, rho, beta) == pytest.approx(beta / 2, rel=1e-12)


def test_mmse_closed_form_against_scalar_lmmse():
    # y = sqrt(tau rho) g + n with g ~ CN(0, beta): Var[g_hat] = beta - MSE
    tau, rho = 10, 0.2 / dbm_to_watt(-92.0)
    beta = large_scale_coeff(0.1)
    mse = beta / (1 + tau * rho * beta)
    assert mmse_variance(tau, rho, beta) == pytest.approx(beta - mse, rel=1e-12)


@pytest.mark.parametrize("args", [(0, 1.0, 1.0), (1, 0.0, 1.0), (1, 1.0, -1.0)])
def test_mmse_domain(args):
    with pytest.raises(ValueError):
        mmse_variance(*args)


@given(st.floats(1e-16, 1e-6), st.floats(1.0, 1e14), st.integers(1, 50))
def test_mmse_bounds_and_monotone(beta, rho, tau):
    v = mmse_variance(tau, rho, beta)
    assert 0 < v <= beta
    assert mmse_variance(tau, 2 * rho, beta) >= v
    assert mmse_variance(tau + 1, rho, beta) >= v


def test_channel_state_composition():
    cfg = NetworkConfig.paper_defaults(M=5, K=1)
    p = UEPlacement([0.1], [2.0])
    s = build_channel_state(cfg, p)
    b = large_scale_coeff(0.1, 2.0)
    assert s.beta[0] == b
    assert s.sigma2_dl_hat[0] == mmse_variance(cfg.tau_dp, cfg.rho_p, b)
    assert s.sigma2_ul_bar[0] == mmse_variance(cfg.tau_up, cfg.rho_p, b)


def test_channel_state_symmetric():
    cfg = NetworkConfig.paper_defaults(M=8, K=3)
    s = build_channel_state(cfg, UEPlacement([0.1] * 3, [1.0] * 3))
    assert np.all(s.beta == s.beta[0]) and np.all(s.sigma2_dl_hat == s.sigma2_dl_hat[0])


def test_channel_state_variance_below_beta():
    cfg = NetworkConfig.paper_defaults()
    for seed in range(7, 27):
        s = make_drop(cfg, seed)[1]
        assert np.all(s.sigma2_dl_hat < s.beta) and np.all(s.sigma2_ul_bar < s.beta)
        assert np.all(s.sigma2_dl_hat > 0)


@pytest.mark.parametrize("bad", [dict(M=5, K=10), dict(tau_dp=3), dict(t_qos_s=0.0),
                                 dict(d_k_samples=[1.0, 2.0])])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        NetworkConfig.paper_defaults(**bad)


def test_config_roundtrip(tmp_path):
    cfg = NetworkConfig.paper_defaults(M=50, t_qos_s=2.0)
    save_config(cfg, tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml") == cfg


def test_config_preset_and_unknown(tmp_path):
    (tmp_path / "p.yaml").write_text("preset: paper\nM: 100\n")
    cfg = load_config(tmp_path / "p.yaml")
    assert cfg == NetworkConfig.paper_defaults(M=100)
    (tmp_path / "u.yaml").write_text("antennas: 3\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "u.yaml")


def test_placement_csv(tmp_path, paper_cfg):
    p, s = make_drop(paper_cfg, 2)
    write_placement_csv(tmp_path / "d.csv", p, s)
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "ue,d_km,z_db,beta,sigma2_dl,sigma2_ul"
    assert len(lines) == paper_cfg.K + 1
    assert float(lines[1].split(",")[3]) == s.beta[0]
