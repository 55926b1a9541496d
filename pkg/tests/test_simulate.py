import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.integrate import quad

from threshvol import (
    PRM_AIT,
    ConfigurationError,
    CsvFormatError,
    HestonMertonConfig,
    NormalJumpLaw,
    SamplePath,
    UserJumpLaw,
    five_minute_h,
    merton_density,
    simulate_path,
)

H = five_minute_h()


def test_merton_density_table_values():
    assert round(merton_density(0.0, 0.03), 2) == 13.30
    assert round(merton_density(0.0, 0.01), 2) == 39.89
    assert_allclose(merton_density(0.0, 0.03), 13.2980760134, rtol=1e-10)


def test_merton_density_one_sd_out():
    theta = 0.07
    assert_allclose(merton_density(theta, theta),
                    merton_density(0.0, theta) * math.exp(-0.5), rtol=1e-14)


def test_merton_density_rejects_bad_sd():
    with pytest.raises(ValueError):
        merton_density(0.0, 0.0)
    with pytest.raises(ValueError):
        merton_density(0.0, -1.0)


def test_no_jump_constant_vol_increment_variance(flat_config):
    # sample variance of increments / h recovers sigma^2 within 3 MC SE
    n = 20000
    path = simulate_path(flat_config, n, H, substeps=4)
    dx = path.increments()
    var_hat = dx.var(ddof=1) / H
    se = 0.04 * math.sqrt(2.0 / n)  # SE of a Gaussian sample variance
    assert abs(var_hat - 0.04) < 3 * se
    assert_array_equal(path.dn, 0)


def test_prm_ait_annualized_volatility():
    # theta + lam * theta_jump^2 = 0.13, i.e. about 36% annualized vol on
    # average (a single year realizes anywhere in roughly 0.31-0.42)
    n = 19656  # one year
    rv = []
    for seed in range(30):
        cfg = HestonMertonConfig(lam=100.0, jump_law=NormalJumpLaw(0.03), rho=0.0,
                                 seed=seed, **PRM_AIT)
        path = simulate_path(cfg, n, H, substeps=4)
        rv.append(float(np.sum(path.increments() ** 2)) / (n * H))
    assert abs(math.sqrt(np.mean(rv)) - 0.36) < 0.02


def test_determinism_same_seed():
    cfg = HestonMertonConfig(lam=200.0, jump_law=NormalJumpLaw(0.03), rho=-0.5,
                             seed=99, **PRM_AIT)
    a = simulate_path(cfg, 500, H, 16)
    b = simulate_path(cfg, 500, H, 16)
    assert_array_equal(a.x, b.x)
    assert_array_equal(a.v, b.v)
    assert_array_equal(a.dn, b.dn)
    assert_array_equal(a.jump_sum, b.jump_sum)


def test_mean_jump_count():
    lam, days, m = 100.0, 5, 300
    n = int(days * 6.5 * 12)
    big_t = n * H
    counts = []
    for rep in range(m):
        cfg = HestonMertonConfig(lam=lam, jump_law=NormalJumpLaw(0.03), rho=0.0,
                                 seed=1000 + rep, **PRM_AIT)
        counts.append(simulate_path(cfg, n, H, 1).dn.sum())
    assert abs(np.mean(counts) - lam * big_t) < 3 * math.sqrt(lam * big_t / m)


def test_variance_path_nonnegative_and_finite():
    cfg = HestonMertonConfig(kappa=5.0, theta=0.04, xi=2.0, rho=-0.9,
                             drift_a=0.05, drift_b=-0.5, lam=0.0,
                             jump_law=NormalJumpLaw(0.03), v0=0.0001, seed=5)
    for substeps in (1, 16):
        path = simulate_path(cfg, 2000, H, substeps)
        assert np.all(np.isfinite(path.v))
        assert np.all(path.v >= 0)
        assert np.all(np.isfinite(path.x))


def test_substeps_change_distribution_not_interface():
    cfg = HestonMertonConfig(lam=50.0, jump_law=NormalJumpLaw(0.03), rho=0.0,
                             seed=21, **PRM_AIT)
    p1 = simulate_path(cfg, 300, H, 1)
    p16 = simulate_path(cfg, 300, H, 16)
    assert p1.n == p16.n
    assert np.all(np.isfinite(p1.x)) and np.all(np.isfinite(p16.x))
    assert_array_equal(p1.x, simulate_path(cfg, 300, H, 1).x)


@pytest.mark.parametrize("bad", [
    dict(kappa=0.0), dict(theta=-0.1), dict(xi=-0.5), dict(rho=1.5),
    dict(lam=-1.0), dict(v0=0.0),
])
def test_invalid_config_rejected(bad):
    base = dict(kappa=5.0, theta=0.04, xi=0.5, rho=0.0, drift_a=0.0, drift_b=0.0,
                lam=10.0, jump_law=NormalJumpLaw(0.03), v0=0.04, seed=0)
    base.update(bad)
    with pytest.raises(ConfigurationError):
        HestonMertonConfig(**base)


def test_simulate_preconditions(flat_config):
    with pytest.raises(ConfigurationError):
        simulate_path(flat_config, 0, H)
    with pytest.raises(ConfigurationError):
        simulate_path(flat_config, 10, -H)
    with pytest.raises(ConfigurationError):
        simulate_path(flat_config, 10, H, substeps=0)


def test_csv_round_trip(tmp_path, prm_ait_path):
    f = tmp_path / "path.csv"
    prm_ait_path.to_csv(str(f))
    back = SamplePath.from_csv(str(f))
    assert_array_equal(back.x, prm_ait_path.x)
    assert_array_equal(back.v, prm_ait_path.v)
    assert_array_equal(back.dn, prm_ait_path.dn)
    assert_array_equal(back.jump_sum, prm_ait_path.jump_sum)
    assert back.h == prm_ait_path.h


def test_csv_malformed_reports_row(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("t,x\n0,1.0\n5e-05,not_a_number\n")
    with pytest.raises(CsvFormatError) as err:
        SamplePath.from_csv(str(f))
    assert err.value.row == 3


def test_user_jump_law_validation():
    ok = UserJumpLaw(
        density=lambda x: np.where(np.abs(x) <= 0.5, 1.0, 0.0),
        sampler=lambda rng, size: rng.uniform(-0.5, 0.5, size),
        support=(-0.5, 0.5),
    )
    assert_allclose(ok.c0, 1.0)
    with pytest.raises(ConfigurationError):
        UserJumpLaw(
            density=lambda x: np.where(np.abs(x) <= 0.5, 0.7, 0.0),  # mass 0.7
            sampler=lambda rng, size: rng.uniform(-0.5, 0.5, size),
            support=(-0.5, 0.5),
        )


def test_user_jump_law_convolution_atoms_match_gaussian():
    # 2-fold convolution of a (truncated) normal matches N(0, 2 theta^2)
    theta = 0.03
    law = UserJumpLaw(
        density=lambda x: merton_density(x, theta),
        sampler=lambda rng, size: rng.normal(0.0, theta, size),
        support=(-10 * theta, 10 * theta),
    )
    xs, ws = law.convolution_atoms(2)
    assert_allclose(ws.sum(), 1.0, atol=1e-12)
    assert abs(float(np.dot(ws, xs))) < 1e-12
    assert_allclose(float(np.dot(ws, xs**2)), 2 * theta**2, rtol=1e-4)
