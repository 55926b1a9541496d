import numpy as np
import pytest

from threshvol import HestonMertonConfig, NormalJumpLaw, SamplePath, five_minute_h, simulate_path

H5MIN = five_minute_h()


@pytest.fixture
def flat_config():
    """Constant variance, no jumps, no drift: increments are iid Gaussian."""
    return HestonMertonConfig(
        kappa=1.0, theta=0.04, xi=0.0, rho=0.0, drift_a=0.0, drift_b=0.0,
        lam=0.0, jump_law=NormalJumpLaw(0.03), x0=0.0, v0=0.04, seed=7,
    )


@pytest.fixture
def prm_ait_path():
    """One month of 5-minute PrmAit data with lam=100 Merton jumps."""
    from threshvol import PRM_AIT

    cfg = HestonMertonConfig(lam=100.0, jump_law=NormalJumpLaw(0.03), rho=0.0,
                             seed=42, **PRM_AIT)
    return simulate_path(cfg, 1638, H5MIN, 16)


def make_path(increments, h=H5MIN, x0=0.0):
    """SamplePath with handpicked increments (no latent data)."""
    x = x0 + np.concatenate([[0.0], np.cumsum(increments)])
    return SamplePath(t0=0.0, h=h, x=x)
