import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from threshvol import (
    lambda_sigma_hat,
    ConfigurationError,
    DimensionError,
    HestonMertonConfig,
    InsufficientDataError,
    Kernel,
    NormalJumpLaw,
    ThresholdVector,
    VolModelSpec,
    builtin_kernels,
    five_minute_h,
    heston_vol_spec,
    kw,
    mse_expansion,
    one_sided_estimates,
    one_sided_series,
    optimal_bandwidth,
    optimal_mse,
    plug_in_bandwidth,
    plug_in_bandwidth_from_estimates,
    simulate_path,
    threshold_first_order,
    tkw,
    tkw_series,
    truncated_quarticity,
    tsrvv,
)
from threshvol.mc_harness import Scenario

from conftest import make_path

H = five_minute_h()
DE = builtin_kernels()["double_exponential"]
UNIFORM = builtin_kernels()["uniform"]
GAUSS = builtin_kernels()["gaussian"]


def _flat_path(n=2000, seed=7, lam=0.0, xi=0.0, v0=0.04, theta=0.04, rho=0.0,
               jump_sd=0.03, kappa=1.0):
    cfg = HestonMertonConfig(kappa=kappa, theta=theta, xi=xi, rho=rho,
                             drift_a=0.0, drift_b=0.0, lam=lam,
                             jump_law=NormalJumpLaw(jump_sd), v0=v0, seed=seed)
    return simulate_path(cfg, n, H, 1)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def test_builtin_kernels_integrate_to_one():
    from scipy.integrate import quad

    for k in builtin_kernels().values():
        mass, _ = quad(lambda u: float(k.fn(u)), max(k.support[0], -60), min(k.support[1], 60))
        assert abs(mass - 1.0) < 1e-8


def test_builtin_kernel_closed_form_integrals():
    ks = builtin_kernels()
    assert_allclose(ks["double_exponential"].k2_integral, 0.25, atol=1e-10)
    assert_allclose(ks["uniform"].k2_integral, 1.0, atol=1e-10)
    assert_allclose(ks["one_sided_exponential"].k2_integral, 0.5, atol=1e-10)
    assert_allclose(ks["gaussian"].k2_integral, 1 / (2 * math.sqrt(math.pi)), atol=1e-10)
    # cross integrals with analytic values
    assert_allclose(ks["double_exponential"].c1_cross_integral, 0.25, atol=1e-8)
    assert_allclose(ks["uniform"].c1_cross_integral, 1.0 / 12.0, atol=1e-8)
    assert_allclose(ks["one_sided_exponential"].c1_cross_integral, 0.5, atol=1e-8)


def test_kernel_from_function_rejects_unnormalized():
    with pytest.raises(ConfigurationError):
        Kernel.from_function("bad", lambda x: np.exp(-np.abs(x)), (-np.inf, np.inf))


# ---------------------------------------------------------------------------
# tkw / kw
# ---------------------------------------------------------------------------

def test_tkw_constant_signal_identity():
    n = 400
    c = 0.09
    path = make_path(np.full(n, math.sqrt(c * H)))
    tau = n * H / 2
    delta = 40 * H
    norm = tkw(path, tau, delta, UNIFORM, b=None, normalized=True)
    assert_allclose(norm, c, rtol=1e-12)
    unnorm = tkw(path, tau, delta, UNIFORM, b=None, normalized=False)
    assert_allclose(unnorm, c, rtol=0.05)


def test_tkw_all_exceed():
    path = make_path([0.5, -0.6, 0.4, 0.7, -0.5, 0.6, 0.45, -0.55])
    tau = 4 * H
    assert tkw(path, tau, 2 * H, DE, b=0.1, normalized=False) == 0.0
    with pytest.raises(InsufficientDataError):
        tkw(path, tau, 2 * H, DE, b=0.1, normalized=True)


def test_kw_equals_tkw_without_jumps_and_dominates_with():
    path = _flat_path(n=1500, seed=3, lam=200.0)
    tau = 700 * H
    delta = math.sqrt(H)
    b = threshold_first_order(0.04, H)
    assert_allclose(kw(path, tau, delta, DE), tkw(path, tau, delta, DE, b=None), rtol=1e-14)
    assert kw(path, tau, delta, DE) >= tkw(path, tau, delta, DE, b=b)
    quiet = _flat_path(n=1500, seed=3, lam=0.0)
    assert_allclose(kw(quiet, tau, delta, DE), tkw(quiet, tau, delta, DE, b=b), rtol=1e-14)


def test_tkw_series_exponential_recursion_matches_brute_force():
    path = _flat_path(n=300, seed=11, lam=500.0, jump_sd=0.02)
    delta = 15 * H
    b = ThresholdVector.constant(threshold_first_order(0.04, H), 300)
    dx = path.increments()
    keep = np.abs(dx) <= b.b
    t_left = H * np.arange(300)
    for normalized in (False, True):
        fast = tkw_series(path, delta, DE, b, normalized=normalized)
        for i in (1, 2, 150, 299, 300):
            w = DE((t_left - i * H) / delta) / delta
            num = float(np.sum(w * keep * dx * dx))
            ref = num / (H * float(np.sum(w * keep))) if normalized else num
            assert_allclose(fast[i - 1], ref, rtol=1e-10, atol=1e-18)


def test_tkw_series_generic_kernel_matches_pointwise():
    # non-exponential kernels take the direct evaluation path
    path = _flat_path(n=120, seed=19, lam=400.0)
    delta = 12 * H
    b = ThresholdVector.constant(0.008, 120)
    for kernel in (UNIFORM, GAUSS):
        series = tkw_series(path, delta, kernel, b, normalized=True)
        for i in (20, 60, 119):
            assert_allclose(series[i - 1],
                            tkw(path, i * H, delta, kernel, b=b, normalized=True),
                            rtol=1e-12)


def test_one_sided_series_generic_kernel_recovers_flat_variance():
    # interior averages of the generic (non-exponential) path recover sigma^2;
    # single points carry the noise of a handful of increments
    path = _flat_path(n=400, seed=23)
    delta = 15 * H
    left_u, right_u = one_sided_series(path, delta, UNIFORM, None)
    interior = slice(50, 350)
    assert_allclose(np.nanmean(left_u[interior]), 0.04, rtol=0.15)
    assert_allclose(np.nanmean(right_u[interior]), 0.04, rtol=0.15)
    assert np.isnan(right_u[0]) and np.isnan(left_u[400])


def test_tkw_positivity_and_normalized_bound():
    path = _flat_path(n=1000, seed=13, lam=1000.0, jump_sd=0.01)
    b = ThresholdVector.constant(threshold_first_order(0.04, H), 1000)
    spot = tkw_series(path, math.sqrt(H), DE, b, normalized=True)
    assert np.all(spot >= 0)
    assert np.nanmax(spot) <= np.max(path.increments() ** 2) / H + 1e-12


# ---------------------------------------------------------------------------
# one-sided estimators and TSRVV
# ---------------------------------------------------------------------------

def test_one_sided_matches_brute_force():
    path = _flat_path(n=200, seed=5, lam=300.0)
    delta = 10 * H
    b = ThresholdVector.constant(0.01, 200)
    left, right = one_sided_series(path, delta, DE, b)
    dx = path.increments()
    keep = np.abs(dx) <= 0.01
    t_left = H * np.arange(200)
    for i in (1, 50, 199):
        w = DE((t_left - i * H) / delta) / delta
        wl = w.copy()
        wl[:i] = 0.0
        wr = w.copy()
        wr[i:] = 0.0
        assert_allclose(left[i], np.sum(wl * keep * dx * dx) / (H * np.sum(wl * keep)), rtol=1e-10)
        assert_allclose(right[i], np.sum(wr * keep * dx * dx) / (H * np.sum(wr * keep)), rtol=1e-10)


def test_one_sided_flat_variance_agree():
    path = _flat_path(n=6000, seed=9)
    delta = math.sqrt(H)
    left, right = one_sided_estimates(path, 3000, delta, DE, None)
    assert_allclose(left, 0.04, rtol=0.25)
    assert_allclose(right, 0.04, rtol=0.25)
    assert_allclose(left, right, rtol=0.3)


def test_one_sided_boundary_errors():
    path = _flat_path(n=500, seed=1)
    delta = 20 * H
    with pytest.raises(InsufficientDataError):
        one_sided_estimates(path, 5, delta, DE, None)
    with pytest.raises(InsufficientDataError):
        one_sided_estimates(path, 498, delta, DE, None)


def test_one_sided_time_reversal_symmetry():
    # reversing the path swaps the roles of the two estimators (up to the
    # half-open grid convention, i.e. within O(h/delta))
    path = _flat_path(n=800, seed=17)
    delta = 30 * H
    rev = make_path(-path.increments()[::-1])
    i = 400
    l1, r1 = one_sided_estimates(path, i, delta, DE, None)
    l2, r2 = one_sided_estimates(rev, 800 - i, delta, DE, None)
    assert_allclose(l1, r2, rtol=3 * H / delta)
    assert_allclose(r1, l2, rtol=3 * H / delta)


def test_tsrvv_zero_vol_of_vol():
    vals = []
    for seed in range(20):
        path = _flat_path(n=9828, seed=seed)
        vals.append(tsrvv(path, 20 * H, DE, None).value)
    # scale reference: 0.1 * xi^2 * theta * T of the half-year lam=200 study
    assert abs(np.mean(vals)) < 0.1 * 0.25 * 0.04 * 0.5


def test_tsrvv_k1_telescopes_to_zero():
    path = _flat_path(n=2000, seed=2)
    assert tsrvv(path, 20 * H, DE, None, k=1).value == 0.0


def test_tsrvv_recovers_heston_vol_of_vol():
    sc = Scenario(126, 0.0, 0.0, 0.03)
    vals, truths = [], []
    for seed in range(200):
        path = simulate_path(sc.config(seed=4000 + seed), sc.n, sc.h, 16)
        b = threshold_first_order(np.maximum(path.v[1:], 1e-12), path.h)
        est = tsrvv(path, 20 * H, DE, ThresholdVector(b))
        vals.append(est.value)
        truths.append(0.25 * float(np.sum(path.v[:-1]) * path.h))  # xi^2 int V dt
    vals = np.array(vals)
    truth = float(np.mean(truths))
    assert np.mean(vals > 0) >= 0.80
    assert abs(vals.mean() - truth) <= 0.5 * truth


def test_tsrvv_length_precondition():
    path = _flat_path(n=300, seed=4)
    with pytest.raises(DimensionError):
        tsrvv(path, 20 * H, DE, None, k=200, b_edge=20)


# ---------------------------------------------------------------------------
# quarticity and bandwidth selection
# ---------------------------------------------------------------------------

def test_truncated_quarticity_moment():
    m, n = 150, 2000
    vals = []
    for seed in range(m):
        path = _flat_path(n=n, seed=800 + seed)
        vals.append(truncated_quarticity(path, None))
    target = 0.04**2 * n * H
    se = np.std(vals, ddof=1) / math.sqrt(m)
    assert abs(np.mean(vals) - target) < 3 * se


def test_truncated_quarticity_trivial_scaling():
    path = make_path([0.5, -0.6, 0.4])
    assert truncated_quarticity(path, ThresholdVector.constant(0.1, 3)) == 0.0
    doubled = make_path([1.0, -1.2, 0.8])
    q1 = truncated_quarticity(path, ThresholdVector.constant(1.0, 3))
    q2 = truncated_quarticity(doubled, ThresholdVector.constant(2.0, 3))
    assert_allclose(q2, 16 * q1, rtol=1e-12)


def test_plug_in_formula_homogeneity_and_fallback():
    sel = plug_in_bandwidth_from_estimates(1000, 0.25, iq=2e-3, ivv=5e-3, kernel=DE, h=H)
    sel2 = plug_in_bandwidth_from_estimates(1000, 0.25, iq=4e-3, ivv=5e-3, kernel=DE, h=H)
    assert_allclose(sel2.delta, math.sqrt(2) * sel.delta, rtol=1e-12)
    fb = plug_in_bandwidth_from_estimates(1000, 0.25, iq=2e-3, ivv=-1e-4, kernel=DE, h=H)
    assert fb.fallback
    assert_allclose(fb.delta, math.sqrt(H), rtol=1e-14)


def test_plug_in_bandwidth_near_default_scale():
    from threshvol import algo_local

    sc = Scenario(63, 0.0, 200.0, 0.03)
    ratios = []
    for seed in range(100):
        path = simulate_path(sc.config(seed=4500 + seed), sc.n, sc.h, 16)
        tvb, _, _ = algo_local(path, order=2)
        sel = plug_in_bandwidth(path, DE, tvb)
        assert not sel.fallback
        ratios.append(sel.delta / math.sqrt(path.h))
    assert max(ratios) < 3.0 and min(ratios) > 1.0 / 3.0


# ---------------------------------------------------------------------------
# MSE expansion and kernel optimality
# ---------------------------------------------------------------------------

SPEC_HESTON = heston_vol_spec(5.0, 0.04, 0.5, 0.04)


def _sigma4_mean(tau):
    return 0.04**2 + 0.25 * 0.04 / (2 * 5.0) * (1 - math.exp(-2 * 5.0 * tau))


def test_mse_expansion_minimized_at_optimal_bandwidth():
    n, big_t = 4914, 4914 * H
    tau = big_t / 2
    s4, lt = _sigma4_mean(tau), SPEC_HESTON.l_of_t(tau)
    dopt = optimal_bandwidth(s4, lt, SPEC_HESTON, DE, n, big_t)
    mopt = mse_expansion(s4, lt, SPEC_HESTON, DE, H, dopt)
    assert_allclose(mopt, optimal_mse(s4, lt, SPEC_HESTON, DE, n, big_t), rtol=1e-12)
    for delta in np.geomspace(dopt / 8, dopt * 8, 33):
        assert mse_expansion(s4, lt, SPEC_HESTON, DE, H, delta) >= mopt * (1 - 1e-12)


def test_mse_expansion_halving_h_halves_noise_term():
    s4, lt = 0.002, 0.01
    delta = math.sqrt(H)
    m1 = mse_expansion(s4, lt, SPEC_HESTON, DE, H, delta)
    m2 = mse_expansion(s4, lt, SPEC_HESTON, DE, H / 2, delta)
    noise = 2 * (H / delta) * s4 * DE.k2_integral
    assert_allclose(m1 - m2, noise / 2, rtol=1e-12)


def test_mse_expansion_matches_monte_carlo():
    sc = Scenario(63, 0.0, 0.0, 0.03)
    big_t = sc.n * sc.h
    tau = big_t / 2
    s4, lt = _sigma4_mean(tau), SPEC_HESTON.l_of_t(tau)
    errs = {name: [] for name in ("double_exponential", "uniform", "gaussian")}
    kernels = {k.name: k for k in (DE, UNIFORM, GAUSS)}
    deltas = {name: optimal_bandwidth(s4, lt, SPEC_HESTON, k, sc.n, big_t)
              for name, k in kernels.items()}
    for seed in range(500):
        path = simulate_path(sc.config(seed=5000 + seed), sc.n, sc.h, 16)
        v_tau = path.v[sc.n // 2]
        for name, k in kernels.items():
            errs[name].append((kw(path, tau, deltas[name], k) - v_tau) ** 2)
    emp = {name: float(np.mean(v)) for name, v in errs.items()}
    pred = mse_expansion(s4, lt, SPEC_HESTON, DE, sc.h, deltas["double_exponential"])
    assert abs(emp["double_exponential"] - pred) <= 0.35 * pred
    # optimal-kernel ordering, closed form and in the common-path sample
    for other in (UNIFORM, GAUSS):
        assert (optimal_mse(s4, lt, SPEC_HESTON, DE, sc.n, big_t)
                < optimal_mse(s4, lt, SPEC_HESTON, other, sc.n, big_t))
    assert emp["double_exponential"] <= emp["uniform"]
    assert emp["double_exponential"] <= emp["gaussian"]


def test_clt_variance_scaling():
    sc = Scenario(63, 0.0, 0.0, 0.03)
    big_t = sc.n * sc.h
    tau = big_t / 2
    delta = math.sqrt(sc.h)
    t_left = sc.h * np.arange(sc.n)
    wts = DE((t_left - tau) / delta) / delta
    scaled = []
    for seed in range(500):
        path = simulate_path(sc.config(seed=6000 + seed), sc.n, sc.h, 16)
        smoothed = float(np.sum(wts * path.v[:-1]) * sc.h)
        scaled.append((kw(path, tau, delta, DE) - smoothed) / math.sqrt(sc.h / delta))
    target = 2 * _sigma4_mean(tau) * DE.k2_integral
    assert abs(np.var(scaled, ddof=1) - target) <= 0.25 * target


def test_threshold_robustness_of_tkw():
    # constants c in {1,2,3}: MSE changes by <10% between c=2 and c=3
    sc = Scenario(126, 0.0, 200.0, 0.03)
    tau = sc.n * sc.h / 2
    delta = math.sqrt(sc.h)
    sq = {1: [], 2: [], 3: []}
    for seed in range(200):
        path = simulate_path(sc.config(seed=7000 + seed), sc.n, sc.h, 16)
        v_tau = path.v[sc.n // 2]
        _, s2hat = lambda_sigma_hat(
            path, ThresholdVector.constant(threshold_first_order(0.13, sc.h), sc.n))
        for c in (1, 2, 3):
            b = math.sqrt(c * s2hat * sc.h * math.log(1 / sc.h))
            est = tkw(path, tau, delta, DE, b=b, normalized=True)
            sq[c].append((est - v_tau) ** 2)
    m2, m3 = np.mean(sq[2]), np.mean(sq[3])
    assert abs(m2 - m3) / m3 < 0.10


def test_vol_model_spec_homogeneity_check():
    with pytest.raises(ConfigurationError):
        VolModelSpec(varpi=1.0, l_of_t=lambda t: 1.0, c_varpi=lambda r, s: r * r + s)
    ok = VolModelSpec(varpi=2.0, l_of_t=lambda t: 1.0, c_varpi=lambda r, s: r * s * (r * s > 0))
    assert ok.varpi == 2.0
