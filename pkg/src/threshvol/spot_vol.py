"""Kernel and threshold-kernel spot-volatility estimation.

Squared increments are kernel-weighted around the target time; increments
flagged as jumps are dropped.  The unnormalized form matches the plain
weighted sum (the form the iterative algorithms use with bandwidth sqrt(h));
the normalized form divides by the retained kernel mass, which corrects
boundary bias and is the right default for standalone estimation.

The double-exponential kernel admits an exact O(n) forward/backward
recursion, which is what makes whole-path estimation cheap inside the
iterative algorithms.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import dblquad, quad

from .errors import ConfigurationError, DimensionError, InsufficientDataError, NumericalError
from .simulate import SamplePath
from .thresholds import ThresholdVector

__all__ = [
    "Kernel",
    "VolModelSpec",
    "TsrvvEstimate",
    "BandwidthSelection",
    "builtin_kernels",
    "c1_covariance",
    "heston_vol_spec",
    "tkw",
    "kw",
    "tkw_series",
    "one_sided_series",
    "one_sided_estimates",
    "tsrvv",
    "truncated_quarticity",
    "plug_in_bandwidth",
    "plug_in_bandwidth_from_estimates",
    "mse_expansion",
    "optimal_bandwidth",
    "optimal_mse",
    "write_spot_series",
]

_TAIL_RATIO = 1e-12  # kernel weights below this fraction of K(0) are skipped


@dataclass(frozen=True)
class Kernel:
    """Weighting function with its precomputed integrals.

    k2_integral is the integral of K^2; c1_cross_integral is the double
    integral of K(x)K(y)min(|x|,|y|) over the quadrants where x and y share
    a sign (the covariance cross-term for Brownian-driven volatility).
    """

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    support: tuple[float, float]
    k2_integral: float
    c1_cross_integral: float

    @classmethod
    def from_function(cls, name, fn, support) -> "Kernel":
        lo, hi = support
        mass, _ = quad(lambda u: float(fn(u)), lo, hi, limit=200)
        if abs(mass - 1.0) > 1e-9:
            raise ConfigurationError(
                f"kernel {name} integrates to {mass:.12f}, expected 1 within 1e-9"
            )
        k2, _ = quad(lambda u: float(fn(u)) ** 2, lo, hi, limit=200)
        cross = 0.0
        if hi > 0:
            cross += _half_cross(fn, hi)
        if lo < 0:
            cross += _half_cross(lambda u: fn(-u), -lo)
        return cls(name, fn, (lo, hi), k2, cross)

    def __call__(self, x):
        return self.fn(x)


def _half_cross(fn, hi: float) -> float:
    """Integral of K(x)K(y)min(x,y) over the positive quadrant (up to hi)."""

    def tail(y):
        val, _ = quad(fn, y, hi, limit=200)
        return val

    val, _ = quad(lambda y: 2.0 * y * float(fn(y)) * tail(y), 0.0, hi, limit=200)
    return val


def c1_covariance(r, s):
    """Covariance kernel min(|r|, |s|) 1{rs > 0} of Brownian-driven variance."""
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    return np.minimum(np.abs(r), np.abs(s)) * (r * s > 0)


_BUILTINS: dict[str, Kernel] | None = None


def builtin_kernels() -> dict[str, Kernel]:
    """Double-exponential, uniform, one-sided exponential, and Gaussian kernels.

    Integrals come from adaptive quadrature; closed forms (e.g. 1/4 for both
    integrals of the double-exponential) are asserted in the test suite.
    """
    global _BUILTINS
    if _BUILTINS is None:
        _BUILTINS = {
            "double_exponential": Kernel.from_function(
                "double_exponential", lambda x: 0.5 * np.exp(-np.abs(x)), (-np.inf, np.inf)
            ),
            "uniform": Kernel.from_function(
                "uniform",
                lambda x: np.where(np.abs(np.asarray(x, dtype=float)) <= 0.5, 1.0, 0.0),
                (-0.5, 0.5),
            ),
            "one_sided_exponential": Kernel.from_function(
                "one_sided_exponential",
                lambda x: np.where(np.asarray(x, dtype=float) >= 0, np.exp(-np.clip(x, 0, None)), 0.0),
                (0.0, np.inf),
            ),
            "gaussian": Kernel.from_function(
                "gaussian",
                lambda x: np.exp(-np.square(x) / 2.0) / math.sqrt(2.0 * math.pi),
                (-np.inf, np.inf),
            ),
        }
    return _BUILTINS


def double_exponential_kernel() -> Kernel:
    return builtin_kernels()["double_exponential"]


# ---------------------------------------------------------------------------
# exact O(n) machinery for the double-exponential kernel
# ---------------------------------------------------------------------------

def _exp_scan_py(v, q):
    """Geometric partial sums of v along the grid.

    right[i] = sum_{m <= i-1} v[m] * q^(i-m)   (i = 0..n)
    left[i]  = sum_{m >= i+1} v[m] * q^(m-i)   (entries m < n only)
    """
    n = v.size
    right = np.zeros(n + 1)
    left = np.zeros(n + 1)
    acc = 0.0
    for i in range(1, n + 1):
        acc = q * (acc + v[i - 1])
        right[i] = acc
    acc = 0.0
    for i in range(n - 1, -1, -1):
        acc = q * (acc + v[i + 1]) if i + 1 <= n - 1 else 0.0
        left[i] = acc
    return right, left


try:
    from numba import njit

    _exp_scan = njit(cache=True)(_exp_scan_py)
except ImportError:  # pragma: no cover
    _exp_scan = _exp_scan_py


def _exp_weighted_sums(v: np.ndarray, h: float, delta: float):
    """right, mid, left components of sum_m v[m] K_delta(t_m - t_i), i = 0..n.

    The 1/(2*delta) kernel factor is left out; callers reinstate or cancel it.
    """
    q = math.exp(-h / delta)
    right, left = _exp_scan(np.ascontiguousarray(v, dtype=float), q)
    mid = np.zeros(v.size + 1)
    mid[: v.size] = v
    return right, mid, left


def _flags_and_dx(path: SamplePath, b):
    dx = path.increments()
    tv = ThresholdVector.coerce(b, dx.size)
    keep = np.abs(dx) <= tv.b
    return dx, keep


def _kernel_weights(kernel: Kernel, t_left: np.ndarray, tau: float, delta: float) -> np.ndarray:
    w = np.asarray(kernel((t_left - tau) / delta), dtype=float) / delta
    k0 = float(np.max(w)) if w.size else 0.0
    if k0 > 0:
        w[w < _TAIL_RATIO * k0] = 0.0
    return w


def tkw(path: SamplePath, tau: float, delta: float, kernel: Kernel | None = None,
        b=None, normalized: bool = False) -> float:
    """Threshold-kernel spot variance at time tau.

    Unnormalized: sum of K_delta(t_{i-1} - tau) dX_i^2 over non-exceeding
    increments.  Normalized: that sum divided by h times the retained kernel
    mass.
    """
    if kernel is None:
        kernel = double_exponential_kernel()
    big_t = path.n * path.h
    if not 0 < tau - path.t0 < big_t:
        raise ValueError(f"tau must lie strictly inside (t0, t0+T), got {tau}")
    if delta <= 0:
        raise ValueError(f"bandwidth must be positive, got {delta}")
    dx, keep = _flags_and_dx(path, b)
    t_left = path.t0 + path.h * np.arange(path.n)
    w = _kernel_weights(kernel, t_left, tau, delta)
    if not np.any(w > 0):
        raise InsufficientDataError(f"no kernel mass near tau={tau}")
    num = float(np.sum(w * keep * dx * dx))
    if not normalized:
        return num
    denom = path.h * float(np.sum(w * keep))
    if denom <= 0:
        raise InsufficientDataError("all increments near tau exceed their thresholds")
    return num / denom


def kw(path: SamplePath, tau: float, delta: float, kernel: Kernel | None = None,
       normalized: bool = False) -> float:
    """Plain kernel spot variance (no thresholding)."""
    return tkw(path, tau, delta, kernel, b=None, normalized=normalized)


def tkw_series(path: SamplePath, delta: float, kernel: Kernel | None = None,
               b=None, normalized: bool = False) -> np.ndarray:
    """Spot-variance estimates at every observation time t_1 .. t_n.

    In normalized mode an entry is NaN when every increment under the kernel
    window exceeded its threshold.
    """
    if kernel is None:
        kernel = double_exponential_kernel()
    if delta <= 0:
        raise ValueError(f"bandwidth must be positive, got {delta}")
    dx, keep = _flags_and_dx(path, b)
    n = path.n
    if kernel.name == "double_exponential":
        scale = 1.0 / (2.0 * delta)
        r, m, l = _exp_weighted_sums(keep * dx * dx, path.h, delta)
        num = scale * (r + m + l)[1:]
        if not normalized:
            return num
        rd, md, ld = _exp_weighted_sums(keep.astype(float), path.h, delta)
        denom = path.h * scale * (rd + md + ld)[1:]
        out = np.full(n, np.nan)
        ok = denom > 0
        out[ok] = num[ok] / denom[ok]
        return out
    t_left = path.t0 + path.h * np.arange(n)
    out = np.empty(n)
    for i in range(1, n + 1):
        w = _kernel_weights(kernel, t_left, path.t0 + i * path.h, delta)
        num = float(np.sum(w * keep * dx * dx))
        if normalized:
            denom = path.h * float(np.sum(w * keep))
            out[i - 1] = num / denom if denom > 0 else np.nan
        else:
            out[i - 1] = num
    return out


def one_sided_series(path: SamplePath, delta: float, kernel: Kernel | None = None,
                     b=None) -> tuple[np.ndarray, np.ndarray]:
    """Normalized left and right spot-variance estimates at every t_i.

    The left estimator at t_i uses increments j > i, the right one j <= i;
    both divide by the retained one-sided kernel mass.  Entries without data
    or with no retained mass are NaN.
    """
    if kernel is None:
        kernel = double_exponential_kernel()
    if delta <= 0:
        raise ValueError(f"bandwidth must be positive, got {delta}")
    dx, keep = _flags_and_dx(path, b)
    n = path.n
    if kernel.name == "double_exponential":
        rn, mn, ln = _exp_weighted_sums(keep * dx * dx, path.h, delta)
        rd, md, ld = _exp_weighted_sums(keep.astype(float), path.h, delta)
        left_num, left_den = mn + ln, md + ld
        right_num, right_den = rn, rd
    else:
        t_left = path.t0 + path.h * np.arange(n)
        left_num = np.zeros(n + 1)
        left_den = np.zeros(n + 1)
        right_num = np.zeros(n + 1)
        right_den = np.zeros(n + 1)
        wdx2 = keep * dx * dx
        for i in range(n + 1):
            w = _kernel_weights(kernel, t_left, path.t0 + i * path.h, delta)
            wl, wr = w.copy(), w.copy()
            wl[:i] = 0.0  # left keeps j > i, i.e. grid index m = j-1 >= i
            wr[i:] = 0.0  # right keeps j <= i, i.e. m <= i-1
            left_num[i] = np.sum(wl * wdx2)
            left_den[i] = np.sum(wl * keep)
            right_num[i] = np.sum(wr * wdx2)
            right_den[i] = np.sum(wr * keep)
    with np.errstate(invalid="ignore", divide="ignore"):
        left = np.where(left_den > 0, left_num / (path.h * left_den), np.nan)
        right = np.where(right_den > 0, right_num / (path.h * right_den), np.nan)
    return left, right


def one_sided_estimates(path: SamplePath, i: int, delta: float,
                        kernel: Kernel | None = None, b=None) -> tuple[float, float]:
    """Left/right spot-variance pair at t_i, requiring a full kernel window
    of ceil(delta/h) observations on each side."""
    window = math.ceil(delta / path.h)
    if not window <= i <= path.n - window:
        raise InsufficientDataError(
            f"index {i} leaves fewer than {window} observations on one side"
        )
    left, right = one_sided_series(path, delta, kernel, b)
    if not (np.isfinite(left[i]) and np.isfinite(right[i])):
        raise InsufficientDataError(f"no retained increments near index {i}")
    return float(left[i]), float(right[i])


@dataclass(frozen=True)
class TsrvvEstimate:
    """Two-time-scale vol-of-vol estimate; finite samples may be negative."""

    value: float
    k: int
    b_edge: int
    is_negative: bool


def tsrvv(path: SamplePath, delta: float, kernel: Kernel | None = None, b=None,
          k: int | None = None, b_edge: int | None = None) -> TsrvvEstimate:
    """Two-time-scale realized quadratic variation of the spot variance.

    The one-sided estimators put their mass about one bandwidth away from
    the evaluation point, so the slow scale must span well over 4*delta/h
    grid steps or the two-scale difference measures the kernel offset
    instead of the variance increment.  Default k = ceil(max(sqrt(n),
    40*delta/h)); b_edge = ceil(delta/h) trims one kernel window per side.
    """
    n = path.n
    if k is None:
        k = math.ceil(max(math.sqrt(n), 40.0 * delta / path.h))
    if b_edge is None:
        b_edge = math.ceil(delta / path.h)
    if k < 1 or b_edge < 0:
        raise ValueError(f"need k >= 1 and b_edge >= 0, got k={k}, b_edge={b_edge}")
    if n <= 2 * (k + b_edge):
        raise DimensionError(f"need n > 2*(k + b_edge) = {2 * (k + b_edge)}, got n={n}")
    left, right = one_sided_series(path, delta, kernel, b)

    i1 = np.arange(b_edge, n - k - b_edge + 1)
    d_k = right[i1 + k] - left[i1]
    i2 = np.arange(b_edge + k - 1, n - k - b_edge + 1)
    d_1 = right[i2 + 1] - left[i2]
    if not (np.all(np.isfinite(d_k)) and np.all(np.isfinite(d_1))):
        raise NumericalError("one-sided estimates are undefined inside the trimmed range")
    value = float(np.sum(d_k**2) / k - (n - k + 1) / (n * k) * np.sum(d_1**2))
    return TsrvvEstimate(value, k, b_edge, value < 0)


def truncated_quarticity(path: SamplePath, b) -> float:
    """(3h)^(-1) sum dX^4 over increments strictly below their thresholds."""
    dx = path.increments()
    tv = ThresholdVector.coerce(b, dx.size)
    keep = np.abs(dx) < tv.b
    return float(np.sum(dx[keep] ** 4) / (3.0 * path.h))


@dataclass(frozen=True)
class BandwidthSelection:
    """Plug-in bandwidth with the estimates behind it; fallback means the
    vol-of-vol estimate was nonpositive and sqrt(h) was used instead."""

    delta: float
    fallback: bool
    iq: float
    ivv: float


def plug_in_bandwidth_from_estimates(n: int, big_t: float, iq: float, ivv: float,
                                     kernel: Kernel, h: float) -> BandwidthSelection:
    if ivv <= 0:
        return BandwidthSelection(math.sqrt(h), True, iq, ivv)
    delta = n ** (-0.5) * math.sqrt(
        2.0 * big_t * iq * kernel.k2_integral / (ivv * kernel.c1_cross_integral)
    )
    return BandwidthSelection(delta, False, iq, ivv)


def plug_in_bandwidth(path: SamplePath, kernel: Kernel | None = None, b=None,
                      k: int | None = None, b_edge: int | None = None) -> BandwidthSelection:
    """Feasible approximately-optimal bandwidth from truncated quarticity and
    the two-time-scale vol-of-vol estimate.

    The vol-of-vol pilot bandwidth is 20 observation spacings: wide enough
    to average the squared-increment noise, narrow enough that the two-scale
    span dominates the one-sided kernel offset.
    """
    if kernel is None:
        kernel = double_exponential_kernel()
    pilot = 20.0 * path.h
    iq = truncated_quarticity(path, b)
    ivv = tsrvv(path, pilot, kernel, b, k=k, b_edge=b_edge).value
    return plug_in_bandwidth_from_estimates(path.n, path.n * path.h, iq, ivv, kernel, path.h)


@dataclass(frozen=True)
class VolModelSpec:
    """Regularity structure of the variance process.

    varpi is the local-covariance scaling exponent, l_of_t the level
    function, and c_varpi the homogeneous covariance kernel (None selects
    the Brownian-driven min(|r|,|s|)1{rs>0}).
    """

    varpi: float
    l_of_t: Callable[[float], float]
    c_varpi: Callable[[float, float], float] | None = None

    def __post_init__(self):
        if self.varpi <= 0:
            raise ConfigurationError(f"varpi must be positive, got {self.varpi}")
        if self.c_varpi is not None:
            # spot-check homogeneity C(hr, hs) = h^varpi C(r, s)
            for r, s, scale in ((0.7, 0.3, 0.5), (-1.1, -0.4, 2.0), (0.25, 0.9, 0.125)):
                lhs = float(self.c_varpi(scale * r, scale * s))
                rhs = scale**self.varpi * float(self.c_varpi(r, s))
                if abs(lhs - rhs) > 1e-9 * max(1.0, abs(rhs)):
                    raise ConfigurationError(
                        f"c_varpi is not homogeneous of order {self.varpi} at (r,s)=({r},{s})"
                    )


def heston_vol_spec(kappa: float, theta: float, xi: float, v0: float) -> VolModelSpec:
    """Brownian-driven variance: varpi = 1 and L(t) = xi^2 E[V_t]."""

    def l_of_t(t: float) -> float:
        return xi**2 * (theta + (v0 - theta) * math.exp(-kappa * t))

    return VolModelSpec(varpi=1.0, l_of_t=l_of_t, c_varpi=None)


def _cross_integral(kernel: Kernel, spec: VolModelSpec) -> float:
    if spec.c_varpi is None:
        return kernel.c1_cross_integral
    lo, hi = kernel.support
    lo = max(lo, -40.0)
    hi = min(hi, 40.0)
    val, _ = dblquad(
        lambda y, x: float(kernel.fn(x)) * float(kernel.fn(y)) * float(spec.c_varpi(x, y)),
        lo, hi, lo, hi,
    )
    return val


def mse_expansion(sigma4_mean: float, l_tau: float, spec: VolModelSpec, kernel: Kernel,
                  h: float, delta: float) -> float:
    """Leading-order MSE: 2(h/delta) E[sigma^4] int K^2 + delta^varpi L(tau) cross."""
    if min(sigma4_mean, l_tau, h, delta) <= 0:
        raise ValueError("all inputs must be positive")
    cross = _cross_integral(kernel, spec)
    return (
        2.0 * (h / delta) * sigma4_mean * kernel.k2_integral
        + delta**spec.varpi * l_tau * cross
    )


def optimal_bandwidth(sigma4_mean: float, l_tau: float, spec: VolModelSpec, kernel: Kernel,
                      n: int, big_t: float) -> float:
    """Bandwidth minimizing the leading-order MSE."""
    cross = _cross_integral(kernel, spec)
    p = spec.varpi
    return n ** (-1.0 / (p + 1.0)) * (
        2.0 * big_t * sigma4_mean * kernel.k2_integral / (p * l_tau * cross)
    ) ** (1.0 / (p + 1.0))


def optimal_mse(sigma4_mean: float, l_tau: float, spec: VolModelSpec, kernel: Kernel,
                n: int, big_t: float) -> float:
    """Leading-order MSE attained at the optimal bandwidth."""
    cross = _cross_integral(kernel, spec)
    p = spec.varpi
    return (
        n ** (-p / (1.0 + p))
        * (1.0 + p) / p
        * (2.0 * big_t * sigma4_mean * kernel.k2_integral) ** (p / (1.0 + p))
        * (p * l_tau * cross) ** (1.0 / (1.0 + p))
    )


def write_spot_series(path_csv: str, t: np.ndarray, estimate: np.ndarray,
                      truth: np.ndarray | None = None) -> None:
    """CSV of (t, sigma2_hat[, sigma2_true]) rows with round-trip precision."""
    with open(path_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "sigma2_hat"] + (["sigma2_true"] if truth is not None else []))
        for i in range(len(t)):
            row = [f"{t[i]:.17g}", f"{estimate[i]:.17g}"]
            if truth is not None:
                row.append(f"{truth[i]:.17g}")
            writer.writerow(row)
