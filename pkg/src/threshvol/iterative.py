"""Iterative threshold estimation.

The approximately optimal thresholds depend on the spot volatility, jump
intensity, and jump density at the origin, while those estimates depend on
the thresholds.  Each algorithm alternates between the two until the induced
jump classification stops changing.  Because the classification lives in a
finite set, every run ends in a fixed point, a cycle, or the iteration cap.

Stopping is decided on the classification: intensity and variance estimates
are functions of the flags alone.  The density estimate also sees the
threshold values through the overshoots |dX|-B, so for second-order variants
a classification fixed point pins the flags (and every flag-determined
estimate) rather than the last float of the threshold vector.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError
from .jump_density import DensityEstimate, estimate_f0
from .simulate import JumpLaw, SamplePath
from .spot_vol import Kernel, double_exponential_kernel, tkw_series
from .thresholds import (
    Classification,
    ThresholdVector,
    classify,
    estimate_n_j_iv,
    threshold_first_order,
    threshold_second_order,
)

__all__ = [
    "IterationRecord",
    "IterationTrace",
    "EstimationReport",
    "algo_constant_first_order",
    "algo_constant_second_order",
    "algo_local",
    "oracle_threshold",
    "sample_loss",
    "METHODS",
]

FIXED_POINT = "fixed_point"
CYCLE = "cycle"
MAX_ITER = "max_iter"

METHODS = ("c1", "c2", "n1", "n2", "oracle")


@dataclass
class IterationRecord:
    """State after one threshold update."""

    index: int
    b_min: float
    b_mean: float
    b_max: float
    digest: str
    lambda_hat: float | None = None
    sigma2_hat: float | None = None
    f0_hat: float | None = None
    spot_digest: str | None = None
    flags: np.ndarray | None = None
    spot: np.ndarray | None = None


@dataclass
class IterationTrace:
    records: list[IterationRecord] = field(default_factory=list)
    status: str = MAX_ITER
    cycle_period: int | None = None
    iterations_used: int = 0

    def losses_per_iteration(self, dn: np.ndarray, through: int) -> list[float]:
        """Misclassification count after each update 1..through; once the
        classification is a fixed point later iterations repeat it exactly."""
        losses: list[float] = []
        for rec in self.records:
            if rec.index >= 1:
                losses.append(float(sample_loss(Classification(rec.flags), dn)))
        while len(losses) < through:
            losses.append(losses[-1])
        return losses[:through]

    def to_rows(self) -> list[dict]:
        rows = []
        for rec in self.records:
            rows.append(
                {
                    "iteration": rec.index,
                    "b_min": rec.b_min,
                    "b_mean": rec.b_mean,
                    "b_max": rec.b_max,
                    "lambda_hat": rec.lambda_hat,
                    "sigma2_hat": rec.sigma2_hat,
                    "f0_hat": rec.f0_hat,
                    "digest": rec.digest,
                    "spot_digest": rec.spot_digest,
                }
            )
        return rows

    def write_csv(self, path: str) -> None:
        rows = self.to_rows()
        cols = list(rows[0].keys())
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for row in rows:
                writer.writerow(["" if row[c] is None else str(row[c]) for c in cols])

    def to_json(self) -> str:
        return json.dumps(
            {
                "status": self.status,
                "cycle_period": self.cycle_period,
                "iterations_used": self.iterations_used,
                "records": self.to_rows(),
            },
            sort_keys=True,
        )


@dataclass
class EstimationReport:
    """Final estimates attached to the returned threshold vector."""

    method: str
    lambda_hat: float
    sigma2_hat: float
    f0_hat: float | None
    spot_vol: np.ndarray | None
    status: str
    iterations_used: int


def sample_loss(classification: Classification, latent_jump_counts) -> int:
    """False positives plus false negatives against the latent jump counts."""
    dn = np.asarray(latent_jump_counts)
    if dn.size != len(classification):
        raise DimensionError(
            f"jump counts have length {dn.size}, classification {len(classification)}"
        )
    flags = classification.flags
    jumped = dn != 0
    return int(np.sum(flags & ~jumped) + np.sum(~flags & jumped))


def _spot_digest(spot: np.ndarray) -> str:
    import hashlib

    return hashlib.sha256(np.ascontiguousarray(spot).tobytes()).hexdigest()[:16]


def _final_report(path: SamplePath, method: str, tv: ThresholdVector, trace: IterationTrace,
                  f0: float | None, spot: np.ndarray | None) -> EstimationReport:
    n_hat, _, iv_hat = estimate_n_j_iv(path, tv)
    t_total = path.n * path.h
    return EstimationReport(
        method=method,
        lambda_hat=n_hat / t_total,
        sigma2_hat=iv_hat / t_total,
        f0_hat=f0,
        spot_vol=spot,
        status=trace.status,
        iterations_used=trace.iterations_used,
    )


def algo_constant_first_order(path: SamplePath):
    """Constant first-order threshold iteration.

    Starts from the full realized variance and alternates the threshold
    formula with the thresholded variance until the classification repeats.
    The variance estimates are non-increasing, so this always terminates at
    a fixed point.
    """
    if path.n < 2:
        raise DimensionError(f"need at least 2 increments, got {path.n}")
    dx = path.increments()
    t_total = path.n * path.h
    sigma2 = float(np.sum(dx * dx)) / t_total
    trace = IterationTrace()
    prev_digest = None
    for it in range(path.n + 2):
        tv = ThresholdVector.constant(threshold_first_order(sigma2, path.h), path.n)
        cls = classify(path, tv)
        n_hat, _, iv_hat = estimate_n_j_iv(path, tv)
        trace.records.append(
            IterationRecord(
                it, *tv.summary(), cls.digest,
                lambda_hat=n_hat / t_total, sigma2_hat=sigma2, flags=cls.flags,
            )
        )
        if cls.digest == prev_digest or iv_hat <= 0.0:
            trace.status = FIXED_POINT
            trace.iterations_used = it
            return tv, _final_report(path, "c1", tv, trace, None, None), trace
        prev_digest = cls.digest
        sigma2 = iv_hat / t_total
    trace.status = MAX_ITER  # unreachable: the update is monotone
    trace.iterations_used = path.n + 2
    return tv, _final_report(path, "c1", tv, trace, None, None), trace


def _f0_for_update(path: SamplePath, detection_tv: ThresholdVector, use_density_threshold: bool,
                   sigma2_for_density) -> DensityEstimate:
    if not use_density_threshold:
        return estimate_f0(path, detection_tv)
    b_dens = np.sqrt(4.0 * np.asarray(sigma2_for_density, dtype=float)
                     * path.h * math.log(1.0 / path.h))
    return estimate_f0(path, ThresholdVector.coerce(
        b_dens if np.ndim(b_dens) else float(b_dens), path.n))


_SAFETY_CAP = 1000


def algo_constant_second_order(path: SamplePath, max_iter: int | None = None,
                               use_density_threshold: bool = False):
    """Constant second-order threshold iteration.

    Each pass re-estimates (lambda, sigma^2) from the current thresholds,
    the jump density at the origin from the exceedances, and rebuilds the
    constant second-order threshold (falling back to first order when the
    bracket is undefined or the density estimate is starved of data).  By
    default the loop runs until the classification reaches a fixed point or
    a cycle; a degenerate state with every increment flagged stops the loop
    and keeps the previous threshold vector.
    """
    if path.n < 2:
        raise DimensionError(f"need at least 2 increments, got {path.n}")
    cap = _SAFETY_CAP if max_iter is None else max_iter
    if cap < 1:
        raise ConfigurationError(f"max_iter must be >= 1, got {max_iter}")
    dx = path.increments()
    t_total = path.n * path.h
    sigma2 = float(np.sum(dx * dx)) / t_total

    tv = ThresholdVector.constant(threshold_first_order(sigma2, path.h), path.n)
    cls = classify(path, tv)
    trace = IterationTrace()
    trace.records.append(IterationRecord(0, *tv.summary(), cls.digest,
                                         sigma2_hat=sigma2, flags=cls.flags))
    seen = {cls.digest: 0}
    vectors = [tv]
    last_f0 = None

    for it in range(1, cap + 1):
        n_hat, _, iv_hat = estimate_n_j_iv(path, tv)
        if iv_hat <= 0.0:  # every increment flagged: no variance left to estimate
            trace.status = MAX_ITER
            trace.iterations_used = it - 1
            tv = vectors[-1]
            return tv, _final_report(path, "c2", tv, trace, last_f0, None), trace
        lam_hat = n_hat / t_total
        sigma2 = iv_hat / t_total
        dens = _f0_for_update(path, tv, use_density_threshold, sigma2)
        last_f0 = dens.f0_hat
        second = threshold_second_order(sigma2, lam_hat, dens.f0_hat, path.h)
        tv = ThresholdVector.constant(second.value, path.n)
        cls = classify(path, tv)
        trace.records.append(
            IterationRecord(it, *tv.summary(), cls.digest,
                            lambda_hat=lam_hat, sigma2_hat=sigma2,
                            f0_hat=dens.f0_hat, flags=cls.flags)
        )
        prev = trace.records[-2].digest
        if cls.digest == prev:
            trace.status = FIXED_POINT
            trace.iterations_used = it
            return tv, _final_report(path, "c2", tv, trace, last_f0, None), trace
        if cls.digest in seen:
            first = seen[cls.digest]
            trace.status = CYCLE
            trace.cycle_period = it - first
            trace.iterations_used = it
            tv = vectors[first]
            return tv, _final_report(path, "c2", tv, trace, last_f0, None), trace
        seen[cls.digest] = it
        vectors.append(tv)

    trace.status = MAX_ITER
    trace.iterations_used = cap
    return tv, _final_report(path, "c2", tv, trace, last_f0, None), trace


def algo_local(path: SamplePath, order: int = 2, max_iter: int = 4,
               kernel: Kernel | None = None, delta: float | None = None,
               use_density_threshold: bool = False, record_spot: bool = False,
               normalized_spot: bool = True, warm_start: bool = True):
    """Local (per-interval) threshold iteration.

    Spot variance at each t_i comes from the threshold-kernel estimator with
    bandwidth sqrt(h) and the double-exponential kernel by default.
    normalized_spot divides by the retained kernel mass, which removes the
    boundary shrinkage of the plain weighted sum.

    Initialization mirrors the constant algorithms: order 1 starts from the
    converged constant first-order threshold, and (with warm_start) order 2
    starts from the converged constant second-order threshold, so the
    intensity and density estimates are usable from the first pass and the
    iteration stabilizes by the second update.
    """
    if order not in (1, 2):
        raise ConfigurationError(f"order must be 1 or 2, got {order}")
    if path.n < 2:
        raise DimensionError(f"need at least 2 increments, got {path.n}")
    if max_iter < 1:
        raise ConfigurationError(f"max_iter must be >= 1, got {max_iter}")
    if kernel is None:
        kernel = double_exponential_kernel()
    if delta is None:
        delta = math.sqrt(path.h)

    _, report0, _ = algo_constant_first_order(path)
    sigma2_0 = report0.sigma2_hat
    t_total = path.n * path.h
    method = f"n{order}"

    if order == 2 and warm_start:
        tv, _, _ = algo_constant_second_order(
            path, use_density_threshold=use_density_threshold
        )
    else:
        tv = ThresholdVector.constant(threshold_first_order(sigma2_0, path.h), path.n)
    cls = classify(path, tv)
    trace = IterationTrace()
    trace.records.append(IterationRecord(0, *tv.summary(), cls.digest,
                                         sigma2_hat=sigma2_0, flags=cls.flags))
    seen = {cls.digest: 0}
    vectors = [tv]
    last_f0 = None
    last_spot = None

    for it in range(1, max_iter + 1):
        spot = tkw_series(path, delta, kernel, tv, normalized=normalized_spot)
        # guard against a kernel window whose increments were all discarded
        spot = np.nan_to_num(spot, nan=sigma2_0)
        spot = np.maximum(spot, 1e-12 * sigma2_0)
        last_spot = spot
        n_hat, _, iv_hat = estimate_n_j_iv(path, tv)
        lam_hat = n_hat / t_total
        sigma2_hat = iv_hat / t_total
        f0_hat = None
        if order == 1:
            b_new = threshold_first_order(spot, path.h)
        else:
            dens = _f0_for_update(path, tv, use_density_threshold, spot)
            f0_hat = dens.f0_hat
            last_f0 = f0_hat
            b_new = threshold_second_order(spot, lam_hat, dens.f0_hat, path.h).value
        tv = ThresholdVector(b_new)
        cls = classify(path, tv)
        trace.records.append(
            IterationRecord(it, *tv.summary(), cls.digest,
                            lambda_hat=lam_hat, sigma2_hat=sigma2_hat, f0_hat=f0_hat,
                            spot_digest=_spot_digest(spot), flags=cls.flags,
                            spot=spot if record_spot else None)
        )
        prev = trace.records[-2].digest
        if cls.digest == prev:
            trace.status = FIXED_POINT
            trace.iterations_used = it
            return tv, _final_report(path, method, tv, trace, last_f0, last_spot), trace
        if cls.digest in seen:
            first = seen[cls.digest]
            trace.status = CYCLE
            trace.cycle_period = it - first
            trace.iterations_used = it
            tv = vectors[first]
            return tv, _final_report(path, method, tv, trace, last_f0, last_spot), trace
        seen[cls.digest] = it
        vectors.append(tv)

    trace.status = MAX_ITER
    trace.iterations_used = max_iter
    return tv, _final_report(path, method, tv, trace, last_f0, last_spot), trace


def oracle_threshold(path: SamplePath, order: int, law: JumpLaw, lam: float) -> ThresholdVector:
    """Per-interval threshold from the true latent variance, intensity, and
    jump density at the origin."""
    if order not in (1, 2):
        raise ConfigurationError(f"order must be 1 or 2, got {order}")
    if path.v is None:
        raise ConfigurationError("oracle thresholds need latent variance samples")
    sigma2_true = np.asarray(path.v[1:], dtype=float)
    sigma2_true = np.maximum(sigma2_true, 1e-12)
    if order == 1:
        return ThresholdVector(threshold_first_order(sigma2_true, path.h))
    return ThresholdVector(threshold_second_order(sigma2_true, lam, law.c0, path.h).value)
