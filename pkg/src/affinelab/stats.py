"""Shared estimators: empirical CDFs, KS distances, discrepancy, rotation
numbers, log-log exponent fits, and the seeded RNG stream contract.

All stochastic code in this package draws from counter-based Philox streams
keyed by (master seed, task id), so parameter scans can be partitioned across
workers while staying bit-reproducible regardless of scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np


def stream(seed: int, *task_ids: int) -> np.random.Generator:
    """Return an independent Philox stream for (seed, task ids).

    Distinct task id tuples give statistically independent streams; the same
    tuple always gives the same stream.
    """
    key = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    sub = 0
    for t in task_ids:
        # Fibonacci-hash fold, keeps distinct tuples on distinct subkeys.
        sub = (sub * 0x9E3779B97F4A7C15 + int(t) + 1) & 0xFFFFFFFFFFFFFFFF
    return np.random.Generator(np.random.Philox(key=np.array([key, sub], dtype=np.uint64)))


class ECDF:
    """Empirical CDF backed by a sorted sample array.

    Evaluation is right-continuous: F(x) = #{samples <= x} / n.
    """

    def __init__(self, samples) -> None:
        x = np.asarray(samples, dtype=float)
        if x.size == 0:
            raise ValueError("ECDF needs at least one sample")
        self.x = np.sort(x)
        self.n = self.x.size

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.searchsorted(self.x, t, side="right") / self.n

    def left(self, t):
        """Left limit F(x-), needed for sup-distance against continuous CDFs."""
        t = np.asarray(t, dtype=float)
        return np.searchsorted(self.x, t, side="left") / self.n


def ks_distance(e1: ECDF, e2) -> float:
    """Sup-norm distance between two ECDFs, or an ECDF and a CDF grid.

    ``e2`` may be another ECDF or a pair (xs, Fs) of grid points with CDF
    values. The sup is taken over the merged evaluation grid, accounting for
    jumps on both sides.
    """
    if isinstance(e2, ECDF):
        grid = np.concatenate([e1.x, e2.x])
        return float(np.max(np.abs(e1(grid) - e2(grid))))
    xs, fs = e2
    xs = np.asarray(xs, dtype=float)
    fs = np.asarray(fs, dtype=float)
    d_right = np.max(np.abs(e1(xs) - fs))
    d_left = np.max(np.abs(e1.left(xs) - fs))
    return float(max(d_right, d_left))


def discrepancy_1d(samples) -> float:
    """Star discrepancy of points in [0, 1] against the uniform measure."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n == 0:
        raise ValueError("empty sample")
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - x), np.max(x - (i - 1) / n)))


@dataclass
class RotationEstimate:
    value: float
    convergents: list
    n: int


def rotation_number(lift, max_den: int = 10**6) -> RotationEstimate:
    """Rotation number from an orbit lift of a circle map.

    value = (lift_N - lift_0) / N, accurate to O(1/N) for circle
    homeomorphisms; continued-fraction convergents of the estimate are
    reported for rationality diagnostics.
    """
    lift = np.asarray(lift, dtype=float)
    n = lift.size - 1
    if n < 1:
        raise ValueError("need at least two lift values")
    value = (lift[-1] - lift[0]) / n
    convs = []
    frac = Fraction(value).limit_denominator(max_den)
    q = 1
    while q <= frac.denominator:
        c = Fraction(value).limit_denominator(q)
        if not convs or c != convs[-1]:
            convs.append(c)
        q = max(q + 1, c.denominator * 2)
    if not convs or convs[-1] != frac:
        convs.append(frac)
    return RotationEstimate(value=float(value), convergents=convs, n=n)


@dataclass
class FitResult:
    slope: float
    intercept: float
    residual: float
    window: tuple

    def __post_init__(self):
        assert self.residual >= 0.0


def loglog_exponent(series, window: tuple | None = None, flag_short: int = 16) -> FitResult:
    """Least-squares slope of log(series_k) against log(k), k = 1-based.

    By default the fit uses the trailing half of the series (transient
    exclusion). Non-positive entries are dropped. Short series are still fit
    but flagged via residual = inf when fewer than 2 usable points remain.
    """
    y = np.asarray(series, dtype=float)
    n = y.size
    if window is None:
        window = (n // 2, n)
    lo, hi = window
    k = np.arange(1, n + 1)[lo:hi]
    yy = y[lo:hi]
    keep = yy > 0
    k, yy = k[keep], yy[keep]
    if k.size < 2:
        return FitResult(slope=0.0, intercept=0.0, residual=np.inf, window=(lo, hi))
    lx, ly = np.log(k), np.log(yy)
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, res, _, _ = np.linalg.lstsq(A, ly, rcond=None)
    residual = float(np.sqrt(res[0] / k.size)) if res.size else 0.0
    if n < flag_short:
        residual = max(residual, np.inf)
    return FitResult(slope=float(coef[0]), intercept=float(coef[1]),
                     residual=residual, window=(lo, hi))


def batch_mean_se(series, n_batches: int = 20) -> float:
    """Standard error of the mean of a correlated series via batch means."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < 2 * n_batches:
        return float(np.std(x, ddof=1) / np.sqrt(n)) if n > 1 else np.inf
    m = n // n_batches
    batches = x[: m * n_batches].reshape(n_batches, m).mean(axis=1)
    return float(np.std(batches, ddof=1) / np.sqrt(n_batches))
