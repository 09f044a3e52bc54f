"""Gap statistics of fractional parts of sqrt(n): direct gap sequences, the
gap-containing functional, the affine-lattice triangle functional and its
lattice route, sandwich / approximation checks, and the Monte-Carlo limiting
distribution.

The lattice route evaluates the triangle functional on geodesic pushes of a
shear curve; for geometric progressions the push is applied incrementally
with per-step renormalization, so arbitrarily large radii stay numerically
well conditioned (the computed sequence is a machine-precision pseudo-orbit,
which is what the distributional statements test).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from . import homogeneous as hg
from .stats import ECDF, ks_distance

DEFAULT_CAP = 1e6


# ---------------------------------------------------------------------------
# Direct gap sequences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GapSequence:
    r: float
    t: np.ndarray      # sorted fractional parts with appended sentinel 1
    gaps: np.ndarray   # successive differences, length floor(r)

    @property
    def n(self) -> int:
        return self.t.size - 1


def frac_sqrt_gaps(r: float) -> GapSequence:
    """Sorted fractional parts of sqrt(1..floor(r)) with sentinel 1.

    Perfect squares contribute exactly 0 (IEEE sqrt of a representable
    perfect square is exact below 2^52).
    """
    if r < 1:
        raise ValueError("need r >= 1")
    n = int(math.floor(r))
    if n > 2**52:
        raise ValueError("direct gap list limited to r <= 2^52")
    k = np.arange(1, n + 1, dtype=np.float64)
    s = np.sqrt(k)
    frac = s - np.floor(s)
    t = np.empty(n + 1)
    t[:n] = np.sort(frac)
    t[n] = 1.0
    return GapSequence(r=float(r), t=t, gaps=np.diff(t))


def L_r(seq: GapSequence, s: float) -> float:
    """Normalized length of the gap containing s.

    k is the largest index with t_k <= s, so ties at repeated values resolve
    to the last equal entry.
    """
    if not 0.0 <= s <= 1.0:
        raise ValueError("s must lie in [0, 1]")
    n = seq.n
    idx = int(np.searchsorted(seq.t[:n], s, side="right")) - 1
    if idx < 0:
        idx = 0
    return n * float(seq.t[idx + 1] - seq.t[idx])


def sandwich_check(r: float, s: float) -> bool:
    """Two-sided comparison of L_r with the perfect-square values bracketing r."""
    n = int(math.floor(r))
    m = int(math.isqrt(n))
    lo = frac_sqrt_gaps((m + 1) ** 2)
    hi = frac_sqrt_gaps(m**2)
    mid = frac_sqrt_gaps(r)
    left = n / (m + 1) ** 2 * L_r(lo, s)
    right = n / m**2 * L_r(hi, s)
    val = L_r(mid, s)
    # identity-level inequality; the slack absorbs only float roundoff
    tol = 1e-9 * max(1.0, val)
    return left <= val + tol and val <= right + tol


# ---------------------------------------------------------------------------
# Triangle functional on affine lattices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TriangleFit:
    b_minus: float
    b_plus: float
    area: float
    status: str  # 'finite' | 'zero' | 'overflow'
    cap: float = DEFAULT_CAP

    @property
    def value(self) -> float:
        """Area as a float, 0 for the zero case, +inf for overflow."""
        if self.status == "overflow":
            return math.inf
        return self.area


@njit(cache=True)
def _enum_strip(B, xi, x_lo, x_hi, budget):
    """Lattice points B k + xi with y in (0,1), x in (x_lo, x_hi), exactly.

    Sweeps the better-conditioned coefficient; returns (points, ok) where ok
    is False if the row/point budget was exceeded.
    """
    det = B[0, 0] * B[1, 1] - B[0, 1] * B[1, 0]
    inv = np.empty((2, 2))
    inv[0, 0] = B[1, 1] / det
    inv[0, 1] = -B[0, 1] / det
    inv[1, 0] = -B[1, 0] / det
    inv[1, 1] = B[0, 0] / det
    # coefficient ranges over the box corners
    corners_x = np.array([x_lo, x_lo, x_hi, x_hi])
    corners_y = np.array([0.0, 1.0, 0.0, 1.0])
    k_lo = np.array([np.inf, np.inf])
    k_hi = np.array([-np.inf, -np.inf])
    for c in range(4):
        px, py = corners_x[c] - xi[0], corners_y[c] - xi[1]
        for i in range(2):
            v = inv[i, 0] * px + inv[i, 1] * py
            if v < k_lo[i]:
                k_lo[i] = v
            if v > k_hi[i]:
                k_hi[i] = v
    sweep = 0 if (k_hi[0] - k_lo[0]) <= (k_hi[1] - k_lo[1]) else 1
    other = 1 - sweep
    bs_x, bo_x = B[0, sweep], B[0, other]
    bs_y, bo_y = B[1, sweep], B[1, other]
    cap = 4096
    pts = np.empty((cap, 2))
    m = 0
    rows = 0
    for ks in range(int(math.floor(k_lo[sweep])) - 1, int(math.ceil(k_hi[sweep])) + 2):
        rows += 1
        if rows > budget:
            return pts[:m], False
        lo = -np.inf
        hi = np.inf
        feasible = True
        # x constraint: x_lo < bs_x*ks + bo_x*ko + xi_x < x_hi
        c0 = bs_x * ks + xi[0]
        if bo_x != 0.0:
            a1 = (x_lo - c0) / bo_x
            a2 = (x_hi - c0) / bo_x
            lo = max(lo, min(a1, a2))
            hi = min(hi, max(a1, a2))
        elif not (x_lo < c0 < x_hi):
            feasible = False
        # y constraint: 0 < bs_y*ks + bo_y*ko + xi_y < 1
        c1 = bs_y * ks + xi[1]
        if feasible and bo_y != 0.0:
            a1 = (0.0 - c1) / bo_y
            a2 = (1.0 - c1) / bo_y
            lo = max(lo, min(a1, a2))
            hi = min(hi, max(a1, a2))
        elif feasible and not (0.0 < c1 < 1.0):
            feasible = False
        if not feasible or hi < lo:
            continue
        for ko in range(int(math.floor(lo)) - 1, int(math.ceil(hi)) + 2):
            x = c0 + bo_x * ko
            y = c1 + bo_y * ko
            if x_lo < x < x_hi and 0.0 < y < 1.0:
                if m == cap:
                    cap *= 2
                    grown = np.empty((cap, 2))
                    grown[:m] = pts[:m]
                    pts = grown
                if m > budget:
                    return pts[:m], False
                pts[m, 0] = x
                pts[m, 1] = y
                m += 1
    return pts[:m], True


def _side_min_ratio(B, xi, x_eps: float, cap: float, budget: int) -> Optional[float]:
    """min{x/y} over strip points with x in (x_eps, cap], exact; None if empty."""
    w = 1.0
    while True:
        pts, ok = _enum_strip(B, xi, x_eps, min(w, cap), budget)
        if not ok:
            raise RuntimeError("strip enumeration budget exceeded")
        if pts.shape[0]:
            rho = float(np.min(pts[:, 0] / pts[:, 1]))
            if rho <= w or w >= cap:
                return rho
            w2 = min(rho, cap)
            pts, ok = _enum_strip(B, xi, x_eps, w2, budget)
            if not ok:
                raise RuntimeError("strip enumeration budget exceeded")
            return float(np.min(pts[:, 0] / pts[:, 1]))
        if w >= cap:
            return None
        w *= 8.0


def f_triangle(L: hg.AffineLatticeClass, cap: float = DEFAULT_CAP,
               budget: int = 50_000_000) -> TriangleFit:
    """Maximal area of a lattice-point-free triangle with apex at the origin,
    base on y = 1, whose interior contains the open unit vertical segment.

    b_plus = min{x/y : 0 < y < 1, x > 0}, b_minus = max{x/y : x < 0}, and the
    area is (b_plus - b_minus)/2. A lattice point on {0} x (0,1) forces area 0
    ('zero'); an empty side within |x| <= cap reports 'overflow'.
    """
    rep = L.reduce().rep
    B, xi = rep.h, rep.xi
    ztol = 1e-12 * max(1.0, float(np.abs(B).max()), float(np.abs(xi).max()))
    zero_pts, ok = _enum_strip(B, xi, -ztol, ztol, budget)
    if not ok:
        raise RuntimeError("strip enumeration budget exceeded")
    if zero_pts.shape[0]:
        return TriangleFit(b_minus=0.0, b_plus=0.0, area=0.0, status="zero", cap=cap)
    b_plus = _side_min_ratio(B, xi, ztol, cap, budget)
    mirror_B = B * np.array([[-1.0], [1.0]])
    mirror_xi = xi * np.array([-1.0, 1.0])
    b_minus_m = _side_min_ratio(mirror_B, mirror_xi, ztol, cap, budget)
    if b_plus is None or b_minus_m is None:
        return TriangleFit(b_minus=math.nan, b_plus=math.nan, area=math.inf,
                           status="overflow", cap=cap)
    b_minus = -b_minus_m
    return TriangleFit(b_minus=b_minus, b_plus=b_plus,
                       area=0.5 * (b_plus - b_minus), status="finite", cap=cap)


# ---------------------------------------------------------------------------
# Lattice route to the gap functional
# ---------------------------------------------------------------------------

def shear_curve_element(r: float, s: float) -> hg.AffineElement:
    """Geodesic push to time log(sqrt r) of the shear curve at s.

    Explicitly h = ((sqrt r, -2 s sqrt r), (0, 1/sqrt r)),
    xi = (-s^2 sqrt r, s / sqrt r).
    """
    sr = math.sqrt(r)
    h = np.array([[sr, -2.0 * s * sr], [0.0, 1.0 / sr]])
    xi = np.array([-s * s * sr, s / sr])
    return hg.AffineElement(h, xi)


def L_prime_fit(r: float, s: float, cap: float = DEFAULT_CAP) -> TriangleFit:
    """Triangle functional of the pushed shear lattice (one-shot evaluation).

    One-shot conditioning degrades like eps * r; use GapOrbit for geometric
    progressions with very large r.
    """
    if r < 1 or not 0.0 < s <= 1.0:
        raise ValueError("need r >= 1 and s in (0, 1]")
    L = hg.AffineLatticeClass.from_element(shear_curve_element(r, s))
    return f_triangle(L, cap=cap)


def L_prime(r: float, s: float, cap: float = DEFAULT_CAP) -> float:
    return L_prime_fit(r, s, cap).value


class GapOrbit:
    """Geodesic orbit serving the gap functional along r_n = c q^n.

    The state is advanced by a fixed geodesic step with renormalization after
    every step, so the basis stays reduced no matter how large r gets.
    """

    def __init__(self, c: float, s: float, cap: float = DEFAULT_CAP) -> None:
        if c < 1 or not 0.0 < s <= 1.0:
            raise ValueError("need c >= 1 and s in (0, 1]")
        self.s = s
        self.cap = cap
        self.log_r = math.log(c)
        g = hg.compose(hg.geodesic(0.5 * math.log(c)), hg.horocycle(-2 * s, -s * s, s))
        self.x = hg.AffineLatticeClass.from_element(g).reduce()

    @property
    def r(self) -> float:
        return math.exp(self.log_r)

    def step(self, q: float) -> None:
        """Multiply r by q (geodesic time log(sqrt q))."""
        self.x = hg.translate(hg.geodesic(0.5 * math.log(q)), self.x).reduce()
        self.log_r += math.log(q)

    def fit(self) -> TriangleFit:
        return f_triangle(self.x, cap=self.cap)


def geometric_values(c: float, q: float, N: int, s: float,
                     cap: float = DEFAULT_CAP) -> np.ndarray:
    """Values of the gap functional along r_n = c q^n, n = 1..N (lattice route)."""
    orbit = GapOrbit(c, s, cap=cap)
    out = np.empty(N)
    for n in range(N):
        orbit.step(q)
        out[n] = orbit.fit().value
    return out


# ---------------------------------------------------------------------------
# Monte-Carlo limiting distribution
# ---------------------------------------------------------------------------

def limiting_f_samples(n_samples: int, rng: np.random.Generator,
                       cap: float = DEFAULT_CAP) -> np.ndarray:
    """Triangle-functional values of Haar-random affine lattices.

    Overflow samples come back as +inf and count as 'beyond any level' in CDF
    estimates.
    """
    out = np.empty(n_samples)
    for i in range(n_samples):
        out[i] = f_triangle(hg.haar_sample(rng), cap=cap).value
    return out


def limiting_cdf_mc(level, n_samples: int, rng: np.random.Generator,
                    cap: float = DEFAULT_CAP, samples: Optional[np.ndarray] = None):
    """Monte-Carlo estimate of P(f <= level) with standard error."""
    f = samples if samples is not None else limiting_f_samples(n_samples, rng, cap)
    level = np.asarray(level, dtype=float)
    p = np.array([(f <= l).mean() for l in np.atleast_1d(level)])
    se = np.sqrt(p * (1 - p) / f.size)
    if np.isscalar(level) or level.ndim == 0:
        return float(p[0]), float(se[0])
    return p, se


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

def approx_ratio_stats(n: int, s_samples, A: int = 10, cap: float = DEFAULT_CAP):
    """Compare the direct and lattice routes at r = n^2 over sampled s.

    Reports the median |L/L' - 1|, the fraction of samples inside the
    (2A+1)/(2A+2) .. (2A+1)/(2A) band, and the count of excluded degenerate
    samples.
    """
    seq = frac_sqrt_gaps(n * n)
    ratios = []
    n_zero = 0
    lo_band = (2 * A + 1) / (2 * A + 2)
    hi_band = (2 * A + 1) / (2 * A)
    in_band = 0
    rows = []
    for s in s_samples:
        fit = L_prime_fit(n * n, s, cap=cap)
        direct = L_r(seq, s)
        rows.append((n * n, s, direct, fit.value, fit.status))
        if fit.status != "finite" or fit.value == 0.0:
            n_zero += 1
            continue
        ratio = direct / fit.value
        ratios.append(ratio)
        if lo_band <= ratio <= hi_band:
            in_band += 1
    ratios = np.array(ratios)
    total = len(ratios) + n_zero
    return {
        "median_abs_dev": float(np.median(np.abs(ratios - 1.0))) if ratios.size else math.nan,
        "in_band_fraction": in_band / total if total else math.nan,
        "n_excluded": n_zero,
        "n_total": total,
        "rows": rows,
    }


@dataclass
class GapExperiment:
    """Geometric-progression experiment record: r_n = c q^n, n = 1..N."""

    c: float
    q: float
    N: int
    results: list  # per-s dicts: s, ks, n_overflow[, change_indices]

    def __post_init__(self):
        if not (self.c >= 1 and self.q > 1):
            raise ValueError("need c >= 1 and q > 1 (strictly increasing r_n)")

    @property
    def r_values(self) -> np.ndarray:
        return self.c * self.q ** np.arange(1, self.N + 1)


def geometric_gap_experiment(c: float, q: float, N: int, s_samples,
                             mc_samples: np.ndarray, cap: float = DEFAULT_CAP,
                             track_change_times: bool = False) -> GapExperiment:
    """Per-s KS distance between {L'_{c q^n}(s)}_{n<=N} and the Monte-Carlo
    limiting law. Optionally logs the indices where the value changes (the
    gap-change times of the open question; no acceptance attached).
    """
    mc_ecdf = ECDF(mc_samples)
    results = []
    for task, s in enumerate(s_samples):
        vals = geometric_values(c, q, N, s, cap=cap)
        ks = ks_distance(ECDF(vals), mc_ecdf)
        entry = {"s": float(s), "ks": float(ks),
                 "n_overflow": int(np.sum(~np.isfinite(vals)))}
        if track_change_times:
            change = np.nonzero(vals[1:] != vals[:-1])[0] + 1
            entry["change_indices"] = change
        results.append(entry)
    return GapExperiment(c=c, q=q, N=N, results=results)


def plain_gap_distribution(r: float, bin_width: float = 0.05, t_max: float = 10.0):
    """Histogram of normalized gaps with the low-range density check.

    Returns bin edges/counts, the fraction of gaps <= 1/2 (limit 3/pi^2), and
    the mass beyond 6.
    """
    if r < 1e3:
        raise ValueError("plain gap histogram needs r >= 1e3")
    seq = frac_sqrt_gaps(r)
    norm = seq.gaps * seq.n
    edges = np.arange(0.0, t_max + bin_width, bin_width)
    counts, edges = np.histogram(norm, bins=edges)
    return {
        "edges": edges,
        "counts": counts,
        "fraction_below_half": float(np.mean(norm <= 0.5)),
        "mass_beyond_6": float(np.mean(norm > 6.0)),
        "mean_normalized": float(norm.mean()),
    }
