"""Arithmetic of the affine group over the plane, flows on the space of
affine lattices, lattice invariants, Haar sampling, and Birkhoff averaging
along curves.

An element (h, xi) with h a unimodular 2x2 matrix and xi a plane vector acts
on the integer lattice; its coset under the integer affine group is the
affine lattice h*Z^2 + xi. All class-level operations here are invariant
under change of representative, which the tests exercise directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numba import njit

from .stats import batch_mean_se

INFINITE = float("inf")

_UNIMODULAR_TOL = 1e-12


# ---------------------------------------------------------------------------
# Group elements and one-parameter subgroups
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineElement:
    """Group element (h, xi): x -> h x + xi with det h = 1."""

    h: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "h", np.array(self.h, dtype=float).reshape(2, 2))
        object.__setattr__(self, "xi", np.array(self.xi, dtype=float).reshape(2))

    @property
    def det(self) -> float:
        return float(self.h[0, 0] * self.h[1, 1] - self.h[0, 1] * self.h[1, 0])

    def check_unimodular(self, tol: float = _UNIMODULAR_TOL) -> None:
        if abs(self.det - 1.0) > tol:
            raise ValueError(f"matrix is not unimodular: det = {self.det}")

    def apply(self, v) -> np.ndarray:
        return self.h @ np.asarray(v, dtype=float) + self.xi


def identity() -> AffineElement:
    return AffineElement(np.eye(2), np.zeros(2))


def compose(g1: AffineElement, g2: AffineElement) -> AffineElement:
    """(h1, xi1) * (h2, xi2) = (h1 h2, h1 xi2 + xi1)."""
    return AffineElement(g1.h @ g2.h, g1.h @ g2.xi + g1.xi)


def inverse(g: AffineElement) -> AffineElement:
    h, xi = g.h, g.xi
    hinv = np.array([[h[1, 1], -h[0, 1]], [-h[1, 0], h[0, 0]]]) / (
        h[0, 0] * h[1, 1] - h[0, 1] * h[1, 0]
    )
    return AffineElement(hinv, -hinv @ xi)


def geodesic(t: float) -> AffineElement:
    """Diagonal flow element (diag(e^t, e^-t), 0)."""
    return AffineElement(np.array([[math.exp(t), 0.0], [0.0, math.exp(-t)]]), np.zeros(2))


def horocycle(s1: float, s2: float, s3: float) -> AffineElement:
    """Upper-unipotent element ([[1, s1], [0, 1]], (s2, s3))."""
    return AffineElement(np.array([[1.0, s1], [0.0, 1.0]]), np.array([s2, s3]))


def rotation(theta: float) -> AffineElement:
    """Counterclockwise rotation (r_theta, 0)."""
    c, s = math.cos(theta), math.sin(theta)
    return AffineElement(np.array([[c, -s], [s, c]]), np.zeros(2))


@dataclass(frozen=True)
class CurveU:
    """Curve s -> ([[1, s], [0, 1]], (phi(s), 0)) in the lattice space.

    dphi must be the derivative of phi; the constructor of downstream tests
    checks this to finite-difference accuracy.
    """

    phi: Callable[[float], float]
    dphi: Callable[[float], float]
    domain: tuple = (0.0, 1.0)


def curve_point(c: CurveU, s: float) -> AffineElement:
    lo, hi = c.domain
    if not lo <= s <= hi:
        raise ValueError(f"s = {s} outside curve domain [{lo}, {hi}]")
    return horocycle(s, c.phi(s), 0.0)


# ---------------------------------------------------------------------------
# Lattice reduction and invariants
# ---------------------------------------------------------------------------

def gauss_reduce(h) -> tuple[np.ndarray, np.ndarray]:
    """Lagrange/Gauss reduction of the column basis of ``h``.

    Returns (B, U) with B = h @ U, U integer with det +-1, and the columns of
    B satisfying ||b1|| <= ||b2|| and |<b1, b2>| <= ||b1||^2 / 2, so b1 is a
    shortest nonzero lattice vector.
    """
    b = np.array(h, dtype=float).reshape(2, 2).copy()
    u = np.eye(2, dtype=np.int64)
    for _ in range(10_000):
        n1 = b[0, 0] ** 2 + b[1, 0] ** 2
        n2 = b[0, 1] ** 2 + b[1, 1] ** 2
        if n2 < n1:
            b = b[:, ::-1].copy()
            u = u[:, ::-1].copy()
            n1, n2 = n2, n1
        mu = round((b[0, 0] * b[0, 1] + b[1, 0] * b[1, 1]) / n1)
        if mu == 0:
            return b, u
        b[:, 1] -= mu * b[:, 0]
        u[:, 1] -= mu * u[:, 0]
        if np.abs(u).max() > 2**62:
            raise OverflowError("reduction transform exceeds int64 range")
    raise RuntimeError("Gauss reduction failed to terminate")


def shortest_vector(h) -> np.ndarray:
    """Nonzero vector of h*Z^2 with minimal Euclidean norm.

    Ties (square, hexagonal lattices) are broken by lexicographic order on
    (x, y), largest first, so the result is deterministic.
    """
    b, _ = gauss_reduce(h)
    b1, b2 = b[:, 0], b[:, 1]
    cands = [b1, -b1, b2, -b2, b1 + b2, -(b1 + b2), b1 - b2, b2 - b1]
    norms = [float(np.hypot(v[0], v[1])) for v in cands]
    best = min(norms)
    tied = [v for v, n in zip(cands, norms) if n <= best * (1 + 1e-12)]
    tied.sort(key=lambda v: (v[0], v[1]), reverse=True)
    return tied[0].copy()


@dataclass(frozen=True)
class AffineLatticeClass:
    """Coset of an AffineElement: the affine lattice h*Z^2 + xi.

    Any two representatives differ by h -> h g, xi -> xi + h m with g integer
    unimodular and m integer; every operation defined on this class gives
    identical results for all representatives.
    """

    rep: AffineElement
    reduced: bool = False

    @staticmethod
    def from_element(g: AffineElement) -> "AffineLatticeClass":
        return AffineLatticeClass(rep=g)

    def reduce(self) -> "AffineLatticeClass":
        """Representative with Gauss-reduced basis and xi in the base cell."""
        if self.reduced:
            return self
        b, _ = gauss_reduce(self.rep.h)
        y = np.linalg.solve(b, self.rep.xi)
        xi = b @ (y - np.floor(y))
        return AffineLatticeClass(AffineElement(b, xi), reduced=True)

    def rerepresent(self, gamma, m) -> "AffineLatticeClass":
        """Same class through the representative (h gamma, xi + h m)."""
        gamma = np.asarray(gamma, dtype=float).reshape(2, 2)
        m = np.asarray(m, dtype=float).reshape(2)
        g = self.rep
        return AffineLatticeClass(AffineElement(g.h @ gamma, g.xi + g.h @ m))

    def points_near(self, center, radius: float) -> np.ndarray:
        """All lattice points within ``radius`` of ``center`` (exact)."""
        r = self.reduce().rep
        return _points_in_disc(r.h, r.xi, np.asarray(center, float), float(radius))


def translate(g: AffineElement, L: AffineLatticeClass) -> AffineLatticeClass:
    """Left action of the group on the lattice space."""
    return AffineLatticeClass(compose(g, L.rep))


def alpha0(L: AffineLatticeClass) -> float:
    """Cusp height: inverse square root of the shortest-vector norm.

    Independent of the translation part and of the representative; bounded
    below by 2^-1/2.
    """
    sv = shortest_vector(L.rep.h)
    return float(np.hypot(sv[0], sv[1]) ** -0.5)


def in_X2(L: AffineLatticeClass, tol: float = 1e-12) -> bool:
    """True iff the translation part is not a lattice point of h*Z^2."""
    g = L.rep
    y = np.linalg.solve(g.h, g.xi)
    return bool(np.max(np.abs(y - np.round(y))) > tol)


def zeta_point(L: AffineLatticeClass, n: int) -> Optional[np.ndarray]:
    """The unique point of (1/n)Z^2 carried within (1/2n)*alpha0^-2 of xi.

    Found by closest-vector enumeration over a radius-3 coefficient box in the
    Gauss-reduced basis of h/n, which is exhaustive in 2D. Returns None when
    no point qualifies; raises if two do (they cannot, by the strict bound).
    """
    if n < 1:
        raise ValueError("n must be a positive integer")
    g = L.rep
    sv = shortest_vector(g.h)
    radius = float(np.hypot(sv[0], sv[1])) / (2 * n)  # = alpha0^-2 / (2n)
    b, u = gauss_reduce(g.h / n)
    c = np.linalg.solve(b, g.xi)
    k0 = np.round(c).astype(np.int64)
    hits = []
    for i in range(-3, 4):
        for j in range(-3, 4):
            k = k0 + np.array([i, j])
            d = g.xi - b @ k
            if np.hypot(d[0], d[1]) < radius:
                hits.append(k)
    if not hits:
        return None
    if len(hits) > 1:
        raise RuntimeError("closest-point bound admitted two candidates")
    return (u @ hits[0]).astype(float) / n


@dataclass(frozen=True)
class HeightValue:
    """Heights of a class relative to the cusp and the closed-orbit locus.

    alphaN and betaN are INFINITE exactly when the class lies on the locus
    where xi is a (1/n)-rational lattice point.
    """

    alpha0: float
    alphaN: float
    betaN: float
    n: int
    t: float

    @property
    def infinite(self) -> bool:
        return math.isinf(self.alphaN)


def heights(L: AffineLatticeClass, n: int, t: float) -> HeightValue:
    a0 = alpha0(L)
    zeta = zeta_point(L, n)
    if zeta is None:
        aN = 1.0
    else:
        g = L.rep
        d = g.xi - g.h @ zeta
        dist = float(np.hypot(d[0], d[1]))
        # Exact-hit tolerance is scale-relative: alpha0^-2 is the shortest norm.
        if dist < 1e-12 * a0**-2:
            aN = INFINITE
        else:
            aN = dist**-0.5
    bN = aN + 8 * n * math.exp(t) * a0 if math.isfinite(aN) else INFINITE
    return HeightValue(alpha0=a0, alphaN=aN, betaN=bN, n=n, t=t)


# ---------------------------------------------------------------------------
# Haar sampling
# ---------------------------------------------------------------------------

def haar_sample(rng: np.random.Generator) -> AffineLatticeClass:
    """Affine lattice drawn from the invariant probability measure.

    The base point of the modular fundamental domain is drawn from the
    hyperbolic area measure (x uniform, y by inverse CDF of y^-2 rejected on
    |x+iy| < 1), composed with a uniform rotation; the translation part is
    uniform in the fundamental cell.
    """
    while True:
        x = rng.uniform(-0.5, 0.5)
        y = (math.sqrt(3) / 2) / (1.0 - rng.random())
        if x * x + y * y >= 1.0:
            break
    sy = math.sqrt(y)
    h_tau = np.array([[1.0 / sy, x / sy], [0.0, sy]])
    theta = rng.uniform(0.0, 2.0 * math.pi)
    c, s = math.cos(theta), math.sin(theta)
    h = np.array([[c, -s], [s, c]]) @ h_tau
    xi = h @ rng.random(2)
    return AffineLatticeClass(AffineElement(h, xi))


# ---------------------------------------------------------------------------
# Observables and Birkhoff averages
# ---------------------------------------------------------------------------

class CuspBump:
    """Continuous observable max(0, 1 - alpha0/c), supported on {alpha0 <= c}."""

    def __init__(self, c: float) -> None:
        if c <= 2**-0.5:
            raise ValueError("support level must exceed the alpha0 floor 2^-1/2")
        self.c = float(c)
        self.name = f"cusp_bump:c={c:g}"

    def __call__(self, L: AffineLatticeClass) -> float:
        return float(self.from_alpha0(alpha0(L)))

    def from_alpha0(self, a0):
        return np.maximum(0.0, 1.0 - np.asarray(a0, dtype=float) / self.c)


def cusp_bump(c: float) -> CuspBump:
    return CuspBump(c)


_OBSERVABLE_PRESETS = {"cusp_bump": CuspBump}


def observable_from_name(spec: str):
    """Parse a named observable preset such as 'cusp_bump:c=3'."""
    name, _, argpart = spec.partition(":")
    if name not in _OBSERVABLE_PRESETS:
        raise ValueError(f"unknown observable preset {name!r}")
    kwargs = {}
    if argpart:
        for item in argpart.split(","):
            k, _, v = item.partition("=")
            kwargs[k.strip()] = float(v)
    return _OBSERVABLE_PRESETS[name](**kwargs)


def orbit_alpha0(x0: AffineLatticeClass, T: float, dt: float) -> np.ndarray:
    """alpha0 along the geodesic orbit of x0, sampled at 0, dt, ..., T.

    The representative is renormalized (reduced) after every step so the
    computation stays well conditioned over long horizons.
    """
    r = x0.reduce().rep
    n = int(round(T / dt))
    return _orbit_alpha0_kernel(r.h.copy(), n, dt)


def birkhoff_average(x0: AffineLatticeClass, obs, T: float, dt: float = 0.01) -> float:
    """Trapezoid average of obs along the geodesic orbit of x0 over [0, T]."""
    if not (T > 0 and 0 < dt <= T):
        raise ValueError("need T > 0 and 0 < dt <= T")
    series = birkhoff_series(x0, obs, T, dt)
    w = np.ones(series.size)
    w[0] = w[-1] = 0.5
    return float(np.sum(w * series) / w.sum())


def birkhoff_series(x0: AffineLatticeClass, obs, T: float, dt: float = 0.01) -> np.ndarray:
    """Observable values along the geodesic orbit (fast path for alpha0-based obs)."""
    if hasattr(obs, "from_alpha0"):
        return np.asarray(obs.from_alpha0(orbit_alpha0(x0, T, dt)), dtype=float)
    n = int(round(T / dt))
    x = x0.reduce()
    step = geodesic(dt)
    out = np.empty(n + 1)
    out[0] = obs(x)
    for k in range(1, n + 1):
        x = translate(step, x).reduce()
        out[k] = obs(x)
    return out


def birkhoff_average_se(x0, obs, T: float, dt: float = 0.01, n_batches: int = 20):
    """Birkhoff average along the orbit together with a batch-means SE."""
    series = birkhoff_series(x0, obs, T, dt)
    return float(series.mean()), batch_mean_se(series, n_batches)


def haar_mean(obs, n_samples: int, rng: np.random.Generator):
    """Monte-Carlo space average of an observable; returns (mean, stderr)."""
    if hasattr(obs, "from_alpha0"):
        vals = obs.from_alpha0(
            np.array([alpha0(haar_sample(rng)) for _ in range(n_samples)])
        )
    else:
        vals = np.array([obs(haar_sample(rng)) for _ in range(n_samples)])
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_samples))


def unit_contraction_integral(x: AffineLatticeClass, t: float, ds: float = 1e-4,
                              n_sub: int = 20) -> float:
    """Trapezoid quadrature of s -> alpha0(a_t u(s) x) over [-1, 1].

    The geodesic push to time t is applied in n_sub renormalized substeps per
    node, which keeps the basis reduction well conditioned for large t.
    """
    r = x.reduce().rep
    n = int(round(2.0 / ds))
    s_grid = np.linspace(-1.0, 1.0, n + 1)
    vals = _alpha0_pushed_kernel(r.h.copy(), s_grid, t, n_sub)
    w = np.ones(n + 1)
    w[0] = w[-1] = 0.5
    return float(np.sum(w * vals) * ds)


# ---------------------------------------------------------------------------
# Wronskian non-degeneracy checker
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WronskianCurve:
    """C^2 curve s -> (h(s), v(s)) in the affine group with a domain.

    ``f`` returns the AffineElement at s. Analytic first/second derivatives
    may be supplied as ``df``/``d2f`` returning (dh, dv) arrays; otherwise
    central differences with step 1e-4 * |domain| are used.
    """

    f: Callable[[float], AffineElement]
    domain: tuple
    df: Optional[Callable] = None
    d2f: Optional[Callable] = None

    def components(self, s: float) -> np.ndarray:
        g = self.f(s)
        return np.array([g.h[0, 0], g.h[0, 1], g.xi[0]])


def wronskian_det(psi: WronskianCurve, s: float) -> float:
    """det of the 3x3 matrix stacking (h11, h12, v1) with its s-derivatives."""
    lo, hi = psi.domain
    if not lo <= s <= hi:
        raise ValueError(f"s = {s} outside curve domain [{lo}, {hi}]")
    row0 = psi.components(s)
    if psi.df is not None and psi.d2f is not None:
        dh, dv = psi.df(s)
        row1 = np.array([dh[0, 0], dh[0, 1], dv[0]])
        dh2, dv2 = psi.d2f(s)
        row2 = np.array([dh2[0, 0], dh2[0, 1], dv2[0]])
    else:
        e = 1e-4 * (hi - lo)
        e = min(e, s - lo, hi - s) if min(s - lo, hi - s) > 0 else e
        if e <= 0:
            e = 1e-4 * (hi - lo)
        fp = psi.components(min(s + e, hi))
        fm = psi.components(max(s - e, lo))
        row1 = (fp - fm) / (2 * e)
        row2 = (fp - 2 * row0 + fm) / (e * e)
    m = np.vstack([row0, row1, row2])
    return float(np.linalg.det(m))


# ---------------------------------------------------------------------------
# Numba kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _reduce2(b11, b21, b12, b22):
    """Lagrange-reduce a column pair in place; returns the reduced columns."""
    for _ in range(200):
        n1 = b11 * b11 + b21 * b21
        n2 = b12 * b12 + b22 * b22
        if n2 < n1:
            b11, b12 = b12, b11
            b21, b22 = b22, b21
            n1, n2 = n2, n1
        mu = round((b11 * b12 + b21 * b22) / n1)
        if mu == 0.0:
            break
        b12 -= mu * b11
        b22 -= mu * b21
    return b11, b21, b12, b22


@njit(cache=True)
def _short_norm(b11, b21, b12, b22):
    n1 = math.hypot(b11, b21)
    n2 = math.hypot(b12, b22)
    n3 = math.hypot(b11 + b12, b21 + b22)
    n4 = math.hypot(b11 - b12, b21 - b22)
    return min(min(n1, n2), min(n3, n4))


@njit(cache=True)
def _orbit_alpha0_kernel(h, n, dt):
    b11, b21 = h[0, 0], h[1, 0]
    b12, b22 = h[0, 1], h[1, 1]
    e = math.exp(dt)
    out = np.empty(n + 1)
    b11, b21, b12, b22 = _reduce2(b11, b21, b12, b22)
    out[0] = _short_norm(b11, b21, b12, b22) ** -0.5
    for k in range(1, n + 1):
        b11 *= e
        b12 *= e
        b21 /= e
        b22 /= e
        b11, b21, b12, b22 = _reduce2(b11, b21, b12, b22)
        out[k] = _short_norm(b11, b21, b12, b22) ** -0.5
    return out


@njit(cache=True)
def _alpha0_pushed_kernel(h, s_grid, t, n_sub):
    """alpha0(a_t u(s) h Z^2) over a grid of shears s, substepped in t."""
    out = np.empty(s_grid.size)
    e = math.exp(t / n_sub)
    for i in range(s_grid.size):
        s = s_grid[i]
        b11 = h[0, 0] + s * h[1, 0]
        b12 = h[0, 1] + s * h[1, 1]
        b21, b22 = h[1, 0], h[1, 1]
        for _ in range(n_sub):
            b11 *= e
            b12 *= e
            b21 /= e
            b22 /= e
            b11, b21, b12, b22 = _reduce2(b11, b21, b12, b22)
        out[i] = _short_norm(b11, b21, b12, b22) ** -0.5
    return out


@njit(cache=True)
def _points_in_disc(h, xi, center, radius):
    det = h[0, 0] * h[1, 1] - h[0, 1] * h[1, 0]
    i00, i01 = h[1, 1] / det, -h[0, 1] / det
    i10, i11 = -h[1, 0] / det, h[0, 0] / det
    cx, cy = center[0] - xi[0], center[1] - xi[1]
    k1c = i00 * cx + i01 * cy
    k2c = i10 * cx + i11 * cy
    r1 = radius * math.hypot(i00, i01) + 1.0
    r2 = radius * math.hypot(i10, i11) + 1.0
    out = []
    for k1 in range(int(math.floor(k1c - r1)), int(math.ceil(k1c + r1)) + 1):
        for k2 in range(int(math.floor(k2c - r2)), int(math.ceil(k2c + r2)) + 1):
            px = h[0, 0] * k1 + h[0, 1] * k2 + xi[0]
            py = h[1, 0] * k1 + h[1, 1] * k2 + xi[1]
            if math.hypot(px - center[0], py - center[1]) <= radius:
                out.append((px, py))
    pts = np.empty((len(out), 2))
    for i, (px, py) in enumerate(out):
        pts[i, 0] = px
        pts[i, 1] = py
    return pts


@njit(cache=True)
def _count_in_disc_batch(hs, xis, radius):
    n = hs.shape[0]
    counts = np.empty(n, dtype=np.int64)
    center = np.zeros(2)
    for i in range(n):
        counts[i] = _points_in_disc(hs[i], xis[i], center, radius).shape[0]
    return counts


def count_points_in_disc(samples, radius: float) -> np.ndarray:
    """Point counts of affine lattices inside a disc of given radius at 0."""
    hs = np.stack([L.reduce().rep.h for L in samples])
    xis = np.stack([L.reduce().rep.xi for L in samples])
    return _count_in_disc_batch(hs, xis, float(radius))
