"""Periodic arrays of retroreflector lenses: exact lens maps, lattice ray
tracing with trapped-band detection, the slit-torus flow as a two-sheet skew
product over a circle rotation, anti-invariant homology drift, deviation
exponents, and Rauzy-Veech Lyapunov estimation for the anti-invariant
two-plane of the renormalization cocycle.

Conventions: rotations are counterclockwise; the slit of the two-sheet
surface is perpendicular to the flow direction (it is the unfolded flat
lens), so in the rotated frame the flow is vertical and the slit horizontal
of length 2R.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np
from numba import njit
from scipy.integrate import solve_ivp

from . import homogeneous as hg

_GRAZE_TOL = 1e-14
_SADDLE_TOL = 1e-12


# ---------------------------------------------------------------------------
# Grids and lens maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LensGrid:
    """Lenses of radius R centered on the lattice h*Z^2.

    model 'eaton' uses discs acting as perfect retroreflectors; model 'flat'
    uses zero-thickness segments perpendicular to the ray direction theta.
    """

    h: np.ndarray
    R: float
    model: str = "eaton"
    theta: float = math.pi / 2

    def __post_init__(self):
        object.__setattr__(self, "h", np.array(self.h, dtype=float).reshape(2, 2))
        if self.model not in ("eaton", "flat"):
            raise ValueError(f"unknown lens model {self.model!r}")
        if self.R <= 0:
            raise ValueError("R must be positive")


@dataclass
class Ray:
    p: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        v = np.asarray(self.v, dtype=float)
        self.v = v / np.hypot(v[0], v[1])


def admissible(h, R: float) -> bool:
    """True iff the lenses are pairwise disjoint: 2R < shortest vector norm."""
    sv = hg.shortest_vector(h)
    return 2.0 * R < float(np.hypot(sv[0], sv[1]))


def eaton_map(entry, v, center, R: float):
    """Closed-form retroreflector pass: exit point is the entry point
    reflected across the line through the center parallel to v, and the
    direction reverses. A center hit turns back in place.
    """
    entry = np.asarray(entry, dtype=float)
    v = np.asarray(v, dtype=float)
    center = np.asarray(center, dtype=float)
    u = entry - center
    upar = (u @ v) * v
    exit_p = center + 2.0 * upar - u
    return exit_p, -v


def flat_lens_map(p, v, center):
    """Point reflection through the segment center with reversed direction."""
    p = np.asarray(p, dtype=float)
    center = np.asarray(center, dtype=float)
    return 2.0 * center - p, -np.asarray(v, dtype=float)


def eaton_exit_by_ode(entry, v, center, R: float, rtol: float = 1e-10):
    """Gradient-index oracle: integrate the ray equation through the medium
    with refractive index sqrt(2R/r - 1) and return the exit point/direction.

    Independent verification route for the closed-form map; not used by the
    tracer.
    """
    entry = np.asarray(entry, dtype=float)
    center = np.asarray(center, dtype=float)
    v = np.asarray(v, dtype=float)
    v = v / np.hypot(v[0], v[1])

    def n_of(x):
        r = math.hypot(x[0] - center[0], x[1] - center[1])
        r = min(r, R)
        return math.sqrt(max(2.0 * R / r - 1.0, 1e-300))

    def rhs(_s, y):
        x = y[:2]
        r_vec = x - center
        r = math.hypot(r_vec[0], r_vec[1])
        n = math.sqrt(max(2.0 * R / r - 1.0, 1e-300))
        # d/ds (n dx/ds) = grad n ; dn/dr = -R/(r^2 n)
        gn = (-R / (r * r * n)) * (r_vec / r)
        return np.concatenate([y[2:] / n, gn])

    # start just inside so the index is defined, momentum p = n * dx/ds
    y0 = np.concatenate([entry, n_of(entry) * v])

    def leave(_s, y):
        return math.hypot(y[0] - center[0], y[1] - center[1]) - R

    leave.terminal = True
    leave.direction = 1.0
    sol = solve_ivp(rhs, (0.0, 40.0 * R), y0, rtol=rtol, atol=1e-13,
                    events=leave, max_step=R / 100.0, first_step=R * 1e-8)
    if not sol.t_events[0].size:
        raise RuntimeError("ray did not leave the lens")
    y = sol.y_events[0][0]
    exit_p = y[:2]
    v_out = y[2:] / np.hypot(y[2], y[3])
    return exit_p, v_out


# ---------------------------------------------------------------------------
# Tracing
# ---------------------------------------------------------------------------

def _offsets(h, R: float) -> np.ndarray:
    """Integer offsets d such that a lens at B(k+d) can meet cell k."""
    hinv = np.linalg.inv(h)
    diam = float(np.linalg.norm(h[:, 0]) + np.linalg.norm(h[:, 1]))
    reach = (R + diam) * float(np.abs(hinv).max()) + 1.0
    m = int(math.ceil(reach))
    ds = []
    for d1 in range(-m, m + 1):
        for d2 in range(-m, m + 1):
            # conservative: keep if the center can be within R of the cell
            c = h @ np.array([d1 + 0.5, d2 + 0.5])
            if np.hypot(c[0], c[1]) <= R + diam + 1e-9:
                ds.append((d1, d2))
    return np.array(ds, dtype=np.int64)


@dataclass
class Trace:
    positions: np.ndarray   # event entry points
    lenses: np.ndarray      # integer lens coordinates per event
    n_events: int
    grazing: int
    escaped: bool
    start: np.ndarray
    model: str


def trace(ray: Ray, grid: LensGrid, horizon_events: int,
          max_leg: float = 1e4) -> Trace:
    """Alternate free flight and lens maps for a number of lens events.

    Lens traversal is an instantaneous jump: trajectories are geometry-only.
    Grazing intersections (discriminant below 1e-14) count as misses and are
    logged. A free leg longer than ``max_leg`` stops the trace (escaped).
    """
    if not admissible(grid.h, grid.R):
        raise ValueError("grid is not admissible: lenses overlap")
    hinv = np.linalg.inv(grid.h)
    offs = _offsets(grid.h, grid.R)
    if grid.model == "eaton":
        pos, cells, n, graze, esc = _trace_eaton(
            grid.h, hinv, grid.R, ray.p.copy(), ray.v.copy(),
            horizon_events, max_leg, offs)
    else:
        sdir = np.array([math.cos(grid.theta - math.pi / 2),
                         math.sin(grid.theta - math.pi / 2)])
        pos, cells, n, graze, esc = _trace_flat(
            grid.h, hinv, grid.R, sdir, ray.p.copy(), ray.v.copy(),
            horizon_events, max_leg, offs)
    return Trace(positions=pos[:n], lenses=cells[:n], n_events=n,
                 grazing=graze, escaped=bool(esc), start=ray.p.copy(),
                 model=grid.model)


@njit(cache=True)
def _next_hit_eaton(px, py, vx, vy, h, hinv, R, max_leg, offs):
    """March lattice cells along the ray; earliest disc intersection."""
    q1 = hinv[0, 0] * px + hinv[0, 1] * py
    q2 = hinv[1, 0] * px + hinv[1, 1] * py
    u1 = hinv[0, 0] * vx + hinv[0, 1] * vy
    u2 = hinv[1, 0] * vx + hinv[1, 1] * vy
    diam = math.hypot(h[0, 0], h[1, 0]) + math.hypot(h[0, 1], h[1, 1])
    t = 0.0
    best_t = math.inf
    best_i = 0
    best_j = 0
    graze = 0
    while t <= max_leg:
        if t > best_t + (R + diam):
            break
        c1 = int(math.floor(q1 + t * u1))
        c2 = int(math.floor(q2 + t * u2))
        for k in range(offs.shape[0]):
            i = c1 + offs[k, 0]
            j = c2 + offs[k, 1]
            cx = h[0, 0] * i + h[0, 1] * j
            cy = h[1, 0] * i + h[1, 1] * j
            dx = px - cx
            dy = py - cy
            bq = vx * dx + vy * dy
            cq = dx * dx + dy * dy - R * R
            disc = bq * bq - cq
            if disc < _GRAZE_TOL:
                if disc > 0.0:
                    graze += 1
                continue
            th = -bq - math.sqrt(disc)
            if 1e-12 < th < best_t:
                best_t = th
                best_i = i
                best_j = j
        # advance to next cell boundary
        t1 = math.inf
        t2 = math.inf
        if u1 > 0:
            t1 = (c1 + 1 - q1) / u1
        elif u1 < 0:
            t1 = (c1 - q1) / u1
        if u2 > 0:
            t2 = (c2 + 1 - q2) / u2
        elif u2 < 0:
            t2 = (c2 - q2) / u2
        t = min(t1, t2) + 1e-9
    return best_t, best_i, best_j, graze


@njit(cache=True)
def _trace_eaton(h, hinv, R, p, v, nmax, max_leg, offs):
    pos = np.empty((nmax, 2))
    cells = np.empty((nmax, 2), dtype=np.int64)
    graze_total = 0
    n = 0
    escaped = False
    px, py = p[0], p[1]
    vx, vy = v[0], v[1]
    while n < nmax:
        t, i, j, gz = _next_hit_eaton(px, py, vx, vy, h, hinv, R, max_leg, offs)
        graze_total += gz
        if not math.isfinite(t):
            escaped = True
            break
        ex = px + t * vx
        ey = py + t * vy
        cx = h[0, 0] * i + h[0, 1] * j
        cy = h[1, 0] * i + h[1, 1] * j
        pos[n, 0] = ex
        pos[n, 1] = ey
        cells[n, 0] = i
        cells[n, 1] = j
        n += 1
        # retroreflection: reflect entry across the center-parallel line
        ux = ex - cx
        uy = ey - cy
        dot = ux * vx + uy * vy
        px = cx + 2.0 * dot * vx - ux
        py = cy + 2.0 * dot * vy - uy
        vx = -vx
        vy = -vy
    return pos, cells, n, graze_total, escaped


@njit(cache=True)
def _next_hit_flat(px, py, vx, vy, h, hinv, R, sx, sy, max_leg, offs):
    """Earliest intersection with a lens segment center +- R (sx, sy)."""
    q1 = hinv[0, 0] * px + hinv[0, 1] * py
    q2 = hinv[1, 0] * px + hinv[1, 1] * py
    u1 = hinv[0, 0] * vx + hinv[0, 1] * vy
    u2 = hinv[1, 0] * vx + hinv[1, 1] * vy
    diam = math.hypot(h[0, 0], h[1, 0]) + math.hypot(h[0, 1], h[1, 1])
    t = 0.0
    best_t = math.inf
    best_i = 0
    best_j = 0
    graze = 0
    denom = vx * sy - vy * sx  # +-1 since the segment is perpendicular
    while t <= max_leg:
        if t > best_t + (R + diam):
            break
        c1 = int(math.floor(q1 + t * u1))
        c2 = int(math.floor(q2 + t * u2))
        for k in range(offs.shape[0]):
            i = c1 + offs[k, 0]
            j = c2 + offs[k, 1]
            cx = h[0, 0] * i + h[0, 1] * j
            cy = h[1, 0] * i + h[1, 1] * j
            wx = cx - px
            wy = cy - py
            th = (wx * sy - wy * sx) / denom
            uu = -(wx * vy - wy * vx) / denom  # signed offset along segment
            if abs(abs(uu) - R) < _SADDLE_TOL:
                graze += 1
                continue
            if abs(uu) < R and 1e-12 < th < best_t:
                best_t = th
                best_i = i
                best_j = j
        t1 = math.inf
        t2 = math.inf
        if u1 > 0:
            t1 = (c1 + 1 - q1) / u1
        elif u1 < 0:
            t1 = (c1 - q1) / u1
        if u2 > 0:
            t2 = (c2 + 1 - q2) / u2
        elif u2 < 0:
            t2 = (c2 - q2) / u2
        t = min(t1, t2) + 1e-9
    return best_t, best_i, best_j, graze


@njit(cache=True)
def _trace_flat(h, hinv, R, sdir, p, v, nmax, max_leg, offs):
    pos = np.empty((nmax, 2))
    cells = np.empty((nmax, 2), dtype=np.int64)
    graze_total = 0
    n = 0
    escaped = False
    px, py = p[0], p[1]
    vx, vy = v[0], v[1]
    sx, sy = sdir[0], sdir[1]
    while n < nmax:
        t, i, j, gz = _next_hit_flat(px, py, vx, vy, h, hinv, R, sx, sy,
                                     max_leg, offs)
        graze_total += gz
        if not math.isfinite(t):
            escaped = True
            break
        ex = px + t * vx
        ey = py + t * vy
        cx = h[0, 0] * i + h[0, 1] * j
        cy = h[1, 0] * i + h[1, 1] * j
        pos[n, 0] = ex
        pos[n, 1] = ey
        cells[n, 0] = i
        cells[n, 1] = j
        n += 1
        px = 2.0 * cx - ex
        py = 2.0 * cy - ey
        vx = -vx
        vy = -vy
    return pos, cells, n, graze_total, escaped


def next_lens_hit(ray: Ray, grid: LensGrid, max_leg: float = 1e4):
    """First lens met by the ray, or None within the step horizon."""
    hinv = np.linalg.inv(grid.h)
    offs = _offsets(grid.h, grid.R)
    if grid.model == "eaton":
        t, i, j, _ = _next_hit_eaton(ray.p[0], ray.p[1], ray.v[0], ray.v[1],
                                     grid.h, hinv, grid.R, max_leg, offs)
    else:
        sdir = np.array([math.cos(grid.theta - math.pi / 2),
                         math.sin(grid.theta - math.pi / 2)])
        t, i, j, _ = _next_hit_flat(ray.p[0], ray.p[1], ray.v[0], ray.v[1],
                                    grid.h, hinv, grid.R, sdir[0], sdir[1],
                                    max_leg, offs)
    if not math.isfinite(t):
        return None
    return (i, j), ray.p + t * ray.v, t


def rotate_system(grid: LensGrid, theta: float) -> LensGrid:
    """Flat system with the flow made vertical: basis r_{pi/2 - theta} h."""
    r = hg.rotation(math.pi / 2 - theta)
    return LensGrid(h=r.h @ grid.h, R=grid.R, model="flat", theta=math.pi / 2)


# ---------------------------------------------------------------------------
# Trapped-band classification
# ---------------------------------------------------------------------------

@dataclass
class TrapReport:
    trapped: bool
    band_dir: np.ndarray
    band_width: float
    transverse: np.ndarray
    plateau_growth: float


def trapped_classify(tr, theta: Optional[float] = None,
                     min_events: int = 1000) -> TrapReport:
    """Plateau criterion on the running sup of transverse deviations.

    The band direction is the principal axis of the event cloud; the ray is
    trapped when the running sup over the trailing half of the horizon grows
    by less than 5% of its final value. An eventless trace is trapped with
    width 0 by convention (free flight is longitudinally unbounded only).
    """
    positions = tr.positions if isinstance(tr, Trace) else np.asarray(tr, float)
    n = positions.shape[0]
    if n == 0:
        return TrapReport(trapped=True, band_dir=np.array([0.0, 1.0]),
                          band_width=0.0, transverse=np.zeros(0),
                          plateau_growth=0.0)
    if n < min_events:
        raise ValueError(f"horizon too short: {n} < {min_events} events")
    centered = positions - positions.mean(axis=0)
    cov = centered.T @ centered / n
    evals, evecs = np.linalg.eigh(cov)
    band_dir = evecs[:, int(np.argmax(evals))]
    normal = np.array([-band_dir[1], band_dir[0]])
    transverse = centered @ normal
    run_sup = np.maximum.accumulate(np.abs(transverse))
    s_half = run_sup[n // 2]
    s_full = run_sup[-1]
    growth = 0.0 if s_full == 0.0 else (s_full - s_half) / s_full
    return TrapReport(trapped=bool(growth < 0.05), band_dir=band_dir,
                      band_width=2.0 * float(s_full), transverse=transverse,
                      plateau_growth=float(growth))


def scan_directions(grid: LensGrid, thetas, n_events: int, rng,
                    max_leg: float = 1e4):
    """Trace one ray per direction from a jittered start; returns TrapReports."""
    reports = []
    for theta in thetas:
        p0 = grid.h @ rng.random(2) + grid.h @ np.array([0.5, 0.5])
        # nudge the start outside every lens
        for _ in range(100):
            q = np.linalg.solve(grid.h, p0)
            frac = q - np.round(q)
            if float(np.linalg.norm(grid.h @ frac)) > grid.R * 1.2:
                break
            p0 = p0 + grid.h @ rng.random(2)
        ray = Ray(p=p0, v=np.array([math.cos(theta), math.sin(theta)]))
        tr = trace(ray, grid, n_events, max_leg=max_leg)
        if tr.escaped or tr.n_events < n_events:
            reports.append((theta, TrapReport(False, ray.v, math.inf,
                                              np.zeros(0), math.inf), tr))
            continue
        reports.append((theta, trapped_classify(tr), tr))
    return reports


# ---------------------------------------------------------------------------
# Slit-torus skew product
# ---------------------------------------------------------------------------

@dataclass
class SkewIET:
    """First-return data of the flow on the two-sheet slit torus.

    The base return map is rotation by alpha on the section circle
    (alpha_raw is the signed rotation amount before reduction mod 1, used
    for exact winding bookkeeping); pieces describe the slit shadow: each
    row is (lo, length, frac_at_lo, dfrac_du) giving the position on the
    circle and the affine time-fraction at which the return segment meets
    the slit. Crossing the slit toggles the sheet; homology increments per
    return are integer pairs in the section basis.
    """

    alpha: float
    alpha_raw: float
    tau: float
    basis: np.ndarray          # columns lambda1, lambda2 in the rotated frame
    pieces: np.ndarray         # (m, 4) rows: lo, length, frac_at_lo, dfrac_du
    R: float
    rotation: float            # frame rotation that made the flow vertical
    toggle_intervals: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.toggle_intervals is None:
            self.toggle_intervals = _parity_intervals(self.pieces)

    @property
    def shadow_measure(self) -> float:
        return float(self.pieces[:, 1].sum()) if self.pieces.size else 0.0

    def crossing_count(self, u: float) -> int:
        c = 0
        for lo, ln, _fa, _fs in self.pieces:
            if lo <= u < lo + ln:
                c += 1
        return c


def _parity_intervals(pieces) -> np.ndarray:
    """Subset of the circle covered by an odd number of shadow pieces."""
    if pieces is None or len(pieces) == 0:
        return np.zeros((0, 2))
    events = []
    for lo, ln, _fa, _fs in pieces:
        events.append((lo, 1))
        events.append((lo + ln, -1))
    pts = sorted(set([0.0, 1.0] + [max(0.0, min(1.0, e[0])) for e in events]))
    out = []
    for a, b in zip(pts[:-1], pts[1:]):
        mid = 0.5 * (a + b)
        c = sum(1 for lo, ln, _f, _g in pieces if lo <= mid < lo + ln)
        if c % 2 == 1:
            out.append((a, b))
    # merge adjacent
    merged = []
    for a, b in out:
        if merged and abs(merged[-1][1] - a) < 1e-15:
            merged[-1] = (merged[-1][0], b)
        else:
            merged.append((a, b))
    return np.array(merged) if merged else np.zeros((0, 2))


def _reject_rational_direction(slope: float, tol: float = 1e-9,
                               qmax: int = 10**6) -> None:
    f = Fraction(slope).limit_denominator(qmax)
    if abs(slope - float(f)) < tol / max(f.denominator, 1) ** 2:
        raise ValueError(
            f"direction too close to the lattice-rational slope {f} "
            "(vertical saddle data)")


def build_skew_iet(h, R: float, direction, slit_frac=(0.2939, 0.5878)) -> SkewIET:
    """Skew-product return data for the flow in ``direction`` on the two-sheet
    slit torus over h*Z^2 with slit length 2R perpendicular to the flow.

    The slit position inside the torus is a configuration parameter
    (``slit_frac``, in lattice coordinates); the statistics used downstream
    do not depend on it. Directions parallel to a lattice vector are
    rejected.
    """
    h = np.asarray(h, dtype=float).reshape(2, 2)
    if np.isscalar(direction):
        direction = np.array([math.cos(direction), math.sin(direction)])
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.hypot(direction[0], direction[1])
    if not admissible(h, R):
        raise ValueError("(lattice, R) is not admissible")
    phi = math.pi / 2 - math.atan2(direction[1], direction[0])
    rot = hg.rotation(phi).h
    B_lat = rot @ h

    # section basis: reduced vectors, lambda1 with the largest |x| component
    b, _ = hg.gauss_reduce(B_lat)
    g1, g2 = b[:, 0], b[:, 1]
    cands = [g1, g2, g1 + g2, g1 - g2]
    lam1 = max(cands, key=lambda v: abs(v[0]))
    if lam1[0] < 0:
        lam1 = -lam1
    lam2 = None
    for v in cands + [-c for c in cands]:
        det = lam1[0] * v[1] - lam1[1] * v[0]
        if abs(abs(det) - 1.0) < 1e-9:
            lam2 = v if det > 0 else -v
            break
    if lam2 is None:
        raise RuntimeError("failed to complete the section basis")
    B = np.column_stack([lam1, lam2])

    c2 = lam1[0]                     # vertical speed in coefficient coords
    c1 = -lam2[0]
    tau = 1.0 / c2
    alpha_raw = c1 / c2              # signed, |alpha_raw| <= 1 by basis choice
    alpha = alpha_raw % 1.0
    _reject_rational_direction(alpha_raw)

    # slit: perpendicular to the flow, so horizontal of length 2R
    p0 = rot @ (h @ np.asarray(slit_frac, dtype=float))
    Binv = np.linalg.inv(B)
    pi_c = Binv @ p0
    rho = Binv @ np.array([2.0 * R, 0.0])
    slope = rho[0] - alpha_raw * rho[1]      # = 2R / c2 = 2R * tau
    if abs(rho[1]) < 1.0:
        # shift the section height so the slit sits inside one return
        # window; otherwise two shadow boundary points land on the same
        # rotation orbit and the induction refinement degenerates
        y0 = pi_c[1] + 0.5 * rho[1] - 0.5
        pi_c = np.array([pi_c[0] + alpha_raw * y0, pi_c[1] - y0])
    # split [0,1] of the slit parameter where pi2 + w rho2 crosses integers
    cuts = [0.0, 1.0]
    if abs(rho[1]) > 0:
        k0 = math.floor(min(pi_c[1], pi_c[1] + rho[1]))
        k1 = math.ceil(max(pi_c[1], pi_c[1] + rho[1]))
        for k in range(int(k0), int(k1) + 1):
            w = (k - pi_c[1]) / rho[1]
            if 0.0 < w < 1.0:
                cuts.append(w)
    cuts = sorted(set(cuts))
    rows = []
    for wa, wb in zip(cuts[:-1], cuts[1:]):
        if wb - wa < 1e-15:
            continue
        ua = (pi_c[0] + wa * rho[0]
              - alpha_raw * ((pi_c[1] + wa * rho[1]) % 1.0)) % 1.0
        frac_a = (pi_c[1] + wa * rho[1]) % 1.0
        length = slope * (wb - wa)
        dfrac_du = rho[1] / slope if slope != 0 else 0.0
        # split circle wrap into rows with lo + length <= 1
        lo = ua
        fa = frac_a
        rem = length
        while rem > 1e-15:
            seg = min(rem, 1.0 - lo)
            rows.append((lo, seg, fa, dfrac_du))
            fa = fa + seg * dfrac_du
            lo = 0.0
            rem -= seg
    pieces = np.array(rows) if rows else np.zeros((0, 4))
    return SkewIET(alpha=alpha, alpha_raw=alpha_raw, tau=tau, basis=B,
                   pieces=pieces, R=R, rotation=phi)


# ---------------------------------------------------------------------------
# Homology drift along the skew flow
# ---------------------------------------------------------------------------

@dataclass
class CocycleState:
    drift: np.ndarray       # (n, 2) int64 running sheet-signed homology
    sheets: np.ndarray
    toggles: int
    saddle: bool


@njit(cache=True)
def _drift_kernel(u0, alpha, alpha_raw, pieces, n_returns, saddle_tol):
    d = np.zeros((n_returns, 2), dtype=np.int64)
    sheets = np.empty(n_returns, dtype=np.int8)
    u = u0
    sheet = 1
    d1 = 0
    d2 = 0
    toggles = 0
    saddle = False
    m = pieces.shape[0]
    fr = np.empty(8)
    for k in range(n_returns):
        # collect slit crossings of this return with their time fractions
        nc = 0
        for i in range(m):
            lo = pieces[i, 0]
            ln = pieces[i, 1]
            if lo - saddle_tol < u < lo + saddle_tol or \
               lo + ln - saddle_tol < u < lo + ln + saddle_tol:
                saddle = True
            if lo <= u < lo + ln:
                if nc < 8:
                    fr[nc] = pieces[i, 2] + (u - lo) * pieces[i, 3]
                    nc += 1
        if saddle:
            return d[:k], sheets[:k], toggles, True
        # winding of the first coefficient: signed, with its time fraction
        if alpha_raw > 0.0:
            wrap = u + alpha_raw >= 1.0
            fw = (1.0 - u) / alpha_raw if wrap else 2.0
            winc = 1
        else:
            wrap = u + alpha_raw < 0.0
            fw = u / (-alpha_raw) if wrap else 2.0
            winc = -1
        # walk events in time order: slit toggles and the winding crossing
        for a in range(1, nc):
            key = fr[a]
            bpos = a - 1
            while bpos >= 0 and fr[bpos] > key:
                fr[bpos + 1] = fr[bpos]
                bpos -= 1
            fr[bpos + 1] = key
        ci = 0
        while ci < nc and fr[ci] <= fw:
            sheet = -sheet
            toggles += 1
            ci += 1
        if wrap:
            d1 += sheet * winc
        while ci < nc:
            sheet = -sheet
            toggles += 1
            ci += 1
        d2 += sheet
        sheets[k] = sheet
        d[k, 0] = d1
        d[k, 1] = d2
        u = u + alpha
        if u >= 1.0:
            u -= 1.0
    return d, sheets, toggles, False


def drift_track(iet: SkewIET, n_returns: int, u0: float = 0.0) -> CocycleState:
    """Sheet-signed homology sums along the skew-product returns.

    d(k) accumulates sheet * (winding, 1) with slit crossings and the winding
    crossing ordered by their time fraction within each return; a
    slit-endpoint hit aborts with the saddle flag set.
    """
    d, sheets, toggles, saddle = _drift_kernel(
        float(u0), iet.alpha, iet.alpha_raw, iet.pieces, int(n_returns),
        _SADDLE_TOL)
    return CocycleState(drift=d, sheets=sheets, toggles=int(toggles),
                        saddle=bool(saddle))


@njit(cache=True)
def _runmax_kernel(u0, alpha, alpha_raw, pieces, checkpoints, saddle_tol):
    """Running max of ||d(k)|| sampled at checkpoint indices (memory-light)."""
    n_cp = checkpoints.size
    out = np.empty(n_cp)
    u = u0
    sheet = 1
    d1 = 0
    d2 = 0
    run_max = 0.0
    m = pieces.shape[0]
    fr = np.empty(8)
    cp = 0
    n_returns = checkpoints[n_cp - 1]
    for k in range(n_returns):
        nc = 0
        for i in range(m):
            lo = pieces[i, 0]
            ln = pieces[i, 1]
            if lo - saddle_tol < u < lo + saddle_tol or \
               lo + ln - saddle_tol < u < lo + ln + saddle_tol:
                return out[:cp], True
            if lo <= u < lo + ln:
                if nc < 8:
                    fr[nc] = pieces[i, 2] + (u - lo) * pieces[i, 3]
                    nc += 1
        if alpha_raw > 0.0:
            wrap = u + alpha_raw >= 1.0
            fw = (1.0 - u) / alpha_raw if wrap else 2.0
            winc = 1
        else:
            wrap = u + alpha_raw < 0.0
            fw = u / (-alpha_raw) if wrap else 2.0
            winc = -1
        for a in range(1, nc):
            key = fr[a]
            bpos = a - 1
            while bpos >= 0 and fr[bpos] > key:
                fr[bpos + 1] = fr[bpos]
                bpos -= 1
            fr[bpos + 1] = key
        ci = 0
        while ci < nc and fr[ci] <= fw:
            sheet = -sheet
            ci += 1
        if wrap:
            d1 += sheet * winc
        while ci < nc:
            sheet = -sheet
            ci += 1
        d2 += sheet
        nm = math.hypot(d1, d2)
        if nm > run_max:
            run_max = nm
        if k + 1 == checkpoints[cp]:
            out[cp] = run_max
            cp += 1
        u = u + alpha
        if u >= 1.0:
            u -= 1.0
    return out[:cp], False


def deviation_profile(iet: SkewIET, n_returns: int, u0: float = 0.0,
                      n_checkpoints: int = 384):
    """Running sup of the drift norm at log-spaced return counts.

    Returns (checkpoints, run_max, saddle); memory stays O(n_checkpoints)
    regardless of the horizon.
    """
    ks = np.unique(np.round(np.logspace(0, math.log10(n_returns),
                                        n_checkpoints)).astype(np.int64))
    vals, saddle = _runmax_kernel(float(u0), iet.alpha, iet.alpha_raw,
                                  iet.pieces, ks, _SADDLE_TOL)
    return ks[:vals.size], vals, bool(saddle)


def _fit_deviation(ks, run_max) -> tuple[float, bool]:
    if ks.size < 8 or run_max[-1] <= 8.0:
        return 0.0, True
    lk = np.log(ks.astype(float))
    keep = (lk >= 0.5 * (math.log(8.0) + lk[-1])) & (run_max > 0)
    if keep.sum() < 4:
        return 0.0, True
    lk = lk[keep]
    ly = np.log(run_max[keep])
    A = np.vstack([lk, np.ones_like(lk)]).T
    coef, _, _, _ = np.linalg.lstsq(A, ly, rcond=None)
    return float(coef[0]), False


def deviation_exponent(series) -> tuple[float, bool]:
    """Slope of log max_k ||d|| against log k over the upper half of the
    log-k range (log-spaced evaluation points).

    Returns (exponent, degenerate); a bounded series reports exponent 0 with
    the degenerate flag. For very long horizons prefer deviation_profile,
    which never materializes the series.
    """
    d = np.asarray(series, dtype=float)
    norms = np.hypot(d[:, 0], d[:, 1]) if d.ndim == 2 else np.abs(d)
    run_max = np.maximum.accumulate(norms)
    n = run_max.size
    if n < 64:
        return 0.0, True
    ks = np.unique(np.round(np.logspace(0, math.log10(n), 256))
                   .astype(np.int64))
    return _fit_deviation(ks, run_max[ks - 1])


def deviation_exponent_profile(ks, run_max) -> tuple[float, bool]:
    """Deviation exponent from a (checkpoints, running max) profile."""
    return _fit_deviation(np.asarray(ks), np.asarray(run_max, dtype=float))


def stable_direction_estimate(series, n_grid: int = 128, iters: int = 60):
    """Covector minimizing the running sup of |<d(k), zeta>|.

    Coarse grid scan over the angle followed by golden-section refinement.
    Returns (zeta, achieved sup).
    """
    d = np.asarray(series, dtype=float)

    def sup_of(angle):
        z = np.array([math.cos(angle), math.sin(angle)])
        return float(np.max(np.abs(d @ z)))

    angles = np.linspace(0.0, math.pi, n_grid, endpoint=False)
    sups = np.array([sup_of(a) for a in angles])
    i = int(np.argmin(sups))
    lo = angles[i] - math.pi / n_grid
    hi = angles[i] + math.pi / n_grid
    gr = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - gr * (b - a)
    dd = a + gr * (b - a)
    fc, fd = sup_of(c), sup_of(dd)
    for _ in range(iters):
        if fc < fd:
            b, dd, fd = dd, c, fc
            c = b - gr * (b - a)
            fc = sup_of(c)
        else:
            a, c, fc = c, dd, fd
            dd = a + gr * (b - a)
            fd = sup_of(dd)
    best = 0.5 * (a + b)
    zeta = np.array([math.cos(best), math.sin(best)])
    return zeta, sup_of(best)


# ---------------------------------------------------------------------------
# Rauzy-Veech / Zorich estimation of the anti-invariant exponent
# ---------------------------------------------------------------------------

def _base_iet(iet: SkewIET):
    """Base circle-rotation exchange with the two-sheet monodromy signs.

    Letters are the continuity pieces of [0,1), cut at the rotation wrap
    point and the parity-toggle boundaries; the sign is -1 on letters whose
    return segment crosses the slit an odd number of times. The anti-
    invariant part of the cover cocycle is the sign-twisted induction
    cocycle of this base exchange.
    """
    alpha = iet.alpha
    cuts = {0.0, (1.0 - alpha) % 1.0}
    for lo, hi in iet.toggle_intervals:
        cuts.add(lo % 1.0)
        cuts.add(hi % 1.0)
    cuts = sorted(c for c in cuts if 0.0 <= c < 1.0)
    lengths = []
    signs = []
    img = []
    for a, b in zip(cuts, cuts[1:] + [1.0]):
        if b - a < 1e-14:
            continue
        mid = 0.5 * (a + b)
        toggle = any(lo <= mid < hi for lo, hi in iet.toggle_intervals)
        wrap = mid + alpha >= 1.0
        lengths.append(b - a)
        signs.append(-1 if toggle else 1)
        img.append(a + alpha - (1.0 if wrap else 0.0))
    lengths = np.array(lengths)
    img = np.array(img)
    top = list(range(lengths.size))
    bot = list(np.argsort(img))
    # sanity: images tile [0,1)
    tile = np.sort(img)
    gaps = np.diff(np.concatenate([tile, [1.0]])) - lengths[bot]
    if np.max(np.abs(gaps)) > 1e-9:
        raise RuntimeError("base exchange images do not tile the circle")
    return lengths, np.array(signs, dtype=np.int8), top, bot


@njit(cache=True)
def _rauzy_zorich(lengths, signs, top, bot, n_blocks, max_steps, v_tw, v_un,
                  renorm_every):
    """Zorich-accelerated induction with twisted and plain tracked vectors.

    Per step the loser letter absorbs the winner: lengths subtract, the
    twisted vector accumulates with the loser's current sign, and the signs
    compose. Returns (teich, log tw growth, log plain growth, blocks, steps,
    status); status 1 flags an exact length tie (rational data).
    """
    d = lengths.size
    acc_tw = 0.0
    acc_un = 0.0
    teich = 0.0
    steps = 0
    blocks = 0
    last_type = -1
    while blocks < n_blocks and steps < max_steps:
        t_idx = top[d - 1]
        b_idx = bot[d - 1]
        if lengths[t_idx] == lengths[b_idx]:
            return teich, acc_tw, acc_un, blocks, steps, 1
        if lengths[t_idx] > lengths[b_idx]:
            typ = 0
            winner = t_idx
            loser = b_idx
        else:
            typ = 1
            winner = b_idx
            loser = t_idx
        if typ != last_type:
            blocks += 1
            last_type = typ
        lengths[winner] -= lengths[loser]
        # compound return word: (loser, winner) for a top step, but
        # (winner, loser) for a bottom step; twisted weights pick up the
        # sign of whichever letter is traversed first
        if typ == 0:
            v_tw[loser] = v_tw[loser] + signs[loser] * v_tw[winner]
        else:
            v_tw[loser] = v_tw[winner] + signs[winner] * v_tw[loser]
        v_un[loser] += v_un[winner]
        signs[loser] *= signs[winner]
        if typ == 0:
            pos_w = 0
            for i in range(d):
                if bot[i] == winner:
                    pos_w = i
                    break
            for i in range(d - 1, pos_w + 1, -1):
                bot[i] = bot[i - 1]
            bot[pos_w + 1] = loser
        else:
            pos_w = 0
            for i in range(d):
                if top[i] == winner:
                    pos_w = i
                    break
            for i in range(d - 1, pos_w + 1, -1):
                top[i] = top[i - 1]
            top[pos_w + 1] = loser
        steps += 1
        if steps % renorm_every == 0:
            s = 0.0
            for i in range(d):
                s += lengths[i]
            teich += -math.log(s)
            for i in range(d):
                lengths[i] /= s
            n1 = 0.0
            for i in range(d):
                n1 += v_tw[i] * v_tw[i]
            n1 = math.sqrt(n1)
            if n1 > 0.0:
                acc_tw += math.log(n1)
                for i in range(d):
                    v_tw[i] /= n1
            n2 = 0.0
            for i in range(d):
                n2 += v_un[i] * v_un[i]
            n2 = math.sqrt(n2)
            acc_un += math.log(n2)
            for i in range(d):
                v_un[i] /= n2
    return teich, acc_tw, acc_un, blocks, steps, 0


@dataclass
class LyapunovResult:
    exponent: float
    teich_time: float
    top_ratio: float
    blocks: int
    steps: int
    status: str


def lyapunov_W(iet: SkewIET, n_blocks: int = 10**6, rng=None,
               renorm_every: int = 8) -> LyapunovResult:
    """Anti-invariant Lyapunov exponent by Zorich-accelerated induction.

    The top Benettin growth of the sign-twisted induction cocycle, divided
    by Teichmueller time (the accumulated log of the length
    renormalizations), estimates the exponent of the anti-invariant
    two-plane. The plain cocycle's top growth over Teichmueller time is
    reported as ``top_ratio``; it must come out near 1.
    """
    if iet.pieces.shape[0] == 0:
        return LyapunovResult(exponent=0.0, teich_time=0.0, top_ratio=0.0,
                              blocks=0, steps=0, status="trivial")
    lengths, signs, top, bot = _base_iet(iet)
    d = lengths.size
    gen = rng if rng is not None else np.random.default_rng(12345)
    v_tw = gen.standard_normal(d)
    v_un = gen.standard_normal(d)
    lengths = lengths / lengths.sum()
    teich, acc_tw, acc_un, blocks, steps, flag = _rauzy_zorich(
        lengths.copy(), signs.copy(), np.array(top, dtype=np.int64),
        np.array(bot, dtype=np.int64), n_blocks, 200 * n_blocks + 1000,
        v_tw, v_un, renorm_every)
    if flag:
        return LyapunovResult(exponent=math.nan, teich_time=teich,
                              top_ratio=math.nan, blocks=blocks, steps=steps,
                              status="keane-violation")
    if teich <= 0:
        return LyapunovResult(exponent=math.nan, teich_time=teich,
                              top_ratio=math.nan, blocks=blocks, steps=steps,
                              status="no-progress")
    return LyapunovResult(exponent=acc_tw / teich, teich_time=teich,
                          top_ratio=acc_un / teich, blocks=blocks,
                          steps=steps, status="ok")


def rauzy_audit(iet: SkewIET, n_steps: int = 2000):
    """Exact-arithmetic audit of the twisted induction matrices.

    Replays the first induction steps in python integers and returns the
    determinants of the accumulated twisted visitation matrices per Zorich
    block (all must be +-1 exactly).
    """
    lengths, signs, top, bot = _base_iet(iet)
    lengths = list(lengths)
    signs = [int(s) for s in signs]
    d = len(lengths)
    dets = []
    block = [[int(i == j) for j in range(d)] for i in range(d)]
    last_type = -1

    def det_int(m):
        # fraction-free Gaussian elimination over a copy
        from fractions import Fraction as F
        a = [[F(x) for x in row] for row in m]
        det = F(1)
        for col in range(d):
            piv = next((r for r in range(col, d) if a[r][col] != 0), None)
            if piv is None:
                return 0
            if piv != col:
                a[col], a[piv] = a[piv], a[col]
                det = -det
            det *= a[col][col]
            for r in range(col + 1, d):
                f = a[r][col] / a[col][col]
                for cc in range(col, d):
                    a[r][cc] -= f * a[col][cc]
        return int(det)

    for _ in range(n_steps):
        t_idx, b_idx = top[-1], bot[-1]
        if lengths[t_idx] == lengths[b_idx]:
            break
        if lengths[t_idx] > lengths[b_idx]:
            typ, winner, loser = 0, t_idx, b_idx
        else:
            typ, winner, loser = 1, b_idx, t_idx
        if typ != last_type and last_type != -1:
            dets.append(det_int(block))
            block = [[int(i == j) for j in range(d)] for i in range(d)]
        last_type = typ
        lengths[winner] -= lengths[loser]
        if typ == 0:
            for i in range(d):
                block[loser][i] += signs[loser] * block[winner][i]
        else:
            for i in range(d):
                block[loser][i] = block[winner][i] + signs[winner] * block[loser][i]
        signs[loser] *= signs[winner]
        if typ == 0:
            bot.remove(loser)
            bot.insert(bot.index(winner) + 1, loser)
        else:
            top.remove(loser)
            top.insert(top.index(winner) + 1, loser)
    dets.append(det_int(block))
    return dets


# ---------------------------------------------------------------------------
# Curve non-degeneracy for the rotation family
# ---------------------------------------------------------------------------

def eaton_curve_check(R: float, n_grid: int = 32) -> float:
    """Wronskian determinant of theta -> (r_theta, (2R, 0)): constant -2R."""
    if R <= 0:
        raise ValueError("R must be positive")

    def f(th):
        return hg.AffineElement(hg.rotation(th).h, np.array([2.0 * R, 0.0]))

    def df(th):
        c, s = math.cos(th), math.sin(th)
        return np.array([[-s, -c], [c, -s]]), np.zeros(2)

    def d2f(th):
        c, s = math.cos(th), math.sin(th)
        return np.array([[-c, s], [-s, -c]]), np.zeros(2)

    curve = hg.WronskianCurve(f=f, domain=(0.0, 2.0 * math.pi), df=df, d2f=d2f)
    vals = [hg.wronskian_det(curve, th)
            for th in np.linspace(0.0, 2.0 * math.pi, n_grid)]
    spread = max(vals) - min(vals)
    if spread > 1e-9 * max(1.0, abs(vals[0])):
        raise RuntimeError("rotation-curve Wronskian is not constant")
    return float(np.mean(vals))
