"""Billiard in an ellipse with a vertical barrier: direct simulation with the
conserved caustic parameter, the elliptic-integral reduction data (cylinder /
rectangle-with-slit dimensions and their derivatives), the induced curve in
the affine-lattice space, and the polygonal models with pi/4 flow.

The table is x^2/a + y^2/b = 1 with 0 < b < a (a, b are squared semi-axes).
The barrier is the vertical segment {0} x [sqrt(b - lambda0), sqrt(b)]; this
is the unique vertical segment of the prescribed length that makes the case
split at lambda = lambda0 match the tangent-line crossing heights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from . import homogeneous as hg
from .quadrature import exp_sinh, tanh_sinh
from .stats import ECDF, ks_distance

STATUS_OK = 0
STATUS_SINGULAR = 1  # barrier-endpoint or coincident-event orbit, terminated


@dataclass(frozen=True)
class EllipseTable:
    a: float
    b: float
    lambda0: float

    def __post_init__(self):
        if not 0 < self.b < self.a:
            raise ValueError("need 0 < b < a")
        if not 0 < self.lambda0 < self.b:
            raise ValueError("need 0 < lambda0 < b")

    @property
    def barrier_y(self) -> tuple[float, float]:
        return math.sqrt(self.b - self.lambda0), math.sqrt(self.b)

    @property
    def barrier_length(self) -> float:
        y0, y1 = self.barrier_y
        return y1 - y0


@dataclass
class BilliardState:
    p: np.ndarray
    v: np.ndarray
    lam: float

    @staticmethod
    def make(p, v, table: EllipseTable) -> "BilliardState":
        p = np.asarray(p, dtype=float)
        v = np.asarray(v, dtype=float)
        v = v / np.hypot(v[0], v[1])
        return BilliardState(p=p, v=v, lam=caustic_param(p, v, table))


def caustic_param(p, v, table: EllipseTable) -> float:
    """Conserved parameter of the confocal conic tangent to the line p + t v.

    Closed form from the tangency discriminant: a*vy^2 + b*vx^2 - (px*vy - py*vx)^2.
    """
    px, py = float(p[0]), float(p[1])
    vx, vy = float(v[0]), float(v[1])
    n = math.hypot(vx, vy)
    vx, vy = vx / n, vy / n
    return table.a * vy * vy + table.b * vx * vx - (px * vy - py * vx) ** 2


# ---------------------------------------------------------------------------
# Event geometry (python reference path; the numba kernel mirrors it)
# ---------------------------------------------------------------------------

_T_EPS = 1e-14
_SING_TOL = 1e-12


def _ellipse_time(px, py, vx, vy, a, b):
    A = vx * vx / a + vy * vy / b
    B = 2.0 * (px * vx / a + py * vy / b)
    C = px * px / a + py * py / b - 1.0
    disc = B * B - 4.0 * A * C
    sq = math.sqrt(max(disc, 0.0))
    if B < 0.0:
        return (-B + sq) / (2.0 * A)
    return -2.0 * C / (B + sq) if (B + sq) > 0.0 else 0.0


def next_event(state: BilliardState, table: EllipseTable):
    """Earliest positive-time boundary event of the ray from the state.

    Returns (kind, point, time) with kind one of 'ellipse-hit', 'barrier-hit',
    'barrier-endpoint'. An endpoint (or coincident-event) hit means the orbit
    must terminate; such orbits form a measure-zero set.
    """
    px, py = state.p
    vx, vy = state.v
    a, b = table.a, table.b
    y0, y1 = table.barrier_y
    t_ell = _ellipse_time(px, py, vx, vy, a, b)
    t_bar = math.inf
    y_hit = math.nan
    if vx != 0.0:
        tb = -px / vx
        if tb > _T_EPS:
            y_at = py + tb * vy
            if y0 <= y_at <= y1:
                t_bar, y_hit = tb, y_at
    if t_bar < math.inf and (abs(y_hit - y0) < _SING_TOL or abs(y_hit - y1) < _SING_TOL):
        return "barrier-endpoint", np.array([0.0, y_hit]), t_bar
    if t_bar < math.inf and abs(t_bar - t_ell) < _SING_TOL:
        return "barrier-endpoint", np.array([0.0, y_hit]), t_bar
    if t_bar < t_ell:
        return "barrier-hit", np.array([0.0, y_hit]), t_bar
    q = np.array([px + t_ell * vx, py + t_ell * vy])
    return "ellipse-hit", q, t_ell


def reflect(event, state: BilliardState, table: EllipseTable) -> BilliardState:
    """Elastic reflection at an ellipse or barrier event."""
    kind, q, _t = event
    vx, vy = state.v
    if kind == "barrier-hit":
        v = np.array([-vx, vy])
    elif kind == "ellipse-hit":
        nx, ny = q[0] / table.a, q[1] / table.b
        nn = math.hypot(nx, ny)
        nx, ny = nx / nn, ny / nn
        dot = vx * nx + vy * ny
        v = np.array([vx - 2.0 * dot * nx, vy - 2.0 * dot * ny])
    else:
        raise ValueError(f"cannot reflect event kind {kind!r}")
    v = v / math.hypot(v[0], v[1])
    return BilliardState(p=q.copy(), v=v, lam=caustic_param(q, v, table))


@dataclass
class TrajectoryStats:
    angles: np.ndarray          # elliptic boundary parameter at ellipse hits
    crossings: np.ndarray       # y at every x = 0 crossing (incl. barrier hits)
    lam0: float
    lam_min: float
    lam_max: float
    n_collisions: int
    status: int
    final: Optional[BilliardState] = None
    events: list = field(default_factory=list)

    @property
    def lam_drift(self) -> float:
        return max(self.lam_max - self.lam0, self.lam0 - self.lam_min)


def simulate(state: BilliardState, table: EllipseTable, n_collisions: int,
             keep_events: bool = False) -> TrajectoryStats:
    """Iterate next_event/reflect, recording boundary angles, x = 0 crossing
    heights, and the caustic drift. Endpoint-singular events terminate.
    """
    y0, y1 = table.barrier_y
    if keep_events:
        return _simulate_py(state, table, n_collisions)
    angles, crossings, n_ang, n_cross, lam_min, lam_max, ncoll, status, pf, vf = (
        _simulate_kernel(
            state.p[0], state.p[1], state.v[0], state.v[1],
            table.a, table.b, y0, y1, n_collisions,
        )
    )
    final = BilliardState(p=pf, v=vf, lam=caustic_param(pf, vf, table))
    return TrajectoryStats(
        angles=angles[:n_ang], crossings=crossings[:n_cross], lam0=state.lam,
        lam_min=lam_min, lam_max=lam_max, n_collisions=ncoll, status=status,
        final=final,
    )


def _simulate_py(state: BilliardState, table: EllipseTable, n: int) -> TrajectoryStats:
    """Pure-python event loop retaining the full event log (small runs)."""
    angles, crossings, events = [], [], []
    lam0 = state.lam
    lam_min = lam_max = lam0
    status = STATUS_OK
    t_abs = 0.0
    k = 0
    while k < n:
        kind, q, t = next_event(state, table)
        t_abs += t
        if state.v[0] != 0.0:
            tb = -state.p[0] / state.v[0]
            if _T_EPS < tb < t:
                crossings.append(state.p[1] + tb * state.v[1])
        if kind == "barrier-endpoint":
            status = STATUS_SINGULAR
            events.append({"type": kind, "t": t_abs, "x": q[0], "y": q[1],
                           "vx": state.v[0], "vy": state.v[1], "lambda": state.lam})
            break
        if kind == "barrier-hit":
            crossings.append(q[1])
        state = reflect((kind, q, t), state, table)
        if kind == "ellipse-hit":
            angles.append(math.atan2(q[1] / math.sqrt(table.b), q[0] / math.sqrt(table.a)))
        events.append({"type": kind, "t": t_abs, "x": q[0], "y": q[1],
                       "vx": state.v[0], "vy": state.v[1], "lambda": state.lam})
        lam_min = min(lam_min, state.lam)
        lam_max = max(lam_max, state.lam)
        k += 1
    return TrajectoryStats(
        angles=np.array(angles), crossings=np.array(crossings), lam0=lam0,
        lam_min=lam_min, lam_max=lam_max, n_collisions=k, status=status,
        final=state, events=events,
    )


@njit(cache=True)
def _simulate_kernel(px, py, vx, vy, a, b, ybar0, ybar1, nmax):
    angles = np.empty(nmax)
    crossings = np.empty(nmax + 1)
    n_ang = 0
    n_cross = 0
    sa = math.sqrt(a)
    sb = math.sqrt(b)
    lam = a * vy * vy + b * vx * vx - (px * vy - py * vx) ** 2
    lam_min = lam
    lam_max = lam
    status = 0
    k = 0
    while k < nmax:
        # ellipse-hit time (stable positive quadratic root)
        A = vx * vx / a + vy * vy / b
        B = 2.0 * (px * vx / a + py * vy / b)
        C = px * px / a + py * py / b - 1.0
        disc = B * B - 4.0 * A * C
        sq = math.sqrt(max(disc, 0.0))
        if B < 0.0:
            t_ell = (-B + sq) / (2.0 * A)
        elif B + sq > 0.0:
            t_ell = -2.0 * C / (B + sq)
        else:
            t_ell = 0.0
        # barrier / crossings
        t_bar = math.inf
        y_hit = 0.0
        if vx != 0.0:
            tb = -px / vx
            if tb > _T_EPS:
                y_at = py + tb * vy
                if ybar0 <= y_at <= ybar1:
                    t_bar = tb
                    y_hit = y_at
                elif tb < t_ell:
                    crossings[n_cross] = y_at
                    n_cross += 1
        if t_bar < math.inf:
            if abs(y_hit - ybar0) < _SING_TOL or abs(y_hit - ybar1) < _SING_TOL:
                status = 1
                break
            if abs(t_bar - t_ell) < _SING_TOL:
                status = 1
                break
        if t_bar < t_ell:
            crossings[n_cross] = y_hit
            n_cross += 1
            px = 0.0
            py = y_hit
            vx = -vx
        else:
            px = px + t_ell * vx
            py = py + t_ell * vy
            nx = px / a
            ny = py / b
            nn = math.hypot(nx, ny)
            nx /= nn
            ny /= nn
            dot = vx * nx + vy * ny
            vx -= 2.0 * dot * nx
            vy -= 2.0 * dot * ny
            nv = math.hypot(vx, vy)
            vx /= nv
            vy /= nv
            angles[n_ang] = math.atan2(py / sb, px / sa)
            n_ang += 1
        lam = a * vy * vy + b * vx * vx - (px * vy - py * vx) ** 2
        if lam < lam_min:
            lam_min = lam
        if lam > lam_max:
            lam_max = lam
        k += 1
    p = np.array([px, py])
    v = np.array([vx, vy])
    return angles, crossings, n_ang, n_cross, lam_min, lam_max, k, status, p, v


# ---------------------------------------------------------------------------
# Starts on a prescribed invariant region
# ---------------------------------------------------------------------------

def start_on_caustic(lam: float, table: EllipseTable, rng: np.random.Generator) -> BilliardState:
    """Random unit-speed state whose trajectory is tangent to the conic of
    parameter lam (ellipse for lam < b, hyperbola for b < lam < a)."""
    a, b = table.a, table.b
    if not 0.0 < lam < a or lam == b:
        raise ValueError("lam must lie in (0, a) away from b")
    if lam < b:
        while True:
            phi = rng.uniform(0.0, 2.0 * math.pi)
            q = np.array([math.sqrt(a - lam) * math.cos(phi),
                          math.sqrt(b - lam) * math.sin(phi)])
            if abs(q[0]) > 1e-9:
                break
        d = np.array([-math.sqrt(a - lam) * math.sin(phi),
                      math.sqrt(b - lam) * math.cos(phi)])
    else:
        smax = math.sqrt(b / (a - b)) * (1.0 - 1e-9)
        sh = rng.uniform(-smax, smax)
        u = math.asinh(sh)
        branch = 1.0 if rng.random() < 0.5 else -1.0
        q = np.array([branch * math.sqrt(a - lam) * math.cosh(u),
                      math.sqrt(lam - b) * math.sinh(u)])
        d = np.array([branch * math.sqrt(a - lam) * math.sinh(u),
                      math.sqrt(lam - b) * math.cosh(u)])
    if rng.random() < 0.5:
        d = -d
    return BilliardState.make(q, d, table)


def equidistribution_report(lam: float, table: EllipseTable, n_collisions: int,
                            rng: np.random.Generator):
    """KS distance between boundary-angle laws of two independent starts on
    the same invariant region; the unique-ergodicity proxy."""
    s1 = start_on_caustic(lam, table, rng)
    s2 = start_on_caustic(lam, table, rng)
    r1 = simulate(s1, table, n_collisions)
    r2 = simulate(s2, table, n_collisions)
    flagged = r1.status != STATUS_OK or r2.status != STATUS_OK
    if r1.angles.size == 0 or r2.angles.size == 0:
        return {"lam": lam, "ks": 1.0, "flagged": True, "runs": (r1, r2)}
    ks = ks_distance(ECDF(r1.angles), ECDF(r2.angles))
    return {"lam": lam, "ks": ks, "flagged": flagged, "runs": (r1, r2)}


# ---------------------------------------------------------------------------
# Reduction data: polygon dimensions l, w, d and derivatives in lambda
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReductionData:
    lam: float
    case: str  # 'E', 'Eprime', or 'H'
    l: float
    w: float
    d: float
    lp: float
    lpp: float
    wp: float
    wpp: float
    dp: float
    dpp: float


def integrand_e(s: float, lam: float, table: EllipseTable) -> float:
    """1/sqrt((a-s)(b-s)(lam-s)) where the radicand is positive."""
    prod = (table.a - s) * (table.b - s) * (lam - s)
    if prod <= 0.0:
        raise ValueError(f"integrand undefined at s={s} for lambda={lam}")
    return prod**-0.5


def reduction_data(lam: float, table: EllipseTable, rel_tol: float = 1e-12) -> ReductionData:
    """Polygon dimensions and lambda-derivatives by double-exponential
    quadrature, with substitutions removing endpoint singularities and tails.

    Case split: (0, lambda0) -> 'Eprime' (rectangle; obstacle undefined, NaN),
    (lambda0, b) -> 'E' (cylinder with slit), (b, a) -> 'H' (rectangle with
    slit). Raises QuadratureError if any integral fails to converge.
    """
    a, b, lam0 = table.a, table.b, table.lambda0
    if not 0.0 < lam < a or lam in (b, lam0):
        raise ValueError("lambda must lie in (0, a) away from {lambda0, b}")

    if lam < b:
        case = "E" if lam > lam0 else "Eprime"

        def over_ba(power):
            # int_b^a e/(lam-s)^power; (lam-s) < 0 on (b, a)
            def f(x, dlo, dhi):
                base = 1.0 / np.sqrt(dhi * dlo * (x - lam))
                return base / (lam - x) ** power if power else base
            return tanh_sinh(f, b, a, rel_tol, endpoint_distances=True)

        def tail_zero(power):
            # int_{-inf}^0 e/(lam-s)^power via s = -u^2
            def f(u):
                e = 1.0 / np.sqrt((a + u * u) * (b + u * u) * (lam + u * u))
                return 2.0 * u * e / (lam + u * u) ** power if power else 2.0 * u * e
            return exp_sinh(f, 0.0, rel_tol)

        l = 4.0 * over_ba(0)
        lp = -2.0 * over_ba(1)
        lpp = 3.0 * over_ba(2)
        wt, wtp, wtpp = tail_zero(0), tail_zero(1), tail_zero(2)
        w = l / 4.0 - wt
        wp = lp / 4.0 - (-0.5 * wtp)
        wpp = lpp / 4.0 - 0.75 * wtpp
        if case == "E":
            def over_0lam0(power):
                def f(x):
                    e = 1.0 / np.sqrt((a - x) * (b - x) * (lam - x))
                    return e / (lam - x) ** power if power else e
                return tanh_sinh(f, 0.0, lam0, rel_tol)
            d = over_0lam0(0)
            dp = -0.5 * over_0lam0(1)
            dpp = 0.75 * over_0lam0(2)
        else:
            d = dp = dpp = math.nan  # no obstacle meets the region for lam <= lambda0
    else:
        case = "H"

        def tail_b(power):
            # int_{-inf}^b e/(lam-s)^power via s = b - u^2
            def f(u):
                uu = u * u
                base = 2.0 / np.sqrt((a - b + uu) * (lam - b + uu))
                return base / (lam - b + uu) ** power if power else base
            return exp_sinh(f, 0.0, rel_tol)

        def over_0b(power):
            def f(x, dlo, dhi):
                base = 1.0 / np.sqrt((a - x) * dhi * (lam - x))
                return base / (lam - x) ** power if power else base
            return tanh_sinh(f, 0.0, b, rel_tol, endpoint_distances=True)

        def over_0lam0(power):
            def f(x):
                e = 1.0 / np.sqrt((a - x) * (b - x) * (lam - x))
                return e / (lam - x) ** power if power else e
            return tanh_sinh(f, 0.0, lam0, rel_tol)

        l = 2.0 * tail_b(0)
        lp = -1.0 * tail_b(1)
        lpp = 1.5 * tail_b(2)
        w = 2.0 * over_0b(0)
        wp = -1.0 * over_0b(1)
        wpp = 1.5 * over_0b(2)
        d = over_0lam0(0)
        dp = -0.5 * over_0lam0(1)
        dpp = 0.75 * over_0lam0(2)

    return ReductionData(lam=lam, case=case, l=l, w=w, d=d, lp=lp, lpp=lpp,
                         wp=wp, wpp=wpp, dp=dp, dpp=dpp)


def reduction_identities(lam: float, table: EllipseTable, rel_tol: float = 1e-12):
    """Cross-route identity values for the reduction integrals.

    Returns a dict with both sides of the case-E length identity
    (4 int_b^a e = 4 int_{-inf}^lambda e), the direct width against
    l/4 - w_tail, and for case H the two length routes.
    """
    a, b = table.a, table.b
    out = {}
    if lam < b:
        def f_ba(x, dlo, dhi):
            return 1.0 / np.sqrt(dhi * dlo * (x - lam))
        l_main = 4.0 * tanh_sinh(f_ba, b, a, rel_tol, endpoint_distances=True)

        def f_tail(u):
            uu = u * u
            return 2.0 / np.sqrt((a - lam + uu) * (b - lam + uu))
        l_alt = 4.0 * exp_sinh(f_tail, 0.0, rel_tol)

        def f_0lam(x, dlo, dhi):
            return 1.0 / np.sqrt((a - x) * (b - x) * dhi)
        w_direct = tanh_sinh(f_0lam, 0.0, lam, rel_tol, endpoint_distances=True)

        def f_wt(u):
            uu = u * u
            return 2.0 * u / np.sqrt((a + uu) * (b + uu) * (lam + uu))
        wt = exp_sinh(f_wt, 0.0, rel_tol)
        out["l_main"] = l_main
        out["l_alt"] = l_alt
        out["w_direct"] = w_direct
        out["w_from_l"] = l_main / 4.0 - wt
    else:
        def f_tail(u):
            uu = u * u
            return 2.0 / np.sqrt((a - b + uu) * (lam - b + uu))
        l_main = 2.0 * exp_sinh(f_tail, 0.0, rel_tol)

        def f_la(x, dlo, dhi):
            return 1.0 / np.sqrt(dhi * (x - b) * dlo)
        l_alt = 2.0 * tanh_sinh(f_la, lam, a, rel_tol, endpoint_distances=True)
        out["l_main"] = l_main
        out["l_alt"] = l_alt
    return out


def psi_curve(lam: float, table: EllipseTable,
              data: Optional[ReductionData] = None) -> hg.AffineElement:
    """Image of the invariant region in the affine-lattice coordinates:
    matrix ((l/r, -2w/r), (l/r, 2w/r)) and translation (-2d/r, 2d/r) with
    r = 2 sqrt(l w)."""
    rd = data if data is not None else reduction_data(lam, table)
    if rd.case not in ("E", "H"):
        raise ValueError("psi_curve requires a slit case (E or H)")
    r = 2.0 * math.sqrt(rd.l * rd.w)
    h = np.array([[rd.l / r, -2.0 * rd.w / r], [rd.l / r, 2.0 * rd.w / r]])
    xi = np.array([-2.0 * rd.d / r, 2.0 * rd.d / r])
    return hg.AffineElement(h, xi)


def det_M_lwd(rd: ReductionData) -> float:
    """det of the 3x3 matrix stacking (l, w, d) and its two derivatives."""
    m = np.array([
        [rd.l, rd.w, rd.d],
        [rd.lp, rd.wp, rd.dp],
        [rd.lpp, rd.wpp, rd.dpp],
    ])
    return float(np.linalg.det(m))


def det_Mpsi_billiard(lam: float, table: EllipseTable,
                      data: Optional[ReductionData] = None) -> float:
    """Wronskian determinant of the psi curve at lambda.

    Computed from the quadrature derivatives through the unitriangular
    factorization: det M_psi = 4 det M_{l,w,d} / r^3 with r = 2 sqrt(l w).
    """
    rd = data if data is not None else reduction_data(lam, table)
    if rd.case not in ("E", "H"):
        raise ValueError("det Mpsi requires a slit case (E or H)")
    r = 2.0 * math.sqrt(rd.l * rd.w)
    return 4.0 * det_M_lwd(rd) / r**3


# ---------------------------------------------------------------------------
# Polygonal models: cylinder / rectangle with a slit, flow at pi/4
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolygonalModel:
    kind: str  # 'cylinder-with-slit' | 'rectangle-with-slit' | 'rectangle'
    l: float
    w: float
    d: float = 0.0

    def __post_init__(self):
        if self.kind not in ("cylinder-with-slit", "rectangle-with-slit", "rectangle"):
            raise ValueError(f"unknown polygonal kind {self.kind!r}")
        if not 0.0 <= self.d <= self.w:
            raise ValueError("need 0 <= d <= w")


@dataclass
class PolygonalRun:
    returns_x: np.ndarray      # bottom-side return positions
    returns_lift: np.ndarray   # lift of the doubled-circle return coordinate
    status: int
    n_events: int


def polygonal_simulate(model: PolygonalModel, x0: float, n_returns: int) -> PolygonalRun:
    """Billiard flow at direction pi/4 from (x0, 0), recording the first-return
    map on the bottom side. The slit sits at x = l/2 rising from the bottom.

    The returned lift lives on the doubled circle of length 2l (position
    folded by horizontal direction), so rotation numbers compare directly
    with w/l.
    """
    l, w, d = model.l, model.w, model.d
    wrap = model.kind == "cylinder-with-slit"
    has_slit = model.kind != "rectangle" and d > 0.0
    xs = l / 2.0
    x, y = float(x0), 0.0
    sx, sy = 1.0, 1.0  # direction signs; speed (sx, sy)/sqrt(2)
    eps = 1e-12 * max(l, w)
    returns, lift = [], []
    unwrapped = x0
    status = STATUS_OK
    n_ev = 0
    guard = 0
    while len(returns) < n_returns and guard < 50 * n_returns + 1000:
        guard += 1
        tx = ((l if sx > 0 else 0.0) - x) / sx
        ty = ((w if sy > 0 else 0.0) - y) / sy
        ts = math.inf
        if has_slit and sx != 0.0:
            t_slit = (xs - x) / sx
            if t_slit > eps:
                y_at = y + t_slit * sy
                if 0.0 <= y_at <= d:
                    if abs(y_at - d) < 1e-12:
                        status = STATUS_SINGULAR
                        break
                    ts = t_slit
        t = min(tx, ty, ts)
        if abs(tx - ty) < 1e-14 and t in (tx, ty):
            status = STATUS_SINGULAR  # corner hit
            break
        x += t * sx
        y += t * sy
        n_ev += 1
        if t == ts:
            x = xs
            sx = -sx
        elif t == tx:
            if wrap:
                x = 0.0 if sx > 0 else l
            else:
                x = l if sx > 0 else 0.0
                sx = -sx
        else:
            y = w if sy > 0 else 0.0
            sy = -sy
            if y == 0.0:
                returns.append(x)
                lift.append(_doubled_coord(x, sx, l, lift))
    return PolygonalRun(returns_x=np.array(returns), returns_lift=np.array(lift),
                        status=status, n_events=n_ev)


def _doubled_coord(x, sx, l, lift_so_far):
    """Unwrapped coordinate on the doubled circle [0, 2l) (fold by direction)."""
    u = x if sx > 0 else (2.0 * l - x)
    u_mod = u % (2.0 * l)
    if not lift_so_far:
        return u_mod
    prev = lift_so_far[-1]
    # unwrap: choose the lift of u_mod nearest above prev (monotone returns)
    k = math.floor((prev - u_mod) / (2.0 * l)) + 1
    cand = u_mod + 2.0 * l * k
    if cand - prev > 2.0 * l:
        cand -= 2.0 * l
    return cand
