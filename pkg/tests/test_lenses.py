import math

import numpy as np
import pytest

from affinelab import homogeneous as hg
from affinelab import lenses as ln

HEX = (lambda b: b / math.sqrt(np.linalg.det(b)))(
    np.array([[1.0, 0.5], [0.0, math.sqrt(3) / 2]]))


# ---------------------------------------------------------------------------
# Admissibility and lens maps
# ---------------------------------------------------------------------------

def test_admissible_examples():
    assert ln.admissible(np.eye(2), 0.25)
    assert not ln.admissible(np.eye(2), 0.5)  # boundary case excluded
    assert ln.admissible(HEX, 0.5)  # shortest vector (4/3)^(1/4) ~ 1.0746


def test_admissibility_implies_disjoint(rng):
    for _ in range(100):
        h = hg.haar_sample(rng).reduce().rep.h
        sv = np.hypot(*hg.shortest_vector(h))
        R = 0.49 * sv
        assert ln.admissible(h, R)
        assert sv > 2 * R  # min center distance exceeds the diameter


def test_eaton_center_ray():
    e, v = ln.eaton_map([-1.0, 0.0], [1.0, 0.0], [0.0, 0.0], 1.0)
    assert np.allclose(e, [-1.0, 0.0]) and np.allclose(v, [-1.0, 0.0])


def test_eaton_offset_mirror():
    b = 0.6
    entry = [-math.sqrt(1 - b * b), b]
    e, v = ln.eaton_map(entry, [1.0, 0.0], [0.0, 0.0], 1.0)
    assert np.allclose(e, [-math.sqrt(1 - b * b), -b])
    assert np.allclose(v, [-1.0, 0.0])


def test_eaton_time_reversal(rng):
    for _ in range(20):
        th = rng.uniform(0, 2 * math.pi)
        v = np.array([math.cos(th), math.sin(th)])
        b = rng.uniform(-0.9, 0.9)
        perp = np.array([-v[1], v[0]])
        entry = -math.sqrt(1 - b * b) * v + b * perp
        e, vout = ln.eaton_map(entry, v, [0.0, 0.0], 1.0)
        back, vback = ln.eaton_map(e, -vout, [0.0, 0.0], 1.0)
        assert np.allclose(back, entry, atol=1e-12)
        assert np.allclose(vback, -v, atol=1e-12)


def test_eaton_retroreflection_law(rng):
    # outgoing direction is reversed and the outgoing line sits at minus the
    # incoming offset, measured along the fixed incoming perpendicular
    for _ in range(30):
        c = rng.uniform(-3, 3, 2)
        th = rng.uniform(0, 2 * math.pi)
        v = np.array([math.cos(th), math.sin(th)])
        b = rng.uniform(-0.95, 0.95)
        perp = np.array([-v[1], v[0]])
        entry = c - math.sqrt(1 - b * b) * v + b * perp
        e, vout = ln.eaton_map(entry, v, c, 1.0)
        assert np.allclose(vout, -v)
        off_in = float((entry - c) @ perp)
        off_out = float((e - c) @ perp)
        assert off_out == pytest.approx(-off_in, abs=1e-12)


def test_eaton_closed_form_vs_ode_oracle(rng):
    for _ in range(10):
        b = rng.uniform(0.05, 0.95)
        entry = np.array([-math.sqrt(1 - b * b), b])
        e_cf, v_cf = ln.eaton_map(entry, [1.0, 0.0], [0.0, 0.0], 1.0)
        e_ode, v_ode = ln.eaton_exit_by_ode(entry, [1.0, 0.0], [0.0, 0.0], 1.0)
        assert np.linalg.norm(e_cf - e_ode) < 1e-5
        assert np.linalg.norm(v_cf - v_ode) < 1e-4


def test_flat_lens_involution(rng):
    for _ in range(20):
        p = rng.uniform(-2, 2, 2)
        c = rng.uniform(-2, 2, 2)
        v = rng.uniform(-1, 1, 2)
        p1, v1 = ln.flat_lens_map(p, v, c)
        p2, v2 = ln.flat_lens_map(p1, v1, c)
        assert np.allclose(p2, p) and np.allclose(v2, v)
    c = np.array([0.3, 0.4])
    p1, v1 = ln.flat_lens_map(c, [0, 1], c)
    assert np.allclose(p1, c) and np.allclose(v1, [0, -1])


# ---------------------------------------------------------------------------
# Corridor search and tracing
# ---------------------------------------------------------------------------

def brute_next_hit(p, v, h, R, reach=40):
    """Oracle: scan every center in a box for the earliest disc hit."""
    best = (math.inf, None)
    for i in range(-reach, reach + 1):
        for j in range(-reach, reach + 1):
            c = h @ np.array([i, j], dtype=float)
            d = p - c
            bq = v @ d
            disc = bq * bq - (d @ d - R * R)
            if disc <= 1e-14:
                continue
            t = -bq - math.sqrt(disc)
            if 1e-12 < t < best[0]:
                best = (t, (i, j))
    return best


def test_next_lens_hit_against_brute_force(rng):
    grid = ln.LensGrid(h=np.eye(2), R=0.25)
    for _ in range(40):
        p = rng.uniform(0, 1, 2)
        if np.hypot(*(p - np.round(p))) <= 0.3:
            continue
        th = rng.uniform(0, 2 * math.pi)
        ray = ln.Ray(p=p, v=np.array([math.cos(th), math.sin(th)]))
        got = ln.next_lens_hit(ray, grid, max_leg=30.0)
        t_o, ij_o = brute_next_hit(ray.p, ray.v, grid.h, grid.R)
        if got is None:
            assert t_o > 30.0
            continue
        (i, j), point, t = got
        assert (i, j) == ij_o
        assert t == pytest.approx(t_o, rel=1e-10)


def test_ray_through_centers_hits_nearest():
    grid = ln.LensGrid(h=np.eye(2), R=0.25)
    ray = ln.Ray(p=np.array([-0.5, 0.0]), v=np.array([1.0, 0.0]))
    (i, j), point, t = ln.next_lens_hit(ray, grid)
    assert (i, j) == (0, 0)
    assert point[0] == pytest.approx(-0.25)


def test_empty_corridor_is_absent():
    grid = ln.LensGrid(h=np.eye(2), R=0.25)
    ray = ln.Ray(p=np.array([0.0, 0.5]), v=np.array([1.0, 0.0]))
    assert ln.next_lens_hit(ray, grid, max_leg=100.0) is None


def test_trace_requires_admissible():
    grid = ln.LensGrid(h=np.eye(2), R=0.6)
    with pytest.raises(ValueError):
        ln.trace(ln.Ray(p=np.array([0.5, 0.5]), v=np.array([1.0, 0.0])), grid, 10)


def test_flat_vertical_bounded_band():
    grid = ln.LensGrid(h=np.eye(2), R=0.25, model="flat", theta=math.pi / 2)
    tr = ln.trace(ln.Ray(p=np.array([0.1, 0.31]), v=np.array([0.0, 1.0])),
                  grid, 3000)
    assert tr.n_events == 3000
    assert np.ptp(tr.positions[:, 0]) < 1.0  # horizontal extent bounded


def test_eaton_and_flat_share_combinatorics():
    theta = 0.7234
    v = np.array([math.cos(theta), math.sin(theta)])
    p0 = np.array([0.51, 0.52])
    ge = ln.LensGrid(h=np.eye(2), R=0.25, model="eaton")
    gf = ln.LensGrid(h=np.eye(2), R=0.25, model="flat", theta=theta)
    te = ln.trace(ln.Ray(p=p0, v=v), ge, 1000)
    tf = ln.trace(ln.Ray(p=p0, v=v), gf, 1000)
    n = 400  # combinatorics eventually decohere through float roundoff
    assert np.array_equal(te.lenses[:n], tf.lenses[:n])


def test_trapped_classify_constructed_zigzag():
    k = np.arange(4000)
    band = np.stack([0.3 * np.cos(k * 2.399), k * 0.01], -1)
    rep = ln.trapped_classify(band)
    assert rep.trapped
    assert rep.band_width == pytest.approx(0.6, rel=0.05)
    assert abs(rep.band_dir[1]) > 0.99  # band along the y axis


def test_trapped_classify_untrapped_diffusion():
    # transverse deviations growing like sqrt(k) must fail the plateau test
    k = np.arange(1.0, 20_001.0)
    pos = np.stack([np.sqrt(k) * np.sin(0.7 * k), k], -1)
    rep = ln.trapped_classify(pos)
    assert not rep.trapped
    assert rep.plateau_growth > 0.2


def test_trapped_classify_short_horizon_raises():
    with pytest.raises(ValueError):
        ln.trapped_classify(np.zeros((10, 2)))


def test_trapped_classify_eventless_convention():
    tr = ln.Trace(positions=np.zeros((0, 2)), lenses=np.zeros((0, 2), dtype=int),
                  n_events=0, grazing=0, escaped=True,
                  start=np.zeros(2), model="eaton")
    rep = ln.trapped_classify(tr)
    assert rep.trapped and rep.band_width == 0.0


def test_rotate_system():
    grid = ln.LensGrid(h=HEX, R=0.3, model="eaton")
    rot = ln.rotate_system(grid, math.pi / 2)
    assert np.allclose(rot.h, HEX)  # theta = pi/2 is the identity rotation
    assert rot.model == "flat" and rot.theta == math.pi / 2
    rot2 = ln.rotate_system(grid, 1.0)
    sv0 = np.hypot(*hg.shortest_vector(grid.h))
    sv2 = np.hypot(*hg.shortest_vector(rot2.h))
    assert sv2 == pytest.approx(sv0, rel=1e-12)
    assert ln.admissible(rot2.h, grid.R)


# ---------------------------------------------------------------------------
# Skew product over the slit torus
# ---------------------------------------------------------------------------

def test_skew_iet_shadow_measure():
    for th in (0.8345, 0.31, 2.2, 4.0):
        iet = ln.build_skew_iet(np.eye(2), 0.25, direction=th)
        assert iet.shadow_measure == pytest.approx(2 * 0.25 * iet.tau, rel=1e-12)


def test_skew_iet_rejects_lattice_direction():
    with pytest.raises(ValueError):
        ln.build_skew_iet(np.eye(2), 0.25, direction=np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        ln.build_skew_iet(np.eye(2), 0.25, direction=math.pi / 2)


def test_skew_iet_rejects_inadmissible():
    with pytest.raises(ValueError):
        ln.build_skew_iet(np.eye(2), 0.5, direction=0.83)


def test_skew_iet_degenerates_to_rotation():
    iet = ln.build_skew_iet(np.eye(2), 1e-9, direction=0.8345)
    assert iet.shadow_measure < 1e-8
    assert ln.lyapunov_W(iet).status in ("trivial", "ok")


def test_skew_iet_alpha_matches_direct_return():
    # independent oracle: intersect the vertical ray from u * lambda1 with
    # the lattice translates of the section line, take the first return
    for th in (0.8345, 2.2):
        iet = ln.build_skew_iet(np.eye(2), 0.25, direction=th)
        lam1, lam2 = iet.basis[:, 0], iet.basis[:, 1]
        u = 0.2345
        p = u * lam1
        best = (math.inf, None)
        for m1 in range(-6, 7):
            for m2 in range(-6, 7):
                base = m1 * lam1 + m2 * lam2
                # p + (0, t) = w lam1 + base: eliminate w via the cross product
                t = (p[0] - base[0]) * lam1[1] / lam1[0] - (p[1] - base[1])
                if t > 1e-9 and t < best[0]:
                    best = (t, (p[0] - base[0]) / lam1[0])
        t_ret, u_next = best
        assert t_ret == pytest.approx(iet.tau, rel=1e-9)
        assert (u_next - u) % 1.0 == pytest.approx(iet.alpha, rel=1e-9)


def test_toggle_frequency_fubini():
    iet = ln.build_skew_iet(np.eye(2), 0.25, direction=0.8345)
    n = 1_000_000
    state = ln.drift_track(iet, n, u0=0.123)
    freq = state.toggles / n
    # crossing counts fluctuate at most at the binomial scale
    sigma = math.sqrt(iet.shadow_measure * (1 - iet.shadow_measure) / n)
    assert abs(freq - iet.shadow_measure) < 3 * sigma + 1e-4
    # per unit flow time this is the Fubini frequency 2R
    assert freq / iet.tau == pytest.approx(2 * 0.25, rel=0.01)


def test_drift_entries_integer():
    iet = ln.build_skew_iet(np.eye(2), 0.25, direction=0.8345)
    state = ln.drift_track(iet, 1000, u0=0.4)
    assert state.drift.dtype == np.int64


def test_drift_bounded_for_periodic_symmetric_data():
    # rational rotation with a symmetric toggle: the sheet alternates with
    # period two and the signed sums stay bounded
    pieces = np.array([[0.0, 0.5, 0.2, 0.0]])
    iet = ln.SkewIET(alpha=0.5, alpha_raw=0.5, tau=1.0, basis=np.eye(2),
                     pieces=pieces, R=0.25, rotation=0.0)
    state = ln.drift_track(iet, 20_000, u0=0.1)
    norms = np.hypot(state.drift[:, 0], state.drift[:, 1])
    assert norms.max() <= 3.0  # bounded: the orbit is periodic
    expo, degen = ln.deviation_exponent(state.drift)
    assert degen and expo == 0.0


def test_sheets_alternate_with_full_circle_toggle():
    pieces = np.array([[0.0, 1.0, 0.5, 0.0]])
    iet = ln.SkewIET(alpha=0.3819660112, alpha_raw=0.3819660112, tau=1.0,
                     basis=np.eye(2), pieces=pieces, R=0.5, rotation=0.0)
    state = ln.drift_track(iet, 500, u0=0.1)
    assert np.all(state.sheets[::2] == state.sheets[0])
    assert np.all(state.sheets[1::2] == -state.sheets[0])


def test_saddle_connection_flag():
    iet = ln.build_skew_iet(np.eye(2), 0.25, direction=0.8345)
    u_endpoint = float(iet.pieces[0, 0])
    state = ln.drift_track(iet, 100, u0=u_endpoint)
    assert state.saddle


def test_deviation_exponent_random_walk_surrogate(rng):
    steps = rng.choice([-1, 1], size=(400_000, 2)).astype(np.int64)
    walk = np.cumsum(steps, axis=0)
    expo, degen = ln.deviation_exponent(walk)
    assert not degen
    assert abs(expo - 0.5) < 0.1


def test_deviation_exponent_generic_direction():
    iet = ln.build_skew_iet(np.eye(2), 0.25, direction=0.8345)
    state = ln.drift_track(iet, 2_000_000, u0=0.37)
    expo, degen = ln.deviation_exponent(state.drift)
    assert not degen
    assert 0.25 < expo < 0.75


def test_stable_direction_on_a_line(rng):
    t = np.arange(1, 3000)
    d = np.stack([2 * t, t], -1) + rng.integers(-1, 2, size=(2999, 2))
    zeta, sup = ln.stable_direction_estimate(d)
    line = np.array([2.0, 1.0]) / math.sqrt(5)
    assert abs(zeta @ line) < 0.01  # perpendicular to the drift line
    assert sup < 0.01 * np.hypot(*d[-1])


def test_stable_direction_isotropic_walk_has_no_small_sup(rng):
    steps = rng.choice([-1, 1], size=(40_000, 2)).astype(float)
    walk = np.cumsum(steps, axis=0)
    _zeta, sup = ln.stable_direction_estimate(walk)
    assert sup > 40_000**0.4


def test_stable_direction_trapped_flow():
    iet = ln.build_skew_iet(np.eye(2), 0.25, direction=0.8345)
    state = ln.drift_track(iet, 300_000, u0=0.37)
    zeta, sup = ln.stable_direction_estimate(state.drift[::10])
    ortho = np.array([-zeta[1], zeta[0]])
    grow = np.max(np.abs(state.drift[::10] @ ortho))
    assert sup < 0.05 * grow  # bounded pairing while the complement grows


# ---------------------------------------------------------------------------
# Lyapunov exponent of the anti-invariant plane
# ---------------------------------------------------------------------------

def test_lyapunov_trivial_for_zero_radius():
    iet = ln.SkewIET(alpha=0.38196601125, alpha_raw=0.38196601125, tau=1.0,
                     basis=np.eye(2), pieces=np.zeros((0, 4)), R=0.0,
                     rotation=0.0)
    res = ln.lyapunov_W(iet)
    assert res.status == "trivial" and res.exponent == 0.0


def test_lyapunov_keane_rejection():
    pieces = np.array([[0.1, 0.25, 0.3, 0.0]])
    iet = ln.SkewIET(alpha=0.5, alpha_raw=0.5, tau=1.0, basis=np.eye(2),
                     pieces=pieces, R=0.125, rotation=0.0)
    res = ln.lyapunov_W(iet, n_blocks=10_000)
    assert res.status == "keane-violation"


def test_lyapunov_value_and_vector_invariance():
    iet = ln.build_skew_iet(np.eye(2), 0.25, direction=0.8345)
    r1 = ln.lyapunov_W(iet, n_blocks=400_000, rng=np.random.default_rng(1))
    r2 = ln.lyapunov_W(iet, n_blocks=400_000, rng=np.random.default_rng(2))
    assert r1.status == r2.status == "ok"
    assert abs(r1.exponent - r2.exponent) < 0.02
    assert abs(r1.exponent - 0.5) < 0.05
    assert r1.top_ratio == pytest.approx(1.0, abs=1e-5)


def test_rauzy_audit_unimodular():
    iet = ln.build_skew_iet(np.eye(2), 0.25, direction=0.8345)
    dets = ln.rauzy_audit(iet, 4000)
    assert len(dets) > 50
    assert all(d in (1, -1) for d in dets)


# ---------------------------------------------------------------------------
# Rotation-family curve check
# ---------------------------------------------------------------------------

def test_eaton_curve_check_value():
    assert ln.eaton_curve_check(0.25) == pytest.approx(-0.5, rel=1e-9)
    assert ln.eaton_curve_check(1.0) == pytest.approx(-2.0, rel=1e-9)
    assert abs(ln.eaton_curve_check(1e-7)) < 1e-6  # degenerate limit


def test_eaton_curve_check_rejects_nonpositive():
    with pytest.raises(ValueError):
        ln.eaton_curve_check(0.0)
