"""Batch experiment driver: every module exposed as subcommands with seeded,
reproducible runs and file outputs (CSV/JSONL plus optional SVG renders).

Reproducibility contract: the same resolved config and seed produce
byte-identical CSV/JSONL outputs, independent of the worker count. Every run
writes a manifest echoing the full resolved configuration.

Exit codes: 0 success, 1 validation error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import billiards as bl
from . import gaps as gp
from . import homogeneous as hg
from . import lenses as ln
from . import stats as st
from .quadrature import QuadratureError

_GLOBAL_KEYS = {"seed", "workers", "out", "format"}
_ENV_PREFIX = "AFFINELAB_"


@dataclass
class RunConfig:
    subcommand: list
    seed: int = 12345
    workers: int = 1
    out: str = "out"
    format: str = "csv"
    params: dict = field(default_factory=dict)

    def resolved(self) -> dict:
        d = {"subcommand": self.subcommand, "seed": self.seed,
             "workers": self.workers, "out": self.out, "format": self.format}
        d.update({k: self.params[k] for k in sorted(self.params)})
        return d


class ValidationError(ValueError):
    pass


def _read_config_file(path: str) -> dict:
    out = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith(("#", ";")):
                continue
            if "=" not in line:
                raise ValidationError(f"config line is not key=value: {line!r}")
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out


def _env_overrides() -> dict:
    out = {}
    for k, v in os.environ.items():
        if k.startswith(_ENV_PREFIX):
            out[k[len(_ENV_PREFIX):].lower()] = v
    return out


def _parse_lattice(spec: str) -> np.ndarray:
    if spec == "id":
        return np.eye(2)
    if spec == "hex":
        b = np.array([[1.0, 0.5], [0.0, math.sqrt(3) / 2]])
        return b / math.sqrt(np.linalg.det(b))
    vals = [float(x) for x in spec.split(",")]
    if len(vals) != 4:
        raise ValidationError("lattice must be 'id', 'hex', or 4 entries a,b,c,d")
    h = np.array(vals).reshape(2, 2)
    if abs(np.linalg.det(h) - 1.0) > 1e-9:
        raise ValidationError("lattice matrix must have determinant 1")
    return h


_PHI_PRESETS = {
    "s^2": (lambda s: s * s, lambda s: 2 * s),
    "s^3": (lambda s: s**3, lambda s: 3 * s * s),
    "sin": (lambda s: math.sin(s), lambda s: math.cos(s)),
}


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def _write_rows(path: str, header, rows, fmt: str):
    if fmt == "jsonl":
        path = path.rsplit(".", 1)[0] + ".jsonl"
        with open(path, "w") as f:
            for row in rows:
                f.write(json.dumps(dict(zip(header, row)), sort_keys=True))
                f.write("\n")
        return path
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)
    return path


def render_svg(path_csv: str, x_col: str, y_col: str, out_svg: str,
               width: int = 640, height: int = 400):
    """Thin polyline render of two CSV columns; acceptance never reads SVGs."""
    pts = []
    with open(path_csv) as f:
        for row in csv.DictReader(f):
            try:
                pts.append((float(row[x_col]), float(row[y_col])))
            except (TypeError, ValueError):
                continue
    if not pts:
        return None
    xs, ys = zip(*pts)
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    dx = (x1 - x0) or 1.0
    dy = (y1 - y0) or 1.0
    pad = 20
    scale = lambda p: (pad + (p[0] - x0) / dx * (width - 2 * pad),
                       height - pad - (p[1] - y0) / dy * (height - 2 * pad))
    path = " ".join(f"{sx:.2f},{sy:.2f}" for sx, sy in map(scale, pts))
    with open(out_svg, "w") as f:
        f.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
                f'height="{height}"><rect width="100%" height="100%" '
                f'fill="white"/><polyline points="{path}" fill="none" '
                f'stroke="steelblue" stroke-width="1"/></svg>\n')
    return out_svg


def _pmap(fn, payloads, workers: int):
    if workers <= 1:
        return [fn(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, payloads))


# ---------------------------------------------------------------------------
# Task functions (module level for pickling)
# ---------------------------------------------------------------------------

def _task_billiard_ks(payload):
    a, b, lam0, lam, n_coll, seed, task = payload
    tab = bl.EllipseTable(a, b, lam0)
    rng = st.stream(seed, task)
    rep = bl.equidistribution_report(lam, tab, n_coll, rng)
    return (task, lam, rep["ks"], int(rep["flagged"]))


def _task_eaton_theta(payload):
    hflat, R, theta, horizon, seed, task = payload
    grid = ln.LensGrid(h=np.array(hflat).reshape(2, 2), R=R, model="eaton")
    rng = st.stream(seed, task)
    reports = ln.scan_directions(grid, [theta], horizon, rng)
    th, rep, tr = reports[0]
    run_sup = (np.maximum.accumulate(np.abs(rep.transverse))
               if rep.transverse.size else np.zeros(1))
    fit = st.loglog_exponent(np.maximum(run_sup, 1e-12))
    angle = math.atan2(rep.band_dir[1], rep.band_dir[0]) % math.pi
    return (task, theta, int(rep.trapped), rep.band_width, angle, fit.slope)


def _task_gaps_geometric(payload):
    c, q, N, s, cap = payload
    vals = gp.geometric_values(c, q, N, s, cap=cap)
    return s, vals


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------

def _cmd_billiard_scan(cfg: RunConfig):
    p = cfg.params
    tab = bl.EllipseTable(p["a"], p["b"], p["lambda0"])
    n = int(p["grid"])
    rows = []
    for lo, hi in ((tab.lambda0, tab.b), (tab.b, tab.a)):
        grid = np.linspace(lo, hi, n + 2)[1:-1]
        for lam in grid:
            rd = bl.reduction_data(lam, tab)
            rows.append((f"{lam:.12g}", rd.case,
                         f"{bl.det_Mpsi_billiard(lam, tab, rd):.12g}",
                         f"{rd.l:.12g}", f"{rd.w:.12g}", f"{rd.d:.12g}"))
    out1 = _write_rows(os.path.join(cfg.out, "det_mpsi_grid.csv"),
                       ["lambda", "case", "det_mpsi", "l", "w", "d"],
                       rows, cfg.format)

    n_ks = int(p.get("ks_lams", 5))
    n_coll = int(p.get("collisions", 100_000))
    rng = st.stream(cfg.seed, 0)
    lams = []
    for _ in range(n_ks):
        lam = rng.uniform(0.02 * tab.a, 0.98 * tab.a)
        while abs(lam - tab.b) < 1e-3 or abs(lam - tab.lambda0) < 1e-3:
            lam = rng.uniform(0.02 * tab.a, 0.98 * tab.a)
        lams.append(lam)
    payloads = [(tab.a, tab.b, tab.lambda0, lam, n_coll, cfg.seed, i + 1)
                for i, lam in enumerate(lams)]
    results = sorted(_pmap(_task_billiard_ks, payloads, cfg.workers))
    rows = [(f"{lam:.12g}", f"{ks:.12g}", flag) for _t, lam, ks, flag in results]
    out2 = _write_rows(os.path.join(cfg.out, "equidistribution.csv"),
                       ["lambda", "ks", "flagged"], rows, cfg.format)
    return [out1, out2]


def _cmd_billiard_reduce(cfg: RunConfig):
    p = cfg.params
    tab = bl.EllipseTable(p["a"], p["b"], p["lambda0"])
    rd = bl.reduction_data(p["lambda"], tab)
    row = [(f"{rd.lam:.12g}",) + tuple(f"{x:.12g}" for x in
           (rd.l, rd.w, rd.d, rd.lp, rd.wp, rd.dp, rd.lpp, rd.wpp, rd.dpp))]
    out = _write_rows(os.path.join(cfg.out, "reduction.csv"),
                      ["lambda", "l", "w", "d", "lp", "wp", "dp",
                       "lpp", "wpp", "dpp"], row, cfg.format)
    return [out]


def _cmd_billiard_trajectory(cfg: RunConfig):
    p = cfg.params
    tab = bl.EllipseTable(p["a"], p["b"], p["lambda0"])
    rng = st.stream(cfg.seed, 0)
    s0 = bl.start_on_caustic(p["lambda"], tab, rng)
    run = bl.simulate(s0, tab, int(p.get("collisions", 1000)), keep_events=True)
    path = os.path.join(cfg.out, "trajectory.jsonl")
    with open(path, "w") as f:
        for ev in run.events:
            f.write(json.dumps({k: (round(v, 12) if isinstance(v, float) else v)
                                for k, v in ev.items()}, sort_keys=True))
            f.write("\n")
    return [path]


def _cmd_lattice_flow(cfg: RunConfig):
    p = cfg.params
    phi_name = p.get("phi", "s^2")
    if phi_name not in _PHI_PRESETS:
        raise ValidationError(f"unknown phi preset {phi_name!r}")
    phi, dphi = _PHI_PRESETS[phi_name]
    curve = hg.CurveU(phi=phi, dphi=dphi, domain=(0.0, 1.0))
    obs = hg.observable_from_name(p.get("obs", "cusp_bump:c=3"))
    T = float(p.get("T", 1e4))
    dt = float(p.get("dt", 0.01))
    n_s = int(p.get("n_s", 1))
    s_fixed = p.get("s")
    rng = st.stream(cfg.seed, 0)
    mc_mean, mc_se = hg.haar_mean(obs, int(p.get("mc_samples", 20_000)), rng)
    rows = []
    for i in range(n_s):
        s = float(s_fixed) if s_fixed is not None else rng.uniform(0.05, 0.95)
        x0 = hg.AffineLatticeClass.from_element(hg.curve_point(curve, s))
        avg, se = hg.birkhoff_average_se(x0, obs, T, dt)
        rows.append((f"{s:.12g}", f"{T:.12g}", f"{avg:.12g}", f"{se:.12g}",
                     f"{mc_mean:.12g}", f"{mc_se:.12g}"))
    out = _write_rows(os.path.join(cfg.out, "birkhoff.csv"),
                      ["s", "T", "orbit_avg", "orbit_se", "mc_mean", "mc_se"],
                      rows, cfg.format)
    return [out]


def _cmd_lattice_haar(cfg: RunConfig):
    p = cfg.params
    n = int(p.get("n", 100_000))
    areas = [float(x) for x in str(p.get("areas", "0.5,2.0")).split(",")]
    rng = st.stream(cfg.seed, 0)
    samples = [hg.haar_sample(rng) for _ in range(n)]
    rows = []
    for area in areas:
        counts = hg.count_points_in_disc(samples, math.sqrt(area / math.pi))
        rows.append((f"{area:.12g}", f"{counts.mean():.12g}",
                     f"{counts.std(ddof=1) / math.sqrt(n):.12g}",
                     f"{area:.12g}"))
    out = _write_rows(os.path.join(cfg.out, "siegel.csv"),
                      ["area", "mean_count", "se", "target"], rows, cfg.format)
    return [out]


def _cmd_lattice_curve_check(cfg: RunConfig):
    p = cfg.params
    R = float(p.get("R", 0.25))
    n = int(p.get("grid", 64))
    curve = hg.WronskianCurve(
        f=lambda t: hg.AffineElement(hg.rotation(t).h, np.array([2.0 * R, 0.0])),
        domain=(-1.0, 2 * math.pi + 1.0))
    rows = [(f"{th:.12g}", f"{hg.wronskian_det(curve, th):.12g}")
            for th in np.linspace(0.0, 2 * math.pi, n)]
    out = _write_rows(os.path.join(cfg.out, "rotation_wronskian.csv"),
                      ["theta", "det"], rows, cfg.format)
    return [out]


def _cmd_eaton_scan(cfg: RunConfig):
    p = cfg.params
    h = _parse_lattice(str(p.get("lattice", "id")))
    R = float(p["R"])
    if not ln.admissible(h, R):
        raise ValidationError(
            f"R={R} is inadmissible: lenses overlap (need 2R < shortest vector)")
    n_thetas = int(p.get("thetas", 20))
    horizon = int(p.get("horizon", 20_000))
    rng = st.stream(cfg.seed, 0)
    thetas = [float(t) for t in rng.uniform(0, 2 * math.pi, n_thetas)]
    payloads = [(tuple(h.ravel()), R, th, horizon, cfg.seed, i + 1)
                for i, th in enumerate(thetas)]
    results = sorted(_pmap(_task_eaton_theta, payloads, cfg.workers))
    rows = [(f"{th:.12g}", trapped, f"{bw:.12g}", f"{ang:.12g}", f"{ex:.12g}")
            for _t, th, trapped, bw, ang, ex in results]
    out = _write_rows(os.path.join(cfg.out, "trap_scan.csv"),
                      ["theta", "trapped", "band_width", "band_angle",
                       "exponent"], rows, cfg.format)
    return [out]


def _cmd_eaton_lyapunov(cfg: RunConfig):
    p = cfg.params
    n_cfg = int(p.get("configs", 10))
    blocks = int(p.get("blocks", 1_000_000))
    rng = st.stream(cfg.seed, 0)
    rows = []
    i = 0
    attempts = 0
    while i < n_cfg and attempts < 20 * n_cfg:
        attempts += 1
        L = hg.haar_sample(rng)
        h = L.reduce().rep.h
        sv = hg.shortest_vector(h)
        R = 0.5 * float(np.hypot(sv[0], sv[1])) * rng.uniform(0.2, 0.9)
        theta = rng.uniform(0, 2 * math.pi)
        try:
            iet = ln.build_skew_iet(h, R, direction=theta)
        except ValueError:
            continue
        res = ln.lyapunov_W(iet, n_blocks=blocks,
                            rng=st.stream(cfg.seed, 1000 + i))
        if res.status != "ok":
            continue
        rows.append((i, f"{theta:.12g}", f"{R:.12g}",
                     f"{res.exponent:.12g}", f"{res.top_ratio:.12g}",
                     res.status))
        i += 1
    out = _write_rows(os.path.join(cfg.out, "lyapunov.csv"),
                      ["config", "theta", "R", "exponent", "top_ratio",
                       "status"], rows, cfg.format)
    return [out]


def _cmd_eaton_trace(cfg: RunConfig):
    p = cfg.params
    h = _parse_lattice(str(p.get("lattice", "id")))
    R = float(p["R"])
    theta = float(p.get("theta", 0.8345))
    n_events = int(p.get("events", 2000))
    if not ln.admissible(h, R):
        raise ValidationError(
            f"R={R} is inadmissible: lenses overlap (need 2R < shortest vector)")
    rng = st.stream(cfg.seed, 0)
    p0 = h @ (rng.random(2) + 0.5)
    ray = ln.Ray(p=p0, v=np.array([math.cos(theta), math.sin(theta)]))
    tr = ln.trace(ray, ln.LensGrid(h=h, R=R, model=str(p.get("model", "eaton")),
                                   theta=theta), n_events)
    path = os.path.join(cfg.out, "trace.jsonl")
    dirs_flip = 1.0
    with open(path, "w") as f:
        for k in range(tr.n_events):
            vx = math.cos(theta) * dirs_flip
            vy = math.sin(theta) * dirs_flip
            f.write(json.dumps({
                "event_index": k,
                "x": round(float(tr.positions[k, 0]), 12),
                "y": round(float(tr.positions[k, 1]), 12),
                "vx": round(vx, 12), "vy": round(vy, 12),
                "lens_i": int(tr.lenses[k, 0]),
                "lens_j": int(tr.lenses[k, 1]),
            }, sort_keys=True))
            f.write("\n")
            dirs_flip = -dirs_flip
    return [path]


def _cmd_eaton_drift(cfg: RunConfig):
    p = cfg.params
    h = _parse_lattice(str(p.get("lattice", "id")))
    R = float(p.get("R", 0.25))
    theta = float(p.get("theta", 0.8345))
    n_ret = int(p.get("returns", 1_000_000))
    iet = ln.build_skew_iet(h, R, direction=theta)
    state = ln.drift_track(iet, n_ret, u0=float(p.get("u0", 0.37)))
    expo, degen = ln.deviation_exponent(state.drift)
    zeta, sup = ln.stable_direction_estimate(state.drift[:: max(1, n_ret // 50_000)])
    thin = max(1, n_ret // 4096)
    rows = [(k * thin, int(state.drift[k * thin, 0]), int(state.drift[k * thin, 1]))
            for k in range(len(state.drift) // thin)]
    out1 = _write_rows(os.path.join(cfg.out, "drift_series.csv"),
                       ["k", "d1", "d2"], rows, cfg.format)
    rows = [(f"{theta:.12g}", f"{R:.12g}", f"{expo:.12g}", int(degen),
             int(state.saddle), f"{zeta[0]:.12g}", f"{zeta[1]:.12g}",
             f"{sup:.12g}", f"{state.toggles / max(len(state.drift), 1):.12g}",
             f"{iet.shadow_measure:.12g}")]
    out2 = _write_rows(os.path.join(cfg.out, "drift_summary.csv"),
                       ["theta", "R", "exponent", "degenerate", "saddle",
                        "zeta_x", "zeta_y", "pairing_sup", "toggle_rate",
                        "shadow"], rows, cfg.format)
    # state dump for reproducibility of the skew-product data
    out3 = os.path.join(cfg.out, "skew_iet.json")
    with open(out3, "w") as f:
        json.dump({"alpha": iet.alpha, "alpha_raw": iet.alpha_raw,
                   "tau": iet.tau, "R": iet.R, "rotation": iet.rotation,
                   "basis": iet.basis.tolist(),
                   "pieces": iet.pieces.tolist()}, f, sort_keys=True, indent=2)
        f.write("\n")
    return [out1, out2, out3]


def _cmd_gaps_direct(cfg: RunConfig):
    p = cfg.params
    r = float(p["r"])
    hist = gp.plain_gap_distribution(r)
    rows = [(f"{lo:.12g}", f"{hi:.12g}", int(c)) for lo, hi, c in
            zip(hist["edges"][:-1], hist["edges"][1:], hist["counts"])]
    out1 = _write_rows(os.path.join(cfg.out, "gap_histogram.csv"),
                       ["bin_lo", "bin_hi", "count"], rows, cfg.format)
    rows = [("fraction_below_half", f"{hist['fraction_below_half']:.12g}"),
            ("target_3_over_pi2", f"{3 / math.pi**2:.12g}"),
            ("mass_beyond_6", f"{hist['mass_beyond_6']:.12g}"),
            ("mean_normalized", f"{hist['mean_normalized']:.12g}")]
    out2 = _write_rows(os.path.join(cfg.out, "gap_summary.csv"),
                       ["key", "value"], rows, cfg.format)
    return [out1, out2]


def _cmd_gaps_lattice(cfg: RunConfig):
    p = cfg.params
    r = float(p["r"])
    n_s = int(p.get("samples", 20))
    s_fixed = p.get("s")
    rng = st.stream(cfg.seed, 0)
    seq = gp.frac_sqrt_gaps(r) if r <= 2e6 else None
    rows = []
    for i in range(n_s if s_fixed is None else 1):
        s = float(s_fixed) if s_fixed is not None else float(rng.uniform(0.01, 0.99))
        fit = gp.L_prime_fit(r, s)
        direct = gp.L_r(seq, s) if seq is not None else math.nan
        rows.append((i, f"{r:.12g}", f"{s:.12g}", f"{direct:.12g}",
                     f"{fit.value:.12g}", fit.status))
    out = _write_rows(os.path.join(cfg.out, "gap_lattice.csv"),
                      ["n", "r", "s", "L", "Lprime", "status"], rows, cfg.format)
    return [out]


def _cmd_gaps_geometric(cfg: RunConfig):
    p = cfg.params
    c = float(p.get("c", 1.0))
    q = float(p.get("q", 2.0))
    N = int(p.get("N", 500))
    n_s = int(p.get("samples", 10))
    n_mc = int(p.get("mc_samples", 20_000))
    rng = st.stream(cfg.seed, 0)
    mc = gp.limiting_f_samples(n_mc, rng)
    s_list = [float(s) for s in st.stream(cfg.seed, 1).uniform(0.01, 0.99, n_s)]
    payloads = [(c, q, N, s, gp.DEFAULT_CAP) for s in s_list]
    results = _pmap(_task_gaps_geometric, payloads, cfg.workers)
    rows = []
    for s, vals in results:
        ks = st.ks_distance(st.ECDF(vals), st.ECDF(mc))
        rows.append((f"{s:.12g}", f"{ks:.12g}",
                     int(np.sum(~np.isfinite(vals)))))
    out1 = _write_rows(os.path.join(cfg.out, "geometric_ks.csv"),
                       ["s", "ks", "n_overflow"], rows, cfg.format)
    grid = np.linspace(0.0, 8.0, 81)
    pvals, ses = gp.limiting_cdf_mc(grid, 0, None, samples=mc)
    rows = [(f"{l:.12g}", f"{pv:.12g}", f"{se:.12g}")
            for l, pv, se in zip(grid, pvals, ses)]
    out2 = _write_rows(os.path.join(cfg.out, "limiting_cdf.csv"),
                       ["l", "mc_estimate", "stderr"], rows, cfg.format)
    return [out1, out2]


_COMMANDS = {
    ("billiard", "scan"): _cmd_billiard_scan,
    ("billiard", "reduce"): _cmd_billiard_reduce,
    ("billiard", "trajectory"): _cmd_billiard_trajectory,
    ("lattice", "flow"): _cmd_lattice_flow,
    ("lattice", "haar"): _cmd_lattice_haar,
    ("lattice", "curve-check"): _cmd_lattice_curve_check,
    ("eaton", "scan"): _cmd_eaton_scan,
    ("eaton", "trace"): _cmd_eaton_trace,
    ("eaton", "lyapunov"): _cmd_eaton_lyapunov,
    ("eaton", "drift"): _cmd_eaton_drift,
    ("gaps", "direct"): _cmd_gaps_direct,
    ("gaps", "lattice"): _cmd_gaps_lattice,
    ("gaps", "geometric"): _cmd_gaps_geometric,
}

# typed parameter schema per subcommand; unknown keys are rejected
_PARAM_TYPES = {
    ("billiard", "scan"): {"a": float, "b": float, "lambda0": float,
                           "grid": int, "ks_lams": int, "collisions": int},
    ("billiard", "reduce"): {"a": float, "b": float, "lambda0": float,
                             "lambda": float},
    ("billiard", "trajectory"): {"a": float, "b": float, "lambda0": float,
                                 "lambda": float, "collisions": int},
    ("lattice", "flow"): {"phi": str, "s": float, "T": float, "dt": float,
                          "n_s": int, "obs": str, "mc_samples": int},
    ("lattice", "haar"): {"n": int, "areas": str},
    ("lattice", "curve-check"): {"R": float, "grid": int},
    ("eaton", "scan"): {"lattice": str, "R": float, "thetas": int,
                        "horizon": int},
    ("eaton", "trace"): {"lattice": str, "R": float, "theta": float,
                         "events": int, "model": str},
    ("eaton", "lyapunov"): {"configs": int, "blocks": int},
    ("eaton", "drift"): {"lattice": str, "R": float, "theta": float,
                         "returns": int, "u0": float},
    ("gaps", "direct"): {"r": float},
    ("gaps", "lattice"): {"r": float, "s": float, "samples": int},
    ("gaps", "geometric"): {"c": float, "q": float, "N": int, "samples": int,
                            "mc_samples": int},
}

_REQUIRED = {
    ("billiard", "scan"): ("a", "b", "lambda0", "grid"),
    ("billiard", "reduce"): ("a", "b", "lambda0", "lambda"),
    ("billiard", "trajectory"): ("a", "b", "lambda0", "lambda"),
    ("eaton", "scan"): ("R",),
    ("eaton", "trace"): ("R",),
    ("gaps", "direct"): ("r",),
    ("gaps", "lattice"): ("r",),
}


def _build_parser():
    ap = argparse.ArgumentParser(prog="affinelab", description=__doc__,
                                 allow_abbrev=False)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--out", type=str, default=None)
    ap.add_argument("--format", choices=("csv", "jsonl"), default=None)
    ap.add_argument("--config", type=str, default=None,
                    help="INI-style key=value file; flags override it")
    ap.add_argument("--svg", action="store_true",
                    help="emit a thin SVG render next to each CSV")
    ap.add_argument("group", choices=sorted({g for g, _ in _COMMANDS}))
    ap.add_argument("action")
    return ap


def _parse_kv(tokens: list) -> dict:
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise ValidationError(f"expected --key, got {tok!r}")
        key = tok[2:].replace("-", "_")
        if i + 1 >= len(tokens):
            raise ValidationError(f"missing value for --{key}")
        out[key] = tokens[i + 1]
        i += 2
    return out


def run(argv) -> int:
    """Execute one subcommand; returns the process exit code."""
    ap = _build_parser()
    try:
        ns, kv_tokens = ap.parse_known_args(argv)
    except SystemExit as e:
        return 1 if e.code else 0
    key = (ns.group, ns.action)
    if key not in _COMMANDS:
        print(f"unknown subcommand: {ns.group} {ns.action}", file=sys.stderr)
        return 1
    try:
        raw = {}
        if ns.config:
            raw.update(_read_config_file(ns.config))
        raw.update(_env_overrides())
        raw.update(_parse_kv(kv_tokens))
        schema = _PARAM_TYPES[key]
        params = {}
        globals_found = {}
        for k, v in raw.items():
            if k in _GLOBAL_KEYS:
                globals_found[k] = v
                continue
            if k not in schema:
                raise ValidationError(f"unknown parameter --{k} for "
                                      f"{ns.group} {ns.action}")
            params[k] = schema[k](v)
        cfg = RunConfig(
            subcommand=[ns.group, ns.action],
            seed=int(ns.seed if ns.seed is not None
                     else globals_found.get("seed", 12345)),
            workers=int(ns.workers if ns.workers is not None
                        else globals_found.get("workers", 1)),
            out=str(ns.out if ns.out is not None
                    else globals_found.get("out", "out")),
            format=str(ns.format if ns.format is not None
                       else globals_found.get("format", "csv")),
            params=params,
        )
        for req in _REQUIRED.get(key, ()):
            if req not in params:
                raise ValidationError(f"missing required --{req}")
        os.makedirs(cfg.out, exist_ok=True)
        outputs = _COMMANDS[key](cfg)
        if ns.svg:
            for o in outputs:
                if o.endswith(".csv"):
                    with open(o) as f:
                        header = f.readline().strip().split(",")
                    if len(header) >= 2:
                        render_svg(o, header[0], header[1],
                                   o[:-4] + ".svg")
        manifest = {"version": __version__, "config": cfg.resolved(),
                    "outputs": sorted(os.path.basename(o) for o in outputs)}
        with open(os.path.join(cfg.out, "manifest.json"), "w") as f:
            json.dump(manifest, f, sort_keys=True, indent=2)
            f.write("\n")
    except (ValidationError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (QuadratureError, RuntimeError, OverflowError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
