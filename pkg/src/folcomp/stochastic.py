"""Horizontal Brownian motion and checks of its theorem-level consequences.

The simulated process is the geometric Euler scheme for the diffusion whose
generator is the *full* horizontal Laplacian (no 1/2): per step the point is
multiplied on the right by the exponential of a horizontal Gaussian increment
of covariance 2 dt (plus the frame-divergence drift, which vanishes on the
bundled models).  Because increments live in the left-invariant frame, a path
is a fixed product of group elements independent of its start point; left
translations of runs are exact, which both the tests and the
common-random-number audits exploit.

Every path owns a counter-based RNG stream, so results are reproducible for a
given (model, config, seed) regardless of how paths are chunked or scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geodesy as gd
from .connection import gradient_curvature_bound, tensor_report
from .errors import InapplicableK, UncertifiedDistance
from .models import FoliatedModel
from .reporting import AuditReport

CHUNK = 512
MET_DISTANCE = 1e-4
MC_SLACK = 1.02          # multiplicative slack on MC assertions
DROP_LIMIT = 0.05        # coupled pairs allowed to lose certification
QUANTILES = (0.5, 0.9, 0.99)
EVAL_TIMES = (0.25, 0.5, 1.0)


@dataclass(frozen=True)
class SimConfig:
    dt: float
    t_end: float
    n_paths: int
    seed: int
    coupling_refresh: int = 1

    def __post_init__(self):
        if self.dt <= 0 or self.t_end <= 0 or self.dt > self.t_end:
            raise ValueError("need 0 < dt <= t_end")
        if self.n_paths < 1:
            raise ValueError("need n_paths >= 1")
        if self.coupling_refresh < 1:
            raise ValueError("need coupling_refresh >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass(frozen=True)
class PathRecord:
    """One simulated path: points on the time grid and the driving noise."""

    points: np.ndarray          # (n_steps + 1, point_dim)
    noise: np.ndarray           # (n_steps, n_horizontal), covariance 2 dt I
    stream_id: int
    exploded: bool = False

    @property
    def endpoint(self) -> np.ndarray:
        return self.points[-1]


@dataclass(frozen=True)
class SemigroupEstimate:
    value: float
    std_error: float
    n_paths: int


def _stream_noise(seed: int, stream: int, n_steps: int, n_h: int, dt: float) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, stream]))
    return rng.standard_normal((n_steps, n_h)) * math.sqrt(2.0 * dt)


def _chunk_noise(seed, streams, n_steps, n_h, dt):
    return np.stack([_stream_noise(seed, s, n_steps, n_h, dt) for s in streams])


def hbm_path(m: FoliatedModel, p, cfg: SimConfig, stream: int = 0) -> PathRecord:
    """A single horizontal Brownian path started at p (full time grid)."""
    ops = gd.ops_for(m)
    tab = gd.tables_for(m)
    noise = _stream_noise(cfg.seed, stream, cfg.n_steps, m.n_horizontal, cfg.dt)
    pts = np.empty((cfg.n_steps + 1, ops.point_dim))
    pts[0] = np.asarray(p, dtype=float)
    drift = tab.drift * cfg.dt
    for k in range(cfg.n_steps):
        w = noise[k] @ tab.hframe + drift
        pts[k + 1] = ops.normalize(ops.mult(pts[k], ops.exp(w)))
    return PathRecord(points=pts, noise=noise, stream_id=stream)


def simulate_endpoints(m: FoliatedModel, p, cfg: SimConfig, *, snapshot_steps=None, start_stream: int = 0):
    """Batched simulation; returns endpoints (n_paths, point_dim) and
    optionally snapshots {step: points} at the requested step indices."""
    ops = gd.ops_for(m)
    tab = gd.tables_for(m)
    n_steps = cfg.n_steps
    snapshot_steps = sorted(set(snapshot_steps or ()))
    out = np.empty((cfg.n_paths, ops.point_dim))
    snaps = {k: np.empty((cfg.n_paths, ops.point_dim)) for k in snapshot_steps}
    drift = tab.drift * cfg.dt
    for lo in range(0, cfg.n_paths, CHUNK):
        hi = min(cfg.n_paths, lo + CHUNK)
        streams = range(start_stream + lo, start_stream + hi)
        noise = _chunk_noise(cfg.seed, streams, n_steps, m.n_horizontal, cfg.dt)
        pts = np.broadcast_to(np.asarray(p, dtype=float), (hi - lo, ops.point_dim)).copy()
        if 0 in snaps:
            snaps[0][lo:hi] = pts
        for k in range(n_steps):
            w = noise[:, k, :] @ tab.hframe + drift
            pts = ops.normalize(ops.mult(pts, ops.exp(w)))
            if (k + 1) in snaps:
                snaps[k + 1][lo:hi] = pts
        out[lo:hi] = pts
    return (out, snaps) if snapshot_steps else (out, {})


def semigroup_estimate(m: FoliatedModel, f, x, t: float, cfg: SimConfig) -> SemigroupEstimate:
    """Monte Carlo heat-semigroup value at (x, t); deterministic given seed."""
    run_cfg = SimConfig(dt=cfg.dt, t_end=t, n_paths=cfg.n_paths, seed=cfg.seed,
                        coupling_refresh=cfg.coupling_refresh)
    endpoints, _ = simulate_endpoints(m, x, run_cfg)
    vals = _apply_function(f, endpoints)
    value = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return SemigroupEstimate(value=value, std_error=se, n_paths=cfg.n_paths)


def _apply_function(f, points):
    try:
        vals = np.asarray(f(points), dtype=float)
        if vals.shape == (len(points),):
            return vals
    except Exception:
        pass
    return np.array([float(f(pt)) for pt in points])


# -- radial comparison -------------------------------------------------------------


def _coth_drift_sq(y, K, n):
    """2 sqrt(y) b(sqrt(y)) + 2 for the squared-radius process, where b is the
    comparison drift; finite at 0 (the x coth x limit)."""
    if K == 0:
        return np.full_like(y, 2.0 * n + 2.0)
    x = np.sqrt(np.abs(K) * np.maximum(y, 0.0) / n)
    small = x < 1e-4
    xcothx = np.where(small, 1.0 + x**2 / 3.0, x / np.tanh(np.where(small, 1.0, x)))
    return 2.0 * n * xcothx + 2.0


def reference_radial_quantiles(K: float, n: int, cfg: SimConfig, eval_times, quantiles=QUANTILES, substeps: int = 4):
    """Quantiles of the one-dimensional comparison diffusion started at 0.

    The squared radius is a squared Bessel process (sampled exactly through
    its noncentral chi-square transitions) plus, for K < 0, the bounded extra
    coth drift applied by splitting.  Quadratic variation is 2 dt per unit
    time, matching the radial martingale bound.
    """
    rng = np.random.Generator(np.random.Philox(key=[cfg.seed & 0xFFFFFFFFFFFFFFFF, 0x7EF]))
    dt = cfg.dt / substeps
    n_steps = cfg.n_steps * substeps
    y = np.zeros(cfg.n_paths)
    df = float(n + 1)
    out = {}
    eval_steps = {int(round(t / cfg.dt)) * substeps: t for t in eval_times}
    for k in range(1, n_steps + 1):
        scale = 2.0 * dt
        nonc = y / scale
        tiny = nonc < 1e-12
        y = scale * np.where(
            tiny,
            rng.chisquare(df, size=len(y)),
            rng.noncentral_chisquare(df, np.maximum(nonc, 1e-12), size=len(y)),
        )
        if K < 0:
            extra = _coth_drift_sq(y, K, n) - (2.0 * n + 2.0)
            y = np.maximum(y + extra * dt, 0.0)
        if k in eval_steps:
            r = np.sqrt(y)
            out[eval_steps[k]] = {
                q: (float(np.quantile(r, q)), _quantile_se(r, q)) for q in quantiles
            }
    return out


def _quantile_se(samples: np.ndarray, q: float, groups: int = 20) -> float:
    n = len(samples)
    if n < groups * 2:
        return float("inf")
    per = n // groups
    vals = [np.quantile(samples[g * per : (g + 1) * per], q) for g in range(groups)]
    return float(np.std(vals, ddof=1) / math.sqrt(groups))


def _batched_distances(m, p, points, warm=None, chunk=4096):
    """Warm single-start standard-accuracy solves for a large point batch."""
    n = len(points)
    lengths = np.empty(n)
    ws = np.empty((n, m.dim))
    conv = np.zeros(n, dtype=bool)
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        w_init = None if warm is None else warm[lo:hi]
        sol = gd.shoot_batch(m, points[lo:hi], p=p, w_init=w_init, n_starts=1, profile="standard")
        lengths[lo:hi] = sol.length
        ws[lo:hi] = sol.w
        conv[lo:hi] = sol.converged
    return lengths, ws, conv


def _certify_subsample(m, p, points, size=128, n_starts=6):
    idx = np.arange(min(size, len(points)))
    sol = gd.shoot_batch(m, points[idx], p=p, n_starts=n_starts, profile="standard")
    return float(sol.certified.mean()) if len(idx) else 1.0


def radial_comparison_run(
    m: FoliatedModel,
    p,
    cfg: SimConfig,
    *,
    eval_times=EVAL_TIMES,
    quantiles=QUANTILES,
) -> AuditReport:
    """Quantile-wise domination of the radial process by the one-dimensional
    comparison diffusion (independent driving noise; the pathwise coupling is
    not extracted).  Distances are certified on a deterministic subsample."""
    rep = tensor_report(m)
    K, n = rep.K, m.n_horizontal
    if K > 0:
        raise InapplicableK("the radial comparison diffusion is stated for K <= 0")
    eval_times = [t for t in eval_times if t <= cfg.t_end + 1e-12]
    steps = {int(round(t / cfg.dt)): t for t in eval_times}
    _, snaps = simulate_endpoints(m, p, cfg, snapshot_steps=steps.keys())
    ref = reference_radial_quantiles(K, n, cfg, eval_times, quantiles)

    p_arr = np.asarray(p, dtype=float)[None, :]
    rows = []
    warm = None
    cert_rates = {}
    for step in sorted(steps):
        t = steps[step]
        pts = snaps[step]
        lengths, warm, conv = _batched_distances(m, p_arr, pts, warm=warm)
        cert_rates[t] = _certify_subsample(m, p_arr, pts)
        ok = conv & np.isfinite(lengths)
        r_t = lengths[ok]
        for q in quantiles:
            meas = float(np.quantile(r_t, q))
            se_m = _quantile_se(r_t, q)
            ref_q, se_r = ref[t][q]
            se_pool = math.sqrt(se_m**2 + se_r**2)
            bound = ref_q + 3.0 * se_pool
            rows.append(
                {
                    "t": t,
                    "quantile": q,
                    "measured": meas,
                    "bound": bound,
                    "margin": bound - meas,
                    "certificate": "certified" if cert_rates[t] >= 0.95 else "uncertified",
                    "n_effective": int(ok.sum()),
                }
            )
    return AuditReport.build(
        "radial",
        ["t", "quantile", "measured", "bound", "margin", "certificate", "n_effective"],
        rows,
        {"bound": 0.0, "se_slack": 3.0},
        extras={"K": K, "n": n, "certified_fraction": cert_rates},
    )


# -- exit times and the heat-kernel diagonal ------------------------------------------


def exit_tail(
    m: FoliatedModel,
    p,
    r_grid,
    t: float,
    cfg: SimConfig,
    *,
    subgrid: int | None = None,
    fit_range=(2.0, 4.0),
) -> AuditReport:
    """Tail of the running maximum of the radial distance up to time t.

    Flat models track the exact distance at every step; for the others the
    running maximum runs over a time subgrid of certified-warm solves (an
    underestimate of the supremum, conservative for the negative-slope
    assertion).  Fits log P against r^2 on the requested window."""
    rep = tensor_report(m)
    K, n = rep.K, m.n_horizontal
    if K > 0:
        raise InapplicableK("exit tails are stated for K <= 0")
    run_cfg = SimConfig(dt=cfg.dt, t_end=t, n_paths=cfg.n_paths, seed=cfg.seed)
    ops = gd.ops_for(m)
    p_arr = np.asarray(p, dtype=float)
    exact = m.nilpotency_step == 1

    if exact:
        tab = gd.tables_for(m)
        running = np.zeros(cfg.n_paths)
        drift = tab.drift * run_cfg.dt
        for lo in range(0, cfg.n_paths, CHUNK):
            hi = min(cfg.n_paths, lo + CHUNK)
            noise = _chunk_noise(cfg.seed, range(lo, hi), run_cfg.n_steps, m.n_horizontal, run_cfg.dt)
            pts = np.broadcast_to(p_arr, (hi - lo, ops.point_dim)).copy()
            mx = np.zeros(hi - lo)
            for k in range(run_cfg.n_steps):
                w = noise[:, k, :] @ tab.hframe + drift
                pts = ops.mult(pts, ops.exp(w))
                d = m.norm(ops.log(ops.mult(ops.inverse(p_arr), pts)))
                mx = np.maximum(mx, d)
            running[lo:hi] = mx
    else:
        sub = subgrid or max(1, run_cfg.n_steps // 25)
        snap_steps = list(range(sub, run_cfg.n_steps + 1, sub))
        if snap_steps[-1] != run_cfg.n_steps:
            snap_steps.append(run_cfg.n_steps)
        _, snaps = simulate_endpoints(m, p_arr[0] if p_arr.ndim > 1 else p_arr, run_cfg, snapshot_steps=snap_steps)
        running = np.zeros(cfg.n_paths)
        warm = None
        for step in sorted(snaps):
            lengths, warm, conv = _batched_distances(m, p_arr[None, :] if p_arr.ndim == 1 else p_arr, snaps[step], warm=warm)
            running = np.maximum(running, np.where(conv, lengths, 0.0))

    rows = []
    prev_p = 1.0
    monotone = True
    for r in r_grid:
        prob = float((running >= float(r)).mean())
        se = math.sqrt(max(prob * (1 - prob), 1e-12) / cfg.n_paths)
        if prob > prev_p + 1e-15:
            monotone = False
        rows.append({"r": float(r), "probability": prob, "std_error": se})
        prev_p = prob

    lo, hi = fit_range
    pts = [(row["r"], row["probability"]) for row in rows if lo - 1e-9 <= row["r"] <= hi + 1e-9 and row["probability"] > 0]
    slope = math.nan
    if len(pts) >= 2:
        xs = np.array([r**2 for r, _ in pts])
        ys = np.log(np.array([pr for _, pr in pts]))
        slope = float(np.polyfit(xs, ys, 1)[0])
    verdict = "pass" if monotone and (math.isnan(slope) or slope < 0) else "fail"
    return AuditReport(
        kind="exit",
        columns=["r", "probability", "std_error"],
        rows=rows,
        tolerances={"fit_range": fit_range},
        verdict=verdict,
        skipped=0,
        extras={"K": K, "n": n, "log_tail_slope_vs_r2": slope, "t": t, "monotone": monotone},
    )


def ball_volume(m: FoliatedModel, x, r: float, cfg: SimConfig, *, box_factor: float = 1.5):
    """Haar volume of the metric ball B(x, r) by Monte Carlo integration of
    certified-distance indicators (exact distances on flat models).

    Nilpotent Haar measure is Lebesgue in exponential coordinates; samples
    are drawn from a centred coordinate box guaranteed to contain the ball
    (checked a posteriori via the indicator's support)."""
    ops = gd.ops_for(m)
    if ops.kind != "nilpotent":
        raise NotImplementedError("ball volumes are implemented for nilpotent models")
    rng = np.random.Generator(np.random.Philox(key=[cfg.seed & 0xFFFFFFFFFFFFFFFF, 0xB011]))
    lam_min = float(np.linalg.eigvalsh(m.metric).min())
    half = box_factor * r / math.sqrt(lam_min)
    zeta = rng.uniform(-half, half, size=(cfg.n_paths, m.dim))
    x_arr = np.asarray(x, dtype=float)
    pts = ops.mult(x_arr[None, :], zeta)
    if m.nilpotency_step == 1:
        dists = m.norm(zeta)
        inside = dists <= r
    else:
        lengths, _, conv = _batched_distances(m, x_arr[None, :], pts, warm=zeta)
        inside = conv & (lengths <= r)
        dists = lengths
    # the chord bound means d <= |zeta|_G, so points outside the box cannot
    # reach into the ball only if no inside-point sits near the box boundary
    near_edge = np.abs(zeta).max(axis=1) > 0.98 * half
    if np.any(inside & near_edge):
        raise ValueError("sampling box too small for the requested ball")
    vol_box = (2.0 * half) ** m.dim
    p_in = float(inside.mean())
    se = vol_box * math.sqrt(max(p_in * (1 - p_in), 1e-12) / cfg.n_paths)
    return vol_box * p_in, se


def heat_diag_lower(m: FoliatedModel, x, t: float, r: float, cfg: SimConfig) -> float:
    """Assembled lower bound for the heat-kernel diagonal at time 2t:

    p_{2t}(x, x) >= (1 - P(sup_{s<=t} d(x, xi_s) >= r)) / mu(B(x, r)),

    evaluated conservatively (exit probability up, volume up by 3 SE)."""
    value, _ = heat_diag_report(m, x, t, r, cfg)
    return value


def heat_diag_report(m: FoliatedModel, x, t: float, r: float, cfg: SimConfig):
    rep = tensor_report(m)
    if rep.K > 0:
        raise InapplicableK("the diagonal bound is stated for K <= 0")
    tail = exit_tail(m, x, [r], t, cfg)
    p_exit = tail.rows[0]["probability"]
    p_se = tail.rows[0]["std_error"]
    vol, vol_se = ball_volume(m, x, r, cfg)
    numer = max(0.0, 1.0 - (p_exit + 3.0 * p_se))
    denom = vol + 3.0 * vol_se
    value = numer / denom if denom > 0 else 0.0
    detail = {
        "exit_probability": p_exit,
        "exit_se": p_se,
        "ball_volume": vol,
        "volume_se": vol_se,
        "t": t,
        "r": r,
        "bound_for_time": 2.0 * t,
    }
    return value, detail


# -- coupling by parallel transport ----------------------------------------------------


def _transport_frames(m, xi_pts, w, frame):
    """Skew-transported horizontal frames along the geodesics with initial
    velocities w from the points xi_pts (batched).  Constant when the model
    has no connection or torsion coefficients (flat case)."""
    tab = gd.tables_for(m)
    if np.abs(tab.nabla).max() < 1e-15 and np.abs(tab.jmap).max() < 1e-15:
        return np.broadcast_to(frame, (len(xi_pts),) + frame.shape).copy()
    n_steps = max(12, int(np.ceil(float(m.norm(w).max()) * 48)))
    init = np.broadcast_to(frame, (len(xi_pts),) + frame.shape)
    res = gd.integrate_flow(m, xi_pts, w, n_steps, transport_kind="skewed", transport_init=init)
    return res.transported


def parallel_coupling_run(
    m: FoliatedModel,
    p,
    q,
    cfg: SimConfig,
    *,
    eval_times=EVAL_TIMES,
    tol_mult: float = MC_SLACK,
) -> AuditReport:
    """Coupling by parallel transport: the second path consumes the first
    path's increments through the skew-transported frame along the running
    connecting geodesic.  Checks mean distance against the e^{-Kt} envelope.

    Pairs whose connecting solve loses convergence are dropped and counted;
    a run with more than 5% drops is marked uncertified.
    """
    rep = tensor_report(m)
    K = rep.K
    ops = gd.ops_for(m)
    tab = gd.tables_for(m)
    p_arr = np.asarray(p, dtype=float)
    q_arr = np.asarray(q, dtype=float)
    base = gd.solve_distance_batch(m, q_arr[None], p=p_arr[None], n_starts=gd.DEFAULT_STARTS, profile="high")
    if not base.certified[0]:
        raise UncertifiedDistance("coupling needs a certified starting pair")
    d0 = float(base.length[0])

    n_steps = cfg.n_steps
    eval_steps = {int(round(t / cfg.dt)): t for t in eval_times if t <= cfg.t_end + 1e-12}
    frame = tab.hframe
    drift = tab.drift * cfg.dt

    means = {}
    n_pairs = cfg.n_paths
    dropped_total = 0
    sums = {k: 0.0 for k in eval_steps}
    sq_sums = {k: 0.0 for k in eval_steps}
    counts = {k: 0 for k in eval_steps}

    for lo in range(0, n_pairs, CHUNK):
        hi = min(n_pairs, lo + CHUNK)
        nc = hi - lo
        noise = _chunk_noise(cfg.seed, range(lo, hi), n_steps, m.n_horizontal, cfg.dt)
        xi = np.broadcast_to(p_arr, (nc, ops.point_dim)).copy()
        xit = np.broadcast_to(q_arr, (nc, ops.point_dim)).copy()
        w = np.broadcast_to(base.w[0], (nc, m.dim)).copy()
        frames = _transport_frames(m, xi, w, frame)
        alive = np.ones(nc, dtype=bool)
        met = np.zeros(nc, dtype=bool)
        dists = np.full(nc, d0)

        for k in range(n_steps):
            inc1 = noise[:, k, :] @ frame + drift
            inc2 = np.einsum("ni,nij->nj", noise[:, k, :], frames) + drift
            xi = ops.normalize(ops.mult(xi, ops.exp(inc1)))
            move2 = np.where(met[:, None], inc1, inc2)
            xit = ops.normalize(ops.mult(xit, ops.exp(move2)))
            refresh = ((k + 1) % cfg.coupling_refresh == 0) or ((k + 1) in eval_steps)
            if refresh:
                need = alive & ~met
                if need.any():
                    idx = np.where(need)[0]
                    sol = gd.shoot_batch(m, xit[idx], p=xi[idx], w_init=w[idx], n_starts=1, profile="standard")
                    ok = sol.converged
                    w[idx[ok]] = sol.w[ok]
                    dists[idx[ok]] = sol.length[ok]
                    newly_dead = idx[~ok]
                    alive[newly_dead] = False
                    just_met = idx[ok][sol.length[ok] < MET_DISTANCE]
                    met[just_met] = True
                    dists[just_met] = 0.0
                    live = idx[ok][sol.length[ok] >= MET_DISTANCE]
                    if len(live) and (k + 1) < n_steps:
                        frames[live] = _transport_frames(m, xi[live], w[live], frame)
                if (k + 1) in eval_steps:
                    use = alive
                    d_here = np.where(met, 0.0, dists)
                    sums[k + 1] += float(d_here[use].sum())
                    sq_sums[k + 1] += float((d_here[use] ** 2).sum())
                    counts[k + 1] += int(use.sum())
        dropped_total += int((~alive).sum())

    rows = []
    for step in sorted(eval_steps):
        t = eval_steps[step]
        cnt = counts[step]
        mean = sums[step] / cnt if cnt else math.nan
        var = max(sq_sums[step] / cnt - mean**2, 0.0) if cnt else math.nan
        se = math.sqrt(var / cnt) if cnt else math.nan
        bound = math.exp(-K * t) * d0 * tol_mult + 3.0 * se
        frac_dropped = dropped_total / n_pairs
        cert = "certified" if frac_dropped <= DROP_LIMIT else "uncertified"
        rows.append(
            {
                "t": t,
                "measured": mean,
                "bound": bound,
                "margin": bound - mean,
                "certificate": cert,
                "n_effective": cnt,
                "dropped_fraction": frac_dropped,
            }
        )
        means[t] = mean
    return AuditReport.build(
        "coupling",
        ["t", "measured", "bound", "margin", "certificate", "n_effective", "dropped_fraction"],
        rows,
        {"bound": 0.0, "tol_mult": tol_mult},
        extras={"K": K, "d0": d0, "means": means, "dropped_fraction": dropped_total / n_pairs},
    )


def coupled_endpoints(m: FoliatedModel, p, q, t: float, cfg: SimConfig):
    """Endpoint pairs of the parallel coupling at time t (for the Lipschitz
    audit's common-random-number estimates)."""
    run_cfg = SimConfig(dt=cfg.dt, t_end=t, n_paths=cfg.n_paths, seed=cfg.seed,
                        coupling_refresh=cfg.coupling_refresh)
    ops = gd.ops_for(m)
    tab = gd.tables_for(m)
    p_arr = np.asarray(p, dtype=float)
    q_arr = np.asarray(q, dtype=float)
    base = gd.solve_distance_batch(m, q_arr[None], p=p_arr[None], n_starts=gd.DEFAULT_STARTS, profile="high")
    if not base.certified[0]:
        raise UncertifiedDistance("coupling needs a certified starting pair")
    frame = tab.hframe
    drift = tab.drift * run_cfg.dt
    ends1 = np.empty((run_cfg.n_paths, ops.point_dim))
    ends2 = np.empty((run_cfg.n_paths, ops.point_dim))
    alive_all = np.ones(run_cfg.n_paths, dtype=bool)
    for lo in range(0, run_cfg.n_paths, CHUNK):
        hi = min(run_cfg.n_paths, lo + CHUNK)
        nc = hi - lo
        noise = _chunk_noise(run_cfg.seed, range(lo, hi), run_cfg.n_steps, m.n_horizontal, run_cfg.dt)
        xi = np.broadcast_to(p_arr, (nc, ops.point_dim)).copy()
        xit = np.broadcast_to(q_arr, (nc, ops.point_dim)).copy()
        w = np.broadcast_to(base.w[0], (nc, m.dim)).copy()
        frames = _transport_frames(m, xi, w, frame)
        alive = np.ones(nc, dtype=bool)
        met = np.zeros(nc, dtype=bool)
        for k in range(run_cfg.n_steps):
            inc1 = noise[:, k, :] @ frame + drift
            inc2 = np.einsum("ni,nij->nj", noise[:, k, :], frames)
            move2 = np.where(met[:, None], inc1, inc2 + drift)
            xi = ops.normalize(ops.mult(xi, ops.exp(inc1)))
            xit = ops.normalize(ops.mult(xit, ops.exp(move2)))
            if ((k + 1) % run_cfg.coupling_refresh == 0) and (k + 1) < run_cfg.n_steps:
                need = alive & ~met
                if need.any():
                    idx = np.where(need)[0]
                    sol = gd.shoot_batch(m, xit[idx], p=xi[idx], w_init=w[idx], n_starts=1, profile="standard")
                    ok = sol.converged
                    w[idx[ok]] = sol.w[ok]
                    alive[idx[~ok]] = False
                    met[idx[ok][sol.length[ok] < MET_DISTANCE]] = True
                    live = idx[ok][sol.length[ok] >= MET_DISTANCE]
                    if len(live):
                        frames[live] = _transport_frames(m, xi[live], w[live], frame)
        ends1[lo:hi] = xi
        ends2[lo:hi] = xit
        alive_all[lo:hi] = alive
    return ends1, ends2, alive_all, float(base.length[0])


def lipschitz_audit(
    m: FoliatedModel,
    f,
    point_pairs,
    t: float,
    cfg: SimConfig,
    *,
    lip_f: float | None = None,
    tol_mult: float = MC_SLACK,
) -> AuditReport:
    """Semigroup Lipschitz-constant check over certified pairs.

    Uses the parallel coupling as common random numbers: the ratio
    |E f(coupled) - E f(path)| / d(p, q) is compared against
    e^{-Kt} Lip(f) with slack.  Lip(f) is taken as given or estimated on the
    sampled endpoints (and reported either way).
    """
    rep = tensor_report(m)
    K = rep.K
    rows = []
    lip_estimates = []
    for pair_id, (p, q) in enumerate(point_pairs):
        try:
            e1, e2, alive, d0 = coupled_endpoints(m, p, q, t, cfg)
        except UncertifiedDistance:
            rows.append(
                {
                    "pair_id": pair_id, "d0": math.nan, "measured": math.nan,
                    "bound": math.nan, "margin": math.nan, "certificate": "uncertified",
                    "dropped_fraction": math.nan,
                }
            )
            continue
        f1 = _apply_function(f, e1[alive])
        f2 = _apply_function(f, e2[alive])
        diffs = (f2 - f1) / d0
        measured = abs(float(diffs.mean()))
        se = float(diffs.std(ddof=1) / math.sqrt(len(diffs)))
        lip_here = lip_f
        if lip_here is None:
            cap = min(256, int(alive.sum()))
            pair_d = np.maximum(_pairwise_sample_distances(m, e1[alive][:cap], e2[alive][:cap]), 1e-9)
            lip_estimates.append(float(np.max(np.abs(f2[:cap] - f1[:cap]) / pair_d)))
            lip_here = max(lip_estimates)
        bound = math.exp(-K * t) * lip_here * tol_mult + 3.0 * se
        dropped = 1.0 - float(alive.mean())
        rows.append(
            {
                "pair_id": pair_id,
                "d0": d0,
                "measured": measured,
                "bound": bound,
                "margin": bound - measured,
                "certificate": "certified" if dropped <= DROP_LIMIT else "uncertified",
                "dropped_fraction": dropped,
            }
        )
    return AuditReport.build(
        "lipschitz",
        ["pair_id", "d0", "measured", "bound", "margin", "certificate", "dropped_fraction"],
        rows,
        {"bound": 0.0, "tol_mult": tol_mult},
        extras={"K": K, "t": t, "lip_f": lip_f, "lip_estimated": max(lip_estimates, default=None)},
    )


def _pairwise_sample_distances(m, a, b, cap: int = 256):
    idx = np.arange(min(cap, len(a)))
    lengths, _, conv = _batched_distances(m, None, _relative_targets(m, a[idx], b[idx]))
    return np.where(conv, lengths, np.inf)


def _relative_targets(m, a, b):
    ops = gd.ops_for(m)
    return ops.mult(ops.inverse(a), b)


# -- gradient bounds ---------------------------------------------------------------


def increment_products(m: FoliatedModel, cfg: SimConfig) -> np.ndarray:
    """Path products W with xi_t = x . W; exact common random numbers for
    start-point derivatives (increments live in the left frame)."""
    ops = gd.ops_for(m)
    ends, _ = simulate_endpoints(m, ops.identity(), cfg)
    return ends


def frame_derivative_estimates(m, f, x, products, h: float = 5e-3):
    """Directional derivatives of P_t f along the full orthonormal frame at x
    by centred differences with shared increments; returns (grads, ses)."""
    ops = gd.ops_for(m)
    frame = m.frame_vectors()
    grads = np.empty(len(frame))
    ses = np.empty(len(frame))
    x_arr = np.asarray(x, dtype=float)
    for a, e in enumerate(frame):
        xp = ops.mult(x_arr, ops.exp(h * e))
        xm = ops.mult(x_arr, ops.exp(-h * e))
        fp = _apply_function(f, ops.mult(xp[None, :], products))
        fm = _apply_function(f, ops.mult(xm[None, :], products))
        quot = (fp - fm) / (2.0 * h)
        grads[a] = float(quot.mean())
        ses[a] = float(quot.std(ddof=1) / math.sqrt(len(quot)))
    return grads, ses


def gradient_bound_audit(
    m: FoliatedModel,
    f,
    x,
    t: float,
    cfg: SimConfig,
    *,
    grad_f,
    mixed: bool = False,
    t_grid=(0.1, 0.2, 0.5, 1.0),
    tol_mult: float = MC_SLACK,
    mixed_constant: float = 8.0,
    fd_step: float = 5e-3,
) -> AuditReport:
    """Pointwise gradient bound of the heat semigroup on totally geodesic
    models: |grad P_t f| <= e^{-Kt} P_t |grad f| with K the gradient
    curvature constant.

    ``grad_f`` maps points to frame-coefficient gradients.  With
    ``mixed=True`` (step-2 stratified models) also sweeps the t-grid and
    checks that (|grad_H P_t f| + t |grad_V P_t f|) stays within a single
    constant of (P_t |grad_H f| + t P_t |grad_V f|).
    """
    K = gradient_curvature_bound(m)
    h_idx = np.arange(m.n_horizontal)
    rows = []

    def measure(t_val):
        run_cfg = SimConfig(dt=cfg.dt, t_end=t_val, n_paths=cfg.n_paths, seed=cfg.seed)
        products = increment_products(m, run_cfg)
        grads, ses = frame_derivative_estimates(m, f, x, products, h=fd_step)
        endpoints = gd.ops_for(m).mult(np.asarray(x, dtype=float)[None, :], products)
        gvals = np.stack([np.asarray(grad_f(pt), dtype=float) for pt in endpoints])
        return grads, ses, gvals

    grads, ses, gvals = measure(t)
    lhs = float(np.linalg.norm(grads))
    lhs_se = float(np.linalg.norm(ses))
    rhs_samples = np.linalg.norm(gvals, axis=1)
    rhs = float(rhs_samples.mean())
    rhs_se = float(rhs_samples.std(ddof=1) / math.sqrt(len(rhs_samples)))
    bound = math.exp(-K * t) * rhs * tol_mult + 3.0 * (lhs_se + rhs_se)
    rows.append(
        {
            "t": t, "mode": "full", "measured": lhs, "bound": bound,
            "margin": bound - lhs, "certificate": "certified",
        }
    )

    extras = {"K": K, "grad_norm": lhs, "semigroup_grad_norm": rhs}
    if mixed:
        ratios = []
        for t_val in t_grid:
            grads, ses, gvals = measure(t_val)
            lhs_h = float(np.linalg.norm(grads[h_idx]))
            lhs_v = float(np.linalg.norm(np.delete(grads, h_idx)))
            rhs_h = float(np.linalg.norm(gvals[:, h_idx], axis=1).mean())
            rhs_v = float(np.linalg.norm(np.delete(gvals, h_idx, axis=1), axis=1).mean())
            lhs_mixed = lhs_h + t_val * lhs_v
            rhs_mixed = rhs_h + t_val * rhs_v
            ratio = lhs_mixed / rhs_mixed if rhs_mixed > 0 else math.inf
            ratios.append(ratio)
            rows.append(
                {
                    "t": t_val, "mode": "mixed", "measured": ratio,
                    "bound": mixed_constant, "margin": mixed_constant - ratio,
                    "certificate": "certified",
                }
            )
        extras["mixed_ratio_max"] = max(ratios)
    return AuditReport.build(
        "gradient",
        ["t", "mode", "measured", "bound", "margin", "certificate"],
        rows,
        {"bound": 0.0, "tol_mult": tol_mult, "mixed_constant": mixed_constant},
        extras=extras,
    )
