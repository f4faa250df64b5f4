"""Finite-difference verification of the Laplacian comparison bounds.

The measured quantity is always a second difference of the certified
Riemannian distance along group flows (for the horizontal Laplacian) or
along paired geodesic flows with a skew-transported frame (for the coupled
Laplacian).  Bounds come from the one-dimensional model profiles.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import geodesy as gd
from .connection import tensor_report
from .errors import DomainError, NonPositiveK, UncertifiedDistance
from .models import FoliatedModel
from .reporting import AuditReport

FD_STEP = 1e-3
AUDIT_TOL = 5e-3
DIRECTION_SEED = 0x0D12


@dataclass(frozen=True)
class ComparisonProfile:
    """One-dimensional model solutions entering the comparison bounds."""

    K: float
    n: int

    def _rate(self) -> float:
        return math.sqrt(abs(self.K) / self.n)

    def domain_limit(self) -> float:
        return math.pi * math.sqrt(self.n / self.K) if self.K > 0 else math.inf

    def s(self, t: float) -> float:
        """Vanishes at 0; sine-type for K > 0, linear for K = 0, sinh for K < 0."""
        a = self._rate()
        if self.K > 0:
            return math.sin(a * t)
        if self.K < 0:
            return math.sinh(a * t)
        return t

    def s_prime(self, t: float) -> float:
        a = self._rate()
        if self.K > 0:
            return a * math.cos(a * t)
        if self.K < 0:
            return a * math.cosh(a * t)
        return 1.0

    def c(self, t: float, r: float) -> float:
        """Equals 1 at both 0 and r; constant 1 for K = 0.  The cos/cosh
        profile with a sin/sinh correction chosen so that the variational
        integral evaluates to the tan/tanh closed forms."""
        a = self._rate()
        if self.K == 0:
            return 1.0
        if self.K > 0:
            return math.cos(a * t) + math.tan(a * r / 2.0) * math.sin(a * t)
        return math.cosh(a * t) - math.tanh(a * r / 2.0) * math.sinh(a * t)

    def c_prime(self, t: float, r: float) -> float:
        a = self._rate()
        if self.K == 0:
            return 0.0
        if self.K > 0:
            return a * (-math.sin(a * t) + math.tan(a * r / 2.0) * math.cos(a * t))
        return a * (math.sinh(a * t) - math.tanh(a * r / 2.0) * math.cosh(a * t))


def model_bound(K: float, n: int, r: float) -> float:
    """Upper bound for the horizontal Laplacian of the distance at radius r.

    cot-type for K > 0 (valid for r < pi sqrt(n/K)), n/r for K = 0,
    coth-type for K < 0.  Continuous in K at K = 0.
    """
    if r <= 0:
        raise DomainError(f"radius must be positive, got {r}")
    if K > 0:
        limit = math.pi * math.sqrt(n / K)
        if r >= limit:
            raise DomainError(f"r={r} outside the K>0 domain (limit {limit})")
        a = math.sqrt(K / n)
        return math.sqrt(n * K) / math.tan(a * r)
    if K < 0:
        a = math.sqrt(-K / n)
        return math.sqrt(-n * K) / math.tanh(a * r)
    return n / r


def coupled_bound(K: float, n: int, r: float) -> float:
    """Upper bound for the coupled Laplacian of the distance at separation r.

    0 for K = 0 and 2n sqrt(|K|) tanh(sqrt(|K|/n) r/2) for K < 0.  For K > 0
    the constant is the exact value of the underlying variational integral,
    -2 sqrt(nK) tan(sqrt(K/n) r/2).
    """
    if r <= 0:
        raise DomainError(f"separation must be positive, got {r}")
    if K > 0:
        limit = math.pi * math.sqrt(n / K)
        if r >= limit:
            raise DomainError(f"r={r} outside the K>0 domain (limit {limit})")
        a = math.sqrt(K / n)
        return -2.0 * math.sqrt(n * K) * math.tan(a * r / 2.0)
    if K < 0:
        a = math.sqrt(-K / n)
        return 2.0 * n * math.sqrt(-K) * math.tanh(a * r / 2.0)
    return 0.0


def profile_integral(K: float, n: int, r: float, profile: str, nodes: int = 4000) -> float:
    """Quadrature of the variational integral behind each bound; used as an
    independent oracle for the closed forms."""
    prof = ComparisonProfile(K, n)
    ts = np.linspace(0.0, r, nodes + 1)
    if profile == "s":
        y = np.array([n * prof.s_prime(t) ** 2 - K * prof.s(t) ** 2 for t in ts])
        return float(np.trapezoid(y, ts) / prof.s(r) ** 2)
    if profile == "c":
        cs = np.array([prof.c(t, r) for t in ts])
        dcs = np.array([prof.c_prime(t, r) for t in ts])
        y = n * dcs**2 - K * cs**2
        return float(np.trapezoid(y, ts))
    raise ValueError(profile)


# -- batched probe machinery ---------------------------------------------------


def _audit_directions(m: FoliatedModel, count: int, seed: int) -> np.ndarray:
    """Deterministic unit directions: half horizontal, half generic."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    n_h = count // 2
    dirs = []
    hframe = m.horizontal_frame()
    for k in range(n_h):
        coeffs = rng.standard_normal(len(hframe))
        v = coeffs @ hframe
        dirs.append(v / m.norm(v))
    for k in range(count - n_h):
        v = rng.standard_normal(m.dim) @ m.frame_vectors()
        dirs.append(v / m.norm(v))
    return np.array(dirs)


def _solve(m, points, w_init, n_starts, profile):
    return gd.solve_distance_batch(m, points, w_init=w_init, n_starts=n_starts, profile=profile)


def _probe_offsets(m: FoliatedModel, h: float):
    """Offsets (algebra vectors) whose flows probe the Laplacian: second
    differences along the horizontal frame at h and h/2, plus first
    differences along the frame divergence when it does not vanish."""
    tab = gd.tables_for(m)
    offs = []
    for xi in tab.hframe:
        for s in (h, -h, 0.5 * h, -0.5 * h):
            offs.append(s * xi)
    drift = -tab.drift  # sum_i nabla_{X_i} X_i
    has_drift = float(np.abs(drift).max()) > 1e-13
    if has_drift:
        for s in (h, -h, 0.5 * h, -0.5 * h):
            offs.append(s * drift)
    return np.array(offs), has_drift


def _laplacian_estimates(m, d0, probe_len, h, has_drift):
    """Assemble estimate(h) and estimate(h/2) from probe distances.

    probe_len is ordered as produced by _probe_offsets: per frame direction
    (+h, -h, +h/2, -h/2), then the drift block.
    """
    n = m.n_horizontal
    vals = probe_len.reshape(-1, 4)
    est_h = 0.0
    est_h2 = 0.0
    for i in range(n):
        plus, minus, plus2, minus2 = vals[i]
        est_h += (plus - 2 * d0 + minus) / h**2
        est_h2 += (plus2 - 2 * d0 + minus2) / (0.5 * h) ** 2
    if has_drift:
        plus, minus, plus2, minus2 = vals[n]
        est_h -= (plus - minus) / (2 * h)
        est_h2 -= (plus2 - minus2) / h
    return est_h, est_h2


def horizontal_laplacian_distance(m: FoliatedModel, p, x, h: float = FD_STEP, *, n_starts: int = gd.DEFAULT_STARTS):
    """Central-difference estimate of the horizontal Laplacian of r_p at x.

    Every distance evaluation is a certified solve; raises
    UncertifiedDistance when the base pair or any probe is uncertified.
    Returns (estimate, richardson_error).
    """
    ops = gd.ops_for(m)
    p = np.asarray(p, dtype=float)
    x = np.asarray(x, dtype=float)
    center = gd.solve_distance_batch(m, x[None], p=p[None], n_starts=n_starts, profile="high")
    if not center.certified[0]:
        raise UncertifiedDistance("base pair is not certified")
    offs, has_drift = _probe_offsets(m, h)
    probes = ops.mult(x[None, :], ops.exp(offs))
    w_init = np.broadcast_to(center.w[0], (len(probes), m.dim))
    sol = gd.solve_distance_batch(m, probes, p=p[None], w_init=w_init, n_starts=4, profile="high")
    if not sol.certified.all():
        raise UncertifiedDistance("a probe solve is not certified")
    est_h, est_h2 = _laplacian_estimates(m, center.length[0], sol.length, h, has_drift)
    return est_h, abs(est_h - est_h2)


def comparison_audit(
    m: FoliatedModel,
    radii,
    directions: int = 16,
    *,
    h: float = FD_STEP,
    tol: float = AUDIT_TOL,
    seed: int = DIRECTION_SEED,
    threads: int = 1,
) -> AuditReport:
    """Horizontal Laplacian comparison sweep.

    Audit points sit at the given radii along deterministic sampled
    directions; each row compares the measured finite-difference Laplacian
    against the profile bound at the certified radius.  Uncertified rows are
    skipped and counted, never asserted.
    """
    rep = tensor_report(m)
    K, n = rep.K, m.n_horizontal
    radii = [float(r) for r in radii]
    columns = ["r", "direction_id", "measured", "bound", "margin", "certificate", "fd_error"]
    if not radii:
        return AuditReport.build("compare", columns, [], {"bound": tol, "h": h}, extras={"K": K, "n": n})
    ops = gd.ops_for(m)
    dirs = _audit_directions(m, directions, seed)
    offs, has_drift = _probe_offsets(m, h)
    n_off = len(offs)

    w_all = np.array([r * u for r in radii for u in dirs])
    centers = gd.integrate_flow(m, ops.identity((len(w_all),)), w_all, gd._steps_for(max(radii), gd.PROFILES["high"])).endpoint
    center_sol = _solve(m, centers, w_all, 20, "high")

    probe_pts = ops.mult(np.repeat(centers, n_off, axis=0), np.tile(ops.exp(offs), (len(centers), 1)))
    probe_w = np.repeat(center_sol.w, n_off, axis=0)

    def solve_chunk(bounds):
        lo, hi = bounds
        return gd.solve_distance_batch(m, probe_pts[lo:hi], w_init=probe_w[lo:hi], n_starts=4, profile="high")

    if threads > 1:
        edges = np.linspace(0, len(probe_pts), threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(solve_chunk, zip(edges[:-1], edges[1:])))
        probe_len = np.concatenate([p.length for p in parts])
        probe_cert = np.concatenate([p.certified for p in parts])
    else:
        sol = solve_chunk((0, len(probe_pts)))
        probe_len, probe_cert = sol.length, sol.certified

    rows = []
    limit = math.pi * math.sqrt(n / K) if K > 0 else math.inf
    for idx in range(len(w_all)):
        r_nominal = float(np.linalg.norm(w_all[idx] @ m.metric @ w_all[idx]) ** 0.5)
        d0 = float(center_sol.length[idx])
        certified = bool(center_sol.certified[idx]) and bool(
            probe_cert[idx * n_off : (idx + 1) * n_off].all()
        )
        est_h, est_h2 = _laplacian_estimates(
            m, d0, probe_len[idx * n_off : (idx + 1) * n_off], h, has_drift
        )
        if not math.isfinite(d0) or d0 <= 0 or d0 >= limit:
            certificate = "uncertified"
            bound = math.nan
        else:
            bound = model_bound(K, n, d0)
            certificate = "certified" if certified else "uncertified"
        rows.append(
            {
                "r": d0 if math.isfinite(d0) else r_nominal,
                "direction_id": idx % len(dirs),
                "measured": est_h,
                "bound": bound,
                "margin": bound - est_h if math.isfinite(bound) else math.nan,
                "certificate": certificate,
                "fd_error": abs(est_h - est_h2),
            }
        )
    return AuditReport.build(
        "compare", columns, rows, {"bound": tol, "h": h}, extras={"K": K, "n": n}
    )


# -- coupled Laplacian -----------------------------------------------------------


def _coupled_estimate(m, p, q, h, n_starts):
    """Second difference of d along paired geodesic flows with matched frames."""
    ops = gd.ops_for(m)
    center = gd.solve_distance_batch(m, np.asarray(q)[None], p=np.asarray(p)[None], n_starts=n_starts, profile="high")
    if not center.certified[0]:
        raise UncertifiedDistance("pair is not certified")
    d0 = float(center.length[0])
    rec = gd.exp_map(m, p, center.w[0], 1.0, n_samples=32)
    frame = m.horizontal_frame()
    tframe = gd.transport(m, rec, frame, "skewed")

    scales = np.array([h, -h, 0.5 * h, -0.5 * h])
    n = len(frame)
    w_p = np.concatenate([s * frame for s in scales])          # (4n, dim)
    w_q = np.concatenate([s * tframe for s in scales])
    sigma = gd.integrate_flow(m, np.asarray(p, dtype=float), w_p, 16).endpoint
    sigma_t = gd.integrate_flow(m, np.asarray(q, dtype=float), w_q, 16).endpoint
    sol = gd.solve_distance_batch(
        m, sigma_t, p=sigma, w_init=np.broadcast_to(center.w[0], (4 * n, m.dim)), n_starts=4, profile="high"
    )
    if not sol.certified.all():
        raise UncertifiedDistance("a displaced pair is not certified")
    d = sol.length.reshape(4, n)
    est_h = ((d[0] - 2 * d0 + d[1]) / h**2).sum()
    est_h2 = ((d[2] - 2 * d0 + d[3]) / (0.5 * h) ** 2).sum()
    return d0, est_h, abs(est_h - est_h2)


def coupled_laplacian_distance(m: FoliatedModel, p, q, h: float = FD_STEP, *, n_starts: int = gd.DEFAULT_STARTS):
    """Coupled Laplacian of the distance at (p, q), by central second
    differences along paired geodesic flows whose frames are matched by the
    skew-adjusted transport.  Returns (estimate, richardson_error)."""
    _, est, err = _coupled_estimate(m, p, q, h, n_starts)
    return est, err


def coupled_comparison_audit(
    m: FoliatedModel,
    radii,
    *,
    directions: int = 2,
    h: float = FD_STEP,
    tol: float = AUDIT_TOL,
    seed: int = DIRECTION_SEED + 1,
) -> AuditReport:
    """Coupled-Laplacian sweep over pairs (identity, endpoint at radius r)."""
    rep = tensor_report(m)
    K, n = rep.K, m.n_horizontal
    ops = gd.ops_for(m)
    dirs = _audit_directions(m, directions, seed)
    columns = ["r", "direction_id", "measured", "bound", "margin", "certificate", "fd_error"]
    rows = []
    for r in radii:
        for j, u in enumerate(dirs):
            q = gd.integrate_flow(m, ops.identity(), float(r) * u[None, :], gd._steps_for(r, gd.PROFILES["high"])).endpoint[0]
            try:
                d0, est, err = _coupled_estimate(m, ops.identity(), q, h, gd.DEFAULT_STARTS)
                bound = coupled_bound(K, n, d0)
                rows.append(
                    {
                        "r": d0,
                        "direction_id": j,
                        "measured": est,
                        "bound": bound,
                        "margin": bound - est,
                        "certificate": "certified",
                        "fd_error": err,
                    }
                )
            except (UncertifiedDistance, DomainError):
                rows.append(
                    {
                        "r": float(r),
                        "direction_id": j,
                        "measured": math.nan,
                        "bound": math.nan,
                        "margin": math.nan,
                        "certificate": "uncertified",
                        "fd_error": math.nan,
                    }
                )
    return AuditReport.build(
        "coupled-compare", columns, rows, {"bound": tol, "h": h}, extras={"K": K, "n": n}
    )


# -- diameter bound -----------------------------------------------------------------


def bonnet_myers_audit(
    m: FoliatedModel,
    samples: int = 10_000,
    *,
    seed: int = 0xB0,
    slack: float = 1e-2,
    chunk: int = 2500,
    recertify: int = 64,
) -> AuditReport:
    """Diameter check for positively curved models.

    Samples Haar pairs (one endpoint fixed at the identity by invariance),
    solves every distance, then re-certifies the largest ones with the full
    multi-start solver.  Asserts max certified distance <= pi sqrt(n/K)
    within the slack.  Raises NonPositiveK when the bound does not apply.
    """
    rep = tensor_report(m)
    K, n = rep.K, m.n_horizontal
    if K <= 0:
        raise NonPositiveK(f"diameter bound needs K > 0, model has K = {K}")
    bound = math.pi * math.sqrt(n / K)
    ops = gd.ops_for(m)
    rng = np.random.Generator(np.random.Philox(key=seed))
    pts = ops.haar_sample(rng, samples)
    lengths = np.full(samples, np.nan)
    converged = np.zeros(samples, dtype=bool)
    for lo in range(0, samples, chunk):
        hi = min(samples, lo + chunk)
        sol = gd.shoot_batch(m, pts[lo:hi], n_starts=2, profile="standard")
        lengths[lo:hi] = sol.length
        converged[lo:hi] = sol.converged

    order = np.argsort(np.nan_to_num(lengths, nan=-1.0))[::-1]
    top = order[:recertify]
    sol_top = gd.solve_distance_batch(m, pts[top], n_starts=20, profile="high")
    certified = np.zeros(samples, dtype=bool)
    certified[top] = sol_top.certified
    lengths[top] = np.where(sol_top.converged, sol_top.length, lengths[top])

    columns = ["sample_id", "measured", "bound", "margin", "certificate"]
    rows = [
        {
            "sample_id": int(i),
            "measured": float(lengths[i]),
            "bound": bound * (1.0 + slack),
            "margin": bound * (1.0 + slack) - float(lengths[i]),
            "certificate": "certified" if certified[i] else "uncertified",
        }
        for i in range(samples)
    ]
    max_cert = float(np.nanmax(np.where(certified, lengths, np.nan))) if certified.any() else math.nan
    extras = {
        "K": K,
        "n": n,
        "diameter_bound": bound,
        "max_certified_distance": max_cert,
        "max_solved_distance": float(np.nanmax(lengths)),
        "n_converged": int(converged.sum()),
        "n_certified": int(certified.sum()),
    }
    return AuditReport.build("bonnet-myers", columns, rows, {"bound": 0.0, "slack": slack}, extras=extras)
