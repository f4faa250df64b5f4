"""Geodesics, distances, parallel transports and index-form quadratures.

The geodesic flow of a left-invariant metric reduces to a coupled ODE for the
frame velocity (an Euler-Arnold equation, v' = ad*(v, v)) and the point
coordinates (the exact inverse-differential-of-exp series for nilpotent
models, quaternion kinematics for su(2)).  A classical fixed-step RK4 on that
coordinate system is at least 4th order; all integrations are batched over a
leading axis, which is what makes the audits affordable.

Distances are solved by multi-start shooting: damped Gauss-Newton on the
endpoint map, with the one-parameter subgroup through log(p^{-1} q) as the
warm start.  A solve is *certified* only when several independent starts
agree on the same shortest initial velocity and nothing shorter was found.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from . import connection as cx
from .errors import (
    IntegrationFailure,
    NoConvergence,
    NonHorizontalField,
    NonHorizontalInput,
)
from .groups import GroupOps, group_ops
from .models import FoliatedModel

MAX_STEPS = 2_000_000

# accuracy profiles: (steps per unit arclength, minimum steps, residual tol)
PROFILES = {
    "high": SimpleNamespace(spu=192, min_steps=48, tol=1e-10),
    "standard": SimpleNamespace(spu=64, min_steps=16, tol=5e-9),
}

CLUSTER_TOL = 1e-6
DEFAULT_STARTS = 20
_START_SEED = 0x5EED


_table_cache: "weakref.WeakKeyDictionary[FoliatedModel, SimpleNamespace]" = weakref.WeakKeyDictionary()
_ops_cache: "weakref.WeakKeyDictionary[FoliatedModel, GroupOps]" = weakref.WeakKeyDictionary()


def ops_for(m: FoliatedModel) -> GroupOps:
    ops = _ops_cache.get(m)
    if ops is None:
        ops = group_ops(m)
        _ops_cache[m] = ops
    return ops


def tables_for(m: FoliatedModel) -> SimpleNamespace:
    """Constant coefficient tables of the model's tensors, built once."""
    tab = _table_cache.get(m)
    if tab is not None:
        return tab
    dim = m.dim
    basis = np.eye(dim)
    nabla = cx.connection_table(m, "adapted")
    lc = cx.connection_table(m, "levi_civita")
    tor = cx.torsion_table(m)
    jmap = cx.j_table(m)
    nt = np.empty((dim, dim, dim, dim))
    riem_d = np.empty((dim, dim, dim, dim))
    riem_n = np.empty((dim, dim, dim, dim))
    for i in range(dim):
        for j in range(dim):
            for k in range(dim):
                nt[i, j, k] = cx.nabla_torsion(m, basis[i], basis[j], basis[k])
                riem_d[i, j, k] = cx.curvature(m, "levi_civita", basis[i], basis[j], basis[k])
                riem_n[i, j, k] = cx.curvature(m, "adapted", basis[i], basis[j], basis[k])
    hproj = np.zeros(dim)
    hproj[m.horizontal] = 1.0
    hframe = m.horizontal_frame()
    drift = -sum(cx.apply_table(nabla, xi, xi) for xi in hframe)
    tab = SimpleNamespace(
        nabla=nabla,
        levi_civita=lc,
        torsion=tor,
        jmap=jmap,
        nabla_torsion=nt,
        riem_d=riem_d,
        riem_n=riem_n,
        hproj=hproj,
        hframe=hframe,
        drift=drift,
    )
    _table_cache[m] = tab
    return tab


# -- core integrator -------------------------------------------------------------


def _transport_rhs(m, tab, kind, v, xi):
    """xi' for a frame field transported along a geodesic with velocity v."""
    base = -cx.apply_table(tab.nabla, v, xi)
    jv = cx.apply_table(tab.jmap, v, xi)
    if kind == "skewed":
        return base - 0.5 * jv * tab.hproj
    if kind == "circ":
        return base - jv
    raise ValueError(f"unknown transport kind {kind!r}")


def integrate_flow(
    m: FoliatedModel,
    p0,
    w0,
    n_steps: int,
    *,
    record_every: int = 0,
    transport_kind: str | None = None,
    transport_init=None,
):
    """Integrate the geodesic flow for unit time with initial velocity w0.

    p0: (..., point_dim) start points; w0: (..., dim) initial velocities.
    Optionally carries transported frame fields along (transport_init has
    shape (..., k, dim)).  Returns a namespace with endpoints, final
    velocities, and (if record_every > 0) sampled times/velocities/points.
    """
    if n_steps <= 0 or n_steps > MAX_STEPS:
        raise IntegrationFailure(f"invalid step count {n_steps}")
    ops = ops_for(m)
    p = np.array(np.broadcast_to(p0, np.shape(w0)[:-1] + (ops.point_dim,)), dtype=float)
    v = np.array(w0, dtype=float, copy=True)
    xi = None if transport_init is None else np.array(transport_init, dtype=float, copy=True)
    tab = tables_for(m)
    h = 1.0 / n_steps

    def rhs(p, v, xi):
        pdot = ops.coordinate_velocity(p, v)
        vdot = m.ad_star(v, v)
        xidot = None
        if xi is not None:
            xidot = _transport_rhs(m, tab, transport_kind, v[..., None, :], xi)
        return pdot, vdot, xidot

    recs = None
    if record_every:
        n_rec = n_steps // record_every + 1
        recs = SimpleNamespace(
            ts=np.empty(n_rec),
            vs=np.empty((n_rec,) + v.shape),
            ps=np.empty((n_rec,) + p.shape),
            idx=0,
        )

        def store(k, p, v):
            i = recs.idx
            recs.ts[i] = k * h
            recs.vs[i] = v
            recs.ps[i] = p
            recs.idx += 1

        store(0, p, v)

    for k in range(n_steps):
        k1 = rhs(p, v, xi)
        k2 = rhs(p + 0.5 * h * k1[0], v + 0.5 * h * k1[1], None if xi is None else xi + 0.5 * h * k1[2])
        k3 = rhs(p + 0.5 * h * k2[0], v + 0.5 * h * k2[1], None if xi is None else xi + 0.5 * h * k2[2])
        k4 = rhs(p + h * k3[0], v + h * k3[1], None if xi is None else xi + h * k3[2])
        p = p + (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        v = v + (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        if xi is not None:
            xi = xi + (h / 6.0) * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        p = ops.normalize(p)
        if record_every and (k + 1) % record_every == 0:
            store(k + 1, p, v)

    if not np.all(np.isfinite(p)) or not np.all(np.isfinite(v)):
        raise IntegrationFailure("non-finite state during geodesic integration")
    return SimpleNamespace(endpoint=p, velocity=v, transported=xi, records=recs)


def _steps_for(length: float, profile) -> int:
    return max(profile.min_steps, int(np.ceil(abs(length) * profile.spu)))


# -- geodesic records --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GeodesicRecord:
    """A solved unit-speed geodesic with sampled frame data.

    ``ts`` runs over [0, length]; ``vs[k]`` is the left-trivialized unit
    velocity at ts[k]; ``points[k]`` the group element.
    """

    model: FoliatedModel
    start: np.ndarray
    initial_velocity: np.ndarray
    length: float
    ts: np.ndarray
    vs: np.ndarray
    points: np.ndarray
    minimal_certificate: str  # certified | uncertified | failed

    @property
    def endpoint(self) -> np.ndarray:
        return self.points[-1]

    def velocity_drift(self) -> float:
        m = self.model
        return float(np.abs(m.norm(self.vs) - 1.0).max()) if len(self.ts) else 0.0


def exp_map(m: FoliatedModel, p, v, T: float, *, n_samples: int = 64, profile: str = "high") -> GeodesicRecord:
    """Geodesic from p with initial velocity v, run for time T, reported as a
    unit-speed record over [0, T * |v|]."""
    v = np.asarray(v, dtype=float)
    speed = float(m.norm(v))
    if speed <= 0:
        raise ValueError("exp_map needs a nonzero initial velocity")
    length = abs(T) * speed
    vhat = v / speed * np.sign(T if T != 0 else 1.0)
    prof = PROFILES[profile]
    substeps = max(1, int(np.ceil(_steps_for(length, prof) / n_samples)))
    res = integrate_flow(m, np.asarray(p, dtype=float), vhat * length, n_samples * substeps, record_every=substeps)
    ts = res.records.ts * length
    vs = np.asarray(res.records.vs)
    points = np.asarray(res.records.ps)
    # the flow ran at velocity |w| = length; report unit speed
    vs = vs / max(length, np.finfo(float).tiny)
    return GeodesicRecord(
        model=m,
        start=np.asarray(p, dtype=float),
        initial_velocity=vhat,
        length=length,
        ts=ts,
        vs=vs,
        points=points,
        minimal_certificate="uncertified",
    )


# -- batched shooting solver ---------------------------------------------------------


def _start_directions(dim: int, n_starts: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=_START_SEED))
    dirs = rng.standard_normal((n_starts, dim))
    return dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)


@dataclass
class SolveResult:
    """Batched outcome of the shooting solver (arrays over targets)."""

    w: np.ndarray            # best initial velocity (non-unit, |w| = length)
    length: np.ndarray
    residual: np.ndarray
    converged: np.ndarray
    certified: np.ndarray
    unique: np.ndarray       # single minimizing cluster among converged starts
    agree_count: np.ndarray
    jac_sigma_min: np.ndarray


def _endpoint_residual(m, ops, p0, w, q, n_steps):
    res = integrate_flow(m, p0, w, n_steps)
    return ops.log(ops.mult(ops.inverse(res.endpoint), q))


def shoot_batch(
    m: FoliatedModel,
    q,
    *,
    p=None,
    w_init=None,
    n_starts: int = DEFAULT_STARTS,
    profile: str = "high",
    max_iter: int = 28,
    min_agree: int = 2,
) -> SolveResult:
    """Solve the geodesic boundary value problem for a batch of targets.

    q: (N, point_dim) targets; p: start point(s), default identity;
    w_init: (N, dim) warm starts used as the first start of each target.
    """
    ops = ops_for(m)
    prof = PROFILES[profile]
    q = np.atleast_2d(np.asarray(q, dtype=float))
    n_t = q.shape[0]
    dim = m.dim
    if p is None:
        p0 = ops.identity((n_t,))
    else:
        p0 = np.array(np.broadcast_to(np.asarray(p, dtype=float), (n_t, ops.point_dim)), dtype=float)

    chord = ops.log(ops.mult(ops.inverse(p0), q))          # one-parameter guess
    chord_len = m.norm(chord)
    scale = np.maximum(chord_len, 1e-3)

    dirs = _start_directions(dim, max(n_starts, 1))
    w0 = np.empty((n_t, n_starts, dim))
    w0[:, 0] = chord if w_init is None else np.asarray(w_init, dtype=float)
    for s in range(1, n_starts):
        w0[:, s] = dirs[s] * scale[:, None]

    flat_w = w0.reshape(-1, dim)
    flat_p = np.repeat(p0, n_starts, axis=0)
    flat_q = np.repeat(q, n_starts, axis=0)
    n_flat = flat_w.shape[0]

    # a minimizing geodesic is never longer than the one-parameter subgroup
    # path, so iterates beyond that bound are clamped (keeps step counts sane)
    w_cap = np.repeat(chord_len * 1.25 + 1e-6, n_starts)
    n_steps = _steps_for(float(w_cap.max(initial=0.0)), prof)

    def clamp(w, cap):
        lw = m.norm(w)
        factor = np.minimum(1.0, cap / np.maximum(lw, 1e-300))
        return w * factor[:, None]

    def batch_resid(idx, w):
        return _endpoint_residual(m, ops, flat_p[idx], w, flat_q[idx], n_steps)

    flat_w = clamp(flat_w, w_cap)
    F = batch_resid(np.arange(n_flat), flat_w)
    resid = np.linalg.norm(F, axis=-1)
    active = resid > prof.tol
    stalled = np.zeros(n_flat, dtype=bool)
    sigma_min = np.zeros(n_flat)

    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.where(active)[0]
        w = flat_w[idx]
        f = F[idx]
        # forward-difference Jacobian, one batched integration for all columns
        delta = 1e-7 * np.maximum(1.0, np.linalg.norm(w, axis=-1))[:, None]
        wp = w[:, None, :] + delta[..., None] * np.eye(dim)
        fp = batch_resid(np.repeat(idx, dim), wp.reshape(-1, dim)).reshape(len(idx), dim, dim)
        jac = (fp - f[:, None, :]) / delta[..., None]
        jac = np.swapaxes(jac, 1, 2)  # rows = residual components, cols = params
        jtj = np.einsum("nij,nik->njk", jac, jac)
        jtf = np.einsum("nij,ni->nj", jac, f)
        lam = 1e-12 * np.trace(jtj, axis1=1, axis2=2)[:, None, None] * np.eye(dim) + 1e-300 * np.eye(dim)
        try:
            dw = -np.linalg.solve(jtj + lam, jtf[..., None])[..., 0]
        except np.linalg.LinAlgError:
            dw = -np.einsum("nij,ni->nj", np.linalg.pinv(jac), f)
        sigma_min[idx] = np.linalg.svd(jac, compute_uv=False)[:, -1]

        # damped update: halve the step where the residual got worse,
        # re-evaluating only the still-unimproved subset
        new_w = w.copy()
        new_f = f.copy()
        new_r = np.linalg.norm(f, axis=-1)
        pending = np.arange(len(idx))
        alpha = 1.0
        for _damp in range(7):
            if len(pending) == 0:
                break
            trial = clamp(w[pending] + alpha * dw[pending], w_cap[idx[pending]])
            ftrial = batch_resid(idx[pending], trial)
            rtrial = np.linalg.norm(ftrial, axis=-1)
            better = rtrial < new_r[pending]
            took = pending[better]
            new_w[took] = trial[better]
            new_f[took] = ftrial[better]
            new_r[took] = rtrial[better]
            pending = pending[~better]
            alpha *= 0.5
        flat_w[idx] = new_w
        F[idx] = new_f
        resid[idx] = new_r
        stalled[idx[pending]] = True
        active[idx] = (new_r > prof.tol) & ~stalled[idx]

    converged = resid <= prof.tol

    # cluster per target: unique minimizing geodesic among the converged starts
    w_all = flat_w.reshape(n_t, n_starts, dim)
    r_all = m.norm(w_all)
    conv = converged.reshape(n_t, n_starts)
    sig_all = sigma_min.reshape(n_t, n_starts)

    best_w = np.zeros((n_t, dim))
    best_r = np.full(n_t, np.nan)
    best_res = np.full(n_t, np.inf)
    cert = np.zeros(n_t, dtype=bool)
    unique = np.zeros(n_t, dtype=bool)
    agree = np.zeros(n_t, dtype=int)
    best_sig = np.zeros(n_t)
    res_all = resid.reshape(n_t, n_starts)

    for t in range(n_t):
        ks = np.where(conv[t])[0]
        if len(ks) == 0:
            continue
        rmin_k = ks[np.argmin(r_all[t, ks])]
        rmin = r_all[t, rmin_k]
        wmin = w_all[t, rmin_k]
        same_r = ks[np.abs(r_all[t, ks] - rmin) <= CLUSTER_TOL * max(1.0, rmin)]
        same_vw = [k for k in same_r if np.abs(w_all[t, k] - wmin).max() <= CLUSTER_TOL * max(1.0, rmin)]
        n_agree = len(same_vw)
        is_unique = n_agree == len(same_r)
        # no curve can beat the one-parameter subgroup bound
        not_missed = rmin <= chord_len[t] * (1.0 + 1e-6) + 1e-9
        best_w[t] = wmin
        best_r[t] = rmin
        best_res[t] = res_all[t, rmin_k]
        best_sig[t] = sig_all[t, rmin_k]
        agree[t] = n_agree
        unique[t] = is_unique
        cert[t] = is_unique and n_agree >= min(min_agree, n_starts) and not_missed

    return SolveResult(
        w=best_w,
        length=best_r,
        residual=best_res,
        converged=conv.any(axis=1),
        certified=cert,
        unique=unique,
        agree_count=agree,
        jac_sigma_min=best_sig,
    )


def solve_distance_batch(
    m: FoliatedModel,
    q,
    *,
    p=None,
    w_init=None,
    n_starts: int = DEFAULT_STARTS,
    profile: str = "high",
    min_agree: int = 2,
) -> SolveResult:
    """Two-stage batched distance solve: a multi-start uniqueness scan at
    standard accuracy, then one warm high-accuracy polish of the winner.
    The certificate comes from the scan, the value from the polish."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    scan = shoot_batch(m, q, p=p, w_init=w_init, n_starts=n_starts, profile="standard", min_agree=min_agree)
    if profile == "standard":
        return scan
    warm = np.where(scan.converged[:, None], scan.w, np.nan)
    if np.isnan(warm).any():
        ops = ops_for(m)
        p0 = ops.identity((q.shape[0],)) if p is None else np.broadcast_to(np.asarray(p, dtype=float), (q.shape[0], ops.point_dim))
        chord = ops.log(ops.mult(ops.inverse(p0), q))
        warm = np.where(np.isnan(warm), chord, warm)
    polish = shoot_batch(m, q, p=p, w_init=warm, n_starts=1, profile=profile)
    return SolveResult(
        w=np.where(polish.converged[:, None], polish.w, scan.w),
        length=np.where(polish.converged, polish.length, scan.length),
        residual=np.where(polish.converged, polish.residual, scan.residual),
        converged=scan.converged | polish.converged,
        certified=scan.certified & polish.converged,
        unique=scan.unique,
        agree_count=scan.agree_count,
        jac_sigma_min=scan.jac_sigma_min,
    )


def distance(
    m: FoliatedModel,
    p,
    q,
    *,
    n_starts: int = DEFAULT_STARTS,
    profile: str = "high",
    n_samples: int = 64,
) -> GeodesicRecord:
    """Riemannian distance via multi-start shooting; never silently wrong.

    Returns a certified record when the starts agree on a unique shortest
    geodesic; raises NoConvergence if no start converged at all.
    """
    ops = ops_for(m)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.abs(ops.log(ops.mult(ops.inverse(p), q))).max() <= 1e-15:
        return GeodesicRecord(
            model=m,
            start=p,
            initial_velocity=np.zeros(m.dim),
            length=0.0,
            ts=np.zeros(1),
            vs=np.zeros((1, m.dim)),
            points=p[None, :].copy(),
            minimal_certificate="certified",
        )
    sol = solve_distance_batch(m, q[None, :], p=p[None, :], n_starts=n_starts, profile=profile)
    if not sol.converged[0]:
        raise NoConvergence(f"no shooting start converged for {m.name}")
    rec = exp_map(m, p, sol.w[0], 1.0, n_samples=n_samples, profile=profile)
    cert = "certified" if sol.certified[0] else "uncertified"
    return GeodesicRecord(
        model=m,
        start=rec.start,
        initial_velocity=rec.initial_velocity,
        length=rec.length,
        ts=rec.ts,
        vs=rec.vs,
        points=rec.points,
        minimal_certificate=cert,
    )


def cut_certificate(m: FoliatedModel, p, q, *, n_starts: int = DEFAULT_STARTS, profile: str = "high") -> str:
    """'in_C' when the solver sees exactly one minimizing geodesic and the
    shooting Jacobian is safely nonsingular; 'uncertain' otherwise."""
    ops = ops_for(m)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.abs(ops.log(ops.mult(ops.inverse(p), q))).max() <= 1e-15:
        return "uncertain"
    try:
        sol = shoot_batch(m, q[None, :], p=p[None, :], n_starts=n_starts, profile="standard")
    except IntegrationFailure:
        return "uncertain"
    if not sol.converged[0] or not sol.certified[0]:
        return "uncertain"
    if sol.jac_sigma_min[0] <= 1e-6:
        return "uncertain"
    return "in_C"


# -- parallel transports ------------------------------------------------------------


TRANSPORT_KINDS = ("skewed", "circ")


def transport(m: FoliatedModel, rec: GeodesicRecord, v0, kind: str, *, return_samples: bool = False):
    """Transport v0 along the geodesic record.

    'skewed' solves the skew-adjusted horizontal transport (horizontal inputs
    only; preserves inner products and horizontality), 'circ' the transport of
    the adapted-plus-torsion connection.  Both are isometries up to the
    integrator tolerance.
    """
    if kind not in TRANSPORT_KINDS:
        raise ValueError(f"unknown transport kind {kind!r}")
    v0 = np.asarray(v0, dtype=float)
    single = v0.ndim == 1
    v0 = np.atleast_2d(v0)
    if kind == "skewed":
        if np.abs(m.vertical_part(v0)).max(initial=0.0) > 1e-12:
            raise NonHorizontalInput("skewed transport is defined for horizontal inputs")
    if rec.length == 0.0:
        out = v0.copy()
        return out[0] if single else out
    prof = PROFILES["high"]
    n_steps = _steps_for(rec.length, prof)
    res = _transport_integrate(m, rec, v0, kind, n_steps, return_samples)
    if return_samples:
        return res
    return res[0] if single else res


def _transport_integrate(m, rec, xi0, kind, n_steps, return_samples):
    """RK4 on the transport fields alongside the geodesic state."""
    ops = ops_for(m)
    tab = tables_for(m)
    p = np.array(rec.start, dtype=float)
    v = rec.initial_velocity * rec.length
    xi = np.array(xi0, dtype=float, copy=True)
    h = 1.0 / n_steps
    samples = [xi.copy()] if return_samples else None
    sample_ts = [0.0] if return_samples else None

    def rhs(p, v, xi):
        return (
            ops.coordinate_velocity(p, v),
            m.ad_star(v, v),
            _transport_rhs(m, tab, kind, v[None, :], xi),
        )

    for k in range(n_steps):
        k1 = rhs(p, v, xi)
        k2 = rhs(p + 0.5 * h * k1[0], v + 0.5 * h * k1[1], xi + 0.5 * h * k1[2])
        k3 = rhs(p + 0.5 * h * k2[0], v + 0.5 * h * k2[1], xi + 0.5 * h * k2[2])
        k4 = rhs(p + h * k3[0], v + h * k3[1], xi + h * k3[2])
        p = ops.normalize(p + (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]))
        v = v + (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        xi = xi + (h / 6.0) * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        if return_samples:
            samples.append(xi.copy())
            sample_ts.append((k + 1) * h * rec.length)
    if return_samples:
        return SimpleNamespace(ts=np.array(sample_ts), fields=np.array(samples))
    return xi


# -- index form -------------------------------------------------------------------


def _fd_derivative(values: np.ndarray, h: float) -> np.ndarray:
    """4th-order finite differences along axis 0 (uniform grid)."""
    n = values.shape[0]
    if n < 5:
        raise ValueError("need at least 5 nodes")
    out = np.empty_like(values)
    out[2:-2] = (values[:-4] - 8 * values[1:-3] + 8 * values[3:-1] - values[4:]) / (12 * h)
    # one-sided 4th order at the edges
    c = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
    out[0] = np.tensordot(c, values[:5], axes=(0, 0)) / h
    out[1] = np.tensordot(c, values[1:6], axes=(0, 0)) / h
    out[-1] = -np.tensordot(c, values[-1:-6:-1], axes=(0, 0)) / h
    out[-2] = -np.tensordot(c, values[-2:-7:-1], axes=(0, 0)) / h
    return out


def _simpson(y: np.ndarray, h: float) -> float:
    """Composite Simpson; falls back to a trapezoid on the last interval when
    the node count is even."""
    n = len(y) - 1
    total = 0.0
    if n % 2 == 1:
        total += 0.5 * h * (y[-2] + y[-1])
        y = y[:-1]
        n -= 1
    if n > 0:
        total += (h / 3.0) * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-2:2].sum())
    return float(total)


def index_form(m: FoliatedModel, rec: GeodesicRecord, field, mode: str, *, field_values=None) -> float:
    """Second-variation quadratic form of arc length along the geodesic.

    ``mode='riemannian'`` integrates |D X|^2 - <Riem^D(v, X)X, v> on the
    record grid; ``mode='horizontal'`` uses the six-term horizontal-field
    integrand of the adapted connection.  The two agree for horizontal fields
    up to quadrature error.

    ``field`` maps t to left-trivialized coefficients; ``field_values`` may
    supply the values on the record grid directly.
    """
    if mode not in ("riemannian", "horizontal"):
        raise ValueError(f"unknown index form mode {mode!r}")
    ts, vs = rec.ts, rec.vs
    if field_values is not None:
        xs = np.asarray(field_values, dtype=float)
        if xs.shape != (len(ts), m.dim):
            raise ValueError("field_values must match the record grid")
    else:
        xs = np.stack([np.asarray(field(t), dtype=float) for t in ts])
    if mode == "horizontal" and np.abs(xs[:, m.vertical]).max(initial=0.0) > 1e-10:
        raise NonHorizontalField("horizontal index form needs horizontal field values")
    h = ts[1] - ts[0] if len(ts) > 1 else rec.length
    xdot = _fd_derivative(xs, h)
    tab = tables_for(m)

    if mode == "riemannian":
        dx = xdot + cx.apply_table(tab.levi_civita, vs, xs)
        term1 = m.inner(dx, dx)
        riem = np.einsum("ni,nj,nk,ijkl->nl", vs, xs, xs, tab.riem_d)
        term2 = m.inner(riem, vs)
        return _simpson(term1 - term2, h)

    jvx = cx.apply_table(tab.jmap, vs, xs)
    jvx_h = jvx * tab.hproj
    nab = xdot + cx.apply_table(tab.nabla, vs, xs) + 0.5 * jvx_h
    i1 = m.inner(nab, nab)
    riem = np.einsum("ni,nj,nk,ijkl->nl", vs, xs, xs, tab.riem_n)
    i2 = m.inner(riem, vs)
    ntor = np.einsum("ni,nj,nk,ijkl->nl", xs, xs, vs, tab.nabla_torsion)
    i3 = m.inner(ntor, m.vertical_part(vs))
    i4 = 0.25 * m.inner(jvx_h, jvx_h)
    torxv = cx.apply_table(tab.torsion, xs, vs)
    i5 = m.inner(torxv, torxv)
    tt = cx.apply_table(tab.torsion, cx.apply_table(tab.torsion, vs, xs), xs)
    i6 = m.inner(tt, vs)
    return _simpson(i1 - i2 + i3 - i4 + i5 + i6, h)
