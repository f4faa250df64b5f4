"""Exact group realizations of the models.

Nilpotent models live in exponential coordinates of the first kind: a point
IS an algebra vector, the product is the truncated BCH series (exact at the
nilpotency step), and Haar measure is Lebesgue measure in these coordinates.
The su(2) model lives on the unit quaternions, identifying the basis with
(i, j, k) so that the quaternion commutator reproduces the structure
constants [e1, e2] = 2 e3 (cyclic).

All operations are batched over leading axes.
"""

from __future__ import annotations

import numpy as np

from .errors import UnsupportedModel
from .models import FoliatedModel

# z / (1 - e^{-z}) = sum_k DEXPINV_COEFFS[k] z^k; the coordinate velocity of a
# left-invariant flow is this series in ad_x applied to the frame velocity.
DEXPINV_COEFFS = (
    1.0,
    0.5,
    1.0 / 12.0,
    0.0,
    -1.0 / 720.0,
    0.0,
    1.0 / 30240.0,
)

MAX_BCH_STEP = 6


def _nested(brk, *args):
    # right-nested commutator a1 @ (a2 @ (... @ an))
    out = args[-1]
    for a in args[-2::-1]:
        out = brk(a, out)
    return out


def bch(brk, x, y, step: int):
    """Truncated Baker-Campbell-Hausdorff series, exact for nilpotency
    step <= 6.  ``brk`` is the (batched) bracket; coefficients follow
    Hofstaetter's tables (the widely quoted order-6 closed form is wrong)."""
    if step > MAX_BCH_STEP:
        raise UnsupportedModel(f"group law implemented up to step {MAX_BCH_STEP}, model has step {step}")
    n = _nested
    out = x + y
    if step >= 2:
        out = out + 0.5 * brk(x, y)
    if step >= 3:
        out = out + (n(brk, x, x, y) + n(brk, y, y, x)) / 12.0
    if step >= 4:
        out = out - n(brk, y, x, x, y) / 24.0
    if step >= 5:
        out = out + (
            -(n(brk, y, y, y, y, x) + n(brk, x, x, x, x, y)) / 720.0
            + (n(brk, x, y, y, y, x) + n(brk, y, x, x, x, y)) / 360.0
            + (n(brk, y, x, y, x, y) + n(brk, x, y, x, y, x)) / 120.0
        )
    if step >= 6:
        out = out + (
            -n(brk, y, x, x, x, y, x) / 1440.0
            + n(brk, y, y, x, x, y, x) / 720.0
            - n(brk, y, x, y, x, y, x) / 240.0
            + n(brk, y, y, y, x, y, x) / 1440.0
            - n(brk, y, x, y, y, y, x) / 720.0
        )
    return out


# -- quaternion helpers ---------------------------------------------------------


def quat_mult(a, b):
    w1, x1, y1, z1 = (a[..., i] for i in range(4))
    w2, x2, y2, z2 = (b[..., i] for i in range(4))
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def quat_exp(v):
    """Exponential of the pure quaternion with imaginary part v."""
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v, axis=-1, keepdims=True)
    small = theta < 1e-12
    # sin(t)/t with a series fallback at 0
    sinc = np.where(small, 1.0 - theta**2 / 6.0, np.sin(np.where(small, 1.0, theta)) / np.where(small, 1.0, theta))
    out = np.empty(v.shape[:-1] + (4,))
    out[..., 0] = np.cos(theta[..., 0])
    out[..., 1:] = sinc * v
    return out


def quat_log(q):
    """Imaginary part of log(q) for unit q; the antipode maps to a vector of
    norm pi in an arbitrary direction."""
    q = np.asarray(q, dtype=float)
    w = np.clip(q[..., 0], -1.0, 1.0)
    im = q[..., 1:]
    imnorm = np.linalg.norm(im, axis=-1, keepdims=True)
    theta = np.arctan2(imnorm[..., 0], w)[..., None]
    scale = np.where(imnorm < 1e-12, 1.0, theta / np.where(imnorm < 1e-12, 1.0, imnorm))
    out = scale * im
    # near the antipode the direction is arbitrary; pick the first axis
    at_antipode = (imnorm[..., 0] < 1e-12) & (w < 0)
    if np.any(at_antipode):
        out = out.copy()
        out[at_antipode] = 0.0
        out[at_antipode, 0] = np.pi
    return out


def quat_inverse(q):
    out = np.array(q, dtype=float, copy=True)
    out[..., 1:] *= -1.0
    return out


def _is_su2(model: FoliatedModel) -> bool:
    if model.dim != 3:
        return False
    want = np.zeros((3, 3, 3))
    for (i, j, k) in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        want[i, j, k] = 2.0
        want[j, i, k] = -2.0
    return np.allclose(model.brackets, want, atol=1e-12)


class GroupOps:
    """Exact group operations for a model; one instance per model.

    ``point_dim`` is the length of a point's coordinate row: the algebra
    dimension for nilpotent models, 4 for the quaternion realization.
    """

    def __init__(self, model: FoliatedModel):
        self.model = model
        if model.nilpotency_step is not None:
            self.kind = "nilpotent"
            self.step = model.nilpotency_step
            if self.step > MAX_BCH_STEP:
                raise UnsupportedModel(
                    f"nilpotent group law implemented up to step {MAX_BCH_STEP}, got {self.step}"
                )
            self.point_dim = model.dim
        elif _is_su2(model):
            self.kind = "quaternion"
            self.step = None
            self.point_dim = 4
        else:
            raise UnsupportedModel(
                f"model {model.name!r} is neither nilpotent nor the su(2) frame"
            )

    def identity(self, shape=()) -> np.ndarray:
        out = np.zeros(tuple(np.atleast_1d(shape)) + (self.point_dim,)) if shape else np.zeros(self.point_dim)
        if self.kind == "quaternion":
            out[..., 0] = 1.0
        return out

    def mult(self, a, b):
        if self.kind == "nilpotent":
            return bch(self.model.bracket, np.asarray(a, dtype=float), np.asarray(b, dtype=float), self.step)
        return quat_mult(np.asarray(a, dtype=float), np.asarray(b, dtype=float))

    def inverse(self, p):
        if self.kind == "nilpotent":
            return -np.asarray(p, dtype=float)
        return quat_inverse(p)

    def exp(self, v):
        """Group exponential: algebra coefficients -> point coordinates."""
        if self.kind == "nilpotent":
            return np.array(v, dtype=float, copy=True)
        return quat_exp(v)

    def log(self, p):
        if self.kind == "nilpotent":
            return np.array(p, dtype=float, copy=True)
        return quat_log(p)

    def normalize(self, p):
        """Project a point back onto the group (unit sphere for quaternions;
        a no-op for nilpotent coordinates)."""
        if self.kind == "nilpotent":
            return p
        return p / np.linalg.norm(p, axis=-1, keepdims=True)

    def on_group_defect(self, p) -> float:
        if self.kind == "nilpotent":
            return 0.0
        return float(np.abs(np.linalg.norm(np.asarray(p), axis=-1) - 1.0).max())

    def coordinate_velocity(self, p, v):
        """Time derivative of the point coordinates under the left-invariant
        flow with frame velocity v.  For nilpotent coordinates this is the
        (finite) inverse-differential-of-exp series; for quaternions it is
        right multiplication by the pure quaternion v."""
        if self.kind == "nilpotent":
            acc = DEXPINV_COEFFS[0] * v
            term = v
            for k in range(1, self.step):
                term = self.model.bracket(p, term)
                c = DEXPINV_COEFFS[k]
                if c != 0.0:
                    acc = acc + c * term
            return acc
        vq = np.zeros(np.broadcast_shapes(np.shape(p)[:-1], np.shape(v)[:-1]) + (4,))
        vq[..., 1:] = v
        return quat_mult(p, vq)

    def haar_sample(self, rng, n: int, scale: float = 1.0) -> np.ndarray:
        """Haar-distributed points: Lebesgue in exponential coordinates for
        nilpotent models (restricted to a centred box of half-width
        ``scale``), uniform quaternions for su(2)."""
        if self.kind == "nilpotent":
            return rng.uniform(-scale, scale, size=(n, self.point_dim))
        q = rng.standard_normal((n, 4))
        return q / np.linalg.norm(q, axis=-1, keepdims=True)


def group_ops(model: FoliatedModel) -> GroupOps:
    return GroupOps(model)
