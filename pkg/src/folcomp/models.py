"""Metric Lie algebra models of homogeneous foliations.

A model is a finite-dimensional real Lie algebra with an inner product and an
orthogonal splitting into a horizontal block and a vertical block.  All
geometry in this package is homogeneous: every tensor is a constant
multilinear map in the left-invariant frame determined by the basis, so the
whole model is captured by its structure constants and its metric.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .errors import NonPositiveEpsilon, ValidationFailure

TOL = 1e-12

BUNDLED_MODELS = ("heisenberg", "engel_step3", "su2_berger", "abelian3")


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Raw description of a foliated metric Lie algebra.

    Index sets are 1-based, matching the JSON file format.  Structure
    constants are a sparse list of ``(i, j, k, c)`` entries meaning
    ``[e_i, e_j] = sum_k c * e_k`` with ``i < j``; the antisymmetric
    counterpart is implied.
    """

    name: str
    dim: int
    basis_labels: tuple
    structure_constants: tuple
    horizontal_indices: tuple
    vertical_indices: tuple
    metric: np.ndarray | None = None
    grading: tuple | None = None
    epsilon: float = 1.0

    def with_epsilon(self, eps: float) -> "ModelSpec":
        return replace(self, epsilon=float(eps))


@dataclass(frozen=True)
class Certificates:
    antisymmetric: bool
    jacobi: bool
    vertical_subalgebra: bool
    bundle_like: bool
    bracket_generating: bool
    minimal_leaves: bool
    totally_geodesic: bool
    carnot: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class FoliatedModel:
    """A validated model; immutable, safe to share between threads.

    ``brackets[i, j]`` holds the coefficients of ``[e_i, e_j]``.  ``metric``
    is the effective inner product (the spec's canonical-variation parameter
    already applied).  ``frame`` has orthonormal frame vectors as columns,
    obtained block-wise from the basis, so ``frame.T @ metric @ frame = I``.
    """

    spec: ModelSpec
    brackets: np.ndarray
    metric: np.ndarray
    certificates: Certificates
    step: int | None
    nilpotency_step: int | None
    horizontal: np.ndarray   # 0-based horizontal indices
    vertical: np.ndarray     # 0-based vertical indices
    frame: np.ndarray
    metric_inv: np.ndarray = field(repr=False, default=None)
    ad_star_table: np.ndarray = field(repr=False, default=None)

    # -- basic linear algebra -------------------------------------------------

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def n_horizontal(self) -> int:
        return len(self.horizontal)

    @property
    def n_vertical(self) -> int:
        return len(self.vertical)

    @property
    def name(self) -> str:
        return self.spec.name

    def basis_vector(self, label_or_index) -> np.ndarray:
        """Unit coefficient vector, by 0-based index or by basis label."""
        if isinstance(label_or_index, str):
            idx = self.spec.basis_labels.index(label_or_index)
        else:
            idx = int(label_or_index)
        e = np.zeros(self.dim)
        e[idx] = 1.0
        return e

    def inner(self, u, v):
        """Metric pairing; batched over leading axes."""
        return np.einsum("...i,ij,...j->...", u, self.metric, v)

    def norm(self, u):
        return np.sqrt(np.maximum(self.inner(u, u), 0.0))

    def bracket(self, u, v):
        """Lie bracket, bilinear extension of the structure constants."""
        return np.einsum("...i,...j,ijk->...k", u, v, self.brackets)

    def ad_star(self, x, u):
        """Metric adjoint of ad_x: <ad_star(x, u), w> = <u, [x, w]> for all w."""
        return np.einsum("...i,...k,ikv->...v", x, u, self.ad_star_table)

    def split(self, u):
        """Horizontal and vertical parts (coordinate projection; the blocks
        are metric-orthogonal, so this is the metric-orthogonal splitting)."""
        u = np.asarray(u, dtype=float)
        uh = np.zeros_like(u)
        uv = np.zeros_like(u)
        uh[..., self.horizontal] = u[..., self.horizontal]
        uv[..., self.vertical] = u[..., self.vertical]
        return uh, uv

    def horizontal_part(self, u):
        return self.split(u)[0]

    def vertical_part(self, u):
        return self.split(u)[1]

    def horizontal_frame(self) -> np.ndarray:
        """Orthonormal horizontal frame vectors, one per row."""
        return self.frame[:, self.horizontal].T.copy()

    def vertical_frame(self) -> np.ndarray:
        return self.frame[:, self.vertical].T.copy()

    def frame_vectors(self) -> np.ndarray:
        """Full orthonormal frame, one vector per row (basis order)."""
        return self.frame.T.copy()


# -- construction -------------------------------------------------------------


def _build_bracket_table(spec: ModelSpec) -> np.ndarray:
    table = np.zeros((spec.dim, spec.dim, spec.dim))
    for entry in spec.structure_constants:
        i, j, k, c = entry
        i, j, k = int(i) - 1, int(j) - 1, int(k) - 1
        if not (0 <= i < spec.dim and 0 <= j < spec.dim and 0 <= k < spec.dim):
            raise ValueError(f"structure constant {entry} out of range for dim {spec.dim}")
        if i >= j:
            raise ValueError(f"structure constant {entry} must have i < j (antisymmetry is implied)")
        table[i, j, k] += float(c)
        table[j, i, k] -= float(c)
    return table


def _check_well_formed(spec: ModelSpec) -> np.ndarray:
    """Validate the spec preconditions; returns the effective metric."""
    h = sorted(spec.horizontal_indices)
    v = sorted(spec.vertical_indices)
    if sorted(h + v) != list(range(1, spec.dim + 1)):
        raise ValueError("horizontal and vertical indices must partition 1..dim")
    if spec.metric is None:
        g = np.eye(spec.dim)
    else:
        g = np.asarray(spec.metric, dtype=float)
        if g.shape != (spec.dim, spec.dim):
            raise ValueError("metric must be dim x dim")
        if not np.allclose(g, g.T, atol=TOL):
            raise ValueError("metric must be symmetric")
        if np.linalg.eigvalsh(g).min() <= 0:
            raise ValueError("metric must be positive definite")
        hi = np.array(h) - 1
        vi = np.array(v) - 1
        if np.abs(g[np.ix_(hi, vi)]).max(initial=0.0) > TOL:
            raise ValueError("horizontal and vertical blocks must be metric-orthogonal")
    if spec.grading is not None:
        layers = [sorted(layer) for layer in spec.grading]
        flat = sorted(i for layer in layers for i in layer)
        if flat != list(range(1, spec.dim + 1)):
            raise ValueError("grading layers must partition 1..dim")
        if layers[0] != h:
            raise ValueError("first grading layer must span the horizontal indices")
        for a in range(len(layers)):
            for b in range(a + 1, len(layers)):
                ia = np.array(layers[a]) - 1
                ib = np.array(layers[b]) - 1
                if np.abs(g[np.ix_(ia, ib)]).max(initial=0.0) > TOL:
                    raise ValueError("grading layers must be pairwise metric-orthogonal")
    if spec.epsilon <= 0:
        raise NonPositiveEpsilon(f"epsilon must be positive, got {spec.epsilon}")
    return g


def _block_frame(metric: np.ndarray, blocks) -> np.ndarray:
    """Orthonormal frame by block-wise Gram-Schmidt (Cholesky per block)."""
    dim = metric.shape[0]
    frame = np.zeros((dim, dim))
    for idx in blocks:
        idx = np.asarray(idx)
        sub = metric[np.ix_(idx, idx)]
        chol = np.linalg.cholesky(sub)
        frame[np.ix_(idx, idx)] = np.linalg.inv(chol).T
    return frame


def _span_rank(vectors: np.ndarray, tol: float = 1e-10) -> int:
    if vectors.size == 0:
        return 0
    return int(np.linalg.matrix_rank(vectors, tol=tol))


def _bracket_generating(table, horizontal, dim):
    """Iterate span growth of brackets of the horizontal block.

    Returns (generating, depth) where depth is the number of layers needed
    (the step, for a stratified algebra).
    """
    h_basis = np.eye(dim)[horizontal]
    span = h_basis.copy()
    depth = 1
    rank = _span_rank(span)
    for _ in range(dim):
        if rank == dim:
            return True, depth
        new = np.einsum("ai,bj,ijk->abk", h_basis, span, table).reshape(-1, dim)
        grown = np.vstack([span, new])
        new_rank = _span_rank(grown)
        if new_rank == rank:
            return False, depth
        span, rank = grown, new_rank
        depth += 1
    return rank == dim, depth


def _nilpotency_step(table, dim):
    """Length of the lower central series, or None if not nilpotent."""
    full = np.eye(dim)
    current = full
    for step in range(1, dim + 2):
        new = np.einsum("ai,bj,ijk->abk", full, current, table).reshape(-1, dim)
        if _span_rank(new) == 0:
            return step
        if _span_rank(new) >= _span_rank(current):
            return None
        current = new
    return None


def _shape_tensor_entry(model_g, table, x_idx, u_idx, w_idx):
    # <C_{e_x} e_u, e_w> = -1/2 (<[e_x,e_u], e_w> + <e_u, [e_x,e_w]>), u, w vertical
    t1 = table[x_idx, u_idx] @ model_g[:, w_idx]
    t2 = model_g[u_idx] @ table[x_idx, w_idx]
    return -0.5 * (t1 + t2)


def _carnot_certificate(spec, table, g, horizontal):
    """Check [V_1, V_j] = V_{j+1} and [V_1, V_s] = 0 on the given grading."""
    if spec.grading is None:
        return False
    dim = spec.dim
    layers = [np.asarray(sorted(layer)) - 1 for layer in spec.grading]
    v1 = np.eye(dim)[layers[0]]
    for j in range(len(layers)):
        vj = np.eye(dim)[layers[j]]
        image = np.einsum("ai,bj,ijk->abk", v1, vj, table).reshape(-1, dim)
        if j == len(layers) - 1:
            if _span_rank(image) != 0:
                return False
        else:
            target = np.eye(dim)[layers[j + 1]]
            want = target.shape[0]
            if _span_rank(image) != want:
                return False
            if _span_rank(np.vstack([image, target])) != want:
                return False
    return True


def validate_model(spec: ModelSpec, *, allow_non_bracket_generating: bool = False) -> FoliatedModel:
    """Run every certificate predicate and construct the model.

    Mandatory certificates (antisymmetry, Jacobi, vertical subalgebra,
    bundle-like metric, bracket generation, minimal leaves) raise
    ValidationFailure on the first violation; the informational ones
    (totally geodesic, Carnot grading) are only recorded.

    ``allow_non_bracket_generating`` downgrades the bracket-generation
    requirement to informational; the audits use it for flat control models
    whose horizontal block cannot generate.
    """
    g = _check_well_formed(spec)
    table = _build_bracket_table(spec)
    dim = spec.dim
    horizontal = np.asarray(sorted(spec.horizontal_indices)) - 1
    vertical = np.asarray(sorted(spec.vertical_indices)) - 1

    if spec.epsilon != 1.0:
        g = g.copy()
        g[np.ix_(vertical, vertical)] /= spec.epsilon

    # antisymmetric (true by construction of the table, but checked anyway)
    anti = np.abs(table + np.swapaxes(table, 0, 1)).max()
    if anti > TOL:
        idx = np.unravel_index(np.argmax(np.abs(table + np.swapaxes(table, 0, 1))), table.shape)
        raise ValidationFailure("antisymmetric", tuple(i + 1 for i in idx))

    # Jacobi identity
    for i in range(dim):
        for j in range(i + 1, dim):
            for k in range(j + 1, dim):
                ei, ej, ek = np.eye(dim)[[i, j, k]]
                res = (
                    np.einsum("i,j,ijk->k", table[i, j], ek, table)
                    + np.einsum("i,j,ijk->k", table[j, k], ei, table)
                    + np.einsum("i,j,ijk->k", table[k, i], ej, table)
                )
                if np.abs(res).max() > TOL:
                    raise ValidationFailure("jacobi", (i + 1, j + 1, k + 1))

    # [V, V] subset V
    for a in vertical:
        for b in vertical:
            if np.abs(table[a, b][horizontal]).max(initial=0.0) > TOL:
                raise ValidationFailure("vertical_subalgebra", (a + 1, b + 1))

    # bundle-like metric: polarized form <[U,X],Y> + <[U,Y],X> = 0
    for u in vertical:
        for xi, x in enumerate(horizontal):
            for y in horizontal[xi:]:
                res = table[u, x] @ g[:, y] + table[u, y] @ g[:, x]
                if abs(res) > TOL:
                    raise ValidationFailure("bundle_like", (u + 1, x + 1, y + 1))

    generating, depth = _bracket_generating(table, horizontal, dim)
    if not generating and not allow_non_bracket_generating:
        raise ValidationFailure(
            "bracket_generating",
            tuple(i + 1 for i in horizontal),
            detail=f"iterated horizontal brackets span only a {depth}-layer proper subalgebra",
        )

    # minimal leaves: sum_i <D_{Z_i} Z_i, X> = -sum_i <[Z_i, X], Z_i> = 0
    frame = _block_frame(g, [horizontal, vertical] if len(vertical) else [horizontal])
    z_frame = frame[:, vertical].T
    for x in horizontal:
        ex = np.eye(dim)[x]
        res = sum(np.einsum("i,j,ijk->k", z, ex, table) @ g @ z for z in z_frame)
        if abs(res) > TOL:
            raise ValidationFailure("minimal_leaves", (x + 1,))

    # totally geodesic <=> the shape tensor vanishes
    tg = True
    for x in horizontal:
        for u in vertical:
            for w in vertical:
                if abs(_shape_tensor_entry(g, table, x, u, w)) > TOL:
                    tg = False
                    break
            if not tg:
                break
        if not tg:
            break

    carnot = _carnot_certificate(spec, table, g, horizontal)
    nil_step = _nilpotency_step(table, dim)
    step = depth if carnot else None
    if carnot and nil_step is not None and nil_step != depth:
        # the grading says one thing, the lower central series another
        raise ValidationFailure("carnot", (0,), detail="grading step disagrees with nilpotency step")

    certs = Certificates(
        antisymmetric=True,
        jacobi=True,
        vertical_subalgebra=True,
        bundle_like=True,
        bracket_generating=generating,
        minimal_leaves=True,
        totally_geodesic=tg,
        carnot=carnot,
    )
    g_inv = np.linalg.inv(g)
    # <ad*(x, u), .> = <u, [x, .]> as a single contraction table
    ad_star_table = np.einsum("iwm,km,wv->ikv", table, g, g_inv)
    return FoliatedModel(
        spec=spec,
        brackets=table,
        metric=g,
        certificates=certs,
        step=step,
        nilpotency_step=nil_step,
        horizontal=horizontal,
        vertical=vertical,
        frame=frame,
        metric_inv=g_inv,
        ad_star_table=ad_star_table,
    )


# -- module-level algebra operations (thin wrappers over the model) -----------


def bracket(m: FoliatedModel, u, v):
    return m.bracket(u, v)


def ad_star(m: FoliatedModel, x, u):
    return m.ad_star(x, u)


def split(m: FoliatedModel, u):
    return m.split(u)


def canonical_variation(m: FoliatedModel, eps: float) -> FoliatedModel:
    """Scale the vertical metric block by 1/eps and re-validate.

    ``eps = 1`` returns an equivalent model.  The horizontal block is left
    untouched, so the horizontal geometry (and the bundle-like and minimality
    certificates) is preserved.
    """
    if eps <= 0:
        raise NonPositiveEpsilon(f"epsilon must be positive, got {eps}")
    g = m.metric.copy()
    g[np.ix_(m.vertical, m.vertical)] /= eps
    spec = replace(m.spec, metric=g, epsilon=1.0)
    return validate_model(
        spec, allow_non_bracket_generating=not m.certificates.bracket_generating
    )


# -- JSON ingestion ------------------------------------------------------------


def spec_from_dict(doc: dict) -> ModelSpec:
    metric = doc.get("metric")
    return ModelSpec(
        name=doc["name"],
        dim=int(doc["dim"]),
        basis_labels=tuple(doc["basis_labels"]),
        structure_constants=tuple(tuple(e) for e in doc.get("structure_constants", [])),
        horizontal_indices=tuple(int(i) for i in doc["horizontal_indices"]),
        vertical_indices=tuple(int(i) for i in doc["vertical_indices"]),
        metric=None if metric is None else np.asarray(metric, dtype=float),
        grading=tuple(tuple(int(i) for i in layer) for layer in doc["grading"]) if doc.get("grading") else None,
        epsilon=float(doc.get("epsilon", 1.0)),
    )


def load_spec(path) -> ModelSpec:
    with open(path) as fh:
        return spec_from_dict(json.load(fh))


def load_model(path, **kwargs) -> FoliatedModel:
    return validate_model(load_spec(path), **kwargs)


def bundled_spec(name: str) -> ModelSpec:
    """One of the models shipped with the package, by short name."""
    ref = resources.files("folcomp.data").joinpath(f"{name}.json")
    return spec_from_dict(json.loads(ref.read_text()))


def bundled_model(name: str, **kwargs) -> FoliatedModel:
    return validate_model(bundled_spec(name), **kwargs)


def bundled_path(name: str) -> str:
    return str(resources.files("folcomp.data").joinpath(f"{name}.json"))
