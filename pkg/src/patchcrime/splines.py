"""Univariate and tensor-product B-spline bases.

Only open (clamped) knot vectors on ``[0, 1]`` are supported.  Basis values and
derivatives are computed with the Cox-de Boor recursion, derivatives through the
difference-of-lower-degree-bases formula.  All evaluation routines accept arrays
of points so that assembly can work on whole patches at once.

Conventions
-----------
Tensor-product coefficients are stored in lexicographic order with the first
parametric direction running fastest, i.e. the basis function with multi-index
``(i0, i1)`` has flat index ``i0 + n0 * i1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "KnotVector",
    "TensorProductBasis",
    "SplineFunction",
    "eval_basis",
    "eval_basis_many",
    "uniform_refine",
    "refine_knot_vector",
    "insert_knot_preserving",
    "refine_to",
    "greville",
]

_TOL = 1e-14


@dataclass(frozen=True, eq=False)
class KnotVector:
    """Open (clamped) knot vector on ``[0, 1]``.

    Parameters
    ----------
    degree:
        Polynomial degree ``p >= 0``.
    knots:
        Nondecreasing knots; ``0`` and ``1`` must be repeated exactly ``p + 1``
        times.
    theta:
        Bound on the ratio of adjacent nonzero knot spans (quasi-uniformity).
        ``None`` disables the check.
    """

    degree: int
    knots: np.ndarray
    theta: float | None = 2.0

    def __post_init__(self) -> None:
        p = int(self.degree)
        if p < 0:
            raise ValueError(f"degree must be non-negative, got {self.degree}")
        knots = np.array(self.knots, dtype=float).ravel()
        object.__setattr__(self, "degree", p)
        object.__setattr__(self, "knots", knots)
        knots.setflags(write=False)
        if knots.size < 2 * (p + 1):
            raise ValueError("knot vector too short for the degree")
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be nondecreasing")
        if knots[0] != 0.0 or knots[-1] != 1.0:
            raise ValueError("knots must start at 0 and end at 1")
        if np.count_nonzero(knots == 0.0) != p + 1 or np.count_nonzero(knots == 1.0) != p + 1:
            raise ValueError("end knots must be repeated exactly p+1 times (open knot vector)")
        inner, counts = np.unique(knots[p + 1 : -(p + 1)], return_counts=True)
        if counts.size and counts.max() > p + 1:
            raise ValueError("interior knot multiplicity exceeds p+1")
        if self.n < p + 1:
            raise ValueError("need at least p+1 basis functions")
        if self.theta is not None:
            if self.theta < 1:
                raise ValueError("theta must be >= 1")
            h = self.span_lengths
            if h.size > 1:
                ratio = h[1:] / h[:-1]
                if np.any(ratio > self.theta * (1 + 1e-12)) or np.any(ratio < (1 - 1e-12) / self.theta):
                    raise ValueError(
                        f"knot vector is not quasi-uniform with theta={self.theta}"
                    )

    @classmethod
    def uniform(cls, degree: int, elements: int, theta: float | None = 2.0) -> "KnotVector":
        """Open uniform knot vector with ``elements`` equal spans."""
        inner = np.linspace(0.0, 1.0, elements + 1)[1:-1]
        knots = np.concatenate([np.zeros(degree + 1), inner, np.ones(degree + 1)])
        return cls(degree, knots, theta)

    @property
    def n(self) -> int:
        """Number of basis functions."""
        return self.knots.size - self.degree - 1

    @property
    def breaks(self) -> np.ndarray:
        """Distinct knot values (element boundaries)."""
        return np.unique(self.knots)

    @property
    def span_lengths(self) -> np.ndarray:
        return np.diff(self.breaks)

    @property
    def num_elements(self) -> int:
        return self.breaks.size - 1

    def find_span(self, x: np.ndarray | float) -> np.ndarray:
        """Index ``s`` with ``knots[s] <= x < knots[s+1]`` (``x = 1`` maps to the last span)."""
        x = np.asarray(x, dtype=float)
        s = np.searchsorted(self.knots, x, side="right") - 1
        return np.clip(s, self.degree, self.n - 1)

    def multiplicity(self, xi: float) -> int:
        return int(np.count_nonzero(np.abs(self.knots - xi) <= _TOL))

    def __repr__(self) -> str:
        return f"KnotVector(p={self.degree}, knots={np.array2string(self.knots, precision=6)})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnotVector):
            return NotImplemented
        return self.degree == other.degree and np.array_equal(self.knots, other.knots)

    def __hash__(self) -> int:
        return hash((self.degree, self.knots.tobytes()))


def eval_basis_many(kv: KnotVector, x: np.ndarray, nderiv: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the nonzero basis functions and derivatives at many points.

    Parameters
    ----------
    kv:
        Knot vector.
    x:
        Points in ``[0, 1]``, any shape (flattened internally).
    nderiv:
        Highest derivative order, ``0 <= nderiv <= p``.

    Returns
    -------
    spans:
        Integer array of shape ``(m,)``.  Basis functions ``spans - p ... spans``
        are the nonzero ones.
    table:
        Array of shape ``(m, nderiv + 1, p + 1)``; ``table[q, k, j]`` is the
        ``k``-th derivative of basis function ``spans[q] - p + j`` at ``x[q]``.
    """
    p = kv.degree
    if nderiv < 0 or nderiv > p:
        raise ValueError(f"nderiv must lie in [0, p={p}], got {nderiv}")
    if not _points_ok(x):
        raise ValueError("evaluation point outside the parametric interval [0, 1]")
    x = np.clip(np.asarray(x, dtype=float).ravel(), 0.0, 1.0)
    U = kv.knots
    m = x.size
    span = kv.find_span(x)

    # ndu[j, r]: upper triangle holds basis values, lower triangle knot differences.
    ndu = np.zeros((p + 1, p + 1, m))
    ndu[0, 0] = 1.0
    left = np.zeros((p + 1, m))
    right = np.zeros((p + 1, m))
    for j in range(1, p + 1):
        left[j] = x - U[span + 1 - j]
        right[j] = U[span + j] - x
        saved = np.zeros(m)
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((nderiv + 1, p + 1, m))
    ders[0] = ndu[:, p]
    if nderiv > 0:
        a = np.zeros((2, p + 1, m))
        for r in range(p + 1):
            s1, s2 = 0, 1
            a[0, 0] = 1.0
            for k in range(1, nderiv + 1):
                d = np.zeros(m)
                rk, pk = r - k, p - k
                if r >= k:
                    a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                    d += a[s2, 0] * ndu[rk, pk]
                j1 = 1 if rk >= -1 else -rk
                j2 = k - 1 if r - 1 <= pk else p - r
                for j in range(j1, j2 + 1):
                    a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                    d += a[s2, j] * ndu[rk + j, pk]
                if r <= pk:
                    a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                    d += a[s2, k] * ndu[r, pk]
                ders[k, r] = d
                s1, s2 = s2, s1
        factor = float(p)
        for k in range(1, nderiv + 1):
            ders[k] *= factor
            factor *= p - k
    return span, np.moveaxis(ders, 2, 0)


def _points_ok(x: np.ndarray | float) -> bool:
    x = np.asarray(x, dtype=float)
    return bool(np.all(np.isfinite(x)) and np.all(x >= -_TOL) and np.all(x <= 1 + _TOL))


def eval_basis(kv: KnotVector, x: float, nderiv: int = 0) -> tuple[int, np.ndarray]:
    """Nonzero basis functions (and derivatives) at a single point.

    Returns the span index ``s`` and a ``(nderiv + 1, p + 1)`` table whose row
    ``k`` holds the ``k``-th derivatives of ``B_{s-p}, ..., B_s`` at ``x``.
    """
    if not np.isscalar(x) and np.ndim(x) != 0:
        raise ValueError("eval_basis expects a scalar point; use eval_basis_many for arrays")
    span, table = eval_basis_many(kv, np.array([x], dtype=float), nderiv)
    return int(span[0]), table[0]


def greville(kv: KnotVector) -> np.ndarray:
    """Greville abscissae (knot averages) of a knot vector."""
    p = kv.degree
    if p == 0:
        return 0.5 * (kv.knots[:-1] + kv.knots[1:])
    idx = np.arange(kv.n)[:, None] + np.arange(1, p + 1)[None, :]
    return kv.knots[idx].mean(axis=1)


def refine_knot_vector(kv: KnotVector, levels: int = 1) -> KnotVector:
    """Bisect every nonzero knot span ``levels`` times."""
    if levels < 0:
        raise ValueError("levels must be non-negative")
    knots = kv.knots
    for _ in range(levels):
        b = np.unique(knots)
        mids = 0.5 * (b[:-1] + b[1:])
        knots = np.sort(np.concatenate([knots, mids]))
    return KnotVector(kv.degree, knots, kv.theta)


@dataclass(frozen=True, eq=False)
class TensorProductBasis:
    """Tensor product of univariate open B-spline bases on ``[0, 1]^d``."""

    kvs: tuple[KnotVector, ...]
    _element_sizes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        kvs = tuple(self.kvs)
        if len(kvs) not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2 or 3")
        object.__setattr__(self, "kvs", kvs)
        grids = np.meshgrid(*[kv.span_lengths for kv in kvs], indexing="ij")
        diam = np.sqrt(sum(g**2 for g in grids))
        object.__setattr__(self, "_element_sizes", diam)

    @property
    def dim(self) -> int:
        return len(self.kvs)

    @property
    def degree(self) -> int:
        return self.kvs[0].degree

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(kv.n for kv in self.kvs)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def num_elements(self) -> int:
        return int(np.prod([kv.num_elements for kv in self.kvs]))

    @property
    def element_diameters(self) -> np.ndarray:
        """Parametric element diameters, indexed ``[e0, e1, ...]``."""
        return self._element_sizes

    @property
    def mesh_size(self) -> float:
        """Maximum parametric element diameter."""
        return float(self._element_sizes.max())

    def flat_index(self, *idx: np.ndarray) -> np.ndarray:
        """Flat index of a multi-index (first direction fastest)."""
        out = np.zeros(np.broadcast(*idx).shape, dtype=np.int64)
        stride = 1
        for k, i in enumerate(idx):
            out = out + np.asarray(i, dtype=np.int64) * stride
            stride *= self.kvs[k].n
        return out

    def evaluate(self, points: np.ndarray, nderiv: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """Nonzero tensor basis functions at ``points`` of shape ``(m, d)``.

        Returns
        -------
        indices:
            ``(m, (p+1)^d)`` flat indices of the nonzero functions.
        values:
            ``(m, 1 + d * [nderiv >= 1], (p+1)^d)`` values, followed by the
            parametric gradient components when ``nderiv >= 1``.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dim:
            raise ValueError("point dimension does not match basis dimension")
        nd = min(nderiv, 1)
        uni = [eval_basis_many(kv, pts[:, k], nd) for k, kv in enumerate(self.kvs)]
        return tensor_combine(self, uni, nd)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TensorProductBasis):
            return NotImplemented
        return self.kvs == other.kvs

    def __hash__(self) -> int:
        return hash(self.kvs)


def tensor_combine(
    basis: TensorProductBasis, uni: Sequence[tuple[np.ndarray, np.ndarray]], nderiv: int
) -> tuple[np.ndarray, np.ndarray]:
    """Combine univariate evaluations at matching points into tensor-product data.

    ``uni[k]`` is the output of :func:`eval_basis_many` for direction ``k`` at
    the ``k``-th coordinates of a common point set.
    """
    d = basis.dim
    p1 = basis.degree + 1
    m = uni[0][0].size
    local = np.indices((p1,) * d).reshape(d, -1)  # local multi-indices, first fastest after transpose
    local = local[::-1]  # make direction 0 the fastest-running index
    idx = [uni[k][0][:, None] - basis.kvs[k].degree + local[k][None, :] for k in range(d)]
    flat = basis.flat_index(*idx)
    nrows = 1 + (d if nderiv >= 1 else 0)
    vals = np.ones((m, nrows, local.shape[1]))
    for k in range(d):
        tab = uni[k][1]
        v0 = tab[:, 0, :][:, local[k]]
        vals[:, 0] *= v0
        if nderiv >= 1:
            v1 = tab[:, 1, :][:, local[k]]
            for g in range(d):
                vals[:, 1 + g] *= v1 if g == k else v0
    return flat, vals


@dataclass(frozen=True, eq=False)
class SplineFunction:
    """Scalar or vector valued spline ``sum_j c_j B_j`` on a tensor-product basis."""

    basis: TensorProductBasis
    coefficients: np.ndarray

    def __post_init__(self) -> None:
        c = np.array(self.coefficients, dtype=float)
        if c.shape[0] != self.basis.size:
            raise ValueError(
                f"coefficient length {c.shape[0]} does not match basis dimension {self.basis.size}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @property
    def value_dim(self) -> int:
        return 1 if self.coefficients.ndim == 1 else self.coefficients.shape[1]

    def __call__(self, points: np.ndarray) -> np.ndarray:
        idx, vals = self.basis.evaluate(points, 0)
        c = self.coefficients[idx]
        if c.ndim == 2:
            return np.einsum("ml,ml->m", vals[:, 0], c)
        return np.einsum("ml,mlv->mv", vals[:, 0], c)

    def gradient(self, points: np.ndarray) -> np.ndarray:
        """Parametric derivatives, shape ``(m, d)`` (scalar) or ``(m, v, d)`` (vector)."""
        idx, vals = self.basis.evaluate(points, 1)
        c = self.coefficients[idx]
        if c.ndim == 2:
            return np.einsum("mgl,ml->mg", vals[:, 1:], c)
        return np.einsum("mgl,mlv->mvg", vals[:, 1:], c)


def _insert_1d(kv: KnotVector, coeffs: np.ndarray, xi: float) -> tuple[KnotVector, np.ndarray]:
    """Boehm insertion of ``xi`` along axis 0 of ``coeffs``."""
    p = kv.degree
    if not 0.0 < xi < 1.0:
        raise ValueError("inserted knot must lie strictly inside (0, 1)")
    mult = kv.multiplicity(xi)
    if mult + 1 > p:
        raise ValueError(f"inserting {xi} would raise its multiplicity above p={p}")
    U = kv.knots
    s = int(kv.find_span(xi))
    n = kv.n
    new = np.empty((n + 1,) + coeffs.shape[1:])
    new[: s - p + 1] = coeffs[: s - p + 1]
    new[s - mult + 1 :] = coeffs[s - mult :]
    for i in range(s - p + 1, s - mult + 1):
        alpha = (xi - U[i]) / (U[i + p] - U[i])
        new[i] = alpha * coeffs[i] + (1.0 - alpha) * coeffs[i - 1]
    knots = np.insert(U, s + 1, xi)
    return KnotVector(p, knots, None), new


def insert_knot_preserving(f: SplineFunction, direction: int, xi: float) -> SplineFunction:
    """Insert ``xi`` into the knot vector of ``direction``; the function is unchanged."""
    basis = f.basis
    if not 0 <= direction < basis.dim:
        raise ValueError("invalid direction")
    shape = basis.shape
    tail = f.coefficients.shape[1:]
    # (n_{d-1}, ..., n_0, *tail): reversed axis order because direction 0 runs fastest
    c = f.coefficients.reshape(shape[::-1] + tail)
    axis = basis.dim - 1 - direction
    c = np.moveaxis(c, axis, 0)
    kv, c = _insert_1d(basis.kvs[direction], c, float(xi))
    c = np.moveaxis(c, 0, axis)
    kvs = list(basis.kvs)
    kvs[direction] = kv
    nb = TensorProductBasis(tuple(kvs))
    return SplineFunction(nb, c.reshape((nb.size,) + tail))


def _missing_knots(coarse: KnotVector, fine: KnotVector) -> list[float]:
    """Multiset difference ``fine - coarse``; raises if ``fine`` is not a refinement."""
    if coarse.degree != fine.degree:
        raise ValueError("degree mismatch")
    out: list[float] = []
    cv, cc = np.unique(coarse.knots, return_counts=True)
    fv, fc = np.unique(fine.knots, return_counts=True)
    cmap = dict(zip(cv.tolist(), cc.tolist()))
    for v, c in zip(fv.tolist(), fc.tolist()):
        extra = c - cmap.pop(v, 0)
        if extra < 0:
            raise ValueError("target knot vector is not a refinement")
        out.extend([v] * extra)
    if cmap:
        raise ValueError("target knot vector is not a refinement")
    return out


def refine_to(f: SplineFunction, target: TensorProductBasis) -> SplineFunction:
    """Re-express ``f`` exactly on a refined basis by repeated knot insertion."""
    if target.dim != f.basis.dim:
        raise ValueError("dimension mismatch")
    g = f
    for k in range(target.dim):
        for xi in _missing_knots(f.basis.kvs[k], target.kvs[k]):
            g = insert_knot_preserving(g, k, xi)
    # restore the target knot vectors (with their quasi-uniformity setting)
    return SplineFunction(target, g.coefficients)


def uniform_refine(basis: TensorProductBasis, levels: int = 1) -> TensorProductBasis:
    """Dyadic refinement: every nonzero knot span is bisected ``levels`` times."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    return TensorProductBasis(tuple(refine_knot_vector(kv, levels) for kv in basis.kvs))
