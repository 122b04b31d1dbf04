"""Patch parametrizations, multipatch topology and interface pairing.

A :class:`MultiPatchDomain` is a list of B-spline patches in 2D, each with a
constant diffusion coefficient, together with interface records that connect
pairs of patch faces.  An interface is *matching* when the two faces coincide
geometrically; otherwise the faces bound a thin *gap* (void) or *overlap*
(doubly covered) region, or both (*mixed*).

Points on the two faces of an interface are paired by casting a ray from the
reference face ``face_a`` along its outward unit normal and intersecting it with
``face_b``.  The reverse pairing is the exact inverse of that map, which in 2D is
the orthogonal foot point on ``face_a``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .splines import (
    KnotVector,
    SplineFunction,
    TensorProductBasis,
    eval_basis_many,
    greville,
    refine_to,
    uniform_refine,
)

__all__ = [
    "GeometryError",
    "GeometryDegeneracyError",
    "InversionError",
    "PairingError",
    "GeometryMap",
    "PatchDomain",
    "FaceId",
    "InterfaceRecord",
    "MultiPatchDomain",
    "FaceCurve",
    "FixedWidth",
    "PowerWidth",
    "SIDES",
    "map_eval",
    "jacobian",
    "inverse_map",
    "pair_point",
    "measure_width",
    "inject_crime",
    "load_domain",
    "save_domain",
    "domain_from_dict",
    "domain_to_dict",
]

#: face names -> (normal direction, parametric value); first direction is ``u``.
SIDES: dict[str, tuple[int, float]] = {
    "west": (0, 0.0),
    "east": (0, 1.0),
    "south": (1, 0.0),
    "north": (1, 1.0),
}


class GeometryError(ValueError):
    """Base class of geometry failures."""


class GeometryDegeneracyError(GeometryError):
    """The Jacobian determinant is not positive somewhere it was required to be."""


class InversionError(GeometryError):
    """Newton inversion of a patch map failed."""

    def __init__(self, message: str, residual: float) -> None:
        super().__init__(f"{message} (best residual {residual:.3e})")
        self.residual = residual


class PairingError(GeometryError):
    """The normal ray from a face point does not hit the opposite face."""


# ---------------------------------------------------------------------------
# maps


@dataclass(frozen=True, eq=False)
class GeometryMap:
    """Spline parametrization ``x = sum_j C_j B_j(xhat)`` of one patch."""

    basis: TensorProductBasis
    control_points: np.ndarray

    def __post_init__(self) -> None:
        cp = np.array(self.control_points, dtype=float)
        if cp.ndim != 2 or cp.shape[0] != self.basis.size or cp.shape[1] != self.basis.dim:
            raise ValueError(
                f"control points must have shape ({self.basis.size}, {self.basis.dim}), got {cp.shape}"
            )
        cp.setflags(write=False)
        object.__setattr__(self, "control_points", cp)

    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def spline(self) -> SplineFunction:
        return SplineFunction(self.basis, self.control_points)

    def refined(self, basis: TensorProductBasis) -> "GeometryMap":
        """The same map expressed on a refinement ``basis``."""
        if basis == self.basis:
            return self
        return GeometryMap(basis, refine_to(self.spline, basis).coefficients)

    def bounding_diameter(self) -> float:
        cp = self.control_points
        return float(np.linalg.norm(cp.max(axis=0) - cp.min(axis=0)))

    def face_indices(self, side: str) -> np.ndarray:
        """Flat indices of the basis functions with nonzero trace on ``side``, ordered along the face."""
        return face_dofs(self.basis, side)


def face_dofs(basis: TensorProductBasis, side: str) -> np.ndarray:
    """Flat indices of the face basis functions of ``side`` (ordered by the face parameter)."""
    n0, n1 = basis.shape
    k, val = SIDES[side]
    if k == 0:
        i = 0 if val == 0.0 else n0 - 1
        return i + n0 * np.arange(n1)
    j = 0 if val == 0.0 else n1 - 1
    return np.arange(n0) + n0 * j


def map_eval(gmap: GeometryMap, xhat: np.ndarray) -> np.ndarray:
    """Physical image of parametric points ``xhat`` (shape ``(m, d)`` or ``(d,)``)."""
    pts = np.asarray(xhat, dtype=float)
    single = pts.ndim == 1
    out = gmap.spline(np.atleast_2d(pts))
    return out[0] if single else out


def jacobian(gmap: GeometryMap, xhat: np.ndarray, check: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Jacobian matrices ``J[m, i, k] = dx_i / dxhat_k`` and determinants.

    Raises
    ------
    GeometryDegeneracyError
        If ``check`` and some determinant is not positive.
    """
    pts = np.asarray(xhat, dtype=float)
    single = pts.ndim == 1
    J = gmap.spline.gradient(np.atleast_2d(pts))
    det = np.linalg.det(J)
    if check and np.any(det <= 0.0):
        bad = np.atleast_2d(pts)[np.argmin(det)]
        raise GeometryDegeneracyError(
            f"non-positive Jacobian determinant {det.min():.3e} at parametric point {bad}"
        )
    if single:
        return J[0], det[0]
    return J, det


def inverse_map(
    gmap: GeometryMap,
    x: np.ndarray,
    guess: np.ndarray | None = None,
    maxit: int = 50,
) -> np.ndarray:
    """Invert the patch map by Newton's method.

    Converges when ``|Phi(xhat) - x| < 1e-12 * diam``; the result is clamped to
    the unit square and the residual re-checked.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if guess is None:
        xh = np.full_like(X, 0.5)
    else:
        xh = np.array(np.broadcast_to(np.atleast_2d(guess), X.shape), dtype=float)
    tol = 1e-12 * max(gmap.bounding_diameter(), 1e-300)
    res = np.full(X.shape[0], np.inf)
    for _ in range(maxit):
        F = gmap.spline(xh) - X
        res = np.linalg.norm(F, axis=1)
        if np.all(res < tol):
            break
        J = gmap.spline.gradient(xh)
        step = np.linalg.solve(J, F[..., None])[..., 0]
        xh = np.clip(xh - step, 0.0, 1.0)
    F = gmap.spline(xh) - X
    res = np.linalg.norm(F, axis=1)
    if np.any(res >= tol):
        raise InversionError("Newton inversion did not converge", float(res.max()))
    return xh[0] if single else xh


# ---------------------------------------------------------------------------
# topology


@dataclass(frozen=True)
class FaceId:
    """A face ``side`` of patch ``patch``."""

    patch: int
    side: str

    def __post_init__(self) -> None:
        if self.side not in SIDES:
            raise ValueError(f"unknown side {self.side!r}; expected one of {sorted(SIDES)}")
        if self.patch < 0:
            raise ValueError("patch index must be non-negative")

    @property
    def direction(self) -> int:
        """Parametric direction normal to the face."""
        return SIDES[self.side][0]

    @property
    def value(self) -> float:
        return SIDES[self.side][1]

    @property
    def tangent_direction(self) -> int:
        return 1 - self.direction

    def param_points(self, t: np.ndarray) -> np.ndarray:
        """Parametric points on the face for face parameters ``t``."""
        t = np.asarray(t, dtype=float).ravel()
        pts = np.empty((t.size, 2))
        pts[:, self.direction] = self.value
        pts[:, self.tangent_direction] = t
        return pts


INTERFACE_CLASSES = ("matching", "gap", "overlap", "mixed")


@dataclass(frozen=True)
class InterfaceRecord:
    """Connection between two patch faces.

    ``face_a`` is the reference face: pairing rays are cast along its normal.
    ``width`` is the measured gap/overlap width in physical units.
    """

    face_a: FaceId
    face_b: FaceId
    kind: str = "matching"
    width: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in INTERFACE_CLASSES:
            raise ValueError(f"unknown interface class {self.kind!r}")
        if self.face_a.patch == self.face_b.patch:
            raise ValueError("an interface must connect two different patches")
        if self.width < 0:
            raise ValueError("width must be non-negative")

    def faces(self) -> tuple[FaceId, FaceId]:
        return self.face_a, self.face_b

    def other(self, face: FaceId) -> FaceId:
        if face == self.face_a:
            return self.face_b
        if face == self.face_b:
            return self.face_a
        raise KeyError(face)


@dataclass(frozen=True, eq=False)
class PatchDomain:
    """One patch: geometry map, diffusion coefficient and analysis basis.

    The analysis basis is a knot refinement of the geometry basis, so the
    geometry is represented exactly in the discrete space.
    """

    map: GeometryMap
    rho: float = 1.0
    analysis: TensorProductBasis | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.analysis is None:
            object.__setattr__(self, "analysis", self.map.basis)
        if self.analysis.dim != self.map.dim:
            raise ValueError("analysis basis dimension mismatch")

    @property
    def degree(self) -> int:
        return self.analysis.degree

    @property
    def analysis_map(self) -> GeometryMap:
        """Geometry map expressed on the analysis basis."""
        if "amap" not in self._cache:
            self._cache["amap"] = self.map.refined(self.analysis)
        return self._cache["amap"]

    def refined(self, levels: int) -> "PatchDomain":
        if levels == 0:
            return self
        return PatchDomain(self.map, self.rho, uniform_refine(self.analysis, levels))

    def with_map(self, gmap: GeometryMap) -> "PatchDomain":
        return PatchDomain(gmap, self.rho, self.analysis)

    def with_rho(self, rho: float) -> "PatchDomain":
        return PatchDomain(self.map, rho, self.analysis)

    def element_diameters(self) -> np.ndarray:
        """Physical element diameters (largest corner-to-corner diagonal)."""
        if "diam" not in self._cache:
            b0, b1 = (kv.breaks for kv in self.analysis.kvs)
            U, V = np.meshgrid(b0, b1, indexing="ij")
            X = map_eval(self.map, np.column_stack([U.ravel(), V.ravel()])).reshape(U.shape + (2,))
            d1 = np.linalg.norm(X[1:, 1:] - X[:-1, :-1], axis=-1)
            d2 = np.linalg.norm(X[1:, :-1] - X[:-1, 1:], axis=-1)
            self._cache["diam"] = np.maximum(d1, d2)
        return self._cache["diam"]

    @property
    def mesh_size(self) -> float:
        """Mesh size ``h_i``: maximum parametric element diameter of the analysis basis."""
        return self.analysis.mesh_size

    @property
    def physical_mesh_size(self) -> float:
        """Maximum physical element diameter."""
        return float(self.element_diameters().max())

    def elements_per_direction(self) -> tuple[int, ...]:
        return tuple(kv.num_elements for kv in self.analysis.kvs)


@dataclass(frozen=True, eq=False)
class MultiPatchDomain:
    """Patches, interfaces and the outer (Dirichlet) boundary faces."""

    patches: tuple[PatchDomain, ...]
    interfaces: tuple[InterfaceRecord, ...]
    dirichlet: tuple[FaceId, ...]
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "patches", tuple(self.patches))
        object.__setattr__(self, "interfaces", tuple(self.interfaces))
        object.__setattr__(self, "dirichlet", tuple(self.dirichlet))
        npatch = len(self.patches)
        if npatch == 0:
            raise ValueError("domain needs at least one patch")
        degrees = {p.degree for p in self.patches}
        if len(degrees) != 1:
            raise ValueError("all patches must share one polynomial degree")
        seen: dict[FaceId, str] = {}
        for rec in self.interfaces:
            for f in rec.faces():
                if f.patch >= npatch:
                    raise ValueError(f"interface references unknown patch {f.patch}")
                if f in seen:
                    raise ValueError(f"face {f} appears in more than one interface")
                seen[f] = "interface"
        for f in self.dirichlet:
            if f.patch >= npatch:
                raise ValueError(f"boundary references unknown patch {f.patch}")
            if f in seen:
                raise ValueError(f"face {f} is both boundary and interface")
            seen[f] = "dirichlet"
        for i in range(npatch):
            for side in SIDES:
                if FaceId(i, side) not in seen:
                    raise ValueError(f"face {side} of patch {i} is neither interface nor boundary")

    @property
    def degree(self) -> int:
        return self.patches[0].degree

    @property
    def num_patches(self) -> int:
        return len(self.patches)

    @property
    def mesh_size(self) -> float:
        """Global mesh size ``h = max_i h_i``."""
        return max(p.mesh_size for p in self.patches)

    @property
    def d_max(self) -> float:
        """Largest gap/overlap width ``d_M`` over all interfaces."""
        return max((r.width for r in self.interfaces), default=0.0)

    def diameter(self) -> float:
        cps = np.vstack([p.map.control_points for p in self.patches])
        return float(np.linalg.norm(cps.max(axis=0) - cps.min(axis=0)))

    def refined(self, levels: int) -> "MultiPatchDomain":
        """Uniformly refine every analysis basis ``levels`` times."""
        return MultiPatchDomain(
            tuple(p.refined(levels) for p in self.patches), self.interfaces, self.dirichlet
        )

    def replace_patch(self, i: int, patch: PatchDomain) -> "MultiPatchDomain":
        patches = list(self.patches)
        patches[i] = patch
        return MultiPatchDomain(tuple(patches), self.interfaces, self.dirichlet)

    def replace_interface(self, k: int, rec: InterfaceRecord) -> "MultiPatchDomain":
        recs = list(self.interfaces)
        recs[k] = rec
        return MultiPatchDomain(self.patches, tuple(recs), self.dirichlet)

    def with_rho(self, rho: Sequence[float] | float) -> "MultiPatchDomain":
        if np.isscalar(rho):
            rho = [float(rho)] * self.num_patches
        patches = tuple(p.with_rho(r) for p, r in zip(self.patches, rho))
        return MultiPatchDomain(patches, self.interfaces, self.dirichlet)

    def interface_of(self, face: FaceId) -> int | None:
        for k, rec in enumerate(self.interfaces):
            if face in rec.faces():
                return k
        return None

    def face_curve(self, face: FaceId) -> "FaceCurve":
        key = ("curve", face)
        if key not in self._cache:
            self._cache[key] = FaceCurve.from_patch(self.patches[face.patch], face.side)
        return self._cache[key]

    def pairing(self, k: int) -> "InterfacePairing":
        key = ("pairing", k)
        if key not in self._cache:
            self._cache[key] = InterfacePairing(self, k)
        return self._cache[key]


# ---------------------------------------------------------------------------
# face curves and pairing


@dataclass(frozen=True, eq=False)
class FaceCurve:
    """Boundary curve ``C(t)`` of a patch face with its outward normal.

    Uses the geometry control points lying on the face (the normal-direction
    boundary basis function equals one on the face).
    """

    kv: KnotVector
    points: np.ndarray
    sign: float
    analysis_kv: KnotVector

    @classmethod
    def from_patch(cls, patch: PatchDomain, side: str) -> "FaceCurve":
        gmap = patch.map
        k, val = SIDES[side]
        t_dir = 1 - k
        pts = gmap.control_points[face_dofs(gmap.basis, side)]
        # outward normal = sign * rot_cw(tangent) for a positively oriented patch
        sign = 1.0 if side in ("east", "south") else -1.0
        return cls(gmap.basis.kvs[t_dir], pts, sign, patch.analysis.kvs[t_dir])

    def eval(self, t: np.ndarray, nderiv: int = 0) -> np.ndarray:
        """Derivatives ``0..nderiv`` of the curve, shape ``(nderiv + 1, m, 2)``."""
        p = self.kv.degree
        nd = min(nderiv, p)
        span, tab = eval_basis_many(self.kv, t, nd)
        idx = span[:, None] - p + np.arange(p + 1)[None, :]
        P = self.points[idx]  # (m, p+1, 2)
        out = np.zeros((nderiv + 1, span.size, 2))
        out[: nd + 1] = np.einsum("mkj,mjc->kmc", tab, P)
        return out

    def __call__(self, t: np.ndarray) -> np.ndarray:
        return self.eval(t, 0)[0]

    def normal(self, t: np.ndarray) -> np.ndarray:
        d = self.eval(t, 1)[1]
        n = self.sign * np.column_stack([d[:, 1], -d[:, 0]])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def speed(self, t: np.ndarray) -> np.ndarray:
        return np.linalg.norm(self.eval(t, 1)[1], axis=1)

    def samples(self, per_element: int = 32) -> tuple[np.ndarray, np.ndarray]:
        b = self.analysis_kv.breaks
        t = np.unique(
            np.concatenate([np.linspace(b[i], b[i + 1], per_element + 1) for i in range(b.size - 1)])
        )
        return t, self(t)


def _newton_1d(fun, t0: np.ndarray, tol: float, maxit: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized safeguarded Newton for scalar equations ``g(t) = 0`` on ``[0, 1]``.

    ``fun(t)`` returns ``(g, dg)``.  Returns the roots and final ``|g|``.
    """
    t = np.array(t0, dtype=float)
    g, dg = fun(t)
    for _ in range(maxit):
        active = np.abs(g) > tol
        if not np.any(active):
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(active & (dg != 0), g / dg, 0.0)
        step = np.clip(step, -0.25, 0.25)
        t = np.clip(t - step, 0.0, 1.0)
        g, dg = fun(t)
    return t, np.abs(g)


class InterfacePairing:
    """Numerical pairing between the two faces of one interface."""

    def __init__(self, domain: MultiPatchDomain, k: int) -> None:
        rec = domain.interfaces[k]
        self.record = rec
        self.ca = domain.face_curve(rec.face_a)
        self.cb = domain.face_curve(rec.face_b)
        self.scale = max(domain.diameter(), 1e-300)
        self.tol = 1e-14 * self.scale

    def _initial(self, curve: FaceCurve, cost) -> np.ndarray:
        ts, pts = curve.samples()
        c = cost(ts, pts)  # (m, S)
        return ts[np.argmin(c, axis=1)]

    def forward(self, ta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Pair face_a parameters to face_b: returns ``(tb, y, r)`` with ``y = x + r``."""
        ta = np.asarray(ta, dtype=float).ravel()
        X = self.ca(ta)
        N = self.ca.normal(ta)

        def cost(ts, pts):
            D = pts[None, :, :] - X[:, None, :]
            cr = np.abs(D[..., 0] * N[:, None, 1] - D[..., 1] * N[:, None, 0])
            return cr + 1e-2 * np.linalg.norm(D, axis=-1)

        t0 = self._initial(self.cb, cost)

        def fun(t):
            c = self.cb.eval(t, 1)
            D = c[0] - X
            g = D[:, 0] * N[:, 1] - D[:, 1] * N[:, 0]
            dg = c[1][:, 0] * N[:, 1] - c[1][:, 1] * N[:, 0]
            return g, dg

        tb, res = _newton_1d(fun, t0, self.tol)
        if np.any(res > 1e3 * self.tol):
            raise PairingError(
                f"normal ray misses face {self.record.face_b} (residual {res.max():.3e})"
            )
        Y = self.cb(tb)
        return tb, Y, Y - X

    def backward(self, tb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Inverse of :meth:`forward`: returns ``(ta, x, r)`` with ``y = x + r``."""
        tb = np.asarray(tb, dtype=float).ravel()
        Y = self.cb(tb)

        def cost(ts, pts):
            D = Y[:, None, :] - pts[None, :, :]
            tang = self.ca.eval(ts, 1)[1]
            tang = tang / np.linalg.norm(tang, axis=1, keepdims=True)
            dot = np.abs(np.einsum("msc,sc->ms", D, tang))
            return dot + 1e-2 * np.linalg.norm(D, axis=-1)

        t0 = self._initial(self.ca, cost)

        def fun(t):
            c = self.ca.eval(t, 2)
            D = Y - c[0]
            g = np.einsum("mc,mc->m", D, c[1])
            dg = -np.einsum("mc,mc->m", c[1], c[1]) + np.einsum("mc,mc->m", D, c[2])
            return g, dg

        def fun_scaled(t):
            g, dg = fun(t)
            s = np.linalg.norm(self.ca.eval(t, 1)[1], axis=1)
            return g / s, dg / s

        ta, res = _newton_1d(fun_scaled, t0, self.tol)
        if np.any(res > 1e3 * self.tol):
            raise PairingError(
                f"no foot point on face {self.record.face_a} (residual {res.max():.3e})"
            )
        X = self.ca(ta)
        return ta, X, Y - X

    def map_from(self, face: FaceId, t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Pair parameters on ``face`` (either side) to the other face.

        Returns ``(t_other, point_other, r)`` where ``r = point_other - point``.
        """
        if face == self.record.face_a:
            return self.forward(t)
        if face == self.record.face_b:
            ta, X, r = self.backward(t)
            return ta, X, -r
        raise KeyError(face)


def pair_point(
    domain: MultiPatchDomain, k: int, t: np.ndarray | float, from_face: FaceId | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pair face parameters ``t`` of interface ``k``.

    Parameters
    ----------
    domain:
        The multipatch domain.
    k:
        Interface index.
    t:
        Parameters along ``from_face`` (default: ``face_a``).
    from_face:
        Face the parameters live on.

    Returns
    -------
    (t_other, y, r):
        Parameters and physical points on the opposite face, and the gap vector
        ``r = y - x``.
    """
    pairing = domain.pairing(k)
    face = pairing.record.face_a if from_face is None else from_face
    scalar = np.ndim(t) == 0
    out = pairing.map_from(face, np.atleast_1d(np.asarray(t, dtype=float)))
    if scalar:
        return out[0][0], out[1][0], out[2][0]
    return out


def face_sample_parameters(kv: KnotVector, q: int | None = None) -> np.ndarray:
    """Gauss points on every span of ``kv`` plus its Greville points."""
    q = kv.degree + 1 if q is None else q
    xg, _ = np.polynomial.legendre.leggauss(q)
    b = kv.breaks
    mid = 0.5 * (b[1:] + b[:-1])
    half = 0.5 * (b[1:] - b[:-1])
    gauss = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    return np.concatenate([gauss, greville(kv)])


def measure_width(domain: MultiPatchDomain, k: int) -> float:
    """Maximum pairing distance ``|x - pair(x)|`` over face samples of ``face_a``."""
    rec = domain.interfaces[k]
    curve = domain.face_curve(rec.face_a)
    t = face_sample_parameters(curve.analysis_kv)
    _, _, r = domain.pairing(k).forward(t)
    return float(np.linalg.norm(r, axis=1).max())


# ---------------------------------------------------------------------------
# segmentation crimes


@dataclass(frozen=True)
class FixedWidth:
    """Crime of fixed width ``d``."""

    d: float

    def width(self, h: float) -> float:
        return self.d


@dataclass(frozen=True)
class PowerWidth:
    """Crime of width ``d = h ** lam``."""

    lam: float

    def width(self, h: float) -> float:
        return h**self.lam


def _crime_profile(g: np.ndarray, mode: str) -> np.ndarray:
    """Tangential weights of the interior face control points at Greville abscissae ``g``."""
    w = 4.0 * g * (1.0 - g)
    w[0] = w[-1] = 0.0
    if mode == "mixed":
        w = w * np.sign(0.5 - g)
        if np.count_nonzero(w > 0) == 0 or np.count_nonzero(w < 0) == 0:
            raise GeometryError("mixed crime needs at least two interior face control points")
    return w


def _mixed_resolution(patch: PatchDomain, t_dir: int) -> GeometryMap:
    """Geometry map with face control points on both sides of the face midpoint.

    A sign-changing profile needs interior control points left and right of
    ``1/2``; if the geometry basis is too coarse, analysis breaks nearest to the
    midpoint are inserted (geometry preserving, and the analysis basis stays a
    refinement of the geometry basis).
    """
    gmap = patch.map
    for _ in range(4):
        g = greville(gmap.basis.kvs[t_dir])[1:-1]
        if np.any(g < 0.5) and np.any(g > 0.5):
            break
        kv = gmap.basis.kvs[t_dir]
        cand = np.setdiff1d(patch.analysis.kvs[t_dir].breaks, kv.breaks)
        if cand.size == 0:
            break
        xi = cand[np.argmin(np.abs(cand - 0.5))]
        kvs = list(gmap.basis.kvs)
        kvs[t_dir] = KnotVector(kv.degree, np.sort(np.append(kv.knots, xi)), None)
        gmap = gmap.refined(TensorProductBasis(tuple(kvs)))
    return gmap


def _displaced_patch(patch: PatchDomain, side: str, mode: str, amplitude: float) -> PatchDomain:
    """Displace the face control points of ``side`` (and a linear ramp into the patch).

    Positive amplitude moves the face outward (overlap), negative inward (gap).
    """
    gmap = _mixed_resolution(patch, 1 - SIDES[side][0]) if mode == "mixed" else patch.map
    basis = gmap.basis
    k, val = SIDES[side]
    t_dir = 1 - k
    g_t = greville(basis.kvs[t_dir])
    g_n = greville(basis.kvs[k])
    w_t = _crime_profile(g_t, mode)
    ramp = g_n if val == 1.0 else 1.0 - g_n
    curve = FaceCurve.from_patch(patch, side)
    normals = curve.normal(np.clip(g_t, 0.0, 1.0))  # (n_t, 2)
    n0, n1 = basis.shape
    disp = np.zeros((n0, n1, 2))
    if k == 0:
        disp[:] = ramp[:, None, None] * (w_t[:, None] * normals)[None, :, :]
    else:
        disp[:] = ramp[None, :, None] * (w_t[:, None] * normals)[:, None, :]
    flat = disp.transpose(1, 0, 2).reshape(-1, 2)  # first direction fastest
    return patch.with_map(GeometryMap(basis, gmap.control_points + amplitude * flat))


def check_jacobian(patch: PatchDomain, samples_per_element: int = 4) -> float:
    """Minimum Jacobian determinant on a per-element sample grid; raises if not positive."""
    pts_dir = []
    for kv in patch.analysis.kvs:
        b = kv.breaks
        s = np.linspace(0.0, 1.0, samples_per_element + 1)
        pts_dir.append(np.unique((b[:-1, None] + np.diff(b)[:, None] * s[None, :]).ravel()))
    U, V = np.meshgrid(*pts_dir, indexing="ij")
    _, det = jacobian(patch.map, np.column_stack([U.ravel(), V.ravel()]), check=False)
    if det.min() <= 0.0:
        raise GeometryDegeneracyError(
            f"crime inverts an element (min det J = {det.min():.3e})"
        )
    return float(det.min())


def inject_crime(
    domain: MultiPatchDomain,
    k: int,
    mode: str,
    width_rule: FixedWidth | PowerWidth,
    h: float | None = None,
    rtol: float = 1e-3,
) -> MultiPatchDomain:
    """Turn matching interface ``k`` into a gap, overlap or mixed interface.

    The interior control points of ``face_b`` are moved along the face normal
    with a smooth bump profile (sign-split for ``mixed``), tapering linearly to
    zero towards the opposite face of the patch so that element Jacobians stay
    positive.  Corners are never moved.  The amplitude is calibrated so that the
    measured width equals the requested ``d`` within ``rtol``.

    Parameters
    ----------
    h:
        Mesh size for :class:`PowerWidth`; defaults to ``domain.mesh_size``.
    """
    if mode not in ("gap", "overlap", "mixed"):
        raise ValueError(f"unknown crime mode {mode!r}")
    rec = domain.interfaces[k]
    if rec.kind != "matching":
        raise GeometryError("crimes can only be injected into matching interfaces")
    h = domain.mesh_size if h is None else h
    d = float(width_rule.width(h))
    if not d > 0:
        raise ValueError("crime width must be positive")
    face = rec.face_b
    patch = domain.patches[face.patch]
    if mode == "mixed":
        patch = patch.with_map(_mixed_resolution(patch, 1 - SIDES[face.side][0]))
    curve = FaceCurve.from_patch(patch, face.side)
    # initial amplitude from the peak of the tangential displacement profile
    ts = np.linspace(0.0, 1.0, 2001)
    w = _crime_profile(greville(curve.kv), mode)
    span, tab = eval_basis_many(curve.kv, ts, 0)
    idx = span[:, None] - curve.kv.degree + np.arange(curve.kv.degree + 1)[None, :]
    peak = np.abs(np.einsum("mj,mj->m", tab[:, 0], w[idx])).max()
    sign = -1.0 if mode == "gap" else 1.0
    amp = d / peak
    kind = mode
    new = domain
    for _ in range(8):
        moved = _displaced_patch(patch, face.side, mode, sign * amp)
        check_jacobian(moved)
        trial = domain.replace_patch(face.patch, moved).replace_interface(
            k, InterfaceRecord(rec.face_a, rec.face_b, kind, 0.0)
        )
        measured = measure_width(trial, k)
        new = trial.replace_interface(k, InterfaceRecord(rec.face_a, rec.face_b, kind, measured))
        if abs(measured - d) <= rtol * d:
            break
        amp *= d / measured
    return new


# ---------------------------------------------------------------------------
# JSON geometry format


def domain_to_dict(domain: MultiPatchDomain) -> dict[str, Any]:
    """Serialize the geometry (coarse maps, coefficients and topology)."""
    patches = []
    for p in domain.patches:
        patches.append(
            {
                "degree": p.map.basis.degree,
                "knots": [kv.knots.tolist() for kv in p.map.basis.kvs],
                "control_points": p.map.control_points.tolist(),
                "rho": p.rho,
                "analysis_knots": [kv.knots.tolist() for kv in p.analysis.kvs],
            }
        )
    return {
        "dim": 2,
        "patches": patches,
        "interfaces": [
            {
                "a": {"patch": r.face_a.patch, "side": r.face_a.side},
                "b": {"patch": r.face_b.patch, "side": r.face_b.side},
                "class": r.kind,
                "width": r.width,
            }
            for r in domain.interfaces
        ],
        "dirichlet": [{"patch": f.patch, "side": f.side} for f in domain.dirichlet],
    }


def domain_from_dict(data: dict[str, Any]) -> MultiPatchDomain:
    """Build a domain from the JSON geometry layout."""
    if int(data.get("dim", 2)) != 2:
        raise ValueError("only two-dimensional geometries are supported")
    patches = []
    for pd in data["patches"]:
        p = int(pd["degree"])
        kvs = tuple(KnotVector(p, k, None) for k in pd["knots"])
        gmap = GeometryMap(TensorProductBasis(kvs), np.asarray(pd["control_points"], dtype=float))
        analysis = None
        if "analysis_knots" in pd:
            analysis = TensorProductBasis(tuple(KnotVector(p, k, None) for k in pd["analysis_knots"]))
        patches.append(PatchDomain(gmap, float(pd.get("rho", 1.0)), analysis))
    recs = []
    for rd in data.get("interfaces", []):
        recs.append(
            InterfaceRecord(
                FaceId(int(rd["a"]["patch"]), rd["a"]["side"]),
                FaceId(int(rd["b"]["patch"]), rd["b"]["side"]),
                rd.get("class", "matching"),
                float(rd.get("width", 0.0)),
            )
        )
    dirichlet = [FaceId(int(f["patch"]), f["side"]) for f in data.get("dirichlet", [])]
    return MultiPatchDomain(tuple(patches), tuple(recs), tuple(dirichlet))


def load_domain(path: str | Path) -> MultiPatchDomain:
    with open(path, encoding="utf-8") as fh:
        return domain_from_dict(json.load(fh))


def save_domain(domain: MultiPatchDomain, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(domain_to_dict(domain), fh, indent=1)
