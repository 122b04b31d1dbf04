"""Constructors for multipatch domains used by tests and the study registry."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .geometry import FaceId, GeometryMap, InterfaceRecord, MultiPatchDomain, PatchDomain
from .splines import KnotVector, TensorProductBasis, greville

__all__ = ["box_patch", "grid_domain", "single_patch_domain"]

Deformation = Callable[[np.ndarray], np.ndarray]


def box_patch(
    x0: float,
    x1: float,
    y0: float,
    y1: float,
    degree: int = 2,
    geo_knots: Sequence[KnotVector] | None = None,
    rho: float = 1.0,
    analysis_elements: tuple[int, int] | None = None,
    deform: Deformation | None = None,
) -> PatchDomain:
    """Patch parametrizing ``[x0, x1] x [y0, y1]`` (optionally deformed).

    Control points are the images of the Greville points, which reproduces the
    affine map exactly; a deformation is applied to the control points.
    """
    if geo_knots is None:
        geo_knots = (KnotVector.uniform(degree, 1), KnotVector.uniform(degree, 1))
    basis = TensorProductBasis(tuple(geo_knots))
    g0, g1 = greville(basis.kvs[0]), greville(basis.kvs[1])
    G0, G1 = np.meshgrid(g0, g1, indexing="xy")  # first direction fastest after ravel
    cp = np.column_stack([x0 + (x1 - x0) * G0.ravel(), y0 + (y1 - y0) * G1.ravel()])
    if deform is not None:
        cp = deform(cp)
    gmap = GeometryMap(basis, cp)
    analysis = None
    if analysis_elements is not None:
        kvs = []
        for k, ne in enumerate(analysis_elements):
            geo = basis.kvs[k]
            inner = np.linspace(0.0, 1.0, ne + 1)[1:-1]
            knots = np.sort(np.concatenate([geo.knots, np.setdiff1d(inner, geo.knots)]))
            kvs.append(KnotVector(degree, knots, geo.theta))
        analysis = TensorProductBasis(tuple(kvs))
    return PatchDomain(gmap, rho, analysis)


def grid_domain(
    nx: int,
    ny: int,
    xs: Sequence[float] | None = None,
    ys: Sequence[float] | None = None,
    degree: int = 2,
    rho: Sequence[float] | float = 1.0,
    analysis_elements: Callable[[int, int], tuple[int, int]] | None = None,
    deform: Deformation | None = None,
    geo_knots: Callable[[int, int], Sequence[KnotVector]] | None = None,
) -> MultiPatchDomain:
    """Structured ``nx`` by ``ny`` grid of patches with matching interfaces.

    Patch ``(i, j)`` has index ``i + nx * j``.  Horizontal neighbours are
    joined east-to-west, vertical neighbours north-to-south; the face of the
    lower-index patch is the reference face ``face_a``.  All outer faces carry
    Dirichlet conditions.
    """
    xs = np.arange(nx + 1, dtype=float) if xs is None else np.asarray(xs, dtype=float)
    ys = np.arange(ny + 1, dtype=float) if ys is None else np.asarray(ys, dtype=float)
    rhos = [float(rho)] * (nx * ny) if np.isscalar(rho) else [float(r) for r in rho]
    patches = []
    for j in range(ny):
        for i in range(nx):
            ae = analysis_elements(i, j) if analysis_elements else None
            gk = geo_knots(i, j) if geo_knots else None
            patches.append(
                box_patch(xs[i], xs[i + 1], ys[j], ys[j + 1], degree, gk, rhos[i + nx * j], ae, deform)
            )
    recs = []
    for j in range(ny):
        for i in range(nx):
            me = i + nx * j
            if i + 1 < nx:
                recs.append(InterfaceRecord(FaceId(me, "east"), FaceId(me + 1, "west")))
            if j + 1 < ny:
                recs.append(InterfaceRecord(FaceId(me, "north"), FaceId(me + nx, "south")))
    bnd = []
    for j in range(ny):
        bnd.append(FaceId(nx * j, "west"))
        bnd.append(FaceId(nx * j + nx - 1, "east"))
    for i in range(nx):
        bnd.append(FaceId(i, "south"))
        bnd.append(FaceId(i + nx * (ny - 1), "north"))
    return MultiPatchDomain(tuple(patches), tuple(recs), tuple(bnd))


def single_patch_domain(patch: PatchDomain) -> MultiPatchDomain:
    """Domain consisting of one patch with Dirichlet conditions on all faces."""
    faces = tuple(FaceId(0, s) for s in ("west", "east", "south", "north"))
    return MultiPatchDomain((patch,), (), faces)
