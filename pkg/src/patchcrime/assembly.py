"""Symmetric interior-penalty dG assembly on multipatch domains with gaps and overlaps.

Each patch carries its own B-spline space; there are no shared degrees of
freedom.  The bilinear form is the sum of patch-local forms

``a_i(u, v) = (rho_i grad u_i, grad v_i)_{Omega_i}``
``  + sum_{F in dOmega_i, Dirichlet} [ -(rho_i d_n u, v) - (rho_i d_n v, u) + (eta rho_i / h)(u, v) ]``
``  + sum_{F in dOmega_i, interface} [ -1/2 (rho_i d_n u_i, [v]) - 1/2 (rho_i d_n v_i, [u])``
``                                    + (eta {rho} / 2h) ([u], [v]) ]``

where on the face ``F`` of patch ``i`` the jump ``[w] = w_i - w_j o Phi`` uses
the trace of the neighbour ``j`` at the paired point ``Phi(x)`` on the
neighbour's face.  Summing the two sides of a matching interface gives the
classical symmetric interior penalty method with averaged fluxes; on gap and
overlap interfaces each side integrates its own flux on its own face and sees
the neighbour only through its trace.  This keeps ``K`` symmetric and makes
every patch-local form depend only on the patch's own functions plus the
neighbours' face traces, which is what the dual-primal solver needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import SIDES, FaceId, GeometryDegeneracyError, MultiPatchDomain, PatchDomain, face_dofs
from .linalg import cholesky
from .splines import eval_basis_many, greville, tensor_combine

__all__ = [
    "QuadratureRule",
    "ExactSolution",
    "ManufacturedProblem",
    "DofMap",
    "PatchBlock",
    "DGSystem",
    "default_eta",
    "assemble",
    "solve_direct",
    "dg_error",
    "residual_check",
    "interpolate",
]


def default_eta(p: int) -> float:
    """Default penalty parameter ``4 (p + 1)^2``."""
    return 4.0 * (p + 1) ** 2


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre rule with ``q`` points per element and direction."""

    q: int

    def __post_init__(self) -> None:
        if self.q < 1:
            raise ValueError("q must be positive")

    def reference(self) -> tuple[np.ndarray, np.ndarray]:
        """Points and weights on ``[0, 1]``."""
        x, w = np.polynomial.legendre.leggauss(self.q)
        return 0.5 * (x + 1.0), 0.5 * w

    def on_intervals(self, breaks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Points and weights on every interval of ``breaks``; shapes ``(n_int, q)``."""
        x, w = self.reference()
        a, b = breaks[:-1], breaks[1:]
        return a[:, None] + (b - a)[:, None] * x[None, :], (b - a)[:, None] * w[None, :]


# ---------------------------------------------------------------------------
# problem data


@dataclass(frozen=True)
class ExactSolution:
    """Closures ``u(x, y)``, ``grad u(x, y) -> (m, 2)`` and ``Laplace u(x, y)``."""

    u: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray, np.ndarray], np.ndarray]
    laplacian: Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ManufacturedProblem:
    """Per-patch exact solutions; ``f_i = -rho_i Laplace u_i`` and ``u_D = u`` on the boundary."""

    solutions: tuple[ExactSolution, ...]
    name: str = "manufactured"

    @classmethod
    def uniform(cls, sol: ExactSolution, npatch: int, name: str = "manufactured") -> "ManufacturedProblem":
        return cls(tuple([sol] * npatch), name)

    def u(self, i: int, X: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.solutions[i].u(X[:, 0], X[:, 1]), (X.shape[0],)).astype(float)

    def grad(self, i: int, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.solutions[i].grad(X[:, 0], X[:, 1]), dtype=float).reshape(X.shape[0], 2)

    def f(self, i: int, X: np.ndarray, rho: float) -> np.ndarray:
        lap = np.broadcast_to(self.solutions[i].laplacian(X[:, 0], X[:, 1]), (X.shape[0],))
        return -rho * lap


# ---------------------------------------------------------------------------
# dof bookkeeping


@dataclass(frozen=True, eq=False)
class DofMap:
    """Contiguous global numbering of the (fully discontinuous) patch spaces."""

    sizes: tuple[int, ...]
    offsets: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        off = np.concatenate([[0], np.cumsum(self.sizes)]).astype(np.int64)
        object.__setattr__(self, "offsets", off)

    @classmethod
    def from_domain(cls, domain: MultiPatchDomain) -> "DofMap":
        return cls(tuple(p.analysis.size for p in domain.patches))

    @property
    def ndofs(self) -> int:
        return int(self.offsets[-1])

    def global_index(self, patch: int, local: np.ndarray) -> np.ndarray:
        return self.offsets[patch] + np.asarray(local, dtype=np.int64)

    def patch_slice(self, patch: int) -> slice:
        return slice(int(self.offsets[patch]), int(self.offsets[patch + 1]))

    def patch_of(self, g: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.offsets, g, side="right") - 1


def classify_dofs(domain: MultiPatchDomain, patch: int) -> dict[str, np.ndarray]:
    """Local dof classes of one patch: face dofs per side, ``interior`` the rest."""
    basis = domain.patches[patch].analysis
    out: dict[str, np.ndarray] = {}
    on_face = np.zeros(basis.size, dtype=bool)
    for side in SIDES:
        idx = face_dofs(basis, side)
        out[side] = idx
        on_face[idx] = True
    out["interior"] = np.flatnonzero(~on_face)
    return out


# ---------------------------------------------------------------------------
# evaluation helpers


def _patch_volume_data(patch: PatchDomain, rule: QuadratureRule):
    """Basis data at all volume quadrature points of a patch, element-blocked.

    Returns ``idx (E, L)``, ``B (E, Q, L)``, ``G (E, Q, 2, L)`` physical gradients,
    ``X (E, Q, 2)`` points and ``W (E, Q)`` weights including ``det J``.
    """
    basis = patch.analysis
    p = basis.degree
    p1 = p + 1
    uni = []
    for kv in basis.kvs:
        pts, wts = rule.on_intervals(kv.breaks)
        span, tab = eval_basis_many(kv, pts.ravel(), 1)
        ne, q = pts.shape
        uni.append((span.reshape(ne, q)[:, 0], tab.reshape(ne, q, 2, p1), wts))
    (s0, T0, w0), (s1, T1, w1) = uni
    ne0, q = T0.shape[:2]
    ne1 = T1.shape[0]
    # element e = e0 + ne0 * e1, point g = g0 + q * g1, local l = a + p1 * b
    V0, D0 = T0[:, :, 0], T0[:, :, 1]
    V1, D1 = T1[:, :, 0], T1[:, :, 1]
    B = np.einsum("xga,yhb->yxhgba", V0, V1).reshape(ne1 * ne0, q * q, p1 * p1)
    Bu = np.einsum("xga,yhb->yxhgba", D0, V1).reshape(ne1 * ne0, q * q, p1 * p1)
    Bv = np.einsum("xga,yhb->yxhgba", V0, D1).reshape(ne1 * ne0, q * q, p1 * p1)
    W = np.einsum("xg,yh->yxhg", w0, w1).reshape(ne1 * ne0, q * q)
    la = np.tile(np.arange(p1), p1)
    lb = np.repeat(np.arange(p1), p1)
    i0 = (s0[None, :, None] - p + la[None, None, :])  # (1, ne0, L)
    i1 = (s1[:, None, None] - p + lb[None, None, :])  # (ne1, 1, L)
    idx = (i0 + basis.shape[0] * i1).reshape(ne1 * ne0, p1 * p1)
    C = patch.analysis_map.control_points[idx]  # (E, L, 2)
    X = np.einsum("eql,elc->eqc", B, C)
    Ju = np.einsum("eql,elc->eqc", Bu, C)
    Jv = np.einsum("eql,elc->eqc", Bv, C)
    det = Ju[..., 0] * Jv[..., 1] - Ju[..., 1] * Jv[..., 0]
    if np.any(det <= 0):
        raise GeometryDegeneracyError(f"non-positive Jacobian determinant {det.min():.3e} at a quadrature point")
    # J = [Ju Jv]; J^{-T} grad_hat = (1/det) [[Jv_y, -Ju_y], [-Jv_x, Ju_x]] @ (Bu, Bv)
    inv = 1.0 / det
    Gx = (Jv[..., 1, None] * Bu - Ju[..., 1, None] * Bv) * inv[..., None]
    Gy = (-Jv[..., 0, None] * Bu + Ju[..., 0, None] * Bv) * inv[..., None]
    G = np.stack([Gx, Gy], axis=2)
    return idx, B, G, X, W * det


@dataclass
class FacePoints:
    """Quadrature data on one host face (patch-local indices)."""

    t: np.ndarray  # face parameters (m,)
    ds: np.ndarray  # weights times surface measure (m,)
    X: np.ndarray  # physical points (m, 2)
    normal: np.ndarray  # outward unit normals (m, 2)
    idx: np.ndarray  # local dof indices (m, L)
    B: np.ndarray  # basis values (m, L)
    G: np.ndarray  # physical gradients (m, 2, L)


def _face_points(patch: PatchDomain, face: FaceId, t: np.ndarray, w: np.ndarray) -> FacePoints:
    basis = patch.analysis
    pts = face.param_points(t)
    uni = [eval_basis_many(kv, pts[:, k], 1) for k, kv in enumerate(basis.kvs)]
    idx, vals = tensor_combine(basis, uni, 1)
    C = patch.analysis_map.control_points[idx]
    X = np.einsum("ml,mlc->mc", vals[:, 0], C)
    J = np.einsum("mgl,mlc->mcg", vals[:, 1:], C)  # (m, 2, 2) with J[:, c, g]
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    inv = np.empty_like(J)
    inv[:, 0, 0] = J[:, 1, 1] / det
    inv[:, 1, 1] = J[:, 0, 0] / det
    inv[:, 0, 1] = -J[:, 0, 1] / det
    inv[:, 1, 0] = -J[:, 1, 0] / det
    G = np.einsum("mgc,mgl->mcl", inv, vals[:, 1:])  # J^{-T} grad_hat
    tau = J[:, :, face.tangent_direction]
    speed = np.linalg.norm(tau, axis=1)
    sign = 1.0 if face.side in ("east", "south") else -1.0
    normal = sign * np.column_stack([tau[:, 1], -tau[:, 0]]) / speed[:, None]
    return FacePoints(t, w * speed, X, normal, idx, vals[:, 0], G)


def _merge_breaks(parts: Sequence[np.ndarray], tol: float = 1e-12) -> np.ndarray:
    b = np.sort(np.clip(np.concatenate(parts), 0.0, 1.0))
    keep = np.concatenate([[True], np.diff(b) > tol])
    b = b[keep]
    b[0], b[-1] = 0.0, 1.0
    return b


def interface_face_quadrature(
    domain: MultiPatchDomain, k: int, host: FaceId, rule: QuadratureRule
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Quadrature on ``host`` for interface ``k`` on the merged partition.

    The host face knots are merged with the pre-images of the neighbour face
    knots under the pairing, so each cell is smooth for both traces.

    Returns ``(t_host, w_host, t_neighbour, paired_points)``.
    """
    pairing = domain.pairing(k)
    other = pairing.record.other(host)
    kv_h = domain.patches[host.patch].analysis.kvs[host.tangent_direction]
    kv_o = domain.patches[other.patch].analysis.kvs[other.tangent_direction]
    tb_o = kv_o.breaks[1:-1]
    pre = pairing.map_from(other, tb_o)[0] if tb_o.size else np.empty(0)
    breaks = _merge_breaks([kv_h.breaks, pre])
    t, w = rule.on_intervals(breaks)
    t, w = t.ravel(), w.ravel()
    t_o, y, _ = pairing.map_from(host, t)
    return t, w, t_o, y


def _trace_values(patch: PatchDomain, face: FaceId, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Local indices ``(m, p+1)`` and values of the face traces of ``patch`` at face parameters ``t``."""
    kv = patch.analysis.kvs[face.tangent_direction]
    span, tab = eval_basis_many(kv, t, 0)
    pos = span[:, None] - kv.degree + np.arange(kv.degree + 1)[None, :]
    fd = face_dofs(patch.analysis, face.side)
    return fd[pos], tab[:, 0]


# ---------------------------------------------------------------------------
# the system


@dataclass(eq=False)
class PatchBlock:
    """Patch-local form ``a_i`` on own dofs plus neighbour trace dofs.

    ``dofs`` lists the global indices the local matrix acts on: first the patch's
    own dofs (in local order), then the trace dofs of each neighbour face in
    ``layers``.  ``layers`` holds ``(host face, neighbour face, global trace dofs)``.
    """

    patch: int
    dofs: np.ndarray
    K: sp.csr_matrix
    f: np.ndarray
    n_own: int
    layers: list[tuple[FaceId, FaceId, np.ndarray]]


@dataclass(eq=False)
class DGSystem:
    """Assembled dG system ``K u = f`` with its patch-local contributions."""

    K: sp.csr_matrix
    f: np.ndarray
    eta: float
    q: int
    dofmap: DofMap
    blocks: list[PatchBlock]
    domain: MultiPatchDomain
    h: np.ndarray  # mesh size per patch

    @property
    def ndofs(self) -> int:
        return self.dofmap.ndofs


def _face_h(domain: MultiPatchDomain, hs: np.ndarray, a: int, b: int) -> float:
    return float(max(hs[a], hs[b]))


def _assemble_patch(
    domain: MultiPatchDomain,
    i: int,
    problem: ManufacturedProblem,
    rule: QuadratureRule,
    eta: float,
    dofmap: DofMap,
    hs: np.ndarray,
) -> PatchBlock:
    patch = domain.patches[i]
    rho = patch.rho
    off = dofmap.offsets[i]
    n_own = patch.analysis.size
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    fvec = np.zeros(n_own)

    # volume
    idx, B, G, X, W = _patch_volume_data(patch, rule)
    Ke = rho * np.einsum("eqcl,eqcm,eq->elm", G, G, W)
    fx = problem.f(i, X.reshape(-1, 2), rho).reshape(W.shape)
    fe = np.einsum("eql,eq->el", B, fx * W)
    L = idx.shape[1]
    rows.append(np.repeat(idx, L, axis=1).ravel() + off)
    cols.append(np.tile(idx, (1, L)).ravel() + off)
    vals.append(Ke.ravel())
    np.add.at(fvec, idx.ravel(), fe.ravel())

    # weak Dirichlet faces
    for face in domain.dirichlet:
        if face.patch != i:
            continue
        kv = patch.analysis.kvs[face.tangent_direction]
        t, w = rule.on_intervals(kv.breaks)
        fp = _face_points(patch, face, t.ravel(), w.ravel())
        sigma = eta * rho / hs[i]
        dn = np.einsum("mcl,mc->ml", fp.G, fp.normal)
        Kf = (
            -rho * np.einsum("ml,mk,m->mkl", dn, fp.B, fp.ds)
            - rho * np.einsum("mk,ml,m->mkl", dn, fp.B, fp.ds)
            + sigma * np.einsum("mk,ml,m->mkl", fp.B, fp.B, fp.ds)
        )
        uD = problem.u(i, fp.X)
        ff = np.einsum("mk,m->mk", -rho * dn + sigma * fp.B, uD * fp.ds)
        Lf = fp.idx.shape[1]
        rows.append(np.repeat(fp.idx, Lf, axis=1).ravel() + off)
        cols.append(np.tile(fp.idx, (1, Lf)).ravel() + off)
        vals.append(Kf.ravel())
        np.add.at(fvec, fp.idx.ravel(), ff.ravel())

    # interface faces (host side i)
    layers: list[tuple[FaceId, FaceId, np.ndarray]] = []
    for k, rec in enumerate(domain.interfaces):
        for host in rec.faces():
            if host.patch != i:
                continue
            nb = rec.other(host)
            j = nb.patch
            nbpatch = domain.patches[j]
            t, w, t_o, _ = interface_face_quadrature(domain, k, host, rule)
            fp = _face_points(patch, host, t, w)
            nidx, nval = _trace_values(nbpatch, nb, t_o)
            sigma = eta * 0.5 * (rho + nbpatch.rho) / _face_h(domain, hs, i, j)
            dn = np.einsum("mcl,mc->ml", fp.G, fp.normal)
            Jv = np.concatenate([fp.B, -nval], axis=1)
            Gv = np.concatenate([rho * dn, np.zeros_like(nval)], axis=1)
            Kf = (
                -0.5 * np.einsum("ml,mk,m->mkl", Gv, Jv, fp.ds)
                - 0.5 * np.einsum("mk,ml,m->mkl", Gv, Jv, fp.ds)
                + 0.5 * sigma * np.einsum("mk,ml,m->mkl", Jv, Jv, fp.ds)
            )
            gidx = np.concatenate([fp.idx + off, nidx + dofmap.offsets[j]], axis=1)
            Lf = gidx.shape[1]
            rows.append(np.repeat(gidx, Lf, axis=1).ravel())
            cols.append(np.tile(gidx, (1, Lf)).ravel())
            vals.append(Kf.ravel())
            trace = face_dofs(nbpatch.analysis, nb.side) + dofmap.offsets[j]
            layers.append((host, nb, trace))

    own = np.arange(n_own, dtype=np.int64) + off
    dofs = np.concatenate([own] + [lay[2] for lay in layers])
    if np.unique(dofs).size != dofs.size:
        raise ValueError(f"patch {i} sees a neighbour dof through two faces; unsupported topology")
    rows_g = np.concatenate(rows)
    cols_g = np.concatenate(cols)
    # map global -> block-local numbering
    order = np.argsort(dofs)
    sorted_dofs = dofs[order]
    rl = order[np.searchsorted(sorted_dofs, rows_g)]
    cl = order[np.searchsorted(sorted_dofs, cols_g)]
    Kloc = sp.coo_matrix((np.concatenate(vals), (rl, cl)), shape=(dofs.size, dofs.size)).tocsr()
    Kloc.sum_duplicates()
    Kloc.sort_indices()
    floc = np.zeros(dofs.size)
    floc[:n_own] = fvec
    return PatchBlock(i, dofs, Kloc, floc, n_own, layers)


def assemble(
    domain: MultiPatchDomain,
    problem: ManufacturedProblem,
    q: int | None = None,
    eta: float | None = None,
) -> DGSystem:
    """Assemble the symmetric dG stiffness matrix and load vector.

    Parameters
    ----------
    domain:
        Multipatch domain with analysis bases of common degree ``p``.
    problem:
        Exact solution per patch (used for ``f`` and the Dirichlet data).
    q:
        Gauss points per element and direction (default ``p + 1``).
    eta:
        Penalty parameter (default ``4 (p + 1)^2``).
    """
    p = domain.degree
    q = p + 1 if q is None else int(q)
    if q < p + 1:
        raise ValueError(f"quadrature order q={q} must be at least p+1={p + 1}")
    eta = default_eta(p) if eta is None else float(eta)
    if not eta > 0:
        raise ValueError("eta must be positive")
    if len(problem.solutions) != domain.num_patches:
        raise ValueError("problem must provide one exact solution per patch")
    rule = QuadratureRule(q)
    dofmap = DofMap.from_domain(domain)
    hs = np.array([pt.mesh_size for pt in domain.patches])
    blocks = [_assemble_patch(domain, i, problem, rule, eta, dofmap, hs) for i in range(domain.num_patches)]
    n = dofmap.ndofs
    rows, cols, vals = [], [], []
    f = np.zeros(n)
    for blk in blocks:
        c = blk.K.tocoo()
        rows.append(blk.dofs[c.row])
        cols.append(blk.dofs[c.col])
        vals.append(c.data)
        f[blk.dofs] += blk.f
    K = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    K.sum_duplicates()
    K.sort_indices()
    return DGSystem(K, f, eta, q, dofmap, blocks, domain, hs)


def solve_direct(sys_: DGSystem, refine_steps: int = 2) -> np.ndarray:
    """Solve ``K u = f`` by sparse symmetric factorization (with iterative refinement).

    Raises
    ------
    NotSPDError
        If ``K`` is not positive definite (penalty too small).
    """
    fac = cholesky(sys_.K)
    u = fac.solve(sys_.f)
    fn = np.linalg.norm(sys_.f)
    for _ in range(refine_steps):
        r = sys_.f - sys_.K @ u
        if np.linalg.norm(r) <= 1e-14 * fn:
            break
        u = u + fac.solve(r)
    return u


def residual_check(sys_: DGSystem, u: np.ndarray, probes: np.ndarray | None = None) -> float:
    """Max over probe rows of ``|(K u - f)_j| / (||K_j||_1 ||u||_inf + |f_j|)``."""
    r = sys_.K @ u - sys_.f
    scale = abs(sys_.K).sum(axis=1).A1 * max(np.abs(u).max(), 1e-300) + np.abs(sys_.f)
    scale = np.where(scale > 0, scale, 1.0)
    rel = np.abs(r) / scale
    if probes is not None:
        rel = rel[np.asarray(probes)]
    return float(rel.max()) if rel.size else 0.0


# ---------------------------------------------------------------------------
# error evaluation


def _eval_uh_face(patch: PatchDomain, face: FaceId, t: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    idx, vals = _trace_values(patch, face, t)
    return np.einsum("ml,ml->m", vals, coeffs[idx])


def dg_error(
    domain: MultiPatchDomain,
    sys_: DGSystem,
    u_h: np.ndarray,
    problem: ManufacturedProblem,
    q: int | None = None,
) -> tuple[float, dict[str, float]]:
    """dG-norm error ``||u - u_h||_dG`` and its squared contributions.

    Terms: ``volume`` (energy), ``dirichlet`` (penalty on the outer boundary),
    ``matching`` (jumps on matching faces, both sides counted), ``one_sided``
    (one-sided traces on gap/overlap faces).  ``paired_jump`` reports the
    alternative jump measure on gap/overlap faces; it is not part of the total.
    """
    if u_h.shape != (sys_.ndofs,):
        raise ValueError("coefficient vector does not match the system")
    p = domain.degree
    rule = QuadratureRule(max(p + 2, sys_.q) if q is None else q)
    hs = sys_.h
    terms = {"volume": 0.0, "dirichlet": 0.0, "matching": 0.0, "one_sided": 0.0, "paired_jump": 0.0}
    coeffs = [u_h[sys_.dofmap.patch_slice(i)] for i in range(domain.num_patches)]
    for i, patch in enumerate(domain.patches):
        idx, B, G, X, W = _patch_volume_data(patch, rule)
        c = coeffs[i][idx]
        gh = np.einsum("eqcl,el->eqc", G, c)
        ge = problem.grad(i, X.reshape(-1, 2)).reshape(gh.shape) - gh
        terms["volume"] += patch.rho * float(np.sum(np.sum(ge**2, axis=-1) * W))
    for face in domain.dirichlet:
        patch = domain.patches[face.patch]
        kv = patch.analysis.kvs[face.tangent_direction]
        t, w = rule.on_intervals(kv.breaks)
        fp = _face_points(patch, face, t.ravel(), w.ravel())
        e = problem.u(face.patch, fp.X) - np.einsum("ml,ml->m", fp.B, coeffs[face.patch][fp.idx])
        terms["dirichlet"] += patch.rho / hs[face.patch] * float(np.sum(e**2 * fp.ds))
    for k, rec in enumerate(domain.interfaces):
        for host in rec.faces():
            nb = rec.other(host)
            i, j = host.patch, nb.patch
            pi, pj = domain.patches[i], domain.patches[j]
            t, w, t_o, y = interface_face_quadrature(domain, k, host, rule)
            fp = _face_points(pi, host, t, w)
            ei = problem.u(i, fp.X) - np.einsum("ml,ml->m", fp.B, coeffs[i][fp.idx])
            ej = problem.u(j, y) - _eval_uh_face(pj, nb, t_o, coeffs[j])
            weight = 0.5 * (pi.rho + pj.rho) / max(hs[i], hs[j])
            jump = weight * float(np.sum((ei - ej) ** 2 * fp.ds))
            if rec.kind == "matching":
                terms["matching"] += jump
            else:
                terms["one_sided"] += weight * float(np.sum(ei**2 * fp.ds))
                terms["paired_jump"] += jump
    total = terms["volume"] + terms["dirichlet"] + terms["matching"] + terms["one_sided"]
    return float(np.sqrt(total)), terms


def interpolate(domain: MultiPatchDomain, problem: ManufacturedProblem) -> np.ndarray:
    """Patchwise interpolation of the exact solution at Greville points."""
    out = []
    for i, patch in enumerate(domain.patches):
        basis = patch.analysis
        g0, g1 = (greville(kv) for kv in basis.kvs)
        G0, G1 = np.meshgrid(g0, g1, indexing="xy")
        pts = np.column_stack([G0.ravel(), G1.ravel()])
        X = patch.analysis_map.spline(pts)
        vals = problem.u(i, X)
        idx, B = basis.evaluate(pts, 0)
        M = sp.csr_matrix(
            (B[:, 0].ravel(), (np.repeat(np.arange(pts.shape[0]), idx.shape[1]), idx.ravel())),
            shape=(pts.shape[0], basis.size),
        )
        out.append(spla.spsolve(M.tocsc(), vals))
    return np.concatenate(out)
