"""Dual-primal tearing and interconnecting solver for the multipatch dG system.

Every patch ``i`` works in an *extended* space: its own coefficients plus a
layer of copies of the neighbour trace coefficients that its local form
``a_i`` reads.  The local extended stiffness matrices ``K_e^{(i)}`` are exactly
the patch blocks produced by :func:`patchcrime.assembly.assemble`, so

``sum_i R_i^T K_e^{(i)} R_i = K``  with ``R_i u = u[block.dofs]``.

Continuity between an original coefficient and each of its copies is imposed by
a jump matrix ``B`` (one row per copy, ``+1`` at the original and ``-1`` at the
copy).  Primal variables -- each corner coefficient of a patch together with its
copies and, optionally, a weighted average of each coupling face trace together
with the same average of its copy -- are kept continuous in the subassembled
space ``W~``.  ``K~^{-1}`` on ``W~`` is applied with patch-local constrained
saddle-point solves and an energy-minimizing coarse basis.  The dual problem
``F lambda = d`` with ``F = B K~^{-1} B^T`` is solved by PCG with the scaled
Dirichlet preconditioner ``B_D S_e B_D^T``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence, TypeVar

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import DGSystem, PatchBlock
from .geometry import face_dofs
from .linalg import CGStats, Factorization, NotSPDError, cholesky, pcg
from .splines import KnotVector, TensorProductBasis

__all__ = [
    "PRIMAL_CHOICES",
    "SCALINGS",
    "PrimalRankError",
    "ExtendedSpace",
    "JumpOperator",
    "PrimalSet",
    "IetiOperators",
    "ConditionRow",
    "worker_count",
    "build_extended",
    "build_jump",
    "build_primal",
    "build_ieti",
    "solve_ieti",
    "ieti_solve",
    "condition_study",
    "fit_log_squared",
]

PRIMAL_CHOICES = ("v", "vf")
SCALINGS = ("coefficient", "stiffness")

T = TypeVar("T")
S = TypeVar("S")


class PrimalRankError(ValueError):
    """The primal constraints of a patch are linearly dependent."""


def worker_count() -> int:
    """Number of worker threads for patch loops; ``PATCHCRIME_THREADS`` caps it."""
    n = os.cpu_count() or 1
    env = os.environ.get("PATCHCRIME_THREADS")
    if env:
        try:
            cap = int(env)
        except ValueError as exc:
            raise ValueError(f"PATCHCRIME_THREADS must be an integer, got {env!r}") from exc
        if cap < 1:
            raise ValueError("PATCHCRIME_THREADS must be at least 1")
        n = min(n, cap)
    return n


def _pmap(fn: Callable[[T], S], items: Sequence[T]) -> list[S]:
    """Ordered map over patches, threaded when more than one worker is allowed."""
    nw = min(worker_count(), len(items))
    if nw <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=nw) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# extended space


@dataclass(eq=False)
class ExtendedSpace:
    """Patch-local extended spaces and the original/copy correspondence.

    Attributes
    ----------
    blocks:
        Patch blocks of the assembled system; ``blocks[i].dofs[l]`` is the
        original global dof represented by local extended dof ``l``.
    bases:
        Analysis basis of each patch.
    coupling:
        Per patch, local indices of the interface dofs ``B_e``: own dofs on
        coupling faces followed by all layer dofs.
    copies:
        Array ``(c, 3)`` of ``(patch, local index, global dof)`` for every layer
        copy, ordered by patch and layer.
    offsets:
        Start of each patch's own dofs in the global numbering.
    """

    blocks: list[PatchBlock]
    bases: list[TensorProductBasis]
    coupling: list[np.ndarray]
    copies: np.ndarray
    offsets: np.ndarray

    @property
    def num_patches(self) -> int:
        return len(self.blocks)

    @property
    def sizes(self) -> list[int]:
        return [b.dofs.size for b in self.blocks]

    @property
    def ndofs(self) -> int:
        """Dimension of the original space."""
        return int(self.offsets[-1])

    def owner(self, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Owning patch and own local index of global dofs ``g``."""
        g = np.asarray(g, dtype=np.int64)
        p = np.searchsorted(self.offsets, g, side="right") - 1
        return p, g - self.offsets[p]

    def copies_of(self) -> dict[int, list[tuple[int, int]]]:
        """Map global dof -> list of ``(patch, local index)`` of its copies."""
        out: dict[int, list[tuple[int, int]]] = {}
        for pi, loc, g in self.copies:
            out.setdefault(int(g), []).append((int(pi), int(loc)))
        return out

    def extend(self, u: np.ndarray) -> list[np.ndarray]:
        """Extended representation ``(u[dofs_i])_i`` of a global vector."""
        return [np.asarray(u)[b.dofs] for b in self.blocks]

    def restrict(self, w: Sequence[np.ndarray]) -> np.ndarray:
        """Global vector from the own parts of local extended vectors."""
        return np.concatenate([wi[: b.n_own] for wi, b in zip(w, self.blocks)])

    def assemble(self, mats: Sequence[sp.spmatrix] | None = None) -> sp.csr_matrix:
        """``sum_i R_i^T M_i R_i`` (defaults to the patch blocks ``K_e^{(i)}``)."""
        mats = [b.K for b in self.blocks] if mats is None else mats
        n = self.ndofs
        rows, cols, vals = [], [], []
        for b, M in zip(self.blocks, mats):
            c = sp.coo_matrix(M)
            rows.append(b.dofs[c.row])
            cols.append(b.dofs[c.col])
            vals.append(c.data)
        A = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        ).tocsr()
        A.sum_duplicates()
        return A


def build_extended(sys_: DGSystem) -> tuple[ExtendedSpace, list[sp.csr_matrix], list[np.ndarray]]:
    """Extended spaces, local matrices ``K_e^{(i)}`` and loads ``f_e^{(i)}``.

    Raises
    ------
    ValueError
        If the system carries no patch-local contribution records.
    """
    if not sys_.blocks or len(sys_.blocks) != sys_.domain.num_patches:
        raise ValueError("the system has no patch-local contribution records")
    bases = [p.analysis for p in sys_.domain.patches]
    coupling = []
    copies = []
    for b in sys_.blocks:
        own = [face_dofs(bases[b.patch], host.side) for host, _, _ in b.layers]
        own_idx = np.unique(np.concatenate(own)) if own else np.empty(0, dtype=np.int64)
        layer_idx = np.arange(b.n_own, b.dofs.size, dtype=np.int64)
        coupling.append(np.concatenate([own_idx, layer_idx]).astype(np.int64))
        if layer_idx.size:
            copies.append(np.column_stack([np.full(layer_idx.size, b.patch), layer_idx, b.dofs[layer_idx]]))
    cp = np.concatenate(copies).astype(np.int64) if copies else np.empty((0, 3), dtype=np.int64)
    space = ExtendedSpace(
        list(sys_.blocks), bases, coupling, cp, np.asarray(sys_.dofmap.offsets, dtype=np.int64)
    )
    return space, [b.K for b in sys_.blocks], [b.f.copy() for b in sys_.blocks]


# ---------------------------------------------------------------------------
# primal constraints


@dataclass(eq=False)
class PrimalSet:
    """Primal functionals instantiated on the extended spaces.

    ``C[i]`` has one row per primal functional seen by patch ``i``; ``R[i][r]``
    is the global primal index of row ``r``.  ``vertex_dofs`` are the original
    global dofs whose value (with all copies) is a primal variable.
    """

    choice: str
    n_primal: int
    C: list[sp.csr_matrix]
    R: list[np.ndarray]
    vertex_dofs: np.ndarray
    labels: list[str]

    def vertex_locals(self, space: ExtendedSpace, i: int) -> np.ndarray:
        """Local extended indices of patch ``i`` that carry a vertex primal (own or copy)."""
        return np.flatnonzero(np.isin(space.blocks[i].dofs, self.vertex_dofs))


def _corner_dofs(shape: tuple[int, ...]) -> np.ndarray:
    n0, n1 = shape
    return np.array([0, n0 - 1, n0 * (n1 - 1), n0 * n1 - 1], dtype=np.int64)


def _face_weights(kv: KnotVector) -> np.ndarray:
    """Normalized integrals ``int B_k dt`` of the interior face basis functions."""
    p = kv.degree
    t = kv.knots
    w = (t[p + 1 :] - t[: -p - 1]) / (p + 1)
    w = w[1:-1]
    return w / w.sum()


def build_primal(space: ExtendedSpace, choice: str = "v", check: bool = True) -> PrimalSet:
    """Vertex (``"v"``) or vertex plus face-average (``"vf"``) primal constraints.

    Every corner coefficient of a patch that lies on a coupling face defines one
    primal variable shared by that coefficient and all of its layer copies.
    With ``"vf"``, the weighted average of the interior trace coefficients of
    each coupling face defines one more, shared with the same average of the
    copied trace in the neighbour.

    Raises
    ------
    PrimalRankError
        If a patch's constraints are linearly dependent.
    NotSPDError
        If ``check`` and a patch block with its vertex coefficients removed is
        not positive definite.
    """
    choice = choice.lower()
    if choice not in PRIMAL_CHOICES:
        raise ValueError(f"unknown primal choice {choice!r}; expected one of {PRIMAL_CHOICES}")
    blocks = space.blocks
    copy_of = space.copies_of()
    rows: list[list[tuple[int, np.ndarray, np.ndarray]]] = [[] for _ in blocks]
    labels: list[str] = []
    vertex: list[int] = []
    npr = 0
    for b in blocks:
        for loc in _corner_dofs(space.bases[b.patch].shape):
            g = int(space.offsets[b.patch] + loc)
            if g not in copy_of:
                continue
            vertex.append(g)
            labels.append(f"vertex(patch={b.patch}, dof={int(loc)})")
            rows[b.patch].append((npr, np.array([loc]), np.array([1.0])))
            for pi, l in copy_of[g]:
                rows[pi].append((npr, np.array([l]), np.array([1.0])))
            npr += 1
    if choice == "vf":
        for b in blocks:
            basis = space.bases[b.patch]
            for host, _, _ in b.layers:
                fd = face_dofs(basis, host.side)[1:-1]
                if fd.size == 0:
                    continue
                w = _face_weights(basis.kvs[host.tangent_direction])
                labels.append(f"face-average(patch={b.patch}, side={host.side})")
                rows[b.patch].append((npr, fd, w))
                holders: dict[int, list[int]] = {}
                for g in space.offsets[b.patch] + fd:
                    for pi, l in copy_of.get(int(g), []):
                        holders.setdefault(pi, []).append(l)
                for pi, locs in holders.items():
                    if len(locs) != fd.size:
                        raise PrimalRankError(f"face average of patch {b.patch} is copied only partially")
                    rows[pi].append((npr, np.asarray(locs, dtype=np.int64), w))
                npr += 1

    C: list[sp.csr_matrix] = []
    Rmap: list[np.ndarray] = []
    for b, rr in zip(blocks, rows):
        n = b.dofs.size
        if rr:
            ri = np.concatenate([np.full(idx.size, r) for r, (_, idx, _) in enumerate(rr)])
            ci = np.concatenate([idx for _, idx, _ in rr])
            vi = np.concatenate([w for _, _, w in rr])
            Ci = sp.csr_matrix((vi, (ri, ci)), shape=(len(rr), n))
        else:
            Ci = sp.csr_matrix((0, n))
        C.append(Ci)
        Rmap.append(np.array([r for r, _, _ in rr], dtype=np.int64))
        if check and rr:
            rank = np.linalg.matrix_rank(Ci.toarray())
            if rank < len(rr):
                names = ", ".join(labels[r] for r, _, _ in rr)
                raise PrimalRankError(f"patch {b.patch}: {len(rr)} primal constraints have rank {rank} ({names})")
    primal = PrimalSet(choice, npr, C, Rmap, np.array(sorted(vertex), dtype=np.int64), labels)
    if check:
        for i, b in enumerate(blocks):
            keep = np.setdiff1d(np.arange(b.dofs.size), primal.vertex_locals(space, i))
            if keep.size:
                try:
                    cholesky(b.K[keep][:, keep])
                except NotSPDError as exc:
                    raise NotSPDError(
                        f"patch {b.patch}: local block without its primal vertices is not positive definite"
                    ) from exc
    return primal


# ---------------------------------------------------------------------------
# jump operator


@dataclass(eq=False)
class JumpOperator:
    """Signed incidence ``B`` between originals and copies, and its scaled form ``B_D``.

    ``B[i]`` and ``BD[i]`` are the column blocks of patch ``i``
    (``m x n_i``).  ``pairs`` lists, per row, the original global dof and the
    ``(patch, local)`` positions of its ``+1`` (original) and ``-1`` (copy)
    entries.  ``delta[i]`` holds the scaling weight ``delta^dagger`` of every
    local dof of patch ``i`` (1 where the dof is not coupled).
    """

    B: list[sp.csr_matrix]
    BD: list[sp.csr_matrix]
    pairs: np.ndarray  # (m, 5): global dof, plus patch, plus local, minus patch, minus local
    delta: list[np.ndarray]
    scaling: str

    @property
    def nrows(self) -> int:
        return int(self.pairs.shape[0])

    def matrix(self, scaled: bool = False) -> sp.csr_matrix:
        """The global ``m x sum_i n_i`` matrix."""
        blocks = self.BD if scaled else self.B
        return sp.hstack(blocks, format="csr") if blocks else sp.csr_matrix((0, 0))

    def apply(self, w: Sequence[np.ndarray], scaled: bool = False) -> np.ndarray:
        blocks = self.BD if scaled else self.B
        out = np.zeros(self.nrows)
        for Bi, wi in zip(blocks, w):
            out += Bi @ wi
        return out

    def apply_T(self, lam: np.ndarray, scaled: bool = False) -> list[np.ndarray]:
        blocks = self.BD if scaled else self.B
        return [Bi.T @ lam for Bi in blocks]


def build_jump(
    space: ExtendedSpace,
    primal: PrimalSet | None = None,
    scaling: str = "coefficient",
    rho: Sequence[float] | None = None,
) -> JumpOperator:
    """Jump operator over all non-vertex-primal original/copy pairs.

    Parameters
    ----------
    scaling:
        ``"coefficient"`` weights each holder of a coupled dof by the diffusion
        coefficient of its patch; ``"stiffness"`` by the diagonal entry of its
        extended matrix.  ``delta^dagger_k = eta_k / sum_m eta_m`` over the
        original and all of its copies, and the ``B_D`` entry of one side of a
        row is the ``B`` entry scaled by the opposite side's weight.
    rho:
        Per-patch coefficients (required for coefficient scaling; defaults to 1).
    """
    scaling = scaling.lower()
    if scaling not in SCALINGS:
        raise ValueError(f"unknown scaling {scaling!r}; expected one of {SCALINGS}")
    npatch = space.num_patches
    vset = set(primal.vertex_dofs.tolist()) if primal is not None else set()
    rho = np.ones(npatch) if rho is None else np.asarray(rho, dtype=float)
    diag = [b.K.diagonal() for b in space.blocks]

    def weight(pi: int, loc: int) -> float:
        return float(rho[pi]) if scaling == "coefficient" else float(diag[pi][loc])

    copy_of = space.copies_of()
    pairs = []
    for pi, loc, g in space.copies:
        if int(g) in vset:
            continue
        op, ol = space.owner(np.array([g]))
        pairs.append((int(g), int(op[0]), int(ol[0]), int(pi), int(loc)))
    P = np.array(pairs, dtype=np.int64).reshape(-1, 5)
    m = P.shape[0]
    delta = [np.ones(n) for n in space.sizes]
    for g, members in copy_of.items():
        op, ol = space.owner(np.array([g]))
        holders = [(int(op[0]), int(ol[0]))] + members
        etas = np.array([weight(pi, l) for pi, l in holders])
        if np.any(etas <= 0):
            raise ValueError(f"non-positive scaling weight at global dof {g}")
        for (pi, l), e in zip(holders, etas / etas.sum()):
            delta[pi][l] = e
    B_rows = [[] for _ in range(npatch)]
    B_cols = [[] for _ in range(npatch)]
    B_vals = [[] for _ in range(npatch)]
    D_vals = [[] for _ in range(npatch)]
    for r, (g, pp, pl, mp, ml) in enumerate(P):
        for pi, l, s, opp in ((pp, pl, 1.0, (mp, ml)), (mp, ml, -1.0, (pp, pl))):
            B_rows[pi].append(r)
            B_cols[pi].append(l)
            B_vals[pi].append(s)
            D_vals[pi].append(s * delta[opp[0]][opp[1]])
    Bs, Ds = [], []
    for i, n in enumerate(space.sizes):
        Bs.append(sp.csr_matrix((B_vals[i], (B_rows[i], B_cols[i])), shape=(m, n)))
        Ds.append(sp.csr_matrix((D_vals[i], (B_rows[i], B_cols[i])), shape=(m, n)))
    return JumpOperator(Bs, Ds, P, delta, scaling)


# ---------------------------------------------------------------------------
# operators


@dataclass(eq=False)
class _LocalSolver:
    """Constrained local solves on one patch and its coarse basis."""

    lu: spla.SuperLU | None
    n: int
    nc: int
    psi: np.ndarray  # (n, nc) energy-minimizing coarse basis functions
    K: sp.csr_matrix

    @classmethod
    def build(cls, K: sp.csr_matrix, C: sp.csr_matrix) -> "_LocalSolver":
        n, nc = K.shape[0], C.shape[0]
        A = sp.bmat([[K, C.T], [C, None]], format="csc") if nc else sp.csc_matrix(K)
        try:
            lu = spla.splu(A, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise NotSPDError(f"constrained local problem is singular: {exc}") from exc
        psi = np.zeros((n, nc))
        if nc:
            rhs = np.zeros((n + nc, nc))
            rhs[n:, :] = np.eye(nc)
            psi = lu.solve(rhs)[:n]
        return cls(lu, n, nc, psi, K)

    def solve(self, g: np.ndarray) -> np.ndarray:
        """Minimize ``1/2 w^T K w - g^T w`` subject to ``C w = 0``."""
        if self.nc:
            return self.lu.solve(np.concatenate([g, np.zeros(self.nc)]))[: self.n]
        return self.lu.solve(g)

    def coarse_matrix(self) -> np.ndarray:
        return self.psi.T @ (self.K @ self.psi)


@dataclass(eq=False)
class _DirichletData:
    """Local Schur complement ``S_e = K_BB - K_BI K_II^{-1} K_IB`` (applied, not formed)."""

    bdofs: np.ndarray
    K_BB: sp.csr_matrix
    K_BI: sp.csr_matrix
    K_IB: sp.csr_matrix
    fac: Factorization | None

    @classmethod
    def build(cls, K: sp.csr_matrix, bdofs: np.ndarray) -> "_DirichletData":
        idofs = np.setdiff1d(np.arange(K.shape[0]), bdofs)
        K_BB = K[bdofs][:, bdofs]
        K_BI = K[bdofs][:, idofs]
        K_IB = K[idofs][:, bdofs]
        fac = cholesky(K[idofs][:, idofs]) if idofs.size else None
        return cls(bdofs, K_BB.tocsr(), K_BI.tocsr(), K_IB.tocsr(), fac)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """``S_e`` applied to the ``B_e`` part of a local vector, embedded back."""
        xb = x[self.bdofs]
        yb = self.K_BB @ xb
        if self.fac is not None:
            yb -= self.K_BI @ self.fac.solve(self.K_IB @ xb)
        y = np.zeros_like(x)
        y[self.bdofs] = yb
        return y

    def schur_matrix(self) -> np.ndarray:
        """Dense ``S_e`` (for tests on small systems)."""
        S = self.K_BB.toarray()
        if self.fac is not None:
            S -= self.K_BI @ self.fac.solve(self.K_IB.toarray())
        return S


@dataclass(eq=False)
class IetiOperators:
    """All operators of the dual-primal solver for one assembled system."""

    space: ExtendedSpace
    K: list[sp.csr_matrix]
    f: list[np.ndarray]
    primal: PrimalSet
    jump: JumpOperator
    local: list[_LocalSolver]
    dirichlet: list[_DirichletData]
    coarse: Factorization | None
    coarse_matrix: np.ndarray = field(repr=False)
    rho: list[float] = field(default_factory=list)

    @property
    def n_dual(self) -> int:
        return self.jump.nrows

    def with_scaling(self, scaling: str) -> "IetiOperators":
        """Same operators with the preconditioner scaling replaced."""
        jump = build_jump(self.space, self.primal, scaling, self.rho)
        return replace(self, jump=jump)

    # K~^{-1} -----------------------------------------------------------------
    def apply_Ktilde_inv(self, g: Sequence[np.ndarray]) -> list[np.ndarray]:
        """Minimizer over the primal-continuous space ``W~`` of ``1/2 w^T K_e w - g^T w``."""
        z = _pmap(lambda i: self.local[i].solve(g[i]), range(self.space.num_patches))
        if self.coarse is None:
            return z
        rhs = np.zeros(self.primal.n_primal)
        for i, loc in enumerate(self.local):
            if loc.nc:
                np.add.at(rhs, self.primal.R[i], loc.psi.T @ g[i])
        uP = self.coarse.solve(rhs)
        return [zi + loc.psi @ uP[self.primal.R[i]] if loc.nc else zi for i, (zi, loc) in enumerate(zip(z, self.local))]

    # dual operators ----------------------------------------------------------
    def apply_F(self, lam: np.ndarray) -> np.ndarray:
        """``F lambda = B K~^{-1} B^T lambda``."""
        return self.jump.apply(self.apply_Ktilde_inv(self.jump.apply_T(lam)))

    def rhs(self, f: Sequence[np.ndarray] | None = None) -> np.ndarray:
        """``d = B K~^{-1} f_e``."""
        return self.jump.apply(self.apply_Ktilde_inv(self.f if f is None else f))

    def apply_preconditioner(self, r: np.ndarray) -> np.ndarray:
        """Scaled Dirichlet preconditioner ``B_D S_e B_D^T r``."""
        x = self.jump.apply_T(r, scaled=True)
        y = _pmap(lambda i: self.dirichlet[i].apply(x[i]), range(self.space.num_patches))
        return self.jump.apply(y, scaled=True)

    def recover(self, lam: np.ndarray, f: Sequence[np.ndarray] | None = None) -> np.ndarray:
        """Global solution ``u`` from the multipliers."""
        f = self.f if f is None else f
        bt = self.jump.apply_T(lam)
        w = self.apply_Ktilde_inv([fi - bi for fi, bi in zip(f, bt)])
        return self.space.restrict(w)


def build_ieti(sys_: DGSystem, primal: str = "v", scaling: str = "coefficient") -> IetiOperators:
    """Build extended spaces, primal constraints, jump operators and local factorizations."""
    space, K, f = build_extended(sys_)
    pset = build_primal(space, primal)
    rho = [p.rho for p in sys_.domain.patches]
    jump = build_jump(space, pset, scaling, rho)
    local = _pmap(lambda i: _LocalSolver.build(K[i], pset.C[i]), range(space.num_patches))
    dirichlet = _pmap(lambda i: _DirichletData.build(K[i], space.coupling[i]), range(space.num_patches))
    n_p = pset.n_primal
    SP = np.zeros((n_p, n_p))
    for i, loc in enumerate(local):
        if loc.nc:
            Ri = pset.R[i]
            SP[np.ix_(Ri, Ri)] += loc.coarse_matrix()
    SP = 0.5 * (SP + SP.T)
    coarse = cholesky(sp.csr_matrix(SP)) if n_p else None
    return IetiOperators(space, K, f, pset, jump, local, dirichlet, coarse, SP, rho)


def solve_ieti(
    ops: IetiOperators,
    f_e: Sequence[np.ndarray] | None = None,
    scaling: str | None = None,
    rtol: float = 1e-10,
    maxit: int | None = None,
) -> tuple[np.ndarray, CGStats]:
    """Solve the dual problem by preconditioned CG and recover ``u``.

    Without multipliers (a single patch) the solution is one local solve and
    the returned statistics report zero iterations and ``kappa = 1``.
    """
    if scaling is not None and scaling.lower() != ops.jump.scaling:
        ops = ops.with_scaling(scaling)
    f = ops.f if f_e is None else list(f_e)
    if ops.n_dual == 0:
        return ops.recover(np.zeros(0), f), CGStats()
    d = ops.rhs(f)
    lam, stats = pcg(ops.apply_F, ops.apply_preconditioner, d, rtol=rtol, maxit=maxit)
    return ops.recover(lam, f), stats


def ieti_solve(
    sys_: DGSystem, primal: str = "v", scaling: str = "coefficient", rtol: float = 1e-10
) -> tuple[np.ndarray, CGStats]:
    """Convenience wrapper: :func:`build_ieti` followed by :func:`solve_ieti`."""
    return solve_ieti(build_ieti(sys_, primal, scaling), rtol=rtol)


# ---------------------------------------------------------------------------
# condition-number studies


@dataclass(frozen=True)
class ConditionRow:
    """One solver run of a condition-number study."""

    level: int
    dofs: int
    h_ratio: float
    primal: str
    scaling: str
    kappa: float
    iterations: int


def condition_study(
    systems: Sequence[tuple[float, DGSystem]],
    primal_choices: Sequence[str] = ("v",),
    scalings: Sequence[str] = ("coefficient",),
    rtol: float = 1e-10,
) -> list[ConditionRow]:
    """Run the solver on ``(H/h, system)`` pairs for every primal choice and scaling.

    Rows are sorted by primal choice, scaling and ``H/h``.
    """
    rows = []
    for level, (ratio, s) in enumerate(systems):
        for pc in primal_choices:
            ops = build_ieti(s, pc, scalings[0])
            for sc in scalings:
                _, st = solve_ieti(ops, scaling=sc, rtol=rtol)
                rows.append(ConditionRow(level, s.ndofs, float(ratio), pc, sc, st.kappa, st.iterations))
    rows.sort(key=lambda r: (r.primal, r.scaling, r.h_ratio))
    return rows


def fit_log_squared(h_ratio: Sequence[float], kappa: Sequence[float]) -> tuple[float, float]:
    """Least-squares fit ``kappa ~ C (1 + log(H/h))^2``.

    Returns ``(C, relative residual)`` where the residual is
    ``||kappa - C x||_2 / ||kappa||_2``.
    """
    x = (1.0 + np.log(np.asarray(h_ratio, dtype=float))) ** 2
    k = np.asarray(kappa, dtype=float)
    if x.size == 0:
        raise ValueError("empty study")
    C = float(x @ k / (x @ x))
    return C, float(np.linalg.norm(k - C * x) / np.linalg.norm(k))
