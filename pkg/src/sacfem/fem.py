"""P1 finite element space on a tetrahedral mesh with homogeneous Dirichlet
boundary conditions.

Provides exact mass/stiffness assembly, the L2 projection, the discrete
(weak) Laplacian, the elliptic (Ritz) projection, L^q norms, and discrete
fractional norms computed through a dense generalized eigendecomposition.
Boundary conditions are imposed by eliminating boundary vertices, so all
operators act on interior degrees of freedom only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import quadrature
from .mesh import Mesh, NonNestedError, prolongation_matrix

__all__ = [
    "FemSpace",
    "StateVector",
    "SolverError",
    "DenseEigLimitError",
    "assemble",
    "l2_project",
    "apply_discrete_laplacian",
    "ritz_project",
    "lq_norm",
    "fractional_norm",
    "discrete_semigroup_apply",
    "nodal_interpolant",
    "prolongate_state",
    "values_at_quad",
    "load_vector",
    "error_lq",
    "error_h1_semi",
    "export_matrix_coo",
]

CG_RTOL = 1e-10


class SolverError(RuntimeError):
    """Iterative solve failed to reach the residual contract."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


class DenseEigLimitError(RuntimeError):
    """Dense eigendecomposition refused above the configured size cap."""


_space_counter = 0


@dataclass(eq=False)
class FemSpace:
    mesh: Mesh
    quadrature_order: int
    dof_count: int
    interior: np.ndarray          # (dof_count,) vertex index of each dof
    vertex_dof: np.ndarray        # (nv,) dof index or -1 for boundary vertices
    mass: sp.csr_matrix           # interior x interior, SPD
    stiffness: sp.csr_matrix      # interior x interior, SPD
    mass_full: sp.csr_matrix      # all vertices (used for nested projections)
    stiffness_full: sp.csr_matrix
    volumes: np.ndarray           # (nt,)
    grads: np.ndarray             # (nt, 4, 3) gradients of barycentric basis
    qpoints: np.ndarray           # (nt, nq, 3) global quadrature points
    qweights: np.ndarray          # (nt, nq) weights scaled by element volume
    shape: np.ndarray             # (nq, 4) barycentric values at rule points
    dense_eig_limit: int = 3000
    uid: int = field(default=-1)
    _eig: Optional[tuple] = field(default=None, repr=False)

    @property
    def n_vertices(self):
        return self.mesh.n_vertices


@dataclass(eq=False)
class StateVector:
    """Coefficients of an X_h function on the interior nodes of its space."""
    coeffs: np.ndarray
    space: FemSpace

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.dof_count,):
            raise ValueError(
                f"coefficient vector has shape {self.coeffs.shape}, "
                f"expected ({self.space.dof_count},)"
            )

    def check_finite(self):
        if not np.all(np.isfinite(self.coeffs)):
            raise FloatingPointError("non-finite coefficients in state vector")
        return self


def full_values(space: FemSpace, v: Union[StateVector, np.ndarray]) -> np.ndarray:
    """Nodal values over all vertices (zeros on the boundary)."""
    coeffs = v.coeffs if isinstance(v, StateVector) else np.asarray(v, dtype=float)
    out = np.zeros(space.n_vertices)
    out[space.interior] = coeffs
    return out


def assemble(mesh: Mesh, quadrature_order: int = 4, dense_eig_limit: int = 3000) -> FemSpace:
    """Build the P1 space: exact element matrices, interior dof elimination,
    and cached quadrature data for nonlinear integrands."""
    global _space_counter

    verts = mesh.vertices
    tets = mesh.tets
    nt = tets.shape[0]
    nv = verts.shape[0]

    x = verts[tets]                       # (nt, 4, 3)
    d = x[:, 1:] - x[:, :1]               # (nt, 3, 3)
    det = np.linalg.det(d)
    vols = det / 6.0
    if np.any(vols <= 0):
        bad = int(np.argmin(vols))
        raise ValueError(f"degenerate element {bad} (volume {vols[bad]:.3e})")

    # gradients of barycentric coordinates: rows of inv(d)^T for 1..3
    dinv = np.linalg.inv(d)               # (nt, 3, 3)
    grads = np.empty((nt, 4, 3))
    grads[:, 1:, :] = np.transpose(dinv, (0, 2, 1))
    grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)

    # element matrices: mass V/20 * (1 + I), stiffness V * G G^T
    mass_el = (np.ones((4, 4)) + np.eye(4)) / 20.0
    me = vols[:, None, None] * mass_el[None, :, :]
    ae = np.einsum("tid,tjd,t->tij", grads, grads, vols)

    rows = np.repeat(tets, 4, axis=1).ravel()
    cols = np.tile(tets, (1, 4)).ravel()
    mass_full = sp.coo_matrix((me.ravel(), (rows, cols)), shape=(nv, nv)).tocsr()
    stiff_full = sp.coo_matrix((ae.ravel(), (rows, cols)), shape=(nv, nv)).tocsr()

    interior = np.flatnonzero(~mesh.boundary_mask)
    vertex_dof = np.full(nv, -1, dtype=np.int64)
    vertex_dof[interior] = np.arange(interior.size)

    mass = mass_full[interior][:, interior].tocsr()
    stiff = stiff_full[interior][:, interior].tocsr()

    pts, wts = quadrature.rule(quadrature_order)
    qpoints = np.einsum("qa,tad->tqd", pts, x)
    qweights = wts[None, :] * vols[:, None]

    _space_counter += 1
    return FemSpace(
        mesh=mesh,
        quadrature_order=quadrature_order,
        dof_count=interior.size,
        interior=interior,
        vertex_dof=vertex_dof,
        mass=mass,
        stiffness=stiff,
        mass_full=mass_full,
        stiffness_full=stiff_full,
        volumes=vols,
        grads=grads,
        qpoints=qpoints,
        qweights=qweights,
        shape=pts,
        dense_eig_limit=dense_eig_limit,
        uid=_space_counter,
    )


def cg_solve(op, b, rtol=CG_RTOL, x0=None, maxiter=None, precond=None, what="linear system"):
    """Conjugate gradients with a Jacobi preconditioner and a hard residual check."""
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    n = b.shape[0]
    if maxiter is None:
        maxiter = 10 * int(math.isqrt(n)) + 20
    if precond is None:
        precond = sp.diags(1.0 / op.diagonal())
    x, _ = spla.cg(op, b, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter, M=precond)
    res = np.linalg.norm(op @ x - b) / bnorm
    if res > rtol:
        raise SolverError(f"CG failed on {what} after {maxiter} iterations", res)
    return x


def values_at_quad(space: FemSpace, nodal: np.ndarray) -> np.ndarray:
    """Values of the P1 function with given nodal values at all quadrature
    points, shape (nt, nq)."""
    return nodal[space.mesh.tets] @ space.shape.T


def load_vector(space: FemSpace, qvals: np.ndarray) -> np.ndarray:
    """Interior load b_i = integral f(x) phi_i(x) dx from values of f at the
    quadrature points."""
    contrib = (qvals * space.qweights) @ space.shape      # (nt, 4)
    b_full = np.bincount(
        space.mesh.tets.ravel(), weights=contrib.ravel(), minlength=space.n_vertices
    )
    return b_full[space.interior]


def _qvals_of(space, f):
    pts = space.qpoints.reshape(-1, 3)
    vals = np.asarray(f(pts), dtype=float)
    return vals.reshape(space.qpoints.shape[:2])


def _nested_rhs(space: FemSpace, v: StateVector) -> np.ndarray:
    """Exact integral of a fine-space (or same-space) P1 function against the
    coarse basis, via the nodal interpolation operator."""
    fine = v.space
    if fine is space:
        return (space.mass_full @ full_values(space, v))[space.interior]
    try:
        op = prolongation_matrix(space.mesh, fine.mesh)
    except NonNestedError:
        raise NonNestedError(
            "l2_project of a state vector requires its space to be a nested refinement"
        )
    b_full = op.T @ (fine.mass_full @ full_values(fine, v))
    return b_full[space.interior]


def l2_project(space: FemSpace, f: Union[Callable, StateVector]) -> StateVector:
    """L2-orthogonal projection onto the space.

    `f` is either a vectorized callable on (m, 3) point arrays or a
    StateVector on this space or a nested refinement of it.
    """
    if isinstance(f, StateVector):
        b = _nested_rhs(space, f)
    else:
        b = load_vector(space, _qvals_of(space, f))
    c = cg_solve(space.mass, b, what="mass matrix")
    return StateVector(c, space).check_finite()


def apply_discrete_laplacian(space: FemSpace, v: StateVector) -> StateVector:
    """w with M w = -A v, the weak Laplacian of v in the space."""
    b = -(space.stiffness @ v.coeffs)
    w = cg_solve(space.mass, b, what="mass matrix")
    return StateVector(w, space).check_finite()


def ritz_project(space: FemSpace, f, laplacian: Optional[Callable] = None) -> StateVector:
    """Elliptic projection: the Galerkin best approximation in the energy
    inner product.

    For a callable `f` the pointwise Laplacian must be supplied and the
    result solves A c = -b with b_i = integral (laplacian f) phi_i dx.
    For a StateVector on a nested space the energy products are exact.
    """
    if isinstance(f, StateVector):
        fine = f.space
        if fine is space:
            b = space.stiffness @ f.coeffs
        else:
            op = prolongation_matrix(space.mesh, fine.mesh)
            b = (op.T @ (fine.stiffness_full @ full_values(fine, f)))[space.interior]
    else:
        if laplacian is None:
            raise ValueError("ritz_project of a callable needs its laplacian")
        b = -load_vector(space, _qvals_of(space, laplacian))
    c = cg_solve(space.stiffness, b, what="stiffness matrix")
    return StateVector(c, space).check_finite()


def lq_norm(space: FemSpace, v: Union[StateVector, np.ndarray], q) -> float:
    """L^q norm of the P1 function; fixed quadrature for finite q, exact
    nodal max for q = infinity."""
    nodal = full_values(space, v)
    if q == np.inf or q == "inf":
        return float(np.max(np.abs(nodal)))
    q = float(q)
    if q < 1.0:
        raise ValueError(f"q must be >= 1 or inf, got {q}")
    qv = values_at_quad(space, nodal)
    return float(np.sum(space.qweights * np.abs(qv) ** q) ** (1.0 / q))


def _dense_eig(space: FemSpace):
    if space.dof_count > space.dense_eig_limit:
        raise DenseEigLimitError(
            f"dense path refused: {space.dof_count} dofs exceed the cap "
            f"{space.dense_eig_limit} (fractional norms are a verification-only feature)"
        )
    if space._eig is None:
        a = space.stiffness.toarray()
        m = space.mass.toarray()
        lam, vecs = scipy.linalg.eigh(a, m)
        space._eig = (lam, vecs)  # vecs are M-orthonormal
    return space._eig


def _modal_coeffs(space: FemSpace, v: StateVector):
    lam, vecs = _dense_eig(space)
    return lam, vecs, vecs.T @ (space.mass @ v.coeffs)


def fractional_norm(space: FemSpace, v: StateVector, alpha: float, q) -> float:
    """|| (-Laplacian_h)^(alpha/2) v ||_{L^q} via the full generalized
    eigendecomposition A V = M V Lambda."""
    if not 0.0 <= alpha <= 2.0:
        raise ValueError(f"alpha must be in [0, 2], got {alpha}")
    lam, vecs, d = _modal_coeffs(space, v)
    w = vecs @ (lam ** (alpha / 2.0) * d)
    return lq_norm(space, StateVector(w, space), q)


def discrete_semigroup_apply(space: FemSpace, v: StateVector, t: float) -> StateVector:
    """exp(t * Laplacian_h) v through the dense eigendecomposition (same size
    cap as fractional_norm)."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    lam, vecs, d = _modal_coeffs(space, v)
    return StateVector(vecs @ (np.exp(-lam * t) * d), space)


def nodal_interpolant(space: FemSpace, f: Callable) -> StateVector:
    """Lagrange interpolation at the interior vertices."""
    vals = np.asarray(f(space.mesh.vertices[space.interior]), dtype=float)
    return StateVector(vals, space).check_finite()


def prolongate_state(coarse: FemSpace, fine: FemSpace, v: StateVector) -> StateVector:
    """Exact embedding of a coarse X_h function into a nested refinement."""
    op = prolongation_matrix(coarse.mesh, fine.mesh)
    nodal = op @ full_values(coarse, v)
    return StateVector(nodal[fine.interior], fine)


def error_lq(space: FemSpace, v: Union[StateVector, np.ndarray], f: Callable, q: float) -> float:
    """|| f - v ||_{L^q} by quadrature against the exact function."""
    nodal = full_values(space, v)
    diff = _qvals_of(space, f) - values_at_quad(space, nodal)
    return float(np.sum(space.qweights * np.abs(diff) ** q) ** (1.0 / q))


def error_h1_semi(space: FemSpace, v: Union[StateVector, np.ndarray], grad_f: Callable) -> float:
    """| f - v |_{H^1} using the exact gradient of f; the P1 gradient is
    constant per element."""
    nodal = full_values(space, v)
    gv = np.einsum("ta,tad->td", nodal[space.mesh.tets], space.grads)  # (nt, 3)
    pts = space.qpoints.reshape(-1, 3)
    gf = np.asarray(grad_f(pts), dtype=float).reshape(*space.qpoints.shape[:2], 3)
    diff = gf - gv[:, None, :]
    return float(np.sqrt(np.sum(space.qweights * np.sum(diff * diff, axis=2))))


def export_matrix_coo(matrix: sp.spmatrix, path):
    """Debug dump in coordinate text format: one 'i j value' line per entry."""
    coo = matrix.tocoo()
    with open(path, "w") as f:
        for i, j, x in zip(coo.row, coo.col, coo.data):
            f.write(f"{i} {j} {float(x)!r}\n")
