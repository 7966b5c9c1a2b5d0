"""P1 Lagrange finite elements on structured triangle meshes.

Scalar and vector (2-component, interleaved dof) spaces share one fixed
quadrature rule: the degree-2 edge-midpoint rule, three points per triangle.
Element kernels are batched ndarrays, ``(nt, ldof, ldof)`` for matrices and
``(nt, ldof)`` for vectors; assembly scatters them into CSR.

Model systems are symmetric positive definite after boundary-condition
elimination and are solved by Jacobi-preconditioned conjugate gradients.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, NewtonError, SolverError

__all__ = [
    "FunctionSpace",
    "FemField",
    "SparseSystem",
    "DirichletSet",
    "apply_dirichlet",
    "solve_linear",
    "solve_newton",
    "integrate_scalar",
    "integrate_boundary",
    "mass_matrix",
    "stiffness_matrix",
    "elasticity_matrix",
    "scalar_load",
    "vector_load",
    "boundary_normal_matrix",
    "boundary_vector_load",
    "strain",
    "stress",
]

# Edge-midpoint quadrature: barycentric points double as P1 basis values.
QUAD_BARY = np.array(
    [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]
)
REF_GRADS = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
# Two-point Gauss rule on an edge, exact through cubics.
EDGE_GAUSS = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
EDGE_BASIS = np.stack([1.0 - EDGE_GAUSS, EDGE_GAUSS], axis=1)  # (q, node)

CG_RTOL = 1e-10
CG_ATOL = 1e-14
CG_ITER_FACTOR = 10


class FunctionSpace:
    """Nodal P1 space of given value rank (1 scalar, 2 vector) on a mesh.

    Vector dofs interleave components: dof = 2 * node + component.
    """

    def __init__(self, mesh, value_rank=1):
        if value_rank not in (1, 2):
            raise ConfigError(f"value_rank must be 1 or 2, got {value_rank}")
        self.mesh = mesh
        self.value_rank = value_rank
        p = mesh.vertices[mesh.triangles]  # (nt, 3, 2)
        a = p[:, 1] - p[:, 0]
        b = p[:, 2] - p[:, 0]
        det = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
        # inverse-transpose of the affine map, applied to reference gradients
        inv_t = np.empty((len(p), 2, 2))
        inv_t[:, 0, 0] = b[:, 1]
        inv_t[:, 0, 1] = -a[:, 1]
        inv_t[:, 1, 0] = -b[:, 0]
        inv_t[:, 1, 1] = a[:, 0]
        inv_t /= det[:, None, None]
        self.grads = np.einsum("tdk,ik->tid", inv_t, REF_GRADS)  # (nt, 3, 2)
        self.quad_points = np.einsum("qi,tid->tqd", QUAD_BARY, p)
        self.quad_weights = np.repeat(
            (mesh.areas / 3.0)[:, None], QUAD_BARY.shape[0], axis=1
        )

    @property
    def dof_count(self):
        return self.mesh.num_vertices * self.value_rank

    @cached_property
    def element_dofs(self):
        tri = self.mesh.triangles.astype(np.int64)
        if self.value_rank == 1:
            return tri
        dofs = np.empty((len(tri), 6), dtype=np.int64)
        dofs[:, 0::2] = 2 * tri
        dofs[:, 1::2] = 2 * tri + 1
        return dofs

    # -- field construction -------------------------------------------------

    def zero_field(self):
        return FemField(self, np.zeros(self.dof_count))

    def interpolate(self, fn):
        """Nodal interpolation of ``fn(points) -> (nv,) or (nv, 2)``."""
        vals = np.asarray(fn(self.mesh.vertices), dtype=float)
        if self.value_rank == 1:
            if vals.shape != (self.mesh.num_vertices,):
                raise ConfigError(f"scalar interpolant has shape {vals.shape}")
            return FemField(self, vals.copy())
        if vals.shape != (self.mesh.num_vertices, 2):
            raise ConfigError(f"vector interpolant has shape {vals.shape}")
        return FemField(self, vals.reshape(-1).copy())

    # -- evaluation at quadrature points ------------------------------------

    def _nodal(self, values):
        values = np.asarray(values)
        if self.value_rank == 1:
            return values[self.mesh.triangles]  # (nt, 3)
        return values.reshape(-1, 2)[self.mesh.triangles]  # (nt, 3, 2)

    def at_quad(self, values):
        """Field values at quadrature points: (nt, nq) or (nt, nq, 2)."""
        nodal = self._nodal(values)
        if self.value_rank == 1:
            return np.einsum("qi,ti->tq", QUAD_BARY, nodal)
        return np.einsum("qi,tic->tqc", QUAD_BARY, nodal)

    def grad_at_quad(self, values):
        """Per-triangle constant gradients: (nt, 2) or Jacobians (nt, 2, 2).

        Vector convention: result[t, a, b] = d u_a / d x_b.
        """
        nodal = self._nodal(values)
        if self.value_rank == 1:
            return np.einsum("tid,ti->td", self.grads, nodal)
        return np.einsum("tia,tib->tab", nodal, self.grads)

    # -- assembly ------------------------------------------------------------

    def assemble_matrix(self, element_mats):
        ld = element_mats.shape[1]
        dofs = self.element_dofs
        rows = np.broadcast_to(dofs[:, :, None], element_mats.shape)
        cols = np.broadcast_to(dofs[:, None, :], element_mats.shape)
        n = self.dof_count
        mat = sp.coo_matrix(
            (element_mats.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)
        )
        return mat.tocsr()

    def assemble_vector(self, element_vecs):
        out = np.zeros(self.dof_count)
        np.add.at(out, self.element_dofs, element_vecs)
        return out

    # -- boundary facets -----------------------------------------------------

    def facet_dofs(self, facet_ids):
        nodes = self.mesh.boundary_facets[facet_ids].astype(np.int64)
        if self.value_rank == 1:
            return nodes
        dofs = np.empty((len(nodes), 4), dtype=np.int64)
        dofs[:, 0::2] = 2 * nodes
        dofs[:, 1::2] = 2 * nodes + 1
        return dofs

    def facet_quad_points(self, facet_ids):
        facets = self.mesh.boundary_facets[facet_ids]
        a = self.mesh.vertices[facets[:, 0]]
        b = self.mesh.vertices[facets[:, 1]]
        return a[:, None, :] + EDGE_GAUSS[None, :, None] * (b - a)[:, None, :]

    def facet_quad_weights(self, facet_ids):
        lengths = self.mesh.facet_lengths[facet_ids]
        return np.repeat((lengths / 2.0)[:, None], len(EDGE_GAUSS), axis=1)

    def at_facet_quad(self, values, facet_ids):
        nodes = self.mesh.boundary_facets[facet_ids]
        if self.value_rank == 1:
            nodal = np.asarray(values)[nodes]  # (nf, 2)
            return np.einsum("qi,fi->fq", EDGE_BASIS, nodal)
        nodal = np.asarray(values).reshape(-1, 2)[nodes]  # (nf, 2, 2)
        return np.einsum("qi,fic->fqc", EDGE_BASIS, nodal)

    def assemble_boundary_matrix(self, facet_ids, element_mats):
        dofs = self.facet_dofs(facet_ids)
        rows = np.broadcast_to(dofs[:, :, None], element_mats.shape)
        cols = np.broadcast_to(dofs[:, None, :], element_mats.shape)
        n = self.dof_count
        mat = sp.coo_matrix(
            (element_mats.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)
        )
        return mat.tocsr()

    def assemble_boundary_vector(self, facet_ids, element_vecs):
        out = np.zeros(self.dof_count)
        np.add.at(out, self.facet_dofs(facet_ids), element_vecs)
        return out


@dataclass
class FemField:
    """Nodal coefficients tied to their space."""

    space: FunctionSpace
    values: np.ndarray

    def copy(self):
        return FemField(self.space, self.values.copy())


@dataclass
class SparseSystem:
    """Assembled linear system: CSR matrix plus right-hand side."""

    matrix: sp.csr_matrix
    rhs: np.ndarray


class DirichletSet:
    """Constrained dofs with prescribed values.

    Duplicated dofs are merged; conflicting values raise ``ConfigError``.
    """

    def __init__(self, dofs, values=None):
        dofs = np.asarray(dofs, dtype=np.int64)
        if values is None:
            values = np.zeros(len(dofs))
        values = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape)
        order = np.argsort(dofs, kind="stable")
        d, v = dofs[order], values[order]
        uniq, first = np.unique(d, return_index=True)
        ref = v[first][np.searchsorted(uniq, d)]
        if np.any(ref != v):
            bad = d[ref != v]
            raise ConfigError(f"conflicting Dirichlet values for dofs {bad[:5]}")
        self.dofs = uniq
        self.values = v[first]

    def __len__(self):
        return len(self.dofs)

    def homogeneous(self):
        return DirichletSet(self.dofs, np.zeros(len(self.dofs)))

    @staticmethod
    def on_tags(space, tags, value=0.0):
        """Constrain all dofs on facets carrying ``tags``.

        ``value`` is a constant or a callable on node coordinates returning
        ``(n,)`` for scalar spaces or ``(n, 2)`` for vector spaces.
        """
        facet_ids = space.mesh.facets_with_tag(tags)
        nodes = np.unique(space.mesh.boundary_facets[facet_ids])
        pts = space.mesh.vertices[nodes]
        if callable(value):
            vals = np.asarray(value(pts), dtype=float)
        else:
            shape = (len(nodes),) if space.value_rank == 1 else (len(nodes), 2)
            vals = np.broadcast_to(float(value), shape)
        if space.value_rank == 1:
            return DirichletSet(nodes, vals)
        dofs = np.column_stack([2 * nodes, 2 * nodes + 1]).reshape(-1)
        return DirichletSet(dofs, np.asarray(vals).reshape(-1))

    @staticmethod
    def whole_boundary(space, value=0.0):
        tags = np.unique(space.mesh.facet_tags)
        return DirichletSet.on_tags(space, tags, value)


def apply_dirichlet(system, bc):
    """Symmetric elimination: move columns to the rhs, pin unit diagonals."""
    if bc is None or len(bc) == 0:
        return system
    n = system.matrix.shape[0]
    constrained = np.zeros(n, dtype=bool)
    constrained[bc.dofs] = True
    lifted = np.zeros(n)
    lifted[bc.dofs] = bc.values
    rhs = system.rhs - system.matrix @ lifted
    rhs[bc.dofs] = bc.values
    A = system.matrix.tocoo()
    keep = ~(constrained[A.row] | constrained[A.col])
    rows = np.concatenate([A.row[keep], bc.dofs])
    cols = np.concatenate([A.col[keep], bc.dofs])
    data = np.concatenate([A.data[keep], np.ones(len(bc.dofs))])
    mat = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    return SparseSystem(mat, rhs)


def solve_linear(system, x0=None):
    """Jacobi-preconditioned CG. Pre: matrix SPD after elimination.

    Stops at relative residual 1e-10 or absolute 1e-14; the iteration cap is
    ten times the dof count. Divergence raises ``SolverError`` carrying the
    final residual norm.
    """
    A, b = system.matrix, system.rhs
    n = A.shape[0]
    diag = A.diagonal()
    safe = np.where(np.abs(diag) > 0.0, diag, 1.0)
    M = sp.diags(1.0 / safe)
    x, info = spla.cg(
        A, b, x0=x0, rtol=CG_RTOL, atol=CG_ATOL, maxiter=CG_ITER_FACTOR * n, M=M
    )
    if info != 0:
        residual = float(np.linalg.norm(b - A @ x))
        raise SolverError(
            f"conjugate gradients stopped after {info if info > 0 else 'failed'}"
            f" iterations, residual {residual:.3e}",
            residual=residual,
        )
    return x


def solve_newton(residual, jacobian, init, bc=None, tol=1e-10, max_iter=25):
    """Newton iteration on an assembled nonlinear system.

    ``residual(u) -> (n,)`` and ``jacobian(u) -> csr`` work on raw dof
    vectors; ``bc`` pins dofs (increments are eliminated homogeneously).
    Returns ``(u, residual_norms)`` where the norms are those of the iterates
    that required a step. Exhausting the budget raises ``NewtonError``.
    """
    u = np.array(init, dtype=float, copy=True)
    if bc is not None:
        u[bc.dofs] = bc.values
        bc_inc = bc.homogeneous()
    history = []
    for _ in range(max_iter):
        F = np.asarray(residual(u), dtype=float)
        if bc is not None:
            F = F.copy()
            F[bc.dofs] = 0.0
        norm = float(np.linalg.norm(F))
        if norm <= tol:
            return u, history
        history.append(norm)
        system = SparseSystem(jacobian(u).tocsr(), -F)
        if bc is not None:
            system = apply_dirichlet(system, bc_inc)
        u = u + solve_linear(system)
    raise NewtonError(
        f"Newton did not reach {tol:.1e} within {max_iter} iterations", history
    )


# -- integration -------------------------------------------------------------


def integrate_scalar(space, quad_values):
    """Integrate an ``(nt, nq)`` array of quadrature-point values over D."""
    return float(np.sum(space.quad_weights * quad_values))


def integrate_boundary(space, facet_ids, quad_values):
    """Integrate an ``(nf, nq)`` array over the selected boundary facets."""
    return float(np.sum(space.facet_quad_weights(facet_ids) * quad_values))


# -- element kernels ---------------------------------------------------------


def _expand_vector_blocks(scalar_elems):
    """Scalar (nt, 3, 3) blocks into interleaved vector (nt, 6, 6)."""
    nt = scalar_elems.shape[0]
    out = np.einsum("tab,ij->taibj", scalar_elems, np.eye(2))
    return out.reshape(nt, 6, 6)


def _coeff(space, coeff_q):
    if coeff_q is None:
        return space.quad_weights
    return space.quad_weights * coeff_q


def mass_matrix(space, coeff_q=None):
    """Element matrices of (c u, v); ``coeff_q`` sampled at quad points."""
    wc = _coeff(space, coeff_q)
    scalar = np.einsum("tq,qa,qb->tab", wc, QUAD_BARY, QUAD_BARY)
    if space.value_rank == 1:
        return scalar
    return _expand_vector_blocks(scalar)


def stiffness_matrix(space, coeff_q=None):
    """Element matrices of (c grad u, grad v), componentwise for vectors."""
    wc = _coeff(space, coeff_q).sum(axis=1)  # gradients constant per triangle
    scalar = np.einsum("t,tad,tbd->tab", wc, space.grads, space.grads)
    if space.value_rank == 1:
        return scalar
    return _expand_vector_blocks(scalar)


def elasticity_matrix(space, coeff_q=None, lame=(1.25, 1.0)):
    """Element matrices of (c sigma(u), eps(v)) for the given Lame pair."""
    if space.value_rank != 2:
        raise ConfigError("elasticity needs a vector space")
    lam, mu = lame
    wc = _coeff(space, coeff_q).sum(axis=1)
    g = space.grads
    dot = np.einsum("tad,tbd->tab", g, g)
    inner = (
        lam * np.einsum("tai,tbj->taibj", g, g)
        + mu * np.einsum("tab,ij->taibj", dot, np.eye(2))
        + mu * np.einsum("taj,tbi->taibj", g, g)
    )
    nt = g.shape[0]
    return (wc[:, None, None] * inner.reshape(nt, 6, 6)).copy()


def scalar_load(space, f_q):
    """Element vectors of (f, v) from quadrature-point samples (nt, nq)."""
    return np.einsum("tq,qa->ta", space.quad_weights * f_q, QUAD_BARY)


def vector_load(space, f_q):
    """Element vectors of (f, v) from samples (nt, nq, 2)."""
    nt = f_q.shape[0]
    out = np.einsum(
        "tqc,qa->tac", space.quad_weights[:, :, None] * f_q, QUAD_BARY
    )
    return out.reshape(nt, 6)


def boundary_normal_matrix(space, facet_ids=None):
    """Facet matrices of (u.n)(v.n) on boundary facets."""
    if space.value_rank != 2:
        raise ConfigError("normal penalty needs a vector space")
    if facet_ids is None:
        facet_ids = np.arange(len(space.mesh.boundary_facets))
    w = space.facet_quad_weights(facet_ids)
    n = space.mesh.facet_normals[facet_ids]
    edge_mass = np.einsum("fq,qa,qb->fab", w, EDGE_BASIS, EDGE_BASIS)
    out = np.einsum("fab,fi,fj->faibj", edge_mass, n, n)
    return out.reshape(len(facet_ids), 4, 4)


def boundary_vector_load(space, facet_ids, g):
    """Facet vectors of (g, v); ``g`` is an array (nf, nq, 2) or a callable
    on facet quadrature points."""
    pts = space.facet_quad_points(facet_ids)
    g_q = np.asarray(g(pts), dtype=float) if callable(g) else np.asarray(g)
    w = space.facet_quad_weights(facet_ids)
    out = np.einsum("fqc,qa->fac", w[:, :, None] * g_q, EDGE_BASIS)
    return out.reshape(len(facet_ids), 4)


# -- small tensor helpers used by the models ---------------------------------


def strain(jacobians):
    """Symmetric part of displacement Jacobians (..., 2, 2)."""
    return 0.5 * (jacobians + np.swapaxes(jacobians, -1, -2))


def stress(strains, lame):
    """Isotropic plane stress-strain law sigma = lam tr(eps) I + 2 mu eps."""
    lam, mu = lame
    tr = np.trace(strains, axis1=-2, axis2=-1)
    out = 2.0 * mu * strains
    out[..., 0, 0] += lam * tr
    out[..., 1, 1] += lam * tr
    return out
