"""Level-set fields on P1 spaces.

The optimized region is the subzero set of a nodal scalar field. This module
initializes such fields from unions of balls, advects them with a
Crank-Nicolson / Petrov-Galerkin transport scheme, and restores the
signed-distance profile with a diffusive Eikonal flow integrated by explicit
Euler plus two-step Adams-Bashforth.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .errors import ConfigError
from .fem import QUAD_BARY, FemField, FunctionSpace
from .mesh import mesh_diameter

__all__ = [
    "LevelSetField",
    "InitialLevelSpec",
    "initial_level",
    "transport",
    "transport_tau",
    "reinitialize",
    "gradient_norm_guard",
    "zero_contour_segments",
    "zero_set_displacement",
]


@dataclass
class LevelSetField:
    """Scalar P1 field whose subzero set is the working domain.

    ``h`` is the interface length scale used by the transport and
    reinitialization kernels: the side of the equilateral triangle whose area
    matches the mean element area. The smoothed sign, the streamline
    stabilization and the h^2 diffusion all degenerate if fed an area-scaled
    quantity instead.
    """

    field: FemField
    h: float

    @classmethod
    def from_field(cls, fem_field):
        if not np.all(np.isfinite(fem_field.values)):
            raise ConfigError("level-set field has non-finite nodal values")
        return cls(fem_field, math.sqrt(mesh_diameter(fem_field.space.mesh)))

    @property
    def values(self):
        return self.field.values

    @property
    def space(self):
        return self.field.space

    @property
    def mesh(self):
        return self.field.space.mesh

    def indicator_quad(self):
        """Quadrature-point indicator of the subzero region: 1 inside, 0 out."""
        return (self.space.at_quad(self.values) < 0.0).astype(float)


@dataclass(frozen=True)
class InitialLevelSpec:
    """Union-of-balls initializer: phi(x) = factor * max_k (r_k - |x - c_k|).

    A negative factor makes the union itself the subzero region; a positive
    factor selects its complement. ``ord`` picks the Euclidean (2) or
    Chebyshev (inf) norm.
    """

    centers: tuple
    radii: tuple
    factor: float = 1.0
    ord: float = 2

    def __post_init__(self):
        if len(self.centers) != len(self.radii) or len(self.radii) < 1:
            raise ConfigError(
                f"need matching nonempty centers/radii, got "
                f"{len(self.centers)}/{len(self.radii)}"
            )
        if any(r <= 0.0 for r in self.radii):
            raise ConfigError("ball radii must be positive")
        if self.factor == 0.0:
            raise ConfigError("initial level factor must be nonzero")
        if self.ord not in (2, math.inf):
            raise ConfigError(f"norm order must be 2 or inf, got {self.ord}")


def initial_level(spec, space):
    if space.value_rank != 1:
        raise ConfigError("initial level set needs a scalar space")
    pts = space.mesh.vertices
    best = np.full(len(pts), -np.inf)
    for center, radius in zip(spec.centers, spec.radii):
        dist = np.linalg.norm(pts - np.asarray(center, dtype=float), ord=spec.ord, axis=1)
        np.maximum(best, radius - dist, out=best)
    return LevelSetField.from_field(FemField(space, spec.factor * best))


def gradient_norm_guard(p):
    """Safe direction ``p / sqrt(|p|^2 + eps^2)`` with eps = 1e-12 (1 + |p|).

    Maps zero to zero and otherwise stays within unit magnitude; applied along
    the last axis of batched input.
    """
    p = np.asarray(p, dtype=float)
    mag = np.sqrt(np.sum(p * p, axis=-1, keepdims=True))
    eps = 1e-12 * (1.0 + mag)
    return p / np.sqrt(mag * mag + eps * eps)


def transport_tau(speed_sq, dt, h):
    """Streamline stabilization time scale per quadrature point.

    tau = (1/2) (1/dt^2 + |v|^2/h^2)^(-1/2); lies in (0, dt/2], hitting the
    upper bound exactly where the velocity vanishes.
    """
    return 0.5 / np.sqrt(1.0 / dt**2 + np.asarray(speed_sq) / h**2)


def _check_velocity_field(phi, theta):
    if theta.space.value_rank != 2:
        raise ConfigError("transport velocity must live on a vector space")
    if theta.space.mesh is not phi.space.mesh:
        raise ConfigError("velocity and level set use different meshes")


def transport(phi, theta, t_end, steps, smooth=False):
    """Advect phi along theta for time t_end in the given number of steps.

    Crank-Nicolson in time; test functions are enriched along the velocity
    (psi + tau theta.grad psi) on both half-steps. ``smooth`` adds h^2
    isotropic diffusion. Homogeneous Neumann throughout; the step matrix is
    factorized once per call.
    """
    if t_end <= 0.0:
        raise ConfigError(f"transport needs t_end > 0, got {t_end}")
    if steps < 1:
        raise ConfigError(f"transport needs steps >= 1, got {steps}")
    _check_velocity_field(phi, theta)
    space, h = phi.space, phi.h
    dt = t_end / steps
    th_q = theta.space.at_quad(theta.values)  # (nt, nq, 2)
    tau = transport_tau(np.sum(th_q * th_q, axis=2), dt, h)
    g = space.grads
    conv = np.einsum("tqd,tid->tqi", th_q, g)  # theta . grad N_i
    hat = QUAD_BARY[None, :, :] + tau[:, :, None] * conv
    w = space.quad_weights
    m_hat = np.einsum("tq,tqa,qb->tab", w, hat, QUAD_BARY)
    half = 0.5 * np.einsum("tq,tqa,tqb->tab", w, hat, conv)
    if smooth:
        areas = space.mesh.areas
        half = half + 0.5 * h * h * np.einsum("t,tad,tbd->tab", areas, g, g)
    step_lhs = space.assemble_matrix(m_hat + dt * half)
    step_rhs = space.assemble_matrix(m_hat - dt * half)
    lu = spla.splu(step_lhs.tocsc())
    vals = phi.values.copy()
    for _ in range(steps):
        vals = lu.solve(step_rhs @ vals)
    return LevelSetField(FemField(space, vals), h)


def reinitialize(phi, iters, t_final):
    """Drive phi toward the signed distance of its own zero set.

    Evolves d phi/dt = -S (|grad phi| - 1) + h^2 lap phi in pseudo-time, where
    S = phi0/sqrt(phi0^2 + h^2) is frozen from the input. The first step is
    explicit Euler, the rest two-step Adams-Bashforth; test functions are
    enriched along the current characteristic direction S grad phi/|grad phi|,
    so the mass matrix is refactorized every step.
    """
    if iters < 2:
        raise ConfigError(f"reinitialization needs iters >= 2, got {iters}")
    if t_final <= 0.0:
        raise ConfigError(f"reinitialization needs t_final > 0, got {t_final}")
    space, h = phi.space, phi.h
    dt = t_final / iters
    s_q = space.at_quad(phi.values)
    s_q = s_q / np.sqrt(s_q * s_q + h * h)  # frozen smoothed sign
    tau = transport_tau(s_q * s_q, dt, h)  # |grad H| = |S|, time-independent
    w = space.quad_weights
    g = space.grads
    areas = space.mesh.areas
    cur = phi.values.copy()
    grad_cur = space.grad_at_quad(cur)  # (nt, 2), constant per triangle
    grad_prev = grad_cur  # duplicated history turns step one into Euler
    for _ in range(iters):
        direction = gradient_norm_guard(grad_cur)
        vel = s_q[:, :, None] * direction[:, None, :]
        conv = np.einsum("tqd,tid->tqi", vel, g)
        hat = QUAD_BARY[None, :, :] + tau[:, :, None] * conv
        m_hat = space.assemble_matrix(
            np.einsum("tq,tqa,qb->tab", w, hat, QUAD_BARY)
        )
        lu = spla.splu(m_hat.tocsc())
        mag_cur = np.linalg.norm(grad_cur, axis=1)
        mag_prev = np.linalg.norm(grad_prev, axis=1)
        hamiltonian = 0.5 * s_q * (mag_prev - 3.0 * mag_cur)[:, None]
        load = np.einsum("tq,tqa->ta", w * (hamiltonian + s_q), hat)
        diffusion = 0.5 * h * h * np.einsum(
            "t,td,tad->ta", areas, grad_prev - 3.0 * grad_cur, g
        )
        rhs = m_hat @ cur + dt * space.assemble_vector(load + diffusion)
        cur = lu.solve(rhs)
        grad_prev = grad_cur
        grad_cur = space.grad_at_quad(cur)
    return LevelSetField(FemField(space, cur), h)


# -- zero-set diagnostics ------------------------------------------------------


def zero_contour_segments(phi):
    """Marching-triangles extraction of the piecewise-linear zero set.

    Returns an (n, 2, 2) array of segments in triangle order; each segment's
    endpoints are sorted lexicographically. Contour points are strict edge
    sign changes (linear interpolation) plus vertices exactly at zero;
    triangles yielding other than two points contribute nothing.
    """
    mesh = phi.mesh
    vals = phi.values[mesh.triangles]  # (nt, 3)
    pts = mesh.vertices[mesh.triangles]  # (nt, 3, 2)
    nt = len(vals)
    cand = np.zeros((nt, 6, 2))
    valid = np.zeros((nt, 6), dtype=bool)
    for k, (i, j) in enumerate(((0, 1), (1, 2), (2, 0))):
        a, b = vals[:, i], vals[:, j]
        cross = a * b < 0.0
        t = np.zeros(nt)
        t[cross] = a[cross] / (a[cross] - b[cross])
        cand[:, k] = pts[:, i] + t[:, None] * (pts[:, j] - pts[:, i])
        valid[:, k] = cross
    for v in range(3):
        cand[:, 3 + v] = pts[:, v]
        valid[:, 3 + v] = vals[:, v] == 0.0
    keep = valid.sum(axis=1) == 2
    order = np.argsort(~valid[keep], axis=1, kind="stable")[:, :2]
    segs = np.take_along_axis(cand[keep], order[:, :, None], axis=1)
    p, q = segs[:, 0], segs[:, 1]
    swap = (p[:, 0] > q[:, 0]) | ((p[:, 0] == q[:, 0]) & (p[:, 1] > q[:, 1]))
    segs[swap] = segs[swap][:, ::-1]
    return segs


def _directed_gap(a, b):
    probes = np.concatenate([a[:, 0], a[:, 1], 0.5 * (a[:, 0] + a[:, 1])])
    start, span = b[:, 0], b[:, 1] - b[:, 0]
    span_sq = np.sum(span * span, axis=1)
    offset = probes[:, None, :] - start[None, :, :]
    t = np.einsum("mnd,nd->mn", offset, span)
    t = np.divide(t, span_sq[None, :], out=np.zeros_like(t), where=span_sq > 0.0)
    np.clip(t, 0.0, 1.0, out=t)
    nearest = start[None, :, :] + t[:, :, None] * span[None, :, :]
    dist = np.linalg.norm(probes[:, None, :] - nearest, axis=2)
    return float(dist.min(axis=1).max())


def zero_set_displacement(segments_a, segments_b):
    """Symmetric Hausdorff-style gap between two zero-set segment soups.

    Samples every endpoint and midpoint against exact point-to-segment
    distances. An empty side yields infinity.
    """
    a = np.asarray(segments_a, dtype=float)
    b = np.asarray(segments_b, dtype=float)
    if len(a) == 0 or len(b) == 0:
        return math.inf
    return max(_directed_gap(a, b), _directed_gap(b, a))
