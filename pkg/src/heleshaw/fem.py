"""Finite element spaces and assembly on the droplet triangulation.

Velocity components live in P1 enriched with one cubic bubble per element
(the product of the barycentric coordinates, scaled to 1 at the
barycenter); pressure is continuous P1.  Bubbles vanish on every element
edge, so the trace of a velocity on the interface is carried by vertex
degrees of freedom alone, and all interface forms assemble over boundary
edges with per-edge difference quotients.

Degree-of-freedom layout of a velocity coefficient vector of length
2 (NV + NT):

    [vx_0 .. vx_{NV-1} | vy_0 .. vy_{NV-1} | bx_0 .. bx_{NT-1} | by_0 .. by_{NT-1}]

Bulk integrals use a degree-6 symmetric triangle rule (12 points), exact
for every product assembled here, bubble x bubble included.  Interface
integrands are constant per edge for vertex-trace velocities, so the
edge midpoint rule used implicitly below is exact as well.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import GeometryError
from .mesh import TriangleMesh

__all__ = [
    "VelocitySpace",
    "PressureSpace",
    "FeField",
    "QUAD_POINTS",
    "QUAD_WEIGHTS",
    "assemble_mass",
    "assemble_divergence",
    "assemble_curl_curl",
    "deformed_perimeter",
    "boundary_edge_state",
    "assemble_perimeter_gradient",
    "assemble_perimeter_hessian_exact",
    "assemble_perimeter_hessian_majorant",
    "static_condense_bubbles",
    "CondensedSystem",
    "export_matrix_market",
    "check_symmetric",
]

# symmetric degree-6 rule, 12 points, weights normalized to sum to one
_G1 = (0.501426509658179, 0.249286745170910, 0.116786275726379)
_G2 = (0.873821971016996, 0.063089014491502, 0.050844906370207)
_G3 = (0.053145049844816, 0.310352451033785, 0.636502499121399, 0.082851075618374)


def _build_quadrature():
    pts, wts = [], []
    for a, b, w in (_G1, _G2):
        for p in ((a, b, b), (b, a, b), (b, b, a)):
            pts.append(p)
            wts.append(w)
    a, b, c, w = _G3
    for p in ((a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)):
        pts.append(p)
        wts.append(w)
    return np.array(pts), np.array(wts)


QUAD_POINTS, QUAD_WEIGHTS = _build_quadrature()

# nodal basis on the reference element: three hats and the scaled bubble
BASIS_VALUES = np.column_stack(
    [QUAD_POINTS, 27.0 * QUAD_POINTS[:, 0] * QUAD_POINTS[:, 1] * QUAD_POINTS[:, 2]]
)
_MASS_REF = np.einsum("q,qi,qj->ij", QUAD_WEIGHTS, BASIS_VALUES, BASIS_VALUES)


class VelocitySpace:
    """Vector P1 + bubble space on a mesh snapshot."""

    def __init__(self, mesh: TriangleMesh):
        self.mesh = mesh
        nv, nt = mesh.n_vertices, mesh.n_triangles
        self.n_vertex_dofs = 2 * nv
        self.n_bubble_dofs = 2 * nt
        self.ndof = 2 * (nv + nt)

        tri = mesh.triangles
        p = mesh.vertices[tri]  # (NT, 3, 2)
        area2 = 2.0 * mesh.triangle_areas
        # grad of barycentric coordinate i: rotate the opposite edge
        grad = np.empty((nt, 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            grad[:, i, 0] = (p[:, j, 1] - p[:, k, 1]) / area2
            grad[:, i, 1] = (p[:, k, 0] - p[:, j, 0]) / area2
        self.grad_lambda = grad

        lam = QUAD_POINTS  # (Q, 3)
        gb = 27.0 * (
            (lam[None, :, 1] * lam[None, :, 2])[:, :, None] * grad[:, None, 0, :]
            + (lam[None, :, 0] * lam[None, :, 2])[:, :, None] * grad[:, None, 1, :]
            + (lam[None, :, 0] * lam[None, :, 1])[:, :, None] * grad[:, None, 2, :]
        )  # (NT, Q, 2)
        g = np.empty((nt, len(QUAD_WEIGHTS), 4, 2))
        g[:, :, :3, :] = grad[:, None, :, :]
        g[:, :, 3, :] = gb
        self.basis_gradients = g

        # per-element scalar dof columns: three vertices plus the bubble
        self.elem_nodes_x = np.column_stack([tri, 2 * nv + np.arange(nt)])
        self.elem_nodes_y = self.elem_nodes_x + np.array([nv, nv, nv, nt])

    def vertex_velocities(self, coeffs) -> np.ndarray:
        """Velocity at the mesh vertices, shape (NV, 2)."""
        nv = self.mesh.n_vertices
        c = np.asarray(coeffs)
        return np.column_stack([c[:nv], c[nv : 2 * nv]])

    def interpolate_vertex_field(self, values) -> np.ndarray:
        """Coefficients of the P1 interpolant of per-vertex values (NV, 2)."""
        values = np.asarray(values, dtype=float)
        out = np.zeros(self.ndof)
        nv = self.mesh.n_vertices
        out[:nv] = values[:, 0]
        out[nv : 2 * nv] = values[:, 1]
        return out


class PressureSpace:
    """Continuous P1 pressure space (one dof per vertex)."""

    def __init__(self, mesh: TriangleMesh):
        self.mesh = mesh
        self.ndof = mesh.n_vertices


@dataclass(frozen=True)
class FeField:
    """Coefficient vector over a space, tied to a mesh snapshot."""

    kind: str  # "velocity" | "pressure"
    coeffs: np.ndarray
    mesh_id: str

    def __post_init__(self):
        if self.kind not in ("velocity", "pressure"):
            raise ValueError(f"unknown field kind {self.kind!r}")


def assemble_mass(space: VelocitySpace) -> sp.csr_matrix:
    """Velocity mass matrix: c^T M c = integral of |u_c|^2."""
    areas = space.mesh.triangle_areas
    local = areas[:, None, None] * _MASS_REF[None, :, :]
    rows, cols, data = [], [], []
    for nodes in (space.elem_nodes_x, space.elem_nodes_y):
        rows.append(np.repeat(nodes, 4, axis=1).ravel())
        cols.append(np.tile(nodes, (1, 4)).ravel())
        data.append(local.ravel())
    m = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(space.ndof, space.ndof),
    )
    return m.tocsr()


def assemble_divergence(vel: VelocitySpace, pres: PressureSpace) -> sp.csr_matrix:
    """Constraint matrix B with q^T B c = integral (div u_c) q."""
    areas = vel.mesh.triangle_areas
    # local[k, p, n, c] = A_k sum_q w_q lam_p(q) dphi_n/dx_c(q)
    local = np.einsum(
        "q,qp,kqnc->kpnc", QUAD_WEIGHTS, QUAD_POINTS, vel.basis_gradients
    ) * areas[:, None, None, None]
    tri = vel.mesh.triangles
    rows_p = np.repeat(tri, 4, axis=1).ravel()
    rows = np.concatenate([rows_p, rows_p])
    cols = np.concatenate(
        [np.tile(vel.elem_nodes_x, (1, 3)).ravel(), np.tile(vel.elem_nodes_y, (1, 3)).ravel()]
    )
    data = np.concatenate(
        [local[:, :, :, 0].reshape(len(areas), -1).ravel(),
         local[:, :, :, 1].reshape(len(areas), -1).ravel()]
    )
    b = sp.coo_matrix((data, (rows, cols)), shape=(pres.ndof, vel.ndof))
    return b.tocsr()


def assemble_curl_curl(space: VelocitySpace) -> sp.csr_matrix:
    """Scalar-curl stiffness: c^T C c = integral |curl u_c|^2."""
    nt = space.mesh.n_triangles
    nq = len(QUAD_WEIGHTS)
    curl = np.empty((nt, nq, 8))
    curl[:, :, :4] = -space.basis_gradients[:, :, :, 1]  # x-component basis
    curl[:, :, 4:] = space.basis_gradients[:, :, :, 0]  # y-component basis
    local = np.einsum("q,kqi,kqj->kij", QUAD_WEIGHTS, curl, curl)
    local *= space.mesh.triangle_areas[:, None, None]
    nodes = np.concatenate([space.elem_nodes_x, space.elem_nodes_y], axis=1)
    rows = np.repeat(nodes, 8, axis=1).ravel()
    cols = np.tile(nodes, (1, 8)).ravel()
    c = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(space.ndof, space.ndof))
    return c.tocsr()


def _velocity_coeffs(u, ndof):
    if u is None:
        return np.zeros(ndof)
    if isinstance(u, FeField):
        return np.asarray(u.coeffs, dtype=float)
    return np.asarray(u, dtype=float)


def boundary_edge_state(mesh: TriangleMesh, u, dt: float):
    """Per-edge interface quantities under the map x -> x + dt u.

    Returns ``(i, j, ell, tau, dS, T)`` over the boundary edges: endpoint
    vertex indices, reference edge lengths and unit tangents, the deformed
    length factor dS = |(I + dt grad u) tau| and the deformed unit tangent
    T pulled back to the reference interface.  For vertex-trace velocities
    grad u tau is the per-edge difference quotient du/ds, so these are
    exact per edge.
    """
    loop = mesh.boundary_loop
    i, j = loop, np.roll(loop, -1)
    vec = mesh.vertices[j] - mesh.vertices[i]
    ell = np.hypot(vec[:, 0], vec[:, 1])
    if np.any(ell == 0.0):
        raise GeometryError("zero-length boundary edge")
    tau = vec / ell[:, None]

    nv = mesh.n_vertices
    c = _velocity_coeffs(u, 2 * nv)[: 2 * nv]
    uv = np.column_stack([c[:nv], c[nv:]])
    w = tau + dt * (uv[j] - uv[i]) / ell[:, None]
    ds = np.hypot(w[:, 0], w[:, 1])
    if np.any(ds == 0.0):
        raise GeometryError("boundary edge collapsed by the deformation")
    return i, j, ell, tau, ds, w / ds[:, None]


def deformed_perimeter(mesh: TriangleMesh, u, dt: float) -> float:
    """Perimeter of the interface displaced by dt u.

    Equals the perimeter of the boundary polygon after moving its vertices,
    which for a piecewise-affine interface and vertex-trace velocity is the
    same as integrating |(I + dt grad u) tau| edge by edge.
    """
    _, _, ell, _, ds, _ = boundary_edge_state(mesh, u, dt)
    return float(np.sum(ell * ds))


def assemble_perimeter_gradient(mesh: TriangleMesh, u_k, dt: float, sigma: float) -> np.ndarray:
    """First variation of the deformed perimeter as a load vector.

    g^T v = sigma * integral over the interface of (dv/ds) . T, with T the
    deformed unit tangent at state ``u_k``.  At u_k = 0 this is the weak
    curvature force: integration by parts turns sigma * H . v into
    (dv/ds) . tau, so no second derivatives are ever formed.
    """
    i, j, ell, tau, ds, t = boundary_edge_state(mesh, u_k, dt)
    nv = mesh.n_vertices
    nt = mesh.n_triangles
    g = np.zeros(2 * (nv + nt))
    np.add.at(g, i, -sigma * t[:, 0])
    np.add.at(g, j, sigma * t[:, 0])
    np.add.at(g, nv + i, -sigma * t[:, 1])
    np.add.at(g, nv + j, sigma * t[:, 1])
    return g


def _perimeter_hessian(mesh, u_k, dt, sigma, project_normal):
    i, j, ell, tau, ds, t = boundary_edge_state(mesh, u_k, dt)
    factor = sigma * dt / (ell * ds)
    if project_normal:
        n = np.column_stack([t[:, 1], -t[:, 0]])
        block = factor[:, None, None] * (n[:, :, None] * n[:, None, :])
    else:
        block = factor[:, None, None] * np.eye(2)[None, :, :]

    nv = mesh.n_vertices
    ndof = 2 * (nv + mesh.n_triangles)
    dofs = np.column_stack([i, nv + i, j, nv + j])  # (NB, 4)
    # edge block: [[P, -P], [-P, P]] on (v_i, v_j)
    full = np.empty((len(ell), 4, 4))
    full[:, 0:2, 0:2] = block
    full[:, 0:2, 2:4] = -block
    full[:, 2:4, 0:2] = -block
    full[:, 2:4, 2:4] = block
    rows = np.repeat(dofs, 4, axis=1).ravel()
    cols = np.tile(dofs, (1, 4)).ravel()
    return sp.coo_matrix((full.ravel(), (rows, cols)), shape=(ndof, ndof)).tocsr()


def assemble_perimeter_hessian_exact(mesh, u_k, dt, sigma) -> sp.csr_matrix:
    """Second variation of the deformed perimeter (normal-projected form).

    v^T A w = sigma dt * integral (dw/ds . N)(dv/ds . N) / dS with N the
    deformed unit normal.  Symmetric positive semidefinite; annihilates
    fields whose edge increments are parallel to T.
    """
    return _perimeter_hessian(mesh, u_k, dt, sigma, project_normal=True)


def assemble_perimeter_hessian_majorant(mesh, u_k, dt, sigma) -> sp.csr_matrix:
    """Coercive upper bound of the exact second variation.

    Drops the normal projection: v^T A w = sigma dt * integral
    (dw/ds . dv/ds) / dS.  Since |w|^2 >= (w . N)^2 this majorizes the
    exact form, and the square-root inequality sqrt(1 + x) <= 1 + x/2
    makes the corresponding quadratic model a true upper bound of the
    deformed perimeter.
    """
    return _perimeter_hessian(mesh, u_k, dt, sigma, project_normal=False)


@dataclass
class CondensedSystem:
    """Saddle blocks after element-local elimination of the bubble dofs.

    The reduced system reads ``[[A, B^T], [B, -S]] [u_v, p] = [f, g]``;
    ``recover`` rebuilds the full velocity coefficient vector from the
    reduced solution.
    """

    A: sp.csr_matrix
    B: sp.csr_matrix
    S: sp.csr_matrix
    f: np.ndarray
    g: np.ndarray
    n_vertex_dofs: int

    _abb_inv: sp.csr_matrix = None
    _a_bv: sp.csr_matrix = None
    _b_b: sp.csr_matrix = None
    _f_b: np.ndarray = None

    def recover(self, u_vertex, p) -> np.ndarray:
        if self._abb_inv is None:
            return np.asarray(u_vertex, dtype=float)
        u_b = self._abb_inv @ (self._f_b - self._a_bv @ u_vertex - self._b_b.T @ p)
        return np.concatenate([u_vertex, u_b])


def static_condense_bubbles(A, B, f, g, space: VelocitySpace) -> CondensedSystem:
    """Eliminate bubble dofs from a saddle system, element by element.

    Bubbles couple only inside their own element and never enter boundary
    forms, so the bubble block of A is 2x2 block diagonal (the x/y bubble
    pair of each element) and the Schur complement is formed exactly.  The
    reduced system is algebraically equivalent to the input system.
    """
    nvd = space.n_vertex_dofs
    nbd = space.n_bubble_dofs
    if nbd == 0:
        return CondensedSystem(
            A=sp.csr_matrix(A), B=sp.csr_matrix(B),
            S=sp.csr_matrix((B.shape[0], B.shape[0])),
            f=np.asarray(f, dtype=float), g=np.asarray(g, dtype=float),
            n_vertex_dofs=nvd,
        )
    nt = nbd // 2
    A = sp.csr_matrix(A)
    B = sp.csr_matrix(B)
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)

    a_vv = A[:nvd, :nvd]
    a_vb = A[:nvd, nvd:]
    a_bv = A[nvd:, :nvd]
    a_bb = A[nvd:, nvd:]
    d11 = a_bb.diagonal()[:nt]
    d22 = a_bb.diagonal()[nt:]
    d12 = a_bb.diagonal(k=nt)
    d21 = a_bb.diagonal(k=-nt)
    det = d11 * d22 - d12 * d21
    if np.any(det == 0.0) or np.any(~np.isfinite(det)):
        raise ArithmeticError("singular bubble block; mass-type blocks should be SPD")
    idx = np.arange(nt)
    abb_inv = sp.coo_matrix(
        (
            np.concatenate([d22 / det, d11 / det, -d12 / det, -d21 / det]),
            (
                np.concatenate([idx, nt + idx, idx, nt + idx]),
                np.concatenate([idx, nt + idx, nt + idx, idx]),
            ),
        ),
        shape=(nbd, nbd),
    ).tocsr()

    b_v = B[:, :nvd]
    b_b = B[:, nvd:]
    f_v, f_b = f[:nvd], f[nvd:]

    a_red = (a_vv - a_vb @ abb_inv @ a_bv).tocsr()
    b_red = (b_v - b_b @ abb_inv @ a_bv).tocsr()
    s_red = (b_b @ abb_inv @ b_b.T).tocsr()
    f_red = f_v - a_vb @ (abb_inv @ f_b)
    g_red = g - b_b @ (abb_inv @ f_b)
    return CondensedSystem(
        A=a_red, B=b_red, S=s_red, f=f_red, g=g_red, n_vertex_dofs=nvd,
        _abb_inv=abb_inv, _a_bv=a_bv.tocsr(), _b_b=b_b.tocsr(), _f_b=f_b,
    )


def check_symmetric(A, tol=1e-14) -> bool:
    """True when A equals its transpose to ``tol`` relative (inf-norm)."""
    A = sp.csr_matrix(A)
    d = abs(A - A.T)
    scale = max(abs(A).max(), 1e-300)
    return d.nnz == 0 or d.max() <= tol * scale


def export_matrix_market(matrix, target) -> None:
    """Write a sparse matrix in MatrixMarket coordinate format."""
    scipy.io.mmwrite(target, sp.coo_matrix(matrix))


def locate_points(mesh: TriangleMesh, points):
    """Containing triangle and barycentric coordinates for each point.

    Intended for verification use; scans all triangles per point.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    tri = mesh.triangles
    p = mesh.vertices[tri]
    out_tri = np.full(len(pts), -1, dtype=np.int64)
    out_bary = np.zeros((len(pts), 3))
    for k, x in enumerate(pts):
        d = x[None, :] - p[:, 0, :]
        e1 = p[:, 1, :] - p[:, 0, :]
        e2 = p[:, 2, :] - p[:, 0, :]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        l2 = (d[:, 0] * e2[:, 1] - d[:, 1] * e2[:, 0]) / det
        l3 = (e1[:, 0] * d[:, 1] - e1[:, 1] * d[:, 0]) / det
        l1 = 1.0 - l2 - l3
        ok = (l1 >= -1e-12) & (l2 >= -1e-12) & (l3 >= -1e-12)
        if not np.any(ok):
            raise ValueError(f"point {x} lies outside the mesh")
        t = int(np.argmax(ok))
        out_tri[k] = t
        out_bary[k] = (l1[t], l2[t], l3[t])
    return out_tri, out_bary


def evaluate_velocity(space: VelocitySpace, coeffs, points) -> np.ndarray:
    """Point values of a velocity field (barycentric interpolation)."""
    tri_idx, bary = locate_points(space.mesh, points)
    c = np.asarray(coeffs, dtype=float)
    bubble = 27.0 * bary[:, 0] * bary[:, 1] * bary[:, 2]
    phi = np.column_stack([bary, bubble])
    out = np.empty((len(tri_idx), 2))
    out[:, 0] = np.sum(phi * c[space.elem_nodes_x[tri_idx]], axis=1)
    out[:, 1] = np.sum(phi * c[space.elem_nodes_y[tri_idx]], axis=1)
    return out


def evaluate_pressure(mesh: TriangleMesh, coeffs, points) -> np.ndarray:
    """Point values of a P1 pressure field."""
    tri_idx, bary = locate_points(mesh, points)
    c = np.asarray(coeffs, dtype=float)
    return np.sum(bary * c[mesh.triangles[tri_idx]], axis=1)
