"""Variational time-stepping schemes for the droplet evolution.

All four schemes minimize, in one form or another,

    1/2 integral |u|^2  +  (sigma / dt) * perimeter((Id + dt u)(domain))

over velocity fields on the current domain, then transport the mesh by
x -> x + dt u.  They differ in how the deformed-perimeter term and the
incompressibility constraint are treated:

- ``explicit``: the perimeter term is linearized at u = 0 (pure curvature
  force from the current interface); single solve with div u = 0.
- ``newton``: the deformed perimeter is handled by a damped Newton
  iteration; the indefinite second variation is replaced by its coercive
  majorant, so every inner system is solvable.  Constraint div u = 0.
- ``curl``: same iteration with an added curl-curl penalty
  alpha * |curl u|^2, which controls the tangential trace at an O(dt)
  consistency cost.  Requires alpha > 0 (the alpha = 0 problem is
  ill-posed).
- ``nonlinear_det``: the linear constraint is replaced by the exact
  volume-preservation constraint det(I + dt grad u) = 1, collocated at
  the bulk quadrature points against P1 multipliers.

The raw saddle multiplier equals minus the physical pressure; step
functions return the physical field (p ~ sigma * curvature on the
interface).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import (
    ConfigError,
    DeterminantSignError,
    NewtonDivergenceError,
    SimulationFailure,
)
from .fem import (
    QUAD_POINTS,
    QUAD_WEIGHTS,
    FeField,
    PressureSpace,
    VelocitySpace,
    assemble_curl_curl,
    assemble_divergence,
    assemble_mass,
    assemble_perimeter_gradient,
    assemble_perimeter_hessian_majorant,
    static_condense_bubbles,
)
from .geometry import (
    PolarShapeSpec,
    boundary_flux_moment,
    fourier_decompose,
    sample_polar_boundary,
    vertex_curvature_vector,
)
from .mesh import MeshPolicy, TriangleMesh, advect_mesh, generate_mesh, maybe_remesh
from .solver import FactorReuse, SaddleSystem, solve_saddle

__all__ = [
    "SchemeConfig",
    "StepReport",
    "DiagnosticsRecord",
    "DiagnosticsSeries",
    "Snapshot",
    "SimulationResult",
    "step_explicit",
    "step_newton",
    "step_curl",
    "step_nonlinear_det",
    "run_step",
    "run_simulation",
    "tangential_diagnostic",
]

SCHEMES = ("explicit", "newton", "curl", "nonlinear_det")
PERIMETER_MONOTONE_RTOL = 1e-10


@dataclass(frozen=True)
class SchemeConfig:
    """All parameters of a time-stepping run (dimensionless units)."""

    sigma: float
    dt: float
    t_end: float
    scheme: str = "newton"
    alpha: float = 1e-3
    newton_tol: float = 1e-5
    newton_max_iters: int = 50
    output_stride: int = 1
    m_max: int = 6
    mesh_policy: MeshPolicy = field(default_factory=MeshPolicy)

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if self.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.t_end < 0:
            raise ConfigError("t_end must be >= 0")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; pick one of {SCHEMES}")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.scheme == "curl" and self.alpha == 0.0:
            raise ConfigError(
                "the curl scheme needs alpha > 0: without curl control the "
                "tangential trace is unconstrained and the minimization is ill-posed"
            )
        if self.newton_tol <= 0 or self.newton_max_iters < 1:
            raise ConfigError("newton_tol must be > 0 and newton_max_iters >= 1")
        if self.output_stride < 1:
            raise ConfigError("output_stride must be >= 1")
        if self.m_max < 1:
            raise ConfigError("m_max must be >= 1")


@dataclass
class StepReport:
    """Numerical record of a single time step."""

    scheme: str
    newton_iterations: int
    increment_norm: float  # mass-weighted |u^{k+1} - u^k|^2 at exit
    kkt_residual: float
    perimeter_before: float
    perimeter_after: float
    area_before: float
    area_after: float
    max_displacement: float
    monotone: bool
    det_residual: Optional[float] = None  # nonlinear_det only
    remeshed: bool = False


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    area: float
    perimeter: float
    u_cm: tuple
    fourier_cos: tuple
    fourier_sin: tuple
    fourier_mean: float


class DiagnosticsSeries:
    """Time-indexed run diagnostics (one record per output stride)."""

    def __init__(self, m_max: int):
        self.m_max = m_max
        self.records: list[DiagnosticsRecord] = []

    def append(self, rec: DiagnosticsRecord):
        if self.records and rec.t <= self.records[-1].t:
            raise ValueError("diagnostic records must have strictly increasing t")
        self.records.append(rec)

    @property
    def times(self):
        return np.array([r.t for r in self.records])

    @property
    def areas(self):
        return np.array([r.area for r in self.records])

    @property
    def perimeters(self):
        return np.array([r.perimeter for r in self.records])

    @property
    def ucm_magnitudes(self):
        return np.array([np.hypot(*r.u_cm) for r in self.records])

    def amplitude_series(self, label: str):
        """Times and coefficient values for a mode label like ``"c2"``."""
        kind, m = label[0], int(label[1:])
        if not 1 <= m <= self.m_max or kind not in "cs":
            raise KeyError(label)
        idx = m - 1
        vals = [r.fourier_cos[idx] if kind == "c" else r.fourier_sin[idx]
                for r in self.records]
        return self.times, np.array(vals)


@dataclass(frozen=True)
class Snapshot:
    """Solver state on the domain it was computed on."""

    t: float
    mesh: TriangleMesh
    velocity: Optional[FeField]
    pressure: Optional[FeField]


@dataclass
class SimulationResult:
    config: SchemeConfig
    diagnostics: DiagnosticsSeries
    snapshots: list
    step_reports: list
    final_mesh: TriangleMesh


class _StepOperators:
    """Per-mesh assembly shared by the inner iterations of one step."""

    def __init__(self, mesh: TriangleMesh, cfg: SchemeConfig):
        self.mesh = mesh
        self.vel = VelocitySpace(mesh)
        self.pres = PressureSpace(mesh)
        self.mass = assemble_mass(self.vel)
        self.div = assemble_divergence(self.vel, self.pres)
        if cfg.scheme == "curl":
            self.bulk = (self.mass + cfg.alpha * assemble_curl_curl(self.vel)).tocsr()
        else:
            self.bulk = self.mass
        # node-local (vx, vy, p) interleaving of the condensed unknowns
        nv = mesh.n_vertices
        order = np.empty(3 * nv, dtype=np.int64)
        order[0::3] = np.arange(nv)
        order[1::3] = nv + np.arange(nv)
        order[2::3] = 2 * nv + np.arange(nv)
        self.dof_order = order


def _solve_inner(ops: _StepOperators, cfg: SchemeConfig, u_k, constraint, rhs_c,
                 reuse=None):
    """One linearized saddle solve about the state ``u_k``."""
    mesh = ops.mesh
    g = assemble_perimeter_gradient(mesh, u_k, cfg.dt, cfg.sigma)
    a_maj = assemble_perimeter_hessian_majorant(mesh, u_k, cfg.dt, cfg.sigma)
    a_blk = (ops.bulk + a_maj).tocsr()
    f = a_maj @ u_k - g
    red = static_condense_bubbles(a_blk, constraint, f, rhs_c, ops.vel)
    u_v, lam, rep = solve_saddle(
        SaddleSystem(red.A, red.B, red.f, red.g, pressure_block=red.S,
                     dof_order=ops.dof_order),
        reuse=reuse,
    )
    return red.recover(u_v, lam), lam, rep


def _solve_explicit(ops: _StepOperators, cfg: SchemeConfig, reuse=None):
    mesh = ops.mesh
    g0 = assemble_perimeter_gradient(mesh, None, cfg.dt, cfg.sigma)
    red = static_condense_bubbles(
        ops.mass, ops.div, -g0, np.zeros(ops.pres.ndof), ops.vel
    )
    u_v, lam, rep = solve_saddle(
        SaddleSystem(red.A, red.B, red.f, red.g, pressure_block=red.S,
                     dof_order=ops.dof_order),
        reuse=reuse,
    )
    u = red.recover(u_v, lam)
    inc = float(u @ (ops.mass @ u))
    return u, lam, rep.relative_residual, 1, inc, None


def _gradients_at_quadrature(ops: _StepOperators, coeffs):
    """Velocity gradient (2x2) at every bulk quadrature point."""
    g = ops.vel.basis_gradients  # (NT, Q, 4, 2)
    cx = coeffs[ops.vel.elem_nodes_x]  # (NT, 4)
    cy = coeffs[ops.vel.elem_nodes_y]
    row0 = np.einsum("kqnb,kn->kqb", g, cx)
    row1 = np.einsum("kqnb,kn->kqb", g, cy)
    return row0, row1


def _det_constraint(ops: _StepOperators, cfg: SchemeConfig, coeffs):
    """Volume-map constraint c(u) and its exact linearization D(u).

    c_q(u) = (1/dt) integral (det(I + dt grad u) - 1) q, collocated at the
    bulk quadrature points with P1 test functions; D(u) is d c / d u, so
    D(0) is the plain divergence matrix.  Fails when the determinant is
    non-positive anywhere (the deformation stopped being one-to-one).
    """
    dt = cfg.dt
    row0, row1 = _gradients_at_quadrature(ops, coeffs)
    f00 = 1.0 + dt * row0[:, :, 0]
    f01 = dt * row0[:, :, 1]
    f10 = dt * row1[:, :, 0]
    f11 = 1.0 + dt * row1[:, :, 1]
    det = f00 * f11 - f01 * f10
    if np.any(det <= 0.0):
        raise DeterminantSignError(
            f"deformation determinant reached {float(det.min()):.3e} <= 0"
        )

    mesh = ops.mesh
    areas = mesh.triangle_areas
    tri = mesh.triangles
    n_p = ops.pres.ndof

    c_local = np.einsum("q,qp,kq->kp", QUAD_WEIGHTS, QUAD_POINTS, det - 1.0)
    c_local *= areas[:, None] / dt
    c_vec = np.zeros(n_p)
    np.add.at(c_vec, tri.ravel(), c_local.ravel())

    g = ops.vel.basis_gradients
    wlam = QUAD_WEIGHTS[:, None] * QUAD_POINTS  # (Q, 3)
    # cofactor rows: d det / d (grad u)_ab, contracted with basis gradients
    cof0 = np.stack([f11, -f10], axis=-1)  # a = 0 (x-component equations)
    cof1 = np.stack([-f01, f00], axis=-1)  # a = 1
    e0 = np.einsum("kqb,kqnb->kqn", cof0, g)
    e1 = np.einsum("kqb,kqnb->kqn", cof1, g)
    d0 = np.einsum("qp,kqn->kpn", wlam, e0)
    d1 = np.einsum("qp,kqn->kpn", wlam, e1)
    d0 *= areas[:, None, None]
    d1 *= areas[:, None, None]
    rows = np.repeat(tri, 4, axis=1).ravel()
    dmat = sp.coo_matrix(
        (
            np.concatenate([d0.ravel(), d1.ravel()]),
            (
                np.concatenate([rows, rows]),
                np.concatenate(
                    [
                        np.tile(ops.vel.elem_nodes_x, (1, 3)).ravel(),
                        np.tile(ops.vel.elem_nodes_y, (1, 3)).ravel(),
                    ]
                ),
            ),
        ),
        shape=(n_p, ops.vel.ndof),
    ).tocsr()
    return dmat, c_vec, float(np.max(np.abs(det - 1.0)))


def _newton_loop(ops: _StepOperators, cfg: SchemeConfig, reuse=None):
    """Shared inner iteration of the implicit schemes."""
    nonlinear_constraint = cfg.scheme == "nonlinear_det"
    u = np.zeros(ops.vel.ndof)
    lam = np.zeros(ops.pres.ndof)
    history = []
    worst_residual = 0.0
    det_residual = None
    if reuse is None:
        reuse = FactorReuse()
    for iteration in range(1, cfg.newton_max_iters + 1):
        if nonlinear_constraint:
            dmat, c_vec, det_residual = _det_constraint(ops, cfg, u)
            constraint, rhs_c = dmat, dmat @ u - c_vec
        else:
            constraint, rhs_c = ops.div, np.zeros(ops.pres.ndof)
        u_new, lam, rep = _solve_inner(ops, cfg, u, constraint, rhs_c, reuse=reuse)
        worst_residual = max(worst_residual, rep.relative_residual)
        delta = u_new - u
        inc = float(delta @ (ops.mass @ delta))
        history.append(inc)
        u = u_new
        if inc < cfg.newton_tol:
            break
    else:
        raise NewtonDivergenceError(
            f"inner iteration did not reach {cfg.newton_tol:.1e} within "
            f"{cfg.newton_max_iters} iterations",
            increment_history=history,
        )
    if nonlinear_constraint:
        # converged determinant residual, measured at the final state
        *_, det_residual = _det_constraint(ops, cfg, u)
    return u, lam, worst_residual, iteration, history[-1], det_residual


def run_step(mesh: TriangleMesh, cfg: SchemeConfig, reuse=None):
    """Advance one time step; returns (velocity, pressure, mesh', report).

    ``reuse`` optionally shares a saddle factorization across consecutive
    steps (results are unchanged; see FactorReuse).
    """
    ops = _StepOperators(mesh, cfg)
    if cfg.scheme == "explicit":
        u, lam, residual, iters, inc, det_res = _solve_explicit(ops, cfg, reuse=reuse)
    else:
        u, lam, residual, iters, inc, det_res = _newton_loop(ops, cfg, reuse=reuse)

    curve_before = mesh.boundary_curve_view
    vertex_vel = ops.vel.vertex_velocities(u)
    new_mesh = advect_mesh(mesh, vertex_vel, cfg.dt)
    curve_after = new_mesh.boundary_curve_view

    report = StepReport(
        scheme=cfg.scheme,
        newton_iterations=iters,
        increment_norm=inc,
        kkt_residual=residual,
        perimeter_before=curve_before.perimeter,
        perimeter_after=curve_after.perimeter,
        area_before=curve_before.area,
        area_after=curve_after.area,
        max_displacement=float(cfg.dt * np.max(np.hypot(vertex_vel[:, 0], vertex_vel[:, 1]))),
        monotone=curve_after.perimeter
        <= curve_before.perimeter * (1.0 + PERIMETER_MONOTONE_RTOL),
        det_residual=det_res,
    )
    velocity = FeField("velocity", u, mesh.mesh_id)
    pressure = FeField("pressure", -lam, mesh.mesh_id)
    return velocity, pressure, new_mesh, report


def step_explicit(mesh, cfg: SchemeConfig):
    return run_step(mesh, replace(cfg, scheme="explicit"))


def step_newton(mesh, cfg: SchemeConfig):
    return run_step(mesh, replace(cfg, scheme="newton"))


def step_curl(mesh, cfg: SchemeConfig):
    return run_step(mesh, replace(cfg, scheme="curl"))


def step_nonlinear_det(mesh, cfg: SchemeConfig):
    return run_step(mesh, replace(cfg, scheme="nonlinear_det"))


def _diagnostics_record(t, curve_after, curve_before, boundary_vel, m_max):
    if boundary_vel is None:
        ucm = (0.0, 0.0)
    else:
        # exact edge-flux moment of the trace: vanishes to roundoff for a
        # discretely divergence-free velocity, so conservation violations
        # are measured, not quadrature noise
        ucm = tuple(boundary_flux_moment(curve_before, boundary_vel))
    fc = fourier_decompose(curve_after, m_max)
    return DiagnosticsRecord(
        t=t,
        area=curve_after.area,
        perimeter=curve_after.perimeter,
        u_cm=ucm,
        fourier_cos=tuple(fc.cos),
        fourier_sin=tuple(fc.sin),
        fourier_mean=fc.mean,
    )


def run_simulation(shape: PolarShapeSpec, cfg: SchemeConfig) -> SimulationResult:
    """Run the configured scheme from a polar shape until t_end.

    Diagnostics are recorded at t = 0 and after every ``output_stride``
    steps (plus the final step): enclosed area, perimeter, center-of-mass
    velocity from the boundary flux of the step velocity, and the radial
    mode coefficients of the transported interface.  Snapshots hold the
    pre-step domain together with the fields computed on it.  Remeshing
    runs after every step per the mesh policy; it never moves boundary
    vertices.
    """
    policy = cfg.mesh_policy
    curve = sample_polar_boundary(shape, policy.boundary_vertex_count)
    mesh = generate_mesh(curve, policy)

    diags = DiagnosticsSeries(cfg.m_max)
    diags.append(_diagnostics_record(0.0, mesh.boundary_curve_view, None, None, cfg.m_max))
    snapshots = []
    reports = []

    n_steps = int(round(cfg.t_end / cfg.dt))
    reuse = FactorReuse()
    for step in range(1, n_steps + 1):
        record_this = (step - 1) % cfg.output_stride == 0
        try:
            velocity, pressure, new_mesh, report = run_step(mesh, cfg, reuse=reuse)
            new_mesh, remeshed = maybe_remesh(new_mesh, policy)
            report.remeshed = remeshed
        except Exception as exc:
            raise SimulationFailure(
                f"step {step} (t = {step * cfg.dt:.6g}) failed: {exc}",
                step_index=step,
                mesh=mesh,
            ) from exc
        if record_this:
            snapshots.append(Snapshot((step - 1) * cfg.dt, mesh, velocity, pressure))
        reports.append(report)
        t = step * cfg.dt
        if step % cfg.output_stride == 0 or step == n_steps:
            diags.append(
                _diagnostics_record(
                    t,
                    new_mesh.boundary_curve_view,
                    mesh.boundary_curve_view,
                    _vertex_velocities(velocity, mesh)[mesh.boundary_loop],
                    cfg.m_max,
                )
            )
        mesh = new_mesh
    if n_steps > 0:
        snapshots.append(Snapshot(n_steps * cfg.dt, mesh, None, None))
    return SimulationResult(
        config=cfg,
        diagnostics=diags,
        snapshots=snapshots,
        step_reports=reports,
        final_mesh=mesh,
    )


def _vertex_velocities(velocity: FeField, mesh: TriangleMesh):
    nv = mesh.n_vertices
    c = np.asarray(velocity.coeffs)
    return np.column_stack([c[:nv], c[nv : 2 * nv]])


def tangential_diagnostic(mesh: TriangleMesh, velocity, sigma: float,
                          kappa_floor: float = 0.05):
    """Observational check of the tangential/normal trace relation.

    At a minimizer of the boundary formulation the tangential velocity is
    expected to satisfy u_tau = (sigma kappa)^(-1) d(u_n)/ds wherever the
    curvature is away from zero; with zero curvature the tangential trace
    carries no information.  Both the sigma-scaled and unscaled residuals
    are reported (the scaling of the relation is itself under question);
    nothing is enforced.
    """
    curve = mesh.boundary_curve_view
    nv = mesh.n_vertices
    coeffs = velocity.coeffs if isinstance(velocity, FeField) else np.asarray(velocity)
    uv = np.column_stack([coeffs[:nv], coeffs[nv : 2 * nv]])[mesh.boundary_loop]
    u_tau = np.sum(uv * curve.vertex_tangents, axis=1)
    u_n = np.sum(uv * curve.vertex_normals, axis=1)
    kappa = np.sum(vertex_curvature_vector(curve) * curve.vertex_normals, axis=1)
    ell = curve.segment_lengths
    dun_ds = (np.roll(u_n, -1) - np.roll(u_n, 1)) / (ell + np.roll(ell, 1))
    mask = np.abs(kappa) > kappa_floor
    return {
        "vertex_index": np.nonzero(mask)[0],
        "kappa": kappa[mask],
        "residual_sigma_scaled": np.abs(u_tau - dun_ds / (sigma * kappa))[mask],
        "residual_unscaled": np.abs(u_tau - dun_ds / kappa)[mask],
    }
