"""Direct solution of the sparse saddle-point systems.

Every scheme reduces to a symmetric block system

    [ A   B^T ] [u]   [f]
    [ B   -S  ] [p] = [g]

with A symmetric (mass plus boundary stiffness, possibly curl-penalized)
and S an optional positive semidefinite pressure block produced by bubble
condensation.  The full system is factorized with a fill-reducing sparse
LU; desk-scale problems make a direct method both simple and fast, and
the factorization is deterministic, so identical inputs give bit-identical
solutions.

Pressure gauges handle the constant-pressure nullspace that arises when
the constraint only sees pressure gradients: ``pin-one-dof`` forces the
first pressure dof to zero, ``zero-mean`` appends one dense Lagrange row
enforcing a weighted zero mean.  The natural interface condition of the
droplet schemes pins the pressure on its own, so they run with ``none``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverFailure
from .fem import check_symmetric, export_matrix_market

__all__ = ["SaddleSystem", "SolveReport", "solve_saddle"]

GAUGES = ("none", "pin-one-dof", "zero-mean")


@dataclass
class SaddleSystem:
    """Assembled saddle-point blocks plus gauge selection.

    ``pressure_block`` (S) is subtracted from the lower-right block;
    ``zero_mean_weights`` supplies the weights of the zero-mean gauge
    (uniform when omitted).
    """

    A: sp.spmatrix
    B: sp.spmatrix
    f: np.ndarray
    g: np.ndarray
    gauge: str = "none"
    pressure_block: Optional[sp.spmatrix] = None
    zero_mean_weights: Optional[np.ndarray] = None
    # optional symmetric permutation of the stacked (u, p) unknowns applied
    # before factorization; mesh-local interleavings cut the LU fill
    dof_order: Optional[np.ndarray] = None

    def __post_init__(self):
        self.A = sp.csr_matrix(self.A)
        self.B = sp.csr_matrix(self.B)
        self.f = np.asarray(self.f, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        n_u = self.A.shape[0]
        n_p = self.B.shape[0]
        if self.A.shape != (n_u, n_u):
            raise ValueError("A must be square")
        if self.B.shape[1] != n_u:
            raise ValueError(f"B has {self.B.shape[1]} columns, expected {n_u}")
        if self.f.shape != (n_u,) or self.g.shape != (n_p,):
            raise ValueError("right-hand side shapes do not match the blocks")
        if self.gauge not in GAUGES:
            raise ValueError(f"unknown gauge {self.gauge!r}; pick one of {GAUGES}")
        if self.pressure_block is not None:
            self.pressure_block = sp.csr_matrix(self.pressure_block)
            if self.pressure_block.shape != (n_p, n_p):
                raise ValueError("pressure block must be n_p x n_p")
        if not check_symmetric(self.A, tol=1e-14):
            raise ValueError("velocity block A is not symmetric to 1e-14")

    @property
    def n_u(self):
        return self.A.shape[0]

    @property
    def n_p(self):
        return self.B.shape[0]


@dataclass
class SolveReport:
    """Result quality of one saddle solve.

    The residual is measured on the originally assembled (ungauged)
    system.
    """

    relative_residual: float
    pivot_ok: bool
    n_u: int
    n_p: int


class FactorReuse:
    """Shares a factorization between solves of nearby systems.

    Consecutive inner iterations of a time step assemble systems that
    differ by O(dt) boundary terms; iterative refinement against the
    stored factorization then solves the new system to machine precision
    in a few triangular solves.  Falls back to a fresh factorization
    whenever refinement stalls, so reuse never changes results beyond
    roundoff.
    """

    def __init__(self):
        self._lu = None
        self._shape = None

    def store(self, lu, shape):
        self._lu = lu
        self._shape = shape

    def try_refine(self, kkt, rhs, tol_rel=1e-12, max_sweeps=10):
        if self._lu is None or self._shape != kkt.shape:
            return None
        x = self._lu.solve(rhs)
        norm_rhs = max(float(np.linalg.norm(rhs)), 1e-300)
        for _ in range(max_sweeps):
            r = rhs - kkt @ x
            if np.linalg.norm(r) <= tol_rel * norm_rhs:
                return x
            dx = self._lu.solve(r)
            if not np.all(np.isfinite(dx)):
                return None
            x = x + dx
        return None


def _kkt_matrix(system: SaddleSystem):
    s_blk = system.pressure_block
    lower_right = -s_blk if s_blk is not None else None
    return sp.bmat([[system.A, system.B.T], [system.B, lower_right]], format="csc")


def solve_saddle(system: SaddleSystem, residual_tol: float = 1e-10, dump_matrix=None,
                 reuse: Optional[FactorReuse] = None):
    """Solve the saddle system; returns ``(u, p, report)``.

    Raises SolverFailure on a singular factorization (naming the
    structurally deficient block when detectable) or when the
    re-multiplied residual exceeds ``residual_tol``.  ``dump_matrix``
    optionally writes the assembled KKT matrix in MatrixMarket format;
    ``reuse`` lets a caller share one factorization across a family of
    nearby systems (see FactorReuse).
    """
    n_u, n_p = system.n_u, system.n_p
    kkt = _kkt_matrix(system)
    rhs = np.concatenate([system.f, system.g])

    if system.gauge != "none":
        if n_p == 0:
            raise ValueError("a pressure gauge needs pressure dofs")
        if system.gauge == "pin-one-dof":
            w = np.zeros(n_p)
            w[0] = 1.0
        else:
            w = (
                np.asarray(system.zero_mean_weights, dtype=float)
                if system.zero_mean_weights is not None
                else np.full(n_p, 1.0 / n_p)
            )
        border = np.concatenate([np.zeros(n_u), w])
        kkt = sp.bmat(
            [[kkt, border[:, None]], [border[None, :], None]], format="csc"
        )
        rhs = np.concatenate([rhs, [0.0]])

    if dump_matrix is not None:
        export_matrix_market(kkt, dump_matrix)

    perm = None
    if system.dof_order is not None:
        perm = np.asarray(system.dof_order, dtype=np.int64)
        if system.gauge != "none":
            perm = np.concatenate([perm, [kkt.shape[0] - 1]])
        kkt = kkt[perm][:, perm].tocsc()
        rhs = rhs[perm]

    _reject_empty_rows(kkt, n_u)
    sol = reuse.try_refine(kkt, rhs) if reuse is not None else None
    if sol is None:
        sol = _factor_and_solve(kkt, rhs, reuse)
    if perm is not None:
        unperm = np.empty_like(perm)
        unperm[perm] = np.arange(len(perm))
        sol = sol[unperm]

    u = sol[:n_u]
    p = sol[n_u : n_u + n_p]

    res_u = system.A @ u + system.B.T @ p - system.f
    res_p = system.B @ u - system.g
    if system.pressure_block is not None:
        res_p = res_p - system.pressure_block @ p
    norm_rhs = float(np.hypot(np.linalg.norm(system.f), np.linalg.norm(system.g)))
    residual = float(np.hypot(np.linalg.norm(res_u), np.linalg.norm(res_p)))
    rel = residual / max(norm_rhs, 1e-300)
    report = SolveReport(relative_residual=rel, pivot_ok=True, n_u=n_u, n_p=n_p)
    if rel > residual_tol and norm_rhs > 0.0:
        raise SolverFailure(
            f"saddle solve residual {rel:.3e} exceeds tolerance {residual_tol:.1e}",
            report=report,
        )
    return u, p, report


def _factor_and_solve(kkt, rhs, reuse=None):
    """Sparse LU with a symmetric-mode ordering, strict-pivoting fallback.

    The KKT matrices here are symmetric indefinite; SuperLU's symmetric
    mode with a threshold pivot keeps the fill-reducing ordering intact
    and is several times faster than plain partial pivoting.  Accuracy is
    guarded by the caller's residual check; if this pass yields a poor or
    non-finite solution the strict partial-pivoting path is tried before
    giving up.
    """
    attempts = (
        dict(permc_spec="MMD_AT_PLUS_A",
             options=dict(SymmetricMode=True, DiagPivotThresh=1e-3)),
        dict(permc_spec="COLAMD"),
    )
    last_exc = None
    for kwargs in attempts:
        try:
            lu = spla.splu(kkt, **kwargs)
            sol = lu.solve(rhs)
        except RuntimeError as exc:
            last_exc = exc
            continue
        if np.all(np.isfinite(sol)):
            residual = np.linalg.norm(kkt @ sol - rhs)
            if residual <= 1e-11 * max(np.linalg.norm(rhs), 1e-300) or residual == 0.0:
                if reuse is not None:
                    reuse.store(lu, kkt.shape)
                return sol
            last_exc = SolverFailure(
                f"factorization pass left residual {residual:.3e}"
            )
    if isinstance(last_exc, SolverFailure):
        raise last_exc
    raise SolverFailure(f"sparse LU factorization failed: {last_exc}") from last_exc


def _reject_empty_rows(kkt, n_u):
    """Structurally empty rows make the factorization singular; name them."""
    counts = np.diff(kkt.tocsr().indptr)
    if np.any(counts == 0):
        row = int(np.argmax(counts == 0))
        block = "velocity" if row < n_u else "constraint"
        raise SolverFailure(
            f"KKT row {row} is structurally empty ({block} block deficient)"
        )
