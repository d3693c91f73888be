"""Discrete differential geometry of the closed droplet interface.

The interface is a closed, simple, counter-clockwise polyline.  Tangents,
outward normals, curvature and arc-length weights are derived from the
vertex positions alone, so curves are cheap to rebuild after every
transport step.  All operations here are pure functions of immutable
inputs and may be called concurrently.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError

__all__ = [
    "PolarShapeSpec",
    "BoundaryCurve",
    "FourierCoefficients",
    "sample_polar_boundary",
    "curve_measures",
    "vertex_curvature_vector",
    "fourier_decompose",
    "center_of_mass_velocity",
    "boundary_flux_moment",
    "curve_to_csv",
    "curve_from_csv",
]

_TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class PolarShapeSpec:
    """Star-shaped boundary R(theta) = R0 (1 + sum_m c_m cos(m t) + s_m sin(m t)).

    ``modes`` is a sequence of ``(m, c_m, s_m)`` triples; amplitudes are
    relative to the base radius.  Lengths are dimensionless.
    """

    base_radius: float = 1.0
    modes: tuple[tuple[int, float, float], ...] = ()

    def __post_init__(self):
        if not np.isfinite(self.base_radius) or self.base_radius <= 0.0:
            raise GeometryError(f"base radius must be positive, got {self.base_radius}")
        norm = []
        for m, c, s in self.modes:
            if int(m) != m or m < 0:
                raise GeometryError(f"mode number must be a non-negative integer, got {m}")
            if not (np.isfinite(c) and np.isfinite(s)):
                raise GeometryError("mode amplitudes must be finite")
            norm.append((int(m), float(c), float(s)))
        object.__setattr__(self, "modes", tuple(norm))

    def radius(self, theta):
        """Radius of the shape at polar angle(s) ``theta``."""
        theta = np.asarray(theta, dtype=float)
        r = np.ones_like(theta)
        for m, c, s in self.modes:
            r = r + c * np.cos(m * theta) + s * np.sin(m * theta)
        return self.base_radius * r


class BoundaryCurve:
    """Closed oriented polyline with cached frames and measures.

    Vertices run counter-clockwise; the closing edge from the last vertex
    back to the first is implicit.  Construction validates orientation
    (positive signed area), non-degenerate edges and simplicity (no two
    non-adjacent segments cross).  The vertex array is frozen after
    construction.
    """

    def __init__(self, vertices):
        v = np.array(vertices, dtype=float, copy=True)
        if v.ndim != 2 or v.shape[1] != 2:
            raise GeometryError(f"expected an (n, 2) vertex array, got shape {v.shape}")
        n = v.shape[0]
        if n < 3:
            raise GeometryError("a closed curve needs at least 3 vertices")
        if not np.all(np.isfinite(v)):
            raise GeometryError("vertex coordinates must be finite")

        seg = np.roll(v, -1, axis=0) - v
        ell = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(ell == 0.0):
            raise GeometryError("curve has a zero-length edge")

        x, y = v[:, 0], v[:, 1]
        cross = x * np.roll(y, -1) - np.roll(x, -1) * y
        area = 0.5 * float(np.sum(cross))
        if area <= 0.0:
            raise GeometryError(
                f"vertices must run counter-clockwise (signed area {area:.3e} <= 0)"
            )
        _check_simple(v, seg)

        edge_tan = seg / ell[:, None]
        # vertex frame: normalized average of the two adjacent edge tangents,
        # outward normal is the tangent rotated by -pi/2
        tsum = edge_tan + np.roll(edge_tan, 1, axis=0)
        tnorm = np.hypot(tsum[:, 0], tsum[:, 1])
        if np.any(tnorm < 1e-14):
            raise GeometryError("curve has a cusp (adjacent tangents cancel)")
        vert_tan = tsum / tnorm[:, None]
        vert_nrm = np.column_stack([vert_tan[:, 1], -vert_tan[:, 0]])

        wsum = cross[:, None] * (v + np.roll(v, -1, axis=0))
        centroid = np.sum(wsum, axis=0) / (6.0 * area)

        v.setflags(write=False)
        for arr in (seg, ell, edge_tan, vert_tan, vert_nrm):
            arr.setflags(write=False)

        self.vertices = v
        self.n = n
        self.segments = seg
        self.segment_lengths = ell
        self.edge_tangents = edge_tan
        self.vertex_tangents = vert_tan
        self.vertex_normals = vert_nrm
        self.perimeter = float(np.sum(ell))
        self.area = area
        self.centroid = centroid

    @property
    def vertex_weights(self):
        """Arc-length weight of each vertex (mean of adjacent edge lengths)."""
        ell = self.segment_lengths
        return 0.5 * (ell + np.roll(ell, 1))

    def translated(self, offset):
        return BoundaryCurve(self.vertices + np.asarray(offset, dtype=float))

    def rotated(self, angle):
        c, s = np.cos(angle), np.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        return BoundaryCurve(self.vertices @ rot.T)

    def radial_graph(self):
        """Angles (strictly increasing, unwrapped) and radii about the centroid.

        Raises GeometryError when the curve is not star-shaped with respect
        to its own centroid, i.e. the radial interpolant would be multivalued.
        """
        rel = self.vertices - self.centroid
        radii = np.hypot(rel[:, 0], rel[:, 1])
        theta = np.arctan2(rel[:, 1], rel[:, 0])
        dtheta = np.diff(theta, append=theta[:1] + _TWO_PI) % _TWO_PI
        if np.any(dtheta <= 0.0) or np.any(dtheta >= np.pi):
            raise GeometryError(
                "curve is not star-shaped about its centroid; radial graph is multivalued"
            )
        return np.concatenate([theta[:1], theta[:1] + np.cumsum(dtheta)]), radii


def _check_simple(v, seg):
    """Reject curves with properly crossing non-adjacent segments."""
    n = v.shape[0]
    if n > 4096:
        raise GeometryError("simplicity check limited to 4096 vertices")
    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))
    i, j = i[keep], j[keep]

    def orient(p, d, q):
        r = q - p
        return d[:, 0] * r[:, 1] - d[:, 1] * r[:, 0]

    a, da = v[i], seg[i]
    b, db = v[j], seg[j]
    b2 = b + db
    a2 = a + da
    o1 = orient(a, da, b)
    o2 = orient(a, da, b2)
    o3 = orient(b, db, a)
    o4 = orient(b, db, a2)
    crossing = (o1 * o2 < 0.0) & (o3 * o4 < 0.0)
    if np.any(crossing):
        k = int(np.argmax(crossing))
        raise GeometryError(f"curve self-intersects (segments {i[k]} and {j[k]})")


@dataclass(frozen=True)
class FourierCoefficients:
    """Cosine/sine coefficients of the radial deviation R(theta) - 1.

    ``cos[m-1]`` and ``sin[m-1]`` hold the coefficients of cos(m theta) and
    sin(m theta) for 1 <= m <= m_max; ``mean`` is the angular average of
    R(theta) - 1.
    """

    m_max: int
    cos: np.ndarray
    sin: np.ndarray
    mean: float

    def coefficient(self, label):
        """Look up a coefficient by label, e.g. ``"c2"`` or ``"s3"``."""
        kind, m = label[0], int(label[1:])
        if not 1 <= m <= self.m_max:
            raise KeyError(label)
        if kind == "c":
            return float(self.cos[m - 1])
        if kind == "s":
            return float(self.sin[m - 1])
        raise KeyError(label)


def sample_polar_boundary(spec: PolarShapeSpec, n_vertices: int) -> BoundaryCurve:
    """Sample a star-shaped spec at uniformly spaced polar angles.

    Vertex k sits at angle 2 pi k / n at radius R(theta_k).  Rejects specs
    whose radius is not strictly positive at the sampled angles.
    """
    if n_vertices < 8:
        raise GeometryError(f"need at least 8 boundary vertices, got {n_vertices}")
    theta = _TWO_PI * np.arange(n_vertices) / n_vertices
    r = spec.radius(theta)
    if np.any(r <= 0.0):
        k = int(np.argmax(r <= 0.0))
        raise GeometryError(
            f"shape is not star-shaped: R({theta[k]:.4f}) = {r[k]:.4e} <= 0"
        )
    return BoundaryCurve(np.column_stack([r * np.cos(theta), r * np.sin(theta)]))


def curve_measures(curve: BoundaryCurve):
    """Perimeter and enclosed (positive) area of the polygon."""
    return curve.perimeter, curve.area


def vertex_curvature_vector(curve: BoundaryCurve) -> np.ndarray:
    """Discrete curvature vector H at each vertex.

    H_i = -(tau_{i+1/2} - tau_{i-1/2}) / w_i, the arc-length difference of
    the adjacent unit edge tangents.  For a counter-clockwise circle of
    radius R this points along the outward normal with |H| -> 1/R.
    """
    dt = curve.edge_tangents - np.roll(curve.edge_tangents, 1, axis=0)
    return -dt / curve.vertex_weights[:, None]


def fourier_decompose(curve: BoundaryCurve, m_max: int) -> FourierCoefficients:
    """Mode coefficients of the radial deviation about the curve centroid.

    Builds the piecewise-linear radial interpolant R(theta) from the
    vertices and integrates (R - 1) cos(m theta) and (R - 1) sin(m theta)
    with the composite trapezoid rule on the vertex angles.
    """
    if m_max < 1:
        raise ValueError("m_max must be >= 1")
    theta, radii = curve.radial_graph()
    f = radii - 1.0
    th = np.concatenate([theta[:-1], theta[:1] + _TWO_PI])  # closed grid
    fv = np.concatenate([f, f[:1]])
    dth = np.diff(th)

    def trapz(values):
        return float(np.sum(0.5 * (values[:-1] + values[1:]) * dth))

    mean = trapz(fv) / _TWO_PI
    cos = np.empty(m_max)
    sin = np.empty(m_max)
    for m in range(1, m_max + 1):
        cos[m - 1] = trapz(fv * np.cos(m * th)) / np.pi
        sin[m - 1] = trapz(fv * np.sin(m * th)) / np.pi
    return FourierCoefficients(m_max=m_max, cos=cos, sin=sin, mean=mean)


def center_of_mass_velocity(curve: BoundaryCurve, normal_velocity) -> np.ndarray:
    """Mean droplet velocity from the boundary flux of x (u . n).

    Trapezoidal quadrature of x (u . n) over the boundary, divided by the
    enclosed area.  ``normal_velocity`` holds u . n at each vertex.
    """
    q = np.asarray(normal_velocity, dtype=float)
    if q.shape != (curve.n,):
        raise ValueError(f"expected {curve.n} per-vertex values, got shape {q.shape}")
    w = curve.vertex_weights
    return (curve.vertices * (q * w)[:, None]).sum(axis=0) / curve.area


def boundary_flux_moment(curve: BoundaryCurve, vertex_velocities) -> np.ndarray:
    """Mean droplet velocity from the exact edge flux of the velocity trace.

    Integrates x (u . n) edge by edge with the edge normal and the linear
    velocity trace (the integrand is quadratic per edge, so this is
    exact), divided by the enclosed area.  For a discretely
    divergence-free field the result vanishes to roundoff, which makes
    this the quadrature of choice for conservation diagnostics; the
    vertex-sampled trapezoid above carries an O(h^2) normal-projection
    error instead.
    """
    uv = np.asarray(vertex_velocities, dtype=float)
    if uv.shape != (curve.n, 2):
        raise ValueError(f"expected ({curve.n}, 2) velocities, got {uv.shape}")
    x = curve.vertices
    xj = np.roll(x, -1, axis=0)
    uj = np.roll(uv, -1, axis=0)
    seg = curve.segments
    ell = curve.segment_lengths
    n_edge = np.column_stack([seg[:, 1], -seg[:, 0]]) / ell[:, None]
    fi = np.sum(uv * n_edge, axis=1)
    fj = np.sum(uj * n_edge, axis=1)
    xm = 0.5 * (x + xj)
    fm = 0.5 * (fi + fj)
    integral = (ell / 6.0)[:, None] * (
        x * fi[:, None] + 4.0 * xm * fm[:, None] + xj * fj[:, None]
    )
    return integral.sum(axis=0) / curve.area


def curve_to_csv(curve: BoundaryCurve, target) -> None:
    """Write ``theta,x,y`` rows (angle about the centroid, 17 significant digits)."""
    rel = curve.vertices - curve.centroid
    theta = np.arctan2(rel[:, 1], rel[:, 0]) % _TWO_PI
    lines = ["theta,x,y"]
    for t, (x, y) in zip(theta, curve.vertices):
        lines.append(f"{t:.17g},{x:.17g},{y:.17g}")
    text = "\n".join(lines) + "\n"
    if isinstance(target, (str, bytes)) or hasattr(target, "__fspath__"):
        with open(target, "w") as fh:
            fh.write(text)
    else:
        target.write(text)


def curve_from_csv(source) -> BoundaryCurve:
    """Read a curve written by :func:`curve_to_csv`."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source) as fh:
            text = fh.read()
    else:
        text = source.read()
    rows = [ln for ln in text.strip().splitlines() if ln and not ln.startswith("theta")]
    data = np.array([[float(tok) for tok in ln.split(",")] for ln in rows])
    return BoundaryCurve(data[:, 1:3])
