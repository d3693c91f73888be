import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heleshaw.errors import GeometryError, TriangleInversionError
from heleshaw.geometry import PolarShapeSpec, sample_polar_boundary
from heleshaw.mesh import (
    MeshPolicy,
    TriangleMesh,
    advect_mesh,
    generate_mesh,
    maybe_remesh,
    mesh_from_text,
    mesh_to_text,
    quality_report,
)

UNIFORM = MeshPolicy(boundary_vertex_count=64, interior_target_edge=0.01, adaptive=False)
ADAPTIVE = MeshPolicy(boundary_vertex_count=64, interior_target_edge=0.25, adaptive=True)


@pytest.fixture(scope="module")
def disk64():
    curve = sample_polar_boundary(PolarShapeSpec(1.0), 64)
    return generate_mesh(curve, UNIFORM)


class TestGeneration:
    def test_boundary_vertices_bit_exact(self, disk64):
        curve = sample_polar_boundary(PolarShapeSpec(1.0), 64)
        assert np.array_equal(disk64.vertices[disk64.boundary_loop], curve.vertices)

    def test_area_matches_polygon(self, disk64):
        poly_area = disk64.boundary_curve_view.area
        assert np.sum(disk64.triangle_areas) == pytest.approx(poly_area, rel=1e-13)

    def test_quality_above_threshold(self, disk64):
        min_angle, ratio = quality_report(disk64)
        assert min_angle >= 20.0
        assert ratio >= 1.0

    def test_adaptive_grades_and_saves_vertices(self):
        curve = sample_polar_boundary(PolarShapeSpec(1.0), 64)
        uni = generate_mesh(curve, UNIFORM)
        ada = generate_mesh(curve, ADAPTIVE)
        assert ada.n_vertices < uni.n_vertices
        # boundary-adjacent edges shorter than bulk edges
        h_bnd = curve.perimeter / curve.n
        _, ratio = quality_report(ada)
        assert ratio > 2.0  # graded triangles span a range of areas
        bulk_edge_target = ADAPTIVE.interior_target_edge
        assert bulk_edge_target / h_bnd > 2.0

    def test_degenerate_eight_vertex_fan(self):
        curve = sample_polar_boundary(PolarShapeSpec(1.0), 8)
        mesh = generate_mesh(curve, MeshPolicy(boundary_vertex_count=8, interior_target_edge=2.0))
        assert mesh.n_vertices == 9
        assert mesh.n_triangles == 8

    def test_perturbed_shape_meshes(self):
        spec = PolarShapeSpec(1.0, ((2, 0.03, 0.0), (3, 0.0, -0.03), (4, 0.0, 0.03), (5, -0.03, 0.0)))
        curve = sample_polar_boundary(spec, 256)
        mesh = generate_mesh(curve, MeshPolicy(boundary_vertex_count=256))
        assert np.array_equal(mesh.vertices[mesh.boundary_loop], curve.vertices)
        min_angle, _ = quality_report(mesh)
        assert min_angle >= 15.0

    def test_rotation_equivariant_connectivity(self):
        curve = sample_polar_boundary(PolarShapeSpec(1.0, ((3, 0.02, 0.0),)), 64)
        m0 = generate_mesh(curve, UNIFORM)
        m1 = generate_mesh(curve.rotated(0.7), UNIFORM)
        assert np.array_equal(m0.triangles, m1.triangles)
        c, s = np.cos(0.7), np.sin(0.7)
        rot = np.array([[c, -s], [s, c]])
        assert np.max(np.abs(m1.vertices - m0.vertices @ rot.T)) < 1e-13


class TestValidation:
    def test_rejects_inverted_triangle(self):
        verts = [[0, 0], [1, 0], [0, 1]]
        with pytest.raises(TriangleInversionError):
            TriangleMesh(verts, [[0, 2, 1]], [0, 1, 2])

    def test_rejects_wrong_loop(self, disk64):
        with pytest.raises(GeometryError):
            TriangleMesh(disk64.vertices, disk64.triangles, disk64.boundary_loop[::-1])

    def test_single_triangle_ok(self):
        m = TriangleMesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], [0, 1, 2])
        assert m.triangle_areas[0] == pytest.approx(0.5)


class TestAdvection:
    def test_zero_velocity_identity(self, disk64):
        m2 = advect_mesh(disk64, np.zeros((disk64.n_vertices, 2)), 0.1)
        assert np.array_equal(m2.vertices, disk64.vertices)
        assert np.array_equal(m2.triangles, disk64.triangles)

    def test_dilation_scales_areas(self, disk64):
        dt = 0.25
        m2 = advect_mesh(disk64, disk64.vertices, dt)
        assert np.allclose(m2.triangle_areas, (1 + dt) ** 2 * disk64.triangle_areas, rtol=1e-12)

    def test_rigid_translation_preserves_area(self, disk64):
        vel = np.tile([1.0, 0.0], (disk64.n_vertices, 1))
        m2 = advect_mesh(disk64, vel, 0.1)
        assert np.allclose(m2.vertices[:, 0] - disk64.vertices[:, 0], 0.1)
        assert np.sum(m2.triangle_areas) == pytest.approx(np.sum(disk64.triangle_areas), rel=1e-13)

    @settings(max_examples=15, deadline=None)
    @given(
        a11=st.floats(-0.3, 0.3), a12=st.floats(-0.3, 0.3),
        a21=st.floats(-0.3, 0.3), a22=st.floats(-0.3, 0.3),
        b1=st.floats(-1, 1), b2=st.floats(-1, 1),
    )
    def test_affine_advection_scales_by_jacobian(self, a11, a12, a21, a22, b1, b2):
        curve = sample_polar_boundary(PolarShapeSpec(1.0), 32)
        mesh = generate_mesh(curve, MeshPolicy(boundary_vertex_count=32, interior_target_edge=0.5))
        amat = np.array([[a11, a12], [a21, a22]])
        dt = 0.5
        det = np.linalg.det(np.eye(2) + dt * amat)
        if det <= 1e-3:
            return
        vel = mesh.vertices @ amat.T + np.array([b1, b2])
        moved = advect_mesh(mesh, vel, dt)
        assert np.allclose(moved.triangle_areas, det * mesh.triangle_areas, rtol=1e-12, atol=1e-15)

    def test_inversion_reports_triangle(self, disk64):
        # drag the center vertex across the far side of the mesh
        vel = np.zeros((disk64.n_vertices, 2))
        vel[-1] = (3.0, 0.0)
        with pytest.raises(TriangleInversionError) as exc:
            advect_mesh(disk64, vel, 1.0)
        assert exc.value.triangle_index is not None


class TestQualityAndRemesh:
    def test_equilateral_min_angle(self):
        m = TriangleMesh([[0, 0], [1, 0], [0.5, np.sqrt(3) / 2]], [[0, 1, 2]], [0, 1, 2])
        min_angle, ratio = quality_report(m)
        assert min_angle == pytest.approx(60.0, abs=1e-9)
        assert ratio == pytest.approx(1.0)

    def test_right_isoceles_min_angle(self):
        m = TriangleMesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], [0, 1, 2])
        min_angle, _ = quality_report(m)
        assert min_angle == pytest.approx(45.0, abs=1e-9)

    def test_good_mesh_not_remeshed(self, disk64):
        out, flag = maybe_remesh(disk64, UNIFORM)
        assert out is disk64
        assert flag is False

    def test_degraded_mesh_remeshed_boundary_preserved(self):
        curve = sample_polar_boundary(PolarShapeSpec(1.0), 64)
        policy = MeshPolicy(boundary_vertex_count=64, interior_target_edge=0.01,
                            adaptive=False, max_area_ratio=6.0)
        mesh = generate_mesh(curve, policy)
        # differential radial stretch blows up the area ratio without
        # inverting anything
        r2 = np.sum(mesh.vertices**2, axis=1)
        mesh = advect_mesh(mesh, mesh.vertices * r2[:, None], 0.8)
        _, ratio = quality_report(mesh)
        assert ratio > policy.max_area_ratio  # actually degraded
        boundary_before = mesh.vertices[mesh.boundary_loop].copy()
        out, flag = maybe_remesh(mesh, policy)
        assert flag is True
        assert np.array_equal(out.vertices[out.boundary_loop], boundary_before)
        _, new_ratio = quality_report(out)
        assert new_ratio <= policy.max_area_ratio


class TestSerialization:
    def test_roundtrip_bit_exact(self, disk64):
        text = mesh_to_text(disk64)
        back = mesh_from_text(text)
        assert np.array_equal(back.vertices, disk64.vertices)
        assert np.array_equal(back.triangles, disk64.triangles)
        assert np.array_equal(back.boundary_loop, disk64.boundary_loop)
        assert mesh_to_text(back) == text

    def test_header_counts(self, disk64):
        header = mesh_to_text(disk64).splitlines()[0].split()
        assert [int(x) for x in header] == [disk64.n_vertices, disk64.n_triangles, 64]
