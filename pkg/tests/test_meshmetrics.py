import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from meshes import box, cylinder, icosphere, merge, unit_cube

from s2s.bodymodel import NUM_BETAS, TriMesh, deform, make_procedural_model
from s2s.errors import MeshTopologyError, SliceError
from s2s.meshmetrics import (
    CSV_HEADER,
    Measurements,
    SliceSpec,
    circumference,
    height,
    hull_perimeter,
    load_heatmap,
    measure_all,
    per_vertex_error,
    save_heatmap,
    slice_loops,
    volume,
    weight,
)
from s2s.silhouette import rotate_view


@pytest.fixture(scope="module")
def body():
    return make_procedural_model()


class TestVolumeWeight:
    def test_unit_cube_exact(self):
        assert volume(unit_cube()) == 1.0
        assert weight(unit_cube(), 0.985) == 985.0

    def test_sphere(self):
        assert volume(icosphere(0.5, 5)) == pytest.approx(4 / 3 * math.pi * 0.125, rel=0.01)

    def test_sphere_weight(self):
        assert weight(icosphere(0.31, 5), 0.985) == pytest.approx(4 / 3 * math.pi * 0.31**3 * 985, rel=0.01)

    def test_zero_density(self):
        assert weight(unit_cube(), 0.0) == 0.0

    def test_tessellation_converges_from_below(self):
        vols = [volume(icosphere(0.5, k)) for k in (1, 2, 3, 4)]
        assert all(a < b for a, b in zip(vols, vols[1:]))
        assert vols[-1] < 4 / 3 * math.pi * 0.125

    def test_flipped_face_rejected(self):
        f = unit_cube().faces.copy()
        f[3] = f[3][::-1]
        with pytest.raises(MeshTopologyError, match="edge"):
            volume(TriMesh(unit_cube().vertices, f))

    def test_open_mesh_rejected(self):
        with pytest.raises(MeshTopologyError):
            volume(TriMesh(unit_cube().vertices, unit_cube().faces[2:]))

    @settings(max_examples=30, deadline=None)
    @given(t=st.tuples(*[st.floats(-50, 50)] * 3), s=st.floats(0.1, 5))
    def test_translation_and_scale(self, t, s):
        m = icosphere(0.4, 2)
        v0 = volume(m)
        assert volume(m.translated(t)) == pytest.approx(v0, rel=1e-9)
        assert volume(m.scaled(s)) == pytest.approx(s**3 * v0, rel=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(v=st.floats(1e-3, 10.0))
    def test_density_identity(self, v):
        m = unit_cube().scaled(v ** (1 / 3))
        assert weight(m, 0.985) == pytest.approx(985 * volume(m), rel=1e-12)


class TestHeight:
    def test_unit_cube(self):
        assert abs(height(unit_cube(), SliceSpec(cut_spacing=0.01)) - 1000) <= 10

    def test_translation_invariant(self):
        spec = SliceSpec()
        m = box(0.3, 1.234, 0.2)
        assert height(m.translated((0, 2, 0)), spec) == height(m, spec)

    @pytest.mark.parametrize("extent", [0.1, 0.5, 1.0, 1.7, 1.99])
    def test_within_one_cut(self, extent):
        spec = SliceSpec()
        assert abs(height(box(0.2, extent, 0.2), spec) - extent * 1000) <= spec.cut_spacing * 1000

    def test_scaling(self):
        spec = SliceSpec()
        m = box(0.3, 1.5, 0.2)
        assert abs(height(m.scaled(1.1), spec) - 1.1 * height(m, spec)) <= 5 + 1e-9

    def test_multiple_of_spacing(self):
        spec = SliceSpec(cut_spacing=0.005)
        h = height(box(0.2, 1.2345, 0.2), spec)
        assert h / 5 == pytest.approx(round(h / 5))


class TestCircumference:
    def test_cylinder(self):
        for frac in (0.1, 0.37, 0.5, 0.9):
            assert circumference(cylinder(0.15), frac) == pytest.approx(2 * math.pi * 150, rel=0.01)

    def test_radial_scaling(self):
        c1 = circumference(cylinder(0.15), 0.5)
        c2 = circumference(cylinder(0.3), 0.5)
        assert c2 == pytest.approx(2 * c1, rel=1e-9)

    def test_side_by_side_takes_larger(self):
        torso = cylinder(0.15)
        arm = cylinder(0.04, center_xz=(0.3, 0.0))
        both = merge(torso, arm)
        assert circumference(both, 0.5) == pytest.approx(circumference(torso, 0.5), rel=1e-12)

    def test_interior_merge_hulls_members(self):
        # two legs inside a wide "hip" bounding box get hulled together
        outer = cylinder(0.2)
        legs = merge(outer, cylinder(0.05, center_xz=(0.1, 0)), cylinder(0.05, center_xz=(-0.1, 0)))
        assert circumference(legs, 0.5, merge_interior=True) == pytest.approx(
            circumference(outer, 0.5), rel=1e-9
        )

    def test_hull_bridges_concavity(self):
        # L-shaped slice: hull perimeter is less than the raw outline
        pts = np.array([[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]], float)
        assert hull_perimeter(pts) == pytest.approx(6 + math.sqrt(2))

    def test_empty_slice(self):
        with pytest.raises(SliceError):
            slice_loops(unit_cube(), 5.0)

    def test_open_loop(self):
        m = cylinder(0.15, segments=64, rings=4)
        # drop one side face from the band between y = 0.25 and y = 0.5
        broken = TriMesh(m.vertices, np.delete(m.faces, 2 * 64, axis=0))
        with pytest.raises(SliceError):
            slice_loops(broken, 0.3)

    @settings(max_examples=25, deadline=None)
    @given(theta=st.floats(0, 359.9), dx=st.floats(-2, 2), dz=st.floats(-2, 2))
    def test_invariant_to_vertical_rotation_and_shift(self, body, theta, dx, dz):
        mesh = body.template
        ref = circumference(mesh, 0.62)
        moved = mesh.with_vertices(rotate_view(mesh.vertices, theta) + [dx, 0, dz])
        assert circumference(moved, 0.62) == pytest.approx(ref, rel=1e-3)

    def test_uniform_scaling(self, body):
        m = body.template
        assert circumference(m.scaled(1.2, center=(0, 0, 0)), 0.72) == pytest.approx(
            1.2 * circumference(m, 0.72), rel=1e-9
        )


class TestMeasureAll:
    def test_template(self, body):
        m = measure_all(body.template)
        assert 1400 <= m.height <= 2000
        assert all(v > 0 and math.isfinite(v) for v in (m.weight, m.bust, m.waist, m.hip))

    def test_waist_basis_monotone(self, body):
        k = 3  # waist region
        waists = [measure_all(deform(body, c * np.eye(NUM_BETAS)[k])).waist for c in (-2, -1, 0, 1, 2)]
        assert all(a < b for a, b in zip(waists, waists[1:]))

    def test_translation(self, body):
        a = measure_all(body.template)
        b = measure_all(body.template.translated((0.3, 1.0, -0.2)))
        assert a.bust == pytest.approx(b.bust, rel=1e-9)
        assert a.waist == pytest.approx(b.waist, rel=1e-9)
        assert a.hip == pytest.approx(b.hip, rel=1e-9)
        assert a.weight == pytest.approx(b.weight, rel=1e-9)
        assert a.height == b.height

    def test_slice_spec_validation(self):
        with pytest.raises(ValueError):
            SliceSpec(cut_spacing=0)
        with pytest.raises(ValueError):
            SliceSpec(hip_fraction=0.7, waist_fraction=0.6)


class TestMeasurementsRecord:
    def test_validation(self):
        with pytest.raises(ValueError):
            Measurements(1700, 70, 900, -1, 950)
        with pytest.raises(ValueError):
            Measurements(1700, 70, 3100, 800, 950)

    def test_round_trips(self):
        m = Measurements(1712.5, 70.25, 901.125, 780.5, 990.75)
        assert Measurements.from_record(m.to_record()) == m
        sid, back = Measurements.from_csv_row(m.to_csv_row("s00001"))
        assert sid == "s00001" and back == m
        assert CSV_HEADER.count(",") == m.to_csv_row("x").count(",")


class TestPerVertexError:
    def test_identity(self):
        m = icosphere(0.3, 2)
        assert per_vertex_error(m, m)[0] == 0.0

    def test_rigid_offset(self):
        m = icosphere(0.3, 2)
        err, per_v = per_vertex_error(m, m.translated((0.001, 0, 0)))
        assert err == pytest.approx(1.0, rel=1e-9)
        assert per_v.shape == (m.num_vertices,)

    def test_scaled_cube_brute_force(self):
        c = unit_cube()
        s = c.scaled(1.01)
        err, _ = per_vertex_error(s, c)
        ref = np.mean([np.linalg.norm(a - b) for a, b in zip(s.vertices, c.vertices)]) * 1000
        assert err == pytest.approx(ref, rel=1e-12)
        centroid = c.vertices.mean(axis=0)
        assert err == pytest.approx(10 * np.linalg.norm(c.vertices - centroid, axis=1).mean(), rel=1e-9)

    def test_symmetry(self):
        a = icosphere(0.3, 2)
        b = icosphere(0.31, 1)
        assert per_vertex_error(a, b)[0] == pytest.approx(per_vertex_error(b, a)[0], rel=1e-12)

    def test_mismatched_counts_brute_force(self):
        a = icosphere(0.3, 1)
        b = icosphere(0.33, 2).translated((0.01, 0, 0))
        d = np.linalg.norm(a.vertices[:, None] - b.vertices[None], axis=2) * 1000
        ref = 0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean())
        assert per_vertex_error(a, b)[0] == pytest.approx(ref, rel=1e-9)

    def test_empty(self):
        empty = TriMesh(np.zeros((0, 3)), np.zeros((0, 3), int))
        with pytest.raises(ValueError):
            per_vertex_error(empty, unit_cube())

    def test_heatmap_round_trip(self, tmp_path):
        vals = np.array([0.0, 1.25, 3.5])
        save_heatmap(vals, tmp_path / "h.txt")
        np.testing.assert_allclose(load_heatmap(tmp_path / "h.txt"), vals)
