import json
import math

import numpy as np
import pytest

from dislohom.cone_mesh import (
    DiscretePath,
    IntrinsicMesh,
    build_mesh,
    concat_loops,
    edge_key,
)
from dislohom.dislocation_builder import single_dislocation_plane
from dislohom.errors import (
    BoundaryVertex,
    InconsistentOrientation,
    MeshError,
    NonManifoldEdge,
    OpenCircuit,
    TriangleInequalityViolation,
)


def lengths_for(triangles, value=1.0):
    out = {}
    for t in triangles:
        for u, v in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            out[edge_key(u, v)] = value
    return out


def two_equilateral():
    tris = [[0, 1, 2], [1, 3, 2]]
    return build_mesh(tris, lengths_for(tris))


def cone_fan(k, deficit_total=None):
    """k unit triangles closed around vertex 0 (deficit 2 pi - k pi/3)."""
    tris = [[0, i + 1, (i + 1) % k + 1] for i in range(k)]
    return build_mesh(tris, lengths_for(tris))


class TestBuildValidation:
    def test_flat_patch_valid(self):
        mesh = two_equilateral()
        assert mesh.num_triangles == 2
        assert mesh.boundary_loops == [[0, 1, 3, 2]]
        assert not mesh.core_slits

    def test_triangle_inequality(self):
        with pytest.raises(TriangleInequalityViolation):
            build_mesh([[0, 1, 2]], {(0, 1): 1.0, (1, 2): 1.0, (2, 0): 3.0})

    def test_non_manifold_edge(self):
        tris = [[0, 1, 2], [1, 0, 3], [0, 1, 4]]
        with pytest.raises((NonManifoldEdge, InconsistentOrientation)):
            build_mesh(tris, lengths_for(tris))

    def test_inconsistent_orientation(self):
        tris = [[0, 1, 2], [1, 3, 2], [1, 3, 4]]  # edge 1->3 traversed twice
        with pytest.raises(InconsistentOrientation):
            build_mesh(tris, lengths_for(tris))

    def test_missing_length(self):
        with pytest.raises(MeshError):
            build_mesh([[0, 1, 2]], {(0, 1): 1.0, (1, 2): 1.0})


class TestCornerAngles:
    def test_equilateral(self):
        mesh = two_equilateral()
        for s in range(3):
            assert mesh.corner_angle(0, s) == pytest.approx(math.pi / 3)

    def test_right_triangle(self):
        mesh = build_mesh([[0, 1, 2]], {(0, 1): 3.0, (1, 2): 4.0, (2, 0): 5.0})
        # corner 0 is flanked by sides 3 and 5, opposite the side of length 4
        assert mesh.corner_angle(0, 1) == pytest.approx(math.pi / 2, abs=1e-14)

    def test_law_of_cosines_oracle(self):
        mesh = build_mesh([[0, 1, 2]], {(0, 1): 2.0, (1, 2): 2.0, (2, 0): 3.0})
        # corner opposite the side of length 3
        assert mesh.corner_angle(0, 1) == pytest.approx(math.acos(-1.0 / 8.0))

    def test_angle_sums_random_triangles(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            pts = rng.uniform(0.0, 3.0, (3, 2))
            a = np.linalg.norm(pts[1] - pts[0])
            b = np.linalg.norm(pts[2] - pts[1])
            c = np.linalg.norm(pts[0] - pts[2])
            if min(a, b, c) < 0.2:
                continue
            try:
                mesh = build_mesh([[0, 1, 2]], {(0, 1): a, (1, 2): b, (2, 0): c})
            except TriangleInequalityViolation:
                continue
            total = sum(mesh.corner_angle(0, s) for s in range(3))
            assert abs(total - math.pi) < 1e-12
            for s in range(3):
                assert 0.0 < mesh.corner_angle(0, s) < math.pi


class TestConeDeficit:
    def test_flat_vertex(self):
        mesh = cone_fan(6)
        assert mesh.cone_deficit(0) == pytest.approx(0.0, abs=1e-12)

    def test_five_fan(self):
        mesh = cone_fan(5)
        assert mesh.cone_deficit(0) == pytest.approx(math.pi / 3)

    def test_builder_round_trip(self):
        mesh = single_dislocation_plane(2.0, 0.2, 0.5)
        slit = mesh.core_slits[0]
        assert mesh.cone_deficit(slit.plus_vertex) == pytest.approx(0.2, abs=1e-12)
        assert mesh.cone_deficit(slit.minus_vertex) == pytest.approx(-0.2, abs=1e-12)

    def test_boundary_vertex_rejected(self):
        mesh = two_equilateral()
        with pytest.raises(BoundaryVertex):
            mesh.cone_deficit(0)
        assert mesh.boundary_turning(0) == pytest.approx(math.pi - math.pi / 3)


class TestTransport:
    def test_flat_closed_path(self):
        mesh = two_equilateral()
        path = DiscretePath((0, 1), closed=True)
        assert mesh.transport_along(path) == pytest.approx(0.0, abs=1e-14)

    def test_cone_holonomy_equals_deficit(self):
        mesh = cone_fan(5)
        star = mesh.vertex_star_strip(0)
        # ccw star around a cone of deficit pi/3
        assert mesh.transport_along(star) == pytest.approx(math.pi / 3, abs=1e-12)

    def test_full_slit_is_invisible(self):
        mesh = single_dislocation_plane(2.0, 0.4, 0.6)
        collar = mesh.slit_collar_strip(mesh.core_slits[0])
        assert abs(mesh.transport_along(collar)) < 1e-12

    def test_holonomy_additivity(self):
        mesh = cone_fan(5)
        star = mesh.vertex_star_strip(0)
        double = concat_loops(star, star)
        t1 = mesh.transport_along(star)
        t2 = mesh.transport_along(double)
        assert t2 == pytest.approx(2 * t1, abs=1e-10)

    def test_path_independence_off_cores(self):
        mesh = single_dislocation_plane(2.0, 0.3, 0.5)
        collar = mesh.slit_collar_strip(mesh.core_slits[0])
        ts = collar.triangles
        k = len(ts) // 2
        forward = DiscretePath(ts[: k + 1])
        backward = DiscretePath((ts[0],) + tuple(reversed(ts[k:])))
        # same endpoints; they differ by the (trivial-holonomy) collar loop
        assert mesh.transport_along(forward) == pytest.approx(
            mesh.transport_along(backward), abs=1e-10
        )


class TestBurgers:
    def test_flat_disk_zero(self):
        mesh = cone_fan(6)
        star = mesh.vertex_star_strip(0)
        assert np.linalg.norm(mesh.burgers_vector(star)) < 1e-14

    def test_open_circuit_rejected(self):
        mesh = two_equilateral()
        with pytest.raises(OpenCircuit):
            mesh.burgers_vector(DiscretePath((0, 1)))

    def test_gauge_covariance(self):
        mesh = single_dislocation_plane(2.0, 0.35, 0.45)
        collar = mesh.slit_collar_strip(mesh.core_slits[0])
        b0 = mesh.burgers_vector(collar)
        k = len(collar.triangles) // 3
        rotated = collar.rotated_to(collar.triangles[k])
        bk = mesh.burgers_vector(rotated)
        assert np.linalg.norm(bk) == pytest.approx(np.linalg.norm(b0), abs=1e-10)
        # the two vectors are related by the open-strip transport
        angle = mesh.transport_along(DiscretePath(collar.triangles[: k + 1]))
        c, s = math.cos(angle), math.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        assert np.allclose(rot @ b0, bk, atol=1e-10)

    def test_basepoint_in_triangle_irrelevant_for_trivial_holonomy(self):
        mesh = single_dislocation_plane(2.0, 0.3, 0.5)
        collar = mesh.slit_collar_strip(mesh.core_slits[0])
        b1 = mesh.burgers_vector(collar, basepoint=(1.0, 0.0, 0.0))
        b2 = mesh.burgers_vector(collar, basepoint=(0.2, 0.5, 0.3))
        assert np.allclose(b1, b2, atol=1e-12)


class TestSerialization:
    def test_round_trip_exact(self):
        mesh = single_dislocation_plane(2.0, 0.31, 0.47)
        text = mesh.to_json()
        clone = IntrinsicMesh.from_json(text)
        assert clone.to_json() == text
        assert clone.edge_lengths == mesh.edge_lengths  # bit-exact lengths
        assert len(clone.core_slits) == 1
        slit = clone.core_slits[0]
        assert slit.side_a and slit.side_b  # sides recovered from the loops

    def test_schema_shape(self):
        mesh = two_equilateral()
        payload = json.loads(mesh.to_json())
        assert set(payload) == {"vertices", "triangles", "edge_lengths", "core_slits"}
        assert payload["vertices"] == 4
        assert all("-" in k for k in payload["edge_lengths"])
