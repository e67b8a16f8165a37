import math

import numpy as np
import pytest

from dislohom.cone_mesh import Motion, build_mesh, edge_key
from dislohom.constitutive import get_archetype, rotation2
from dislohom.dislocation_builder import assemble
from dislohom.elastic import (
    ChartMesh,
    MinimizeOptions,
    PLMap,
    PLSystem,
    SmoothSystem,
    affine_map,
    el_residual,
    energy,
    energy_gradient,
    development_positions,
    minimize,
    minimize_smooth,
    propagate_frame,
    sinusoidal_map,
    smooth_energy,
    smooth_energy_of_map,
)
from dislohom.errors import HolonomyObstruction, NonSmoothPoint
from dislohom.weitzenbock import (
    constant_torsion_field,
    identity_field,
    torsion_trace,
    triangulate,
)

QW_ISO = get_archetype("qw_iso")
COMPOSITE = get_archetype("composite_cubic")
SMOOTH = get_archetype("smooth_test")


def flat_mesh():
    tris = [[0, 1, 2], [1, 3, 2]]
    L = {}
    for t in tris:
        for u, v in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            L[edge_key(u, v)] = 1.0
    return build_mesh(tris, L)


def lone_cone_mesh():
    tris = [[0, i + 1, (i + 1) % 5 + 1] for i in range(5)]
    L = {}
    for t in tris:
        for u, v in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            L[edge_key(u, v)] = 1.0
    return build_mesh(tris, L)


def assembled_fixture(n=4, **kw):
    tri = triangulate(constant_torsion_field(0.5), n)
    return assemble(tri.to_triangulation_data(), **kw)


class TestPropagateFrame:
    def test_flat_mesh_consistent(self):
        mesh = flat_mesh()
        frame = propagate_frame(mesh, seed_rotation=0.0)
        assert frame.max_consistency_residual < 1e-14
        # both frames coincide after unfolding into the shared development
        placed0 = frame.rotations[0]
        motion = mesh._unfold(0, Motion.identity(), 1)
        assert np.allclose(motion.rot.T @ placed0, frame.rotations[1], atol=1e-14)

    def test_assembled_mesh_consistent(self):
        body = assembled_fixture(4)
        frame = propagate_frame(body.mesh)
        assert frame.max_consistency_residual < 1e-10

    def test_lone_cone_obstruction(self):
        with pytest.raises(HolonomyObstruction):
            propagate_frame(lone_cone_mesh())


class TestEnergy:
    def test_development_is_stress_free(self):
        mesh = flat_mesh()
        frame = propagate_frame(mesh)
        plmap = PLMap.from_development(mesh)
        assert energy(plmap, mesh, frame, QW_ISO) < 1e-12

    def test_uniform_dilation(self):
        mesh = flat_mesh()
        frame = propagate_frame(mesh)
        plmap = PLMap(mesh, 2.0 * development_positions(mesh))
        area = mesh.triangle_areas().sum()
        assert energy(plmap, mesh, frame, QW_ISO) == pytest.approx(2.0 * area)

    def test_seed_rotation_invariance_isotropic(self):
        body = assembled_fixture(4)
        plmap = PLMap.from_development(body.mesh)
        vals = []
        for seed in (0.0, 0.7, 2.1):
            frame = propagate_frame(body.mesh, seed_rotation=seed)
            vals.append(energy(plmap, body.mesh, frame, QW_ISO))
        assert max(vals) - min(vals) < 1e-12 * max(1.0, max(vals))

    def test_seed_rotation_dichotomy_composite(self):
        body = assembled_fixture(4)
        plmap = PLMap.from_development(body.mesh)
        e0 = energy(plmap, body.mesh, propagate_frame(body.mesh), COMPOSITE)
        e_quarter = energy(
            plmap, body.mesh,
            propagate_frame(body.mesh, seed_rotation=math.pi / 2), COMPOSITE,
        )
        e_generic = energy(
            plmap, body.mesh, propagate_frame(body.mesh, seed_rotation=0.3),
            COMPOSITE,
        )
        assert abs(e_quarter - e0) < 1e-10 * max(1.0, abs(e0))
        assert abs(e_generic - e0) > 1e-6

    def test_left_frame_indifference(self):
        mesh = flat_mesh()
        frame = propagate_frame(mesh)
        rng = np.random.default_rng(0)
        pos = development_positions(mesh) + 0.2 * rng.standard_normal((4, 2))
        R = rotation2(1.1)
        for arc in (QW_ISO, COMPOSITE, SMOOTH):
            e1 = energy(PLMap(mesh, pos), mesh, frame, arc)
            e2 = energy(PLMap(mesh, pos @ R.T), mesh, frame, arc)
            assert e1 == pytest.approx(e2, abs=1e-12 * (1 + abs(e1)))


class TestGradient:
    def test_zero_at_minimum(self):
        mesh = flat_mesh()
        frame = propagate_frame(mesh)
        g = energy_gradient(PLMap.from_development(mesh), mesh, frame, QW_ISO)
        assert np.max(np.abs(g)) < 1e-10

    def test_finite_difference_match(self):
        body = assembled_fixture(4)
        mesh = body.mesh
        frame = propagate_frame(mesh)
        rng = np.random.default_rng(1)
        pos = development_positions(mesh)
        pos = pos + 0.1 * rng.standard_normal(pos.shape)
        system = PLSystem(mesh, frame, QW_ISO)
        g = system.gradient(pos)
        h = 1e-6
        idx = rng.choice(len(pos), size=12, replace=False)
        for i in idx:
            for j in range(2):
                dp = np.zeros_like(pos)
                dp[i, j] = h
                fd = (system.energy(pos + dp) - system.energy(pos - dp)) / (2 * h)
                assert abs(g[i, j] - fd) <= 1e-5 * (1 + abs(g[i, j]))

    def test_translation_invariance(self):
        body = assembled_fixture(4)
        frame = propagate_frame(body.mesh)
        rng = np.random.default_rng(2)
        pos = development_positions(body.mesh)
        pos = pos + 0.2 * rng.standard_normal(pos.shape)
        g = energy_gradient(PLMap(body.mesh, pos), body.mesh, frame, QW_ISO)
        assert np.max(np.abs(g.sum(axis=0))) < 1e-10


class TestMinimize:
    def test_flat_reaches_zero(self):
        mesh = flat_mesh()
        frame = propagate_frame(mesh)
        res = minimize(mesh, frame, QW_ISO, MinimizeOptions(restarts=2))
        assert res.energy < 1e-12
        assert res.converged

    def test_fixture_positive_and_stable(self):
        body = assembled_fixture(4, side_splits=1)
        frame = propagate_frame(body.mesh)
        res = minimize(body.mesh, frame, QW_ISO)
        assert res.energy > 1e-6  # no stress-free configuration remains
        assert res.restart_spread < 1e-6
        assert len(res.restart_energies) == 6

    def test_refinement_monotone(self):
        vals = []
        for refine in (0, 1):
            body = assembled_fixture(4, side_splits=1, refine=refine)
            frame = propagate_frame(body.mesh)
            vals.append(
                minimize(body.mesh, frame, QW_ISO, MinimizeOptions(restarts=2)).energy
            )
        # nested PL spaces: refinement can only lower the minimum
        assert vals[1] <= vals[0] + 1e-6

    def test_coercivity_in_practice(self):
        body = assembled_fixture(4)
        mesh = body.mesh
        frame = propagate_frame(mesh)
        alpha = QW_ISO.growth[0]
        system = PLSystem(mesh, frame, QW_ISO)
        rng = np.random.default_rng(3)
        area = mesh.triangle_areas().sum()
        for _ in range(5):
            pos = 3.0 * rng.standard_normal(
                (int(mesh.weld_classes().max()) + 1, 2)
            )
            B = system.deformation_argument(pos)
            lp = float(
                np.dot(system.areas, np.linalg.norm(B, axis=(-2, -1)) ** QW_ISO.p)
            )
            assert system.energy(pos) >= alpha * (lp - area) - 1e-9


class TestSmoothSide:
    def unit_chart(self, rounds=2):
        pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
        return ChartMesh(pts, np.array([[0, 1, 2], [0, 2, 3]])).refined(rounds)

    def test_identity_map_zero(self):
        chart = self.unit_chart()
        assert smooth_energy(identity_field(), chart, chart.points, QW_ISO) == 0.0

    def test_dilation_value(self):
        chart = self.unit_chart()
        val = smooth_energy(identity_field(), chart, 2 * chart.points, QW_ISO)
        assert val == pytest.approx(2.0)

    def test_quadrature_refinement_rate(self):
        chart = self.unit_chart(1)
        field = constant_torsion_field(0.9)
        pos = chart.points @ np.array([[1.3, 0.15], [0.05, 1.1]]).T
        errs = []
        ref = smooth_energy(field, chart, pos, COMPOSITE, quad_level=8)
        for level in (1, 2, 3):
            errs.append(
                abs(smooth_energy(field, chart, pos, COMPOSITE, quad_level=level) - ref)
            )
        assert errs[0] / errs[1] > 2.0 and errs[1] / errs[2] > 2.0

    def test_smooth_gradient_fd(self):
        chart = self.unit_chart(1)
        field = constant_torsion_field(0.5)
        system = SmoothSystem(field, chart, COMPOSITE, quad_level=2)
        rng = np.random.default_rng(4)
        pos = chart.points + 0.05 * rng.standard_normal(chart.points.shape)
        g = system.gradient(pos)
        h = 1e-6
        for i in rng.choice(len(pos), 8, replace=False):
            for j in range(2):
                dp = np.zeros_like(pos)
                dp[i, j] = h
                fd = (system.energy(pos + dp) - system.energy(pos - dp)) / (2 * h)
                assert abs(g[i, j] - fd) < 1e-5 * (1 + abs(g[i, j]))

    def test_minimize_smooth_flat_metric(self):
        chart = self.unit_chart(1)
        res = minimize_smooth(
            constant_torsion_field(0.5), chart, QW_ISO, MinimizeOptions(restarts=2)
        )
        assert res.energy < 1e-12
        assert res.converged

    def test_energy_of_exact_map(self):
        chart = self.unit_chart(2)
        field = identity_field()
        val = smooth_energy_of_map(field, chart, affine_map(2 * np.eye(2)), QW_ISO)
        assert val == pytest.approx(2.0)


class TestEulerLagrange:
    grid = np.stack(
        np.meshgrid(np.linspace(0.1, 0.9, 6), np.linspace(0.1, 0.9, 6),
                    indexing="ij"), axis=-1,
    )

    def test_identity_configuration(self):
        r = el_residual(identity_field(), affine_map(np.eye(2)), SMOOTH, self.grid)
        assert np.max(np.abs(r)) == 0.0

    def test_nonsmooth_archetype_rejected(self):
        with pytest.raises(NonSmoothPoint):
            el_residual(identity_field(), affine_map(np.eye(2)), QW_ISO, self.grid)

    def test_trace_term_two_ways(self):
        field = constant_torsion_field(0.5)
        tm = sinusoidal_map(0.2, 2.0)
        ra = el_residual(field, tm, SMOOTH, self.grid)
        rb = el_residual(field, tm, SMOOTH, self.grid, use_divergence=True)
        assert np.max(np.abs(ra - rb)) < 1e-12

    def test_torsion_free_frame_drops_trace_term(self):
        field = identity_field()
        assert np.max(np.abs(torsion_trace(field, self.grid))) == 0.0
        tm = sinusoidal_map(0.15, 3.0)
        # with zero torsion the residual is the plain divergence form
        ra = el_residual(field, tm, SMOOTH, self.grid)
        E = field.frame(self.grid)
        df = tm.df(self.grid)
        H = SMOOTH.hessian(df @ E)
        d2f = tm.d2f(self.grid)
        plain = np.einsum("...aibj,...bij->...a", H, d2f)
        assert np.max(np.abs(ra - plain)) < 1e-12

    def test_fd_oracle_for_residual(self):
        # the strong form must match finite differences of the weak integrand
        field = constant_torsion_field(0.5)
        tm = sinusoidal_map(0.1, 2.0)
        pts = np.array([[0.4, 0.5], [0.6, 0.3]])
        res = el_residual(field, tm, SMOOTH, pts)

        def flux(x):
            E = field.frame(x)
            G = SMOOTH.gradient(tm.df(x) @ E)
            dens = 1.0 / np.abs(np.linalg.det(E))
            return np.einsum("...ai,...li->...al", G, E) * dens[..., None, None]

        h = 1e-5
        for k, x in enumerate(pts):
            div = np.zeros(2)
            for l in range(2):
                dp = np.zeros(2)
                dp[l] = h
                div += (flux(x + dp)[:, l] - flux(x - dp)[:, l]) / (2 * h)
            E = field.frame(x)
            dens = 1.0 / abs(np.linalg.det(E))
            assert np.allclose(div / dens, res[k], atol=1e-6)


class TestEquilibriumAtMinimizer:
    def test_residual_vanishes_at_exact_minimizer(self):
        # the identity map is a global minimizer for the rotating frame
        # (df o E stays in SO(2) pointwise): the strong-form equations,
        # torsion term included, must hold along it
        field = constant_torsion_field(0.5)
        grid = np.stack(
            np.meshgrid(np.linspace(0.1, 0.9, 7), np.linspace(0.1, 0.9, 7),
                        indexing="ij"), axis=-1,
        )
        r = el_residual(field, affine_map(np.eye(2)), SMOOTH, grid)
        assert np.max(np.abs(r)) < 1e-12
        r2 = el_residual(field, sinusoidal_map(0.2, 2.0), SMOOTH, grid)
        assert np.max(np.abs(r2)) > 1e-2  # non-minimizers are seen
