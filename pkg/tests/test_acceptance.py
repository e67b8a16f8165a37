"""Acceptance suite: one test per criterion, at the stated tolerance and
runtime budget.  Each prints a single PASS/FAIL line with its key numbers."""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from dislohom.constitutive import (
    connection_invariance_residual,
    get_archetype,
    grad_qw_cubic,
    grad_qw_iso,
    grad_w_cubic,
    grad_w_iso,
    material_connection_from_implants,
    qw_cubic,
    qw_iso,
    rotation2,
    signed_singular_values,
    w_cubic,
    w_iso,
)
from dislohom.cone_mesh import DiscretePath, build_mesh
from dislohom.dislocation_builder import burgers_magnitude, single_dislocation_plane
from dislohom.elastic import PLMap, development_positions, energy, propagate_frame
from dislohom.homogenize import build_approximation, frame_deviation, gamma_study
from dislohom.weitzenbock import (
    bracket_demo_field,
    constant_torsion_field,
    frame_divergence,
    torsion_apply,
    torsion_at,
    torsion_from_loops,
    torsion_trace,
    triangulate,
)

F_CT = constant_torsion_field(0.5)


@contextmanager
def criterion(number: int, budget_seconds: float, detail: dict):
    start = time.perf_counter()
    try:
        yield
    except Exception:
        elapsed = time.perf_counter() - start
        print(f"[criterion {number}] FAIL ({elapsed:.2f}s) {detail}")
        raise
    elapsed = time.perf_counter() - start
    print(f"[criterion {number}] PASS ({elapsed:.2f}s) {detail}")
    assert elapsed < budget_seconds, (
        f"criterion {number} exceeded its {budget_seconds}s budget: {elapsed:.1f}s"
    )


@pytest.fixture(scope="module")
def ladder():
    return {n: build_approximation(F_CT, n) for n in (4, 8, 16, 32)}


def test_criterion_1_burgers_formula():
    detail = {}
    with criterion(1, 1.0, detail):
        worst = 0.0
        pairs = [(d, th) for d in (0.1, 0.3, 0.5, 0.8)
                 for th in (0.1, 0.3, 0.5, 0.8, 1.1)]
        assert len(pairs) == 20
        for d, theta in pairs:
            mesh = single_dislocation_plane(2.0, theta, d)
            collar = mesh.slit_collar_strip(mesh.core_slits[0])
            mag = float(np.linalg.norm(mesh.burgers_vector(collar)))
            expect = burgers_magnitude(d, theta)
            worst = max(worst, abs(mag - expect) / expect)
        detail["max_rel_err"] = f"{worst:.2e}"
        assert worst < 1e-9


def test_criterion_2_dipole_neutrality():
    detail = {}
    with criterion(2, 1.0, detail):
        worst_h = 0.0
        worst_b = 0.0
        for d, theta in ((0.5, 0.3), (0.25, 0.9)):
            mesh = single_dislocation_plane(2.0, theta, d, refine=1)
            collar = mesh.slit_collar_strip(mesh.core_slits[0])
            worst_h = max(worst_h, abs(mesh.transport_along(collar)))
            outer = mesh.boundary_collar_strip(mesh.outer_loop_indices()[0])
            worst_h = max(worst_h, abs(mesh.transport_along(outer)))
            # contractible circuits enclose nothing
            slit_vs = mesh.slit_vertices()
            stars = 0
            for v in range(mesh.num_vertices):
                if mesh.is_boundary_vertex(v) or v in slit_vs:
                    continue
                star = mesh.vertex_star_strip(v)
                worst_b = max(
                    worst_b, float(np.linalg.norm(mesh.burgers_vector(star)))
                )
                stars += 1
                if stars >= 10:
                    break
            t0 = int(collar.triangles[0])
            t1 = int(collar.triangles[1])
            pingpong = DiscretePath((t0, t1), closed=True)
            worst_b = max(
                worst_b, float(np.linalg.norm(mesh.burgers_vector(pingpong)))
            )
        detail["max_holonomy"] = f"{worst_h:.2e}"
        detail["max_contractible_burgers"] = f"{worst_b:.2e}"
        assert worst_h < 1e-10
        assert worst_b < 1e-12


def test_criterion_3_cartan_limit():
    detail = {}
    with criterion(3, 10.0, detail):
        for field, p in ((bracket_demo_field(), [0.5, 0.5]), (F_CT, [0.45, 0.55])):
            exact = torsion_apply(torsion_at(field, p), [1, 0], [0, 1])
            errs = []
            for k in range(5):
                eps = 0.04 / 2**k
                est = torsion_from_loops(field, p, [1, 0], [0, 1], eps)
                errs.append(float(np.linalg.norm(est - exact)))
            ratios = [errs[i] / errs[i + 1] for i in range(4)]
            detail[field.name] = [f"{r:.3f}" for r in ratios]
            assert all(1.5 <= r <= 2.5 for r in ratios)


def test_criterion_4_gauss_bonnet():
    detail = {}
    with criterion(4, 60.0, detail):
        for n in (4, 8, 16):
            tri = triangulate(F_CT, n)
            worst = float(np.max(np.abs(tri.angles.sum(axis=1) - math.pi)))
            detail[f"n={n}"] = f"{worst:.2e}"
            assert worst < 1e-6


def test_criterion_5_assembly_cleanliness(ladder):
    detail = {}
    with criterion(5, 60.0, detail):
        for n in (4, 8, 16):
            body = ladder[n].body
            mesh = body.mesh
            worst = 0.0
            for v, mid in body.abstract_vertex_ids().items():
                if not mesh.is_boundary_vertex(mid):
                    worst = max(worst, abs(mesh.cone_deficit(mid)))
            owners = sorted(body.slit_owner.tolist())
            assert owners == list(range(body.data.num_triangles))
            for slit in mesh.core_slits:
                assert slit.plus_vertex != slit.minus_vertex
            detail[f"n={n}"] = f"deficit {worst:.2e}, " \
                               f"{len(mesh.core_slits)} dipoles"
            assert worst < 1e-8


def test_criterion_6_frame_convergence(ladder):
    detail = {}
    with criterion(6, 600.0, detail):
        sup, lp = {}, {}
        for n in (4, 8, 16, 32):
            sup[n], lp[n] = frame_deviation(ladder[n])
        ratios = [sup[n] / sup[2 * n] for n in (4, 8, 16)]
        detail["sup_ratios"] = [f"{r:.3f}" for r in ratios]
        detail["lp"] = [f"{lp[n]:.4f}" for n in (4, 8, 16, 32)]
        assert all(1.5 <= r <= 2.5 for r in ratios)
        for n in (4, 8, 16):
            assert lp[2 * n] < 1.2 * lp[n]  # decreasing within 20% noise


def test_criterion_7_gamma_trend():
    detail = {}
    with criterion(7, 1800.0, detail):
        report = gamma_study(F_CT, get_archetype("qw_iso", p=2.0), [4, 8, 16])
        gaps = [r.abs_gap for r in report.records]
        steps = [gaps[i + 1] / gaps[i] for i in range(len(gaps) - 1)]
        detail["gaps"] = [f"{g:.3e}" for g in gaps]
        detail["step_ratios"] = [f"{s:.3f}" for s in steps]
        assert all(s < 0.9 for s in steps)
        probe_tracks = list(zip(*[r.probe_gaps for r in report.records]))
        detail["probe_first_last"] = [
            f"{t[0]:.2e}->{t[-1]:.2e}" for t in probe_tracks
        ]
        for track in probe_tracks:
            assert all(b < a for a, b in zip(track, track[1:]))
            assert track[-1] < 0.5 * track[0]
        assert not report.partial


def test_criterion_8_envelope_and_gradients():
    detail = {}
    with criterion(8, 30.0, detail):
        rng = np.random.default_rng(88)
        A = rng.uniform(-5.0, 5.0, (10000, 2, 2))
        assert np.all(qw_iso(A) <= w_iso(A) + 1e-12)
        assert np.all(qw_cubic(A) <= w_cubic(A) + 1e-12)

        B = rng.standard_normal((400, 2, 2)) * rng.uniform(0.3, 2.0, (400, 1, 1))
        m1, m2 = signed_singular_values(B)
        cols = np.sqrt(np.sum(B * B, axis=-2))
        smooth = (
            (np.abs(m1 + m2 - 1.0) > 5e-2)
            & (np.abs(m2) > 5e-2)
            & (w_iso(B) > 1e-3)
            & np.all(np.abs(cols - 1.0) > 5e-2, axis=-1)
            & np.all(cols > 5e-2, axis=-1)
        )
        B = B[smooth]

        def fd(f, A, h=1e-6):
            out = np.zeros_like(A)
            for i in range(2):
                for j in range(2):
                    E = np.zeros((2, 2))
                    E[i, j] = h
                    out[..., i, j] = (f(A + E) - f(A - E)) / (2 * h)
            return out

        worst = 0.0
        for f, g in (
            (w_iso, grad_w_iso), (qw_iso, grad_qw_iso),
            (w_cubic, grad_w_cubic), (qw_cubic, grad_qw_cubic),
        ):
            err = np.abs(g(B) - fd(f, B)) / (1.0 + np.abs(g(B)))
            worst = max(worst, float(np.max(err)))
        detail["samples"] = int(B.shape[0])
        detail["max_grad_err"] = f"{worst:.2e}"
        assert worst < 1e-6


def test_criterion_9_symmetry_dichotomy():
    detail = {}
    with criterion(9, 30.0, detail):
        iso = get_archetype("qw_iso")
        cubic = get_archetype("composite_cubic")
        mesh2 = build_mesh(
            [[0, 1, 2], [1, 3, 2]],
            {(0, 1): 1.0, (1, 2): 1.0, (2, 0): 1.0, (1, 3): 1.0, (3, 2): 1.0},
        )
        implants = np.stack([np.eye(2), rotation2(0.8)])
        ((_, t1, t2), Pi), = material_connection_from_implants(
            mesh2, implants
        ).items()
        perturbed = rotation2(0.3) @ Pi
        r_iso = connection_invariance_residual(iso, implants, perturbed, t1, t2)
        r_cub = connection_invariance_residual(cubic, implants, perturbed, t1, t2)
        detail["transfer_residuals"] = f"iso {r_iso:.2e}, cubic {r_cub:.2e}"
        assert r_iso < 1e-10
        assert r_cub > 1e-6

        approx = build_approximation(F_CT, 4)
        mesh = approx.mesh
        plmap = PLMap(mesh, development_positions(mesh))
        frames = {
            s: propagate_frame(mesh, seed_rotation=s)
            for s in (0.0, 0.3, math.pi / 2, 1.9)
        }
        e_iso = {s: energy(plmap, mesh, fr, iso) for s, fr in frames.items()}
        e_cub = {s: energy(plmap, mesh, fr, cubic) for s, fr in frames.items()}
        iso_spread = max(e_iso.values()) - min(e_iso.values())
        detail["iso_seed_spread"] = f"{iso_spread:.2e}"
        detail["cubic_quarter"] = f"{abs(e_cub[math.pi / 2] - e_cub[0.0]):.2e}"
        detail["cubic_generic"] = f"{abs(e_cub[0.3] - e_cub[0.0]):.2e}"
        assert iso_spread < 1e-10
        assert abs(e_cub[math.pi / 2] - e_cub[0.0]) < 1e-10
        assert abs(e_cub[0.3] - e_cub[0.0]) > 1e-6


def test_criterion_10_torsion_trace_cross_check():
    detail = {}
    with criterion(10, 10.0, detail):
        xs = np.linspace(0.02, 0.98, 32)
        grid = np.stack(np.meshgrid(xs, xs, indexing="ij"), axis=-1)
        tr = torsion_trace(F_CT, grid)
        div = frame_divergence(F_CT, grid)
        worst = float(np.max(np.abs(tr + div)))
        detail["max_abs_diff"] = f"{worst:.2e}"
        assert worst < 1e-6
