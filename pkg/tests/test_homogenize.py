import json
import math

import numpy as np
import pytest

from dislohom.constitutive import get_archetype
from dislohom.elastic import MinimizeOptions, affine_map
from dislohom.errors import DislohomError
from dislohom.homogenize import (
    ConvergenceRecord,
    ConvergenceReport,
    build_approximation,
    build_sequence,
    frame_deviation,
    gamma_study,
    pushed_forward_map,
)
from dislohom.weitzenbock import constant_torsion_field, identity_field, triangulate

F_CT = constant_torsion_field(0.5)


class TestBuildSequence:
    def test_identity_is_isometric(self):
        approx = build_approximation(identity_field(), 4)
        assert approx.num_dislocations() == 0
        sup, lp = frame_deviation(approx)
        assert sup < 1e-10 and lp < 1e-10
        # F_n is an isometry: its linear parts are rotations
        dets = np.linalg.det(approx.push_linear)
        assert np.max(np.abs(dets - 1.0)) < 1e-12

    def test_fixture_counts(self):
        approx = build_approximation(F_CT, 4)
        assert approx.num_dislocations() == approx.body.data.num_triangles
        # two singular points per dipole, both mapped into the chart
        assert len(approx.core_points) == 2 * approx.num_dislocations()

    def test_sorted_and_complete(self):
        seq = build_sequence(F_CT, [8, 4])
        assert [a.n for a in seq] == [4, 8]

    def test_dislocation_count_growth(self):
        counts = {n: triangulate(F_CT, n).num_triangles for n in (8, 16, 32)}
        ns = np.log([8, 16, 32])
        cs = np.log([counts[8], counts[16], counts[32]])
        slope = np.polyfit(ns, cs, 1)[0]
        assert 1.7 < slope < 2.7

    def test_root_alignment(self):
        approx = build_approximation(F_CT, 6)
        root = approx.frame.root
        x_root = approx.chart_image(
            np.array([root]), np.array([1 / 3, 1 / 3, 1 / 3])
        )[0]
        M = np.linalg.solve(
            approx.field.frame(x_root), approx.frame_image[root]
        )
        # the seed kills the rotation part; the symmetric O(h) stretch of
        # the affine surrogate remains
        angle = math.atan2(M[1, 0] - M[0, 1], M[0, 0] + M[1, 1])
        assert abs(angle) < 1e-12
        assert np.linalg.norm(M - np.eye(2)) < 0.5 * approx.triangulation.h


class TestFrameDeviation:
    def test_rates_on_small_ladder(self):
        sup = {}
        for n in (4, 8):
            approx = build_approximation(F_CT, n)
            sup[n], _ = frame_deviation(approx)
        assert 1.4 < sup[4] / sup[8] < 2.6

    def test_exclusion_radius_monotone(self):
        approx = build_approximation(F_CT, 8)
        sup_tight, _ = frame_deviation(approx, exclusion_radius=1e-6)
        sup_wide, _ = frame_deviation(approx)
        assert sup_tight >= sup_wide


class TestGammaStudy:
    def test_identity_trivial(self):
        rep = gamma_study(
            identity_field(), get_archetype("qw_iso"), [4],
            opts=MinimizeOptions(restarts=1),
        )
        rec = rep.records[0]
        assert rec.energy_n < 1e-10
        assert rec.energy_ref < 1e-10
        assert rec.abs_gap < 1e-10
        assert all(g < 1e-9 for g in rec.probe_gaps[:1])  # identity probe

    def test_fixture_single_rung(self):
        rep = gamma_study(
            F_CT, get_archetype("qw_iso"), [4], opts=MinimizeOptions(restarts=1)
        )
        rec = rep.records[0]
        assert rec.energy_n > 1e-6
        assert rec.energy_ref < 1e-10
        assert rec.energy_converged
        assert len(rec.probe_gaps) == 3

    def test_pushed_forward_identity_probe(self):
        approx = build_approximation(identity_field(), 4)
        plmap = pushed_forward_map(approx, affine_map(np.eye(2)))
        # an isometric pushforward of the identity is stress free
        from dislohom.elastic import energy

        assert energy(
            plmap, approx.mesh, approx.frame, get_archetype("qw_iso")
        ) < 1e-12


class TestConvergenceReport:
    def make_report(self):
        recs = [
            ConvergenceRecord(4, 6, 0.3, 0.2, 0.05, 1e-3, 0.0, 1e-3, [0.1],
                              True, 1.0),
            ConvergenceRecord(8, 54, 0.15, 0.1, 0.03, 5e-4, 0.0, 5e-4, [0.05],
                              True, 2.0),
        ]
        return ConvergenceReport(metadata={"config_hash": "abc"}, records=recs)

    def test_invariants_enforced(self):
        recs = [
            ConvergenceRecord(8, 1, 0.1, 0.1, 0.1),
            ConvergenceRecord(4, 1, 0.1, 0.1, 0.1),
        ]
        with pytest.raises(DislohomError):
            ConvergenceReport(metadata={}, records=recs)
        with pytest.raises(DislohomError):
            ConvergenceReport(
                metadata={}, records=[ConvergenceRecord(4, 1, 0.1, -0.1, 0.1)]
            )

    def test_csv_schema(self):
        rep = self.make_report()
        lines = rep.to_csv().strip().split("\n")
        assert lines[0] == (
            "n,dislocations,max_edge,dev_sup_offcore,dev_lp,energy_n,"
            "energy_ref,abs_gap,seconds"
        )
        assert len(lines) == 3

    def test_json_excludes_wall_time(self):
        rep = self.make_report()
        payload = json.loads(rep.to_json())
        assert payload["schema_version"] == 1
        assert "seconds" not in json.dumps(payload["records"])
        assert rep.timing_sidecar()["seconds"] == {"4": 1.0, "8": 2.0}
