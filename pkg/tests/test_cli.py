import json
import math

import numpy as np
import pytest

from dislohom.cli import main
from dislohom.cone_mesh import build_mesh, edge_key, load_mesh


def run(argv):
    return main([str(a) for a in argv])


@pytest.fixture()
def built(tmp_path):
    out = tmp_path / "build"
    rc = run(["build", "--fixture", "constant_torsion", "--tau", "0.5",
              "--n", "4", "--out", out])
    assert rc == 0
    return out


class TestBuild:
    def test_outputs_exist(self, built):
        for name in ("mesh.json", "triangulation.json", "build_stats.json"):
            assert (built / name).exists()
        stats = json.loads((built / "build_stats.json").read_text())
        assert stats["dislocations"] == stats["abstract_triangles"]
        mesh = load_mesh(built / "mesh.json")
        assert mesh.num_triangles == stats["mesh_triangles"]


class TestBurgers:
    def test_pipeline(self, built, tmp_path, capsys):
        mesh = load_mesh(built / "mesh.json")
        collar = mesh.slit_collar_strip(mesh.core_slits[0])
        circ = tmp_path / "circ.json"
        circ.write_text(json.dumps(
            {"triangles": list(collar.triangles), "closed": True}
        ))
        rc = run(["burgers", "--mesh", built / "mesh.json", "--circuit", circ])
        assert rc == 0
        record = json.loads(capsys.readouterr().out)
        assert set(record) == {"burgers", "holonomy"}
        assert abs(record["holonomy"]) < 1e-10
        slit = mesh.core_slits[0]
        expect = 2 * slit.core_length * math.sin(slit.theta / 2)
        assert np.hypot(*record["burgers"]) == pytest.approx(expect, abs=1e-9)


class TestTriangulate:
    def test_writes_data(self, tmp_path):
        out = tmp_path / "tri"
        rc = run(["triangulate", "--fixture", "identity", "--n", "4",
                  "--out", out])
        assert rc == 0
        data = json.loads((out / "triangulation.json").read_text())
        assert set(data) == {"triangles", "incidence"}
        row = data["triangles"][0]
        assert set(row) == {"a", "b", "c", "alpha", "beta", "gamma", "burgers"}


class TestMinimize:
    def test_result_payload(self, built, tmp_path):
        out = tmp_path / "min"
        rc = run(["minimize", "--mesh", built / "mesh.json",
                  "--archetype", "qw_iso", "--restarts", "1", "--out", out])
        assert rc == 0
        payload = json.loads((out / "minimize.json").read_text())
        for key in ("energy", "grad_norm", "iterations", "restart_energies",
                    "restart_spread", "density_histogram"):
            assert key in payload
        assert len(payload["density_histogram"]["counts"]) == 16

    def test_invariant_failure_exit_code(self, tmp_path):
        # a lone cone is not a valid dislocated body: exit 1 + error record
        tris = [[0, i + 1, (i + 1) % 5 + 1] for i in range(5)]
        lengths = {}
        for t in tris:
            for u, v in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                lengths[edge_key(u, v)] = 1.0
        mesh = build_mesh(tris, lengths)
        path = tmp_path / "cone.json"
        path.write_text(mesh.to_json())
        rc = run(["minimize", "--mesh", path, "--archetype", "qw_iso",
                  "--out", tmp_path / "m"])
        assert rc == 1


class TestUsageErrors:
    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            run(["frobnicate"])
        assert exc.value.code == 2

    def test_missing_required(self):
        with pytest.raises(SystemExit) as exc:
            run(["burgers"])  # --mesh/--circuit required
        assert exc.value.code == 2


class TestHomogenize:
    def test_deterministic_reports_and_figures(self, tmp_path):
        args = ["homogenize", "--fixture", "constant_torsion", "--tau", "0.5",
                "--archetype", "qw_iso", "--n", "4", "--restarts", "1"]
        rc1 = run(args + ["--out", tmp_path / "h1"])
        rc2 = run(args + ["--out", tmp_path / "h2", "--no-figures"])
        assert rc1 == 0 and rc2 == 0
        r1 = (tmp_path / "h1" / "report.json").read_bytes()
        r2 = (tmp_path / "h2" / "report.json").read_bytes()
        assert r1 == r2
        assert (tmp_path / "h1" / "report.csv").exists()
        assert (tmp_path / "h1" / "report_timing.json").exists()
        for fig in ("frame_deviation.png", "energy_gap.png",
                    "dislocation_count.png"):
            assert (tmp_path / "h1" / fig).exists()
            assert not (tmp_path / "h2" / fig).exists()
        payload = json.loads(r1)
        assert payload["metadata"]["config_hash"]
        assert payload["records"][0]["n"] == 4

    def test_toml_config_and_env_override(self, tmp_path, monkeypatch):
        cfg = tmp_path / "study.toml"
        cfg.write_text(
            "\n".join(
                [
                    "[fixture]",
                    'name = "constant_torsion"',
                    "tau = 0.5",
                    "[archetype]",
                    'name = "qw_iso"',
                    "p = 2.0",
                    "[triangulation]",
                    'n_list = [4]',
                    "[optimizer]",
                    "restarts = 1",
                    "seed = 0",
                    "[output]",
                    f'dir = "{tmp_path / "ignored"}"',
                ]
            )
        )
        target = tmp_path / "envout"
        monkeypatch.setenv("DISLOHOM_OUT", str(target))
        rc = run(["homogenize", "--config", cfg, "--no-figures"])
        assert rc == 0
        assert (target / "report.json").exists()
        assert not (tmp_path / "ignored").exists()


class TestProbeArchetype:
    def test_composite(self, capsys):
        rc = run(["probe-archetype", "--name", "composite_cubic",
                  "--b1", "1", "--b2", "1", "--p", "2"])
        assert rc == 0
        record = json.loads(capsys.readouterr().out)
        assert record["symmetry"] == "discrete"
        assert record["generators"] == ["pi/2"]

    def test_isotropic(self, capsys):
        rc = run(["probe-archetype", "--name", "qw_iso", "--p", "2"])
        assert rc == 0
        record = json.loads(capsys.readouterr().out)
        assert record["symmetry"] == "continuous"
        assert record["generators"] == []


class TestDeviationOnly:
    def test_ladder_without_energies(self, tmp_path):
        out = tmp_path / "dev"
        rc = run(["homogenize", "--fixture", "constant_torsion", "--tau", "0.5",
                  "--n", "4", "--deviation-only", "--no-figures", "--out", out])
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        rec = report["records"][0]
        assert rec["dev_sup_offcore"] > 0
        assert math.isnan(rec["energy_n"])
