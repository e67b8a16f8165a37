"""Command line interface.

Subcommands: build | burgers | triangulate | minimize | homogenize |
probe-archetype.  Every subcommand reads an optional config file (JSON or
TOML) plus flags (flags win), writes JSON/CSV into an output directory, and
exits 0 on success, 1 on any invariant failure (with a machine-readable
error record on stderr), 2 on usage errors.  The environment variable
DISLOHOM_OUT overrides the output directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .cone_mesh import DiscretePath, load_mesh, save_mesh
from .constitutive import get_archetype, symmetry_probe
from .dislocation_builder import assemble
from .elastic import MinimizeOptions, minimize, propagate_frame
from .errors import DislohomError
from .homogenize import deviation_study, gamma_study
from .weitzenbock import get_field, triangulate

ENV_OUTDIR = "DISLOHOM_OUT"


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise SystemExit(2)
    if p.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    with open(p) as fh:
        return json.load(fh)


def _cfg(config, section, key, flag_value, default=None):
    if flag_value is not None:
        return flag_value
    return config.get(section, {}).get(key, default)


def _outdir(config, args) -> Path:
    out = os.environ.get(ENV_OUTDIR) or _cfg(
        config, "output", "dir", getattr(args, "out", None), "."
    )
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _field_from(config, args):
    name = _cfg(config, "fixture", "name", getattr(args, "fixture", None))
    if name is None:
        print("a fixture name is required", file=sys.stderr)
        raise SystemExit(2)
    domain = tuple(
        _cfg(config, "fixture", "domain", None, (0.0, 1.0, 0.0, 1.0))
    )
    params = {}
    tau = _cfg(config, "fixture", "tau", getattr(args, "tau", None))
    if name == "constant_torsion":
        params["tau"] = float(tau if tau is not None else 0.5)
    return get_field(name, domain=domain, **params)


def _archetype_from(config, args):
    name = _cfg(config, "archetype", "name", getattr(args, "archetype", None))
    if name is None:
        print("an archetype name is required", file=sys.stderr)
        raise SystemExit(2)
    return get_archetype(
        name,
        p=float(_cfg(config, "archetype", "p", getattr(args, "p", None), 2.0)),
        b1=float(_cfg(config, "archetype", "b1", getattr(args, "b1", None), 1.0)),
        b2=float(_cfg(config, "archetype", "b2", getattr(args, "b2", None), 1.0)),
    )


def _options_from(config, args) -> MinimizeOptions:
    sec = config.get("optimizer", {})
    return MinimizeOptions(
        tol=float(_cfg(config, "optimizer", "tol", getattr(args, "tol", None), 1e-8)),
        max_iter=int(sec.get("max_iter", getattr(args, "max_iter", None) or 3000)),
        restarts=int(
            _cfg(config, "optimizer", "restarts", getattr(args, "restarts", None), 5)
        ),
        seed=int(_cfg(config, "optimizer", "seed", getattr(args, "seed", None), 0)),
    )


def _n_list(raw) -> list[int]:
    if isinstance(raw, (list, tuple)):
        return [int(v) for v in raw]
    return [int(v) for v in str(raw).split(",") if v]


def _write_json(path: Path, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- subcommands -------------------------------------------------------------


def cmd_build(args):
    config = _load_config(args.config)
    field = _field_from(config, args)
    out = _outdir(config, args)
    n = int(_cfg(config, "triangulation", "n", args.n, 8))
    tri = triangulate(
        field, n,
        delta=float(_cfg(config, "triangulation", "delta", args.delta, np.pi / 9)),
    )
    data = tri.to_triangulation_data()
    body = assemble(
        data,
        side_splits=int(_cfg(config, "triangulation", "side_splits",
                             args.side_splits, 0)),
        refine=int(_cfg(config, "triangulation", "refine", args.refine, 0)),
    )
    save_mesh(body.mesh, out / "mesh.json")
    _write_json(out / "triangulation.json", data.to_dict())
    _write_json(
        out / "build_stats.json",
        {
            "n": n,
            "fixture": field.name,
            "abstract_triangles": data.num_triangles,
            "mesh_triangles": body.mesh.num_triangles,
            "mesh_vertices": body.mesh.num_vertices,
            "dislocations": len(body.mesh.core_slits),
            "max_core_length": float(body.ds.max(initial=0.0)),
            "max_deficit": float(body.thetas.max(initial=0.0)),
        },
    )
    print(f"wrote mesh.json, triangulation.json, build_stats.json to {out}")
    return 0


def cmd_burgers(args):
    config = _load_config(args.config)
    mesh = load_mesh(args.mesh)
    with open(args.circuit) as fh:
        spec = json.load(fh)
    path = DiscretePath(
        tuple(spec["triangles"]), bool(spec.get("closed", True))
    )
    holonomy = mesh.transport_along(path)
    record = {"holonomy": holonomy}
    if path.closed:
        b = mesh.burgers_vector(path)
        record["burgers"] = [float(b[0]), float(b[1])]
    text = json.dumps(record, indent=2, sort_keys=True)
    if args.out:
        out = Path(os.environ.get(ENV_OUTDIR) or args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "burgers.json").write_text(text + "\n")
    print(text)
    return 0


def cmd_triangulate(args):
    config = _load_config(args.config)
    field = _field_from(config, args)
    out = _outdir(config, args)
    n = int(_cfg(config, "triangulation", "n", args.n, 8))
    tri = triangulate(
        field, n,
        delta=float(_cfg(config, "triangulation", "delta", args.delta, np.pi / 9)),
    )
    data = tri.to_triangulation_data()
    _write_json(out / "triangulation.json", data.to_dict())
    _write_json(
        out / "triangulation_stats.json",
        {
            "n": n,
            "triangles": int(tri.num_triangles),
            "max_edge": tri.max_edge_length(),
            "min_edge": float(tri.sides.min()),
            "max_angle_sum_defect": float(
                np.abs(tri.angles.sum(axis=1) - np.pi).max()
            ),
            "max_burgers": float(np.linalg.norm(tri.burgers, axis=1).max()),
            "max_euclidean_angle_deviation": float(tri.angle_deviation.max()),
        },
    )
    print(f"wrote triangulation.json to {out}")
    return 0


def cmd_minimize(args):
    config = _load_config(args.config)
    archetype = _archetype_from(config, args)
    opts = _options_from(config, args)
    out = _outdir(config, args)
    mesh = load_mesh(args.mesh)
    frame = propagate_frame(mesh, root=0, seed_rotation=args.seed_rotation)
    result = minimize(mesh, frame, archetype, opts)
    from .elastic import PLSystem

    densities = PLSystem(mesh, frame, archetype).densities(
        result.plmap.positions
    )
    hist, edges = np.histogram(densities, bins=16)
    payload = result.summary()
    payload["density_histogram"] = {
        "counts": hist.tolist(),
        "bin_edges": edges.tolist(),
    }
    payload["archetype"] = archetype.name
    _write_json(out / "minimize.json", payload)
    print(json.dumps({"energy": result.energy, "converged": result.converged}))
    return 0 if result.converged else 1


def cmd_homogenize(args):
    config = _load_config(args.config)
    field = _field_from(config, args)
    archetype = None if args.deviation_only else _archetype_from(config, args)
    opts = _options_from(config, args)
    out = _outdir(config, args)
    n_list = _n_list(_cfg(config, "triangulation", "n_list", args.n, "4,8,16"))
    delta = float(_cfg(config, "triangulation", "delta", args.delta, np.pi / 9))
    if args.deviation_only:
        report = deviation_study(field, n_list, delta=delta)
    else:
        report = gamma_study(
            field, archetype, n_list, opts=opts, delta=delta,
            side_splits=int(_cfg(config, "triangulation", "side_splits",
                                 args.side_splits, 1)),
            refine=int(_cfg(config, "triangulation", "refine", args.refine, 0)),
        )
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.csv").write_text(report.to_csv())
    _write_json(out / "report_timing.json", report.timing_sidecar())
    written = ["report.json", "report.csv", "report_timing.json"]
    if not args.no_figures:
        from .report_plots import render_report_figures

        written += render_report_figures(report, out)
    print(f"wrote {', '.join(written)} to {out}")
    return 1 if report.partial else 0


def cmd_probe_archetype(args):
    config = _load_config(args.config)
    archetype = _archetype_from(config, args)
    cls = symmetry_probe(archetype)
    record = {
        "archetype": archetype.name,
        "symmetry": cls.kind,
        "generators": cls.generator_names(),
        "max_residual": cls.max_residual,
        "growth_alpha": archetype.growth[0],
        "growth_beta": archetype.growth[1],
    }
    text = json.dumps(record, indent=2, sort_keys=True)
    if args.out:
        out = Path(os.environ.get(ENV_OUTDIR) or args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "archetype.json").write_text(text + "\n")
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dislohom",
        description="edge-dislocation bodies, frame fields with torsion, "
                    "and homogenization studies",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, archetype=False, fixture=False, tri=False):
        p.add_argument("--config", help="JSON or TOML config file")
        p.add_argument("--out", help="output directory")
        if fixture:
            p.add_argument("--fixture", help="frame field name")
            p.add_argument("--tau", type=float, help="constant_torsion rate")
        if tri:
            p.add_argument("--n", help="resolution (or comma list)")
            p.add_argument("--delta", type=float, help="angle bound")
            p.add_argument("--side-splits", dest="side_splits", type=int)
            p.add_argument("--refine", type=int)
        if archetype:
            p.add_argument("--archetype", help="archetype name")
            p.add_argument("--name", dest="archetype", help=argparse.SUPPRESS)
            p.add_argument("--p", type=float)
            p.add_argument("--b1", type=float)
            p.add_argument("--b2", type=float)
            p.add_argument("--tol", type=float)
            p.add_argument("--max-iter", dest="max_iter", type=int)
            p.add_argument("--restarts", type=int)
            p.add_argument("--seed", type=int)

    p = sub.add_parser("build", help="assemble a dislocated body from a fixture")
    common(p, fixture=True, tri=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("burgers", help="holonomy and Burgers vector of a circuit")
    p.add_argument("--config")
    p.add_argument("--mesh", required=True)
    p.add_argument("--circuit", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_burgers)

    p = sub.add_parser("triangulate", help="geodesic triangulation of a fixture")
    common(p, fixture=True, tri=True)
    p.set_defaults(func=cmd_triangulate)

    p = sub.add_parser("minimize", help="minimize the elastic energy on a mesh")
    common(p, archetype=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--seed-rotation", dest="seed_rotation", type=float,
                   default=0.0)
    p.set_defaults(func=cmd_minimize)

    p = sub.add_parser("homogenize", help="full convergence study")
    common(p, archetype=True, fixture=True, tri=True)
    p.add_argument("--no-figures", action="store_true",
                   help="skip figure rendering")
    p.add_argument("--deviation-only", dest="deviation_only",
                   action="store_true",
                   help="frame-deviation ladder without energy minimization")
    p.set_defaults(func=cmd_homogenize)

    p = sub.add_parser("probe-archetype", help="classify archetype symmetry")
    common(p, archetype=True)
    p.set_defaults(func=cmd_probe_archetype)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DislohomError as exc:
        print(json.dumps(exc.record(), sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
