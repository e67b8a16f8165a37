"""End-to-end homogenization experiments.

For each resolution n the pipeline triangulates the chart by frame
geodesics, replaces every geodesic triangle with a dislocated one, glues,
spreads the parallel frame, and compares against the smooth body: frame
deviation in sup (off cores) and integrated norms, and minimal elastic
energies on both sides.  The correspondence F_n is the per-triangle affine
surrogate matching abstract corners (the exponential-map construction is a
proof device; the affine one preserves the rate statements under test away
from the cores, where the deviation is measured).
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .constitutive import Archetype
from .dislocation_builder import AssembledBody, assemble
from .elastic import (
    ChartMesh,
    MeshFrame,
    MinimizeOptions,
    PLMap,
    DifferentiableMap,
    affine_map,
    minimize,
    minimize_smooth,
    propagate_frame,
    sinusoidal_map,
    smooth_energy_of_map,
    PLSystem,
)
from .errors import DislohomError
from .weitzenbock import FrameField, GeodesicTriangulation, triangulate

SCHEMA_VERSION = 1


@dataclass
class BodyApproximation:
    """One rung of the homogenization ladder with its correspondence F_n."""

    n: int
    field: FrameField
    triangulation: GeodesicTriangulation
    body: AssembledBody
    frame: MeshFrame
    push_linear: np.ndarray    # (m, 2, 2): dF_n per mesh triangle
    push_offset: np.ndarray    # (m, 2): affine offsets into the chart
    frame_image: np.ndarray    # (m, 2, 2): dF_n o E_n per mesh triangle
    core_points: np.ndarray    # (k, 2) chart images of the core endpoints
    max_core_length: float

    @property
    def mesh(self):
        return self.body.mesh

    def num_dislocations(self) -> int:
        return len(self.body.mesh.core_slits)

    def chart_image(self, tri_indices, bary: np.ndarray) -> np.ndarray:
        """Chart positions of barycentric points of mesh triangles."""
        coords = np.einsum(
            "k,mkx->mx", bary, self.body.tri_coords[tri_indices]
        )
        return (
            np.einsum("mxy,my->mx", self.push_linear[tri_indices], coords)
            + self.push_offset[tri_indices]
        )

    def vertex_chart_positions(self) -> np.ndarray:
        """One chart position per weld class (first incident corner wins)."""
        mesh = self.body.mesh
        cls = mesh.weld_classes()
        ncls = int(cls.max()) + 1
        pos = np.zeros((ncls, 2))
        have = np.zeros(ncls, dtype=bool)
        for t, tri in enumerate(mesh.triangles):
            image = (
                self.body.tri_coords[t] @ self.push_linear[t].T
                + self.push_offset[t]
            )
            for corner, v in enumerate(tri):
                c = cls[v]
                if not have[c]:
                    pos[c] = image[corner]
                    have[c] = True
        return pos

    def reference_chart(self, target_edge: float) -> ChartMesh:
        """Straight-edge chart triangulation of the same region, refined
        until its longest edge is below ``target_edge``."""
        chart = ChartMesh(
            self.triangulation.vertices.copy(),
            self.triangulation.triangles.copy(),
        )
        while chart.max_edge_length() > target_edge:
            chart = chart.refined(1)
        return chart


def build_approximation(field: FrameField, n: int, delta: float = math.pi / 9,
                        side_splits: int = 0, refine: int = 0,
                        theta_cap: float = math.pi / 4) -> BodyApproximation:
    tri = triangulate(field, n, delta)
    data = tri.to_triangulation_data()
    body = assemble(data, side_splits=side_splits, refine=refine,
                    theta_cap=theta_cap)
    mesh = body.mesh
    frame = propagate_frame(mesh, root=0, seed_rotation=0.0)

    # affine correspondence per abstract triangle: corner build coords to
    # chart corners
    nt = data.num_triangles
    chart_corners = tri.vertices[data.incidence]          # (nt, 3, 2)
    P = body.corner_build                                  # (nt, 3, 2)
    Vp = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=-1)
    Vq = np.stack(
        [chart_corners[:, 1] - chart_corners[:, 0],
         chart_corners[:, 2] - chart_corners[:, 0]], axis=-1
    )
    L = Vq @ np.linalg.inv(Vp)                             # (nt, 2, 2)
    offset = chart_corners[:, 0] - np.einsum("txy,ty->tx", L, P[:, 0])

    owner = body.tri_owner
    push_linear = L[owner]
    push_offset = offset[owner]

    # rotation from each mesh triangle's canonical chart to its build coords
    coords = body.tri_coords
    u = coords[:, 1] - coords[:, 0]
    u = u / np.linalg.norm(u, axis=-1, keepdims=True)
    R = np.empty((len(coords), 2, 2))
    R[:, 0, 0] = u[:, 0]
    R[:, 0, 1] = -u[:, 1]
    R[:, 1, 0] = u[:, 1]
    R[:, 1, 1] = u[:, 0]

    def frame_image_of(fr):
        return push_linear @ R @ fr.rotations

    # align the seed so dF_n o E_n matches E at the root triangle centroid
    root = frame.root
    x_root = (
        coords[root].mean(axis=0) @ push_linear[root].T + push_offset[root]
    )
    E_root = field.frame(x_root)
    M = np.linalg.solve(E_root, frame_image_of(frame)[root])
    seed = -math.atan2(M[1, 0] - M[0, 1], M[0, 0] + M[1, 1])
    frame = frame.rotated(seed)
    frame_image = frame_image_of(frame)

    core_points = []
    max_d = 0.0
    for k, slit in enumerate(mesh.core_slits):
        max_d = max(max_d, slit.core_length)
        for v in (slit.plus_vertex, slit.minus_vertex):
            t, corner = _incident_corner(mesh, v)
            x = coords[t, corner] @ push_linear[t].T + push_offset[t]
            core_points.append(x)
    core_points = (
        np.asarray(core_points) if core_points else np.zeros((0, 2))
    )

    return BodyApproximation(
        n=n, field=field, triangulation=tri, body=body, frame=frame,
        push_linear=push_linear, push_offset=push_offset,
        frame_image=frame_image, core_points=core_points,
        max_core_length=max_d,
    )


def _incident_corner(mesh, v: int):
    t = mesh._vertex_corners[v][0][0]
    corner = list(mesh.triangles[t]).index(v)
    return t, corner


def build_sequence(field: FrameField, n_list, **kwargs):
    """Approximating bodies for every n, coarse to fine."""
    return [build_approximation(field, n, **kwargs) for n in sorted(n_list)]


_SUP_NODES = np.array(
    [
        [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0],
        [0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5],
        [1 / 3, 1 / 3, 1 / 3],
    ]
)
_MID_NODES = _SUP_NODES[3:6]  # degree-2 quadrature with equal weights


def frame_deviation(approx: BodyApproximation, exclusion_radius: float = None,
                    p: float = 2.0):
    """(sup off cores, integrated L^p) of |dF_n o E_n - E o F_n|.

    The sup skips balls around the core images (default radius three times
    the longest core at this n, capped at 0.3 of the shortest edge); the
    integral runs over everything.
    """
    field = approx.field
    mesh = approx.body.mesh
    if exclusion_radius is None:
        # 3x the longest core, capped so fat cores at coarse n cannot
        # swallow whole triangles (the capped ball is still an O(1/n)
        # neighborhood, where the uniform rate claim applies)
        exclusion_radius = min(
            3.0 * approx.max_core_length,
            0.3 * float(approx.triangulation.sides.min()),
        )
    m = mesh.num_triangles
    idx = np.arange(m)
    sup_val = 0.0
    for bary in _SUP_NODES:
        x = approx.chart_image(idx, bary)
        dev = np.linalg.norm(
            approx.frame_image - field.frame(x), axis=(-2, -1)
        )
        if len(approx.core_points):
            dist = np.min(
                np.linalg.norm(
                    x[:, None, :] - approx.core_points[None, :, :], axis=-1
                ),
                axis=1,
            )
            dev = dev[dist > exclusion_radius]
        if dev.size:
            sup_val = max(sup_val, float(dev.max()))
    areas = mesh.triangle_areas()
    acc = np.zeros(m)
    for bary in _MID_NODES:
        x = approx.chart_image(idx, bary)
        dev = np.linalg.norm(
            approx.frame_image - field.frame(x), axis=(-2, -1)
        )
        acc += dev**p / len(_MID_NODES)
    lp = float(np.dot(areas, acc) ** (1.0 / p))
    return sup_val, lp


def default_probe_maps() -> list[DifferentiableMap]:
    return [
        affine_map(np.eye(2)),
        affine_map(np.array([[1.1, 0.05], [0.0, 0.92]])),
        sinusoidal_map(amp=0.08, freq=3.0),
    ]


def pushed_forward_map(approx: BodyApproximation, test_map: DifferentiableMap) -> PLMap:
    """PL interpolant of f o F_n on the approximating mesh."""
    chart_pos = approx.vertex_chart_positions()
    return PLMap(approx.body.mesh, test_map.f(chart_pos))


@dataclass
class ConvergenceRecord:
    n: int
    dislocations: int
    max_edge: float
    dev_sup_offcore: float
    dev_lp: float
    energy_n: float = float("nan")
    energy_ref: float = float("nan")
    abs_gap: float = float("nan")
    probe_gaps: list = field(default_factory=list)
    energy_converged: bool = True
    seconds: float = 0.0

    def row(self) -> dict:
        return {
            "n": self.n,
            "dislocations": self.dislocations,
            "max_edge": self.max_edge,
            "dev_sup_offcore": self.dev_sup_offcore,
            "dev_lp": self.dev_lp,
            "energy_n": self.energy_n,
            "energy_ref": self.energy_ref,
            "abs_gap": self.abs_gap,
            "probe_gaps": list(self.probe_gaps),
            "energy_converged": self.energy_converged,
        }


@dataclass
class ConvergenceReport:
    metadata: dict
    records: list  # of ConvergenceRecord
    partial: bool = False

    CSV_COLUMNS = (
        "n", "dislocations", "max_edge", "dev_sup_offcore", "dev_lp",
        "energy_n", "energy_ref", "abs_gap", "seconds",
    )

    def __post_init__(self):
        ns = [r.n for r in self.records]
        if ns != sorted(set(ns)):
            raise DislohomError("records must carry strictly increasing n")
        for r in self.records:
            if min(r.dev_sup_offcore, r.dev_lp) < 0:
                raise DislohomError("deviations must be nonnegative")

    def to_dict(self) -> dict:
        # wall times stay out of the canonical report so identical configs
        # reproduce byte-identical JSON
        return {
            "schema_version": SCHEMA_VERSION,
            "metadata": self.metadata,
            "partial": self.partial,
            "records": [r.row() for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        lines = [",".join(self.CSV_COLUMNS)]
        for r in self.records:
            row = r.row()
            row["seconds"] = f"{r.seconds:.3f}"
            lines.append(
                ",".join(str(row[c]) for c in self.CSV_COLUMNS)
            )
        return "\n".join(lines) + "\n"

    def timing_sidecar(self) -> dict:
        return {
            "config_hash": self.metadata.get("config_hash"),
            "seconds": {str(r.n): r.seconds for r in self.records},
        }


def config_hash(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode()
    ).hexdigest()[:16]


def _metadata(field, archetype, n_list, opts, extra=None):
    payload = {
        "fixture": {"name": field.name, "domain": list(field.domain),
                    **{k: v for k, v in field.params.items()
                       if isinstance(v, (int, float, str))}},
        "archetype": {"name": getattr(archetype, "name", str(archetype)),
                      **getattr(archetype, "params", {})},
        "n_list": [int(n) for n in sorted(n_list)],
        "optimizer": {
            "tol": opts.tol, "max_iter": opts.max_iter,
            "restarts": opts.restarts, "seed": opts.seed,
        },
        "exclusion_radius_rule": "3 * max core length",
        "correspondence": "per-triangle affine surrogate of F_n",
    }
    if extra:
        payload.update(extra)
    payload["config_hash"] = config_hash(payload)
    return payload


def deviation_study(field: FrameField, n_list, delta: float = math.pi / 9,
                    p: float = 2.0, **build_kwargs) -> ConvergenceReport:
    """Frame-deviation ladder only (no energies)."""
    opts = MinimizeOptions()
    records = []
    for n in sorted(n_list):
        t0 = time.perf_counter()
        approx = build_approximation(field, n, delta=delta, **build_kwargs)
        sup, lp = frame_deviation(approx, p=p)
        records.append(
            ConvergenceRecord(
                n=n, dislocations=approx.num_dislocations(),
                max_edge=approx.triangulation.max_edge_length(),
                dev_sup_offcore=sup, dev_lp=lp,
                seconds=time.perf_counter() - t0,
            )
        )
    meta = _metadata(field, {"name": "none"}, n_list, opts,
                     {"study": "deviation"})
    return ConvergenceReport(metadata=meta, records=records)


def gamma_study(field: FrameField, archetype: Archetype, n_list,
                opts: MinimizeOptions | None = None,
                delta: float = math.pi / 9, side_splits: int = 1,
                refine: int = 0, probes: list | None = None,
                reference_edge: float = None) -> ConvergenceReport:
    """Minimal energies of the ladder against the smooth reference.

    Per n: minimize on (M_n, E_n); minimize the smooth energy on a matched
    chart triangulation refined below ``reference_edge`` (default
    1/(2 max n)); and evaluate the recovery-sequence gaps
    |I_n(f o F_n) - I(f)| for the probe maps.
    """
    opts = opts or MinimizeOptions()
    probes = default_probe_maps() if probes is None else probes
    if reference_edge is None:
        reference_edge = 1.0 / (2.0 * max(n_list))
    records = []
    partial = False
    for n in sorted(n_list):
        t0 = time.perf_counter()
        approx = build_approximation(
            field, n, delta=delta, side_splits=side_splits, refine=refine
        )
        mesh = approx.body.mesh
        res_n = minimize(mesh, approx.frame, archetype, opts)
        partial = partial or not res_n.converged

        chart = approx.reference_chart(reference_edge)
        res_ref = minimize_smooth(field, chart, archetype, opts)
        partial = partial or not res_ref.converged

        probe_gaps = []
        for tm in probes:
            pushed = pushed_forward_map(approx, tm)
            e_n = PLSystem(mesh, approx.frame, archetype).energy(
                pushed.positions
            )
            e_smooth = smooth_energy_of_map(field, chart, tm, archetype,
                                            quad_level=2)
            probe_gaps.append(abs(e_n - e_smooth))

        sup, lp = frame_deviation(approx, p=archetype.p)
        records.append(
            ConvergenceRecord(
                n=n, dislocations=approx.num_dislocations(),
                max_edge=approx.triangulation.max_edge_length(),
                dev_sup_offcore=sup, dev_lp=lp,
                energy_n=res_n.energy, energy_ref=res_ref.energy,
                abs_gap=abs(res_n.energy - res_ref.energy),
                probe_gaps=probe_gaps,
                energy_converged=res_n.converged and res_ref.converged,
                seconds=time.perf_counter() - t0,
            )
        )
    meta = _metadata(field, archetype, n_list, opts, {
        "study": "gamma",
        "delta": delta,
        "side_splits": side_splits,
        "refine": refine,
        "reference_edge": reference_edge,
        "probes": len(probes),
    })
    return ConvergenceReport(metadata=meta, records=records, partial=partial)
