"""Intrinsic piecewise-flat surfaces with cone singularities.

A mesh stores combinatorics plus one positive length per undirected edge and
nothing else: no vertex coordinates, no embedding.  Developments into the
plane are computed transiently per path, which is what realizes discrete
parallel transport, holonomy and Burgers vectors.

Dislocation cores are kept as open cuts ("slits"): the two sides of a core
are paired boundary chains that are welded conceptually but never crossable
by a path, so a circuit around a single cone point of a dipole is impossible
by construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    BoundaryVertex,
    InconsistentOrientation,
    InvalidSlit,
    MeshError,
    NonManifoldEdge,
    NonManifoldVertex,
    OpenCircuit,
    PathError,
    TriangleInequalityViolation,
)

TWO_PI = 2.0 * math.pi

#: tolerance for glued-length equality and slit validation
GLUE_TOL = 1e-9


def edge_key(u: int, v: int) -> tuple[int, int]:
    """Canonical undirected edge key."""
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True)
class CoreSlit:
    """A dislocation core: the open cut between a curvature dipole.

    ``side_a`` and ``side_b`` are the two boundary chains of the cut, both
    ordered from ``plus_vertex`` to ``minus_vertex``; interior vertices of the
    chains are welded pairwise (``side_a[i] ~ side_b[i]``).
    """

    plus_vertex: int
    minus_vertex: int
    theta: float
    core_length: float
    side_a: tuple[int, ...] = ()
    side_b: tuple[int, ...] = ()

    def weld_pairs(self):
        return list(zip(self.side_a[1:-1], self.side_b[1:-1]))


@dataclass(frozen=True)
class DiscretePath:
    """A halfedge strip: consecutive triangles share an edge.

    For a closed path the last triangle must again be adjacent to the first;
    the strip continues ``triangles[-1] -> triangles[0]``.
    """

    triangles: tuple[int, ...]
    closed: bool = False
    #: optional explicit crossed edges, one per step, to disambiguate strips
    #: through doubly-glued triangle pairs
    gates: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "triangles", tuple(int(t) for t in self.triangles))
        if self.gates is not None:
            object.__setattr__(
                self, "gates", tuple(edge_key(*g) for g in self.gates)
            )

    def steps(self):
        """Pairs of consecutive triangles, including the closing step."""
        ts = self.triangles
        pairs = list(zip(ts[:-1], ts[1:]))
        if self.closed:
            pairs.append((ts[-1], ts[0]))
        return pairs

    def reversed(self) -> "DiscretePath":
        ts = tuple(reversed(self.triangles))
        if self.closed:
            # keep the basepoint triangle first
            ts = ts[-1:] + ts[:-1]
        gates = tuple(reversed(self.gates)) if self.gates is not None else None
        return DiscretePath(ts, self.closed, gates)

    def rotated_to(self, t: int) -> "DiscretePath":
        if not self.closed:
            raise PathError("only closed paths can be rotated")
        if self.gates is not None:
            raise PathError("cannot rotate a path with explicit gates")
        i = self.triangles.index(t)
        return DiscretePath(self.triangles[i:] + self.triangles[:i], True)


def concat_loops(a: DiscretePath, b: DiscretePath) -> DiscretePath:
    """Concatenate two closed loops based at the same start triangle."""
    if not (a.closed and b.closed):
        raise PathError("concat_loops needs two closed paths")
    if a.triangles[0] != b.triangles[0]:
        raise PathError("loops must share their base triangle")
    if a.gates is not None or b.gates is not None:
        raise PathError("cannot concatenate paths with explicit gates")
    return DiscretePath(a.triangles + b.triangles, True)


# ---------------------------------------------------------------------------
# rigid motions of the plane


class Motion:
    """Orientation-preserving isometry x -> R x + t of the plane."""

    __slots__ = ("rot", "tvec")

    def __init__(self, rot: np.ndarray, tvec: np.ndarray):
        self.rot = rot
        self.tvec = tvec

    @staticmethod
    def identity() -> "Motion":
        return Motion(np.eye(2), np.zeros(2))

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.rot.T + self.tvec

    def angle(self) -> float:
        return math.atan2(self.rot[1, 0], self.rot[0, 0])


def rotation(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def motion_from_segments(p, q, p2, q2) -> Motion:
    """The unique orientation-preserving isometry with p -> p2 and q -> q2."""
    a = math.atan2(q[1] - p[1], q[0] - p[0])
    b = math.atan2(q2[1] - p2[1], q2[0] - p2[0])
    rot = rotation(b - a)
    return Motion(rot, np.asarray(p2) - rot @ np.asarray(p))


# ---------------------------------------------------------------------------
# the mesh


class IntrinsicMesh:
    """Immutable triangle mesh given by connectivity and edge lengths.

    Use :func:`build_mesh`; the constructor validates everything and
    precomputes adjacency, boundary loops and corner angles.  All queries are
    read-only, so instances are safe to share between concurrent readers.
    """

    def __init__(self, triangles, edge_lengths, core_slits=(), num_vertices=None):
        tris = np.asarray(triangles, dtype=int)
        if tris.ndim != 2 or tris.shape[1] != 3 or len(tris) == 0:
            raise MeshError("triangles must be a non-empty (m, 3) index array")
        if num_vertices is None:
            num_vertices = int(tris.max()) + 1
        if tris.min() < 0 or tris.max() >= num_vertices:
            raise MeshError("triangle vertex index out of range")
        for t, (i, j, k) in enumerate(tris):
            if i == j or j == k or k == i:
                raise MeshError(f"triangle {t} has a repeated vertex")

        self.num_vertices = int(num_vertices)
        self.triangles = tris
        self.edge_lengths = {
            edge_key(*k): float(v) for k, v in _normalize_length_keys(edge_lengths)
        }

        self._check_lengths()
        self._build_adjacency()
        self._corner_angles = self._compute_angles()
        self._angle_sum = np.zeros(self.num_vertices)
        np.add.at(self._angle_sum, self.triangles.ravel(), self._corner_angles.ravel())
        self._build_boundary_loops()
        self.core_slits = self._attach_slits(core_slits)
        self._weld_partner = {}
        for slit in self.core_slits:
            for a, b in slit.weld_pairs():
                self._weld_partner[a] = b
                self._weld_partner[b] = a
        self._validate_slits()

    # -- construction helpers ------------------------------------------------

    def _check_lengths(self):
        used = set()
        for t, (i, j, k) in enumerate(self.triangles):
            ls = []
            for u, v in ((i, j), (j, k), (k, i)):
                key = edge_key(u, v)
                if key not in self.edge_lengths:
                    raise MeshError(f"missing length for edge {key}")
                l = self.edge_lengths[key]
                if not (l > 0.0) or not math.isfinite(l):
                    raise MeshError(f"edge {key} has non-positive length {l}")
                used.add(key)
                ls.append(l)
            a, b, c = ls
            if not (a < b + c and b < c + a and c < a + b):
                raise TriangleInequalityViolation(t, ls)
        unused = set(self.edge_lengths) - used
        if unused:
            raise MeshError(f"lengths given for non-existent edges: {sorted(unused)}")

    def _build_adjacency(self):
        owner: dict[tuple[int, int], tuple[int, int]] = {}
        per_edge: dict[tuple[int, int], list[tuple[int, int]]] = {}
        for t, (i, j, k) in enumerate(self.triangles):
            for s, (u, v) in enumerate(((i, j), (j, k), (k, i))):
                if (u, v) in owner:
                    raise InconsistentOrientation(
                        f"directed edge ({u},{v}) appears in two triangles; "
                        "windings are not globally consistent"
                    )
                owner[(u, v)] = (t, s)
                per_edge.setdefault(edge_key(u, v), []).append((t, s))
        for key, halves in per_edge.items():
            if len(halves) > 2:
                raise NonManifoldEdge(f"edge {key} has {len(halves)} incident triangles")
        self._dir_owner = owner
        self._twin = {}
        for (u, v), (t, s) in owner.items():
            self._twin[(t, s)] = owner.get((v, u))
        self._check_vertex_links()

    def _halfedge_vertices(self, he):
        t, s = he
        tri = self.triangles[t]
        return int(tri[s]), int(tri[(s + 1) % 3])

    def _check_vertex_links(self):
        # each vertex's incident corners must form one fan (disk or half-disk)
        corners: dict[int, list[tuple[int, int]]] = {}
        for t, tri in enumerate(self.triangles):
            for s in range(3):
                corners.setdefault(int(tri[s]), []).append((t, s))
        for v in range(self.num_vertices):
            if v not in corners:
                raise MeshError(f"vertex {v} is not used by any triangle")
        self._vertex_corners = corners
        for v, cs in corners.items():
            fan, is_cycle = self._walk_fan(v)
            if len(fan) != len(cs):
                raise NonManifoldVertex(
                    f"vertex {v} link is not a single fan "
                    f"({len(fan)} of {len(cs)} corners reachable)"
                )

    def _next_around(self, v: int, t: int):
        """Triangle after t when rotating around v (crossing edge {v, prev})."""
        tri = self.triangles[t]
        s = list(tri).index(v)
        k = int(tri[(s + 2) % 3])  # previous vertex in ccw order
        half = self._dir_owner.get((v, k))
        if half is None:
            return None
        return half[0]

    def _prev_around(self, v: int, t: int):
        tri = self.triangles[t]
        s = list(tri).index(v)
        j = int(tri[(s + 1) % 3])  # next vertex in ccw order
        half = self._dir_owner.get((j, v))
        if half is None:
            return None
        return half[0]

    def _walk_fan(self, v: int):
        """Ordered triangles around v; (fan, True) if it closes into a cycle."""
        t0 = self._vertex_corners[v][0][0]
        fan = [t0]
        t = t0
        while True:
            t = self._next_around(v, t)
            if t is None or t == t0:
                break
            fan.append(t)
        if t == t0:
            return fan, True
        # hit a boundary: rewind from t0 in the other direction
        head = []
        t = t0
        while True:
            t = self._prev_around(v, t)
            if t is None:
                break
            head.append(t)
        return list(reversed(head)) + fan, False

    def _compute_angles(self):
        tris = self.triangles
        L = np.empty((len(tris), 3))
        for s, (a, b) in enumerate(((0, 1), (1, 2), (2, 0))):
            L[:, s] = [
                self.edge_lengths[edge_key(int(t[a]), int(t[b]))] for t in tris
            ]
        # angle at corner s is flanked by sides s and s-1, opposite side s+1
        ang = np.empty_like(L)
        for s in range(3):
            l1 = L[:, s]
            l2 = L[:, (s + 2) % 3]
            lo = L[:, (s + 1) % 3]
            cosv = (l1**2 + l2**2 - lo**2) / (2.0 * l1 * l2)
            ang[:, s] = np.arccos(np.clip(cosv, -1.0, 1.0))
        self._side_lengths = L
        return ang

    def _build_boundary_loops(self):
        boundary = [he for he, tw in self._twin.items() if tw is None]
        tail_map = {}
        for he in boundary:
            u, v = self._halfedge_vertices(he)
            if u in tail_map:
                raise NonManifoldVertex(
                    f"vertex {u} has two outgoing boundary edges"
                )
            tail_map[u] = he
        loops = []
        seen = set()
        for he in boundary:
            if he in seen:
                continue
            loop = []
            cur = he
            while cur not in seen:
                seen.add(cur)
                loop.append(cur)
                _, head = self._halfedge_vertices(cur)
                cur = tail_map.get(head)
                if cur is None:
                    raise MeshError("boundary walk broke; mesh is inconsistent")
            loops.append(loop)
        self._boundary_loop_halfedges = loops
        self.boundary_loops = [
            [self._halfedge_vertices(he)[0] for he in loop] for loop in loops
        ]
        self._boundary_vertices = set()
        for loop in self.boundary_loops:
            self._boundary_vertices.update(loop)

    def _attach_slits(self, core_slits):
        slits = []
        for slit in core_slits:
            if isinstance(slit, dict):
                slit = CoreSlit(
                    plus_vertex=int(slit["plus"]),
                    minus_vertex=int(slit["minus"]),
                    theta=float(slit["theta"]),
                    core_length=float(slit["d"]),
                )
            if not slit.side_a or not slit.side_b:
                slit = self._recover_slit_sides(slit)
            slits.append(slit)
        return tuple(slits)

    def _recover_slit_sides(self, slit: CoreSlit) -> CoreSlit:
        loop_idx = None
        for i, loop in enumerate(self.boundary_loops):
            if slit.plus_vertex in loop and slit.minus_vertex in loop:
                loop_idx = i
                break
        if loop_idx is None:
            raise InvalidSlit(
                f"slit endpoints {slit.plus_vertex}, {slit.minus_vertex} "
                "are not on a common boundary loop"
            )
        loop = self.boundary_loops[loop_idx]
        ip = loop.index(slit.plus_vertex)
        im = loop.index(slit.minus_vertex)
        cyc = loop[ip:] + loop[:ip]
        jm = cyc.index(slit.minus_vertex)
        side_a = tuple(cyc[: jm + 1])
        side_b = tuple([cyc[0]] + list(reversed(cyc[jm:])))
        return CoreSlit(
            slit.plus_vertex, slit.minus_vertex, slit.theta, slit.core_length,
            side_a, side_b,
        )

    def _validate_slits(self):
        for slit in self.core_slits:
            if len(slit.side_a) != len(slit.side_b):
                raise InvalidSlit("slit sides have different edge counts")
            if len(slit.side_a) < 3:
                raise InvalidSlit(
                    "slit sides need at least one interior vertex each"
                )
            if (
                slit.side_a[0] != slit.plus_vertex
                or slit.side_a[-1] != slit.minus_vertex
                or slit.side_b[0] != slit.plus_vertex
                or slit.side_b[-1] != slit.minus_vertex
            ):
                raise InvalidSlit("slit sides must run from plus to minus vertex")
            tot_a = tot_b = 0.0
            for side in (slit.side_a, slit.side_b):
                for u, v in zip(side[:-1], side[1:]):
                    if edge_key(u, v) not in self.edge_lengths:
                        raise InvalidSlit(f"slit side edge {(u, v)} missing")
            for (ua, va), (ub, vb) in zip(
                zip(slit.side_a[:-1], slit.side_a[1:]),
                zip(slit.side_b[:-1], slit.side_b[1:]),
            ):
                la = self.edge_lengths[edge_key(ua, va)]
                lb = self.edge_lengths[edge_key(ub, vb)]
                tot_a += la
                tot_b += lb
                if abs(la - lb) > GLUE_TOL * max(1.0, la):
                    raise InvalidSlit(
                        f"slit side lengths differ: {la!r} vs {lb!r}"
                    )
            for tot in (tot_a, tot_b):
                if abs(tot - slit.core_length) > 1e-8 * max(1.0, slit.core_length):
                    raise InvalidSlit(
                        f"slit side length {tot!r} does not match core length "
                        f"{slit.core_length!r}"
                    )
            dplus = TWO_PI - self._angle_sum[slit.plus_vertex]
            dminus = TWO_PI - self._angle_sum[slit.minus_vertex]
            if abs(dplus - slit.theta) > 1e-8 or abs(dminus + slit.theta) > 1e-8:
                raise InvalidSlit(
                    f"slit deficits ({dplus:.3e}, {dminus:.3e}) do not match "
                    f"+/-theta = {slit.theta:.3e}"
                )
            # the welded cut must be a geodesic through flat points
            for a, b in slit.weld_pairs():
                if abs(self._angle_sum[a] - math.pi) > 1e-8 or abs(
                    self._angle_sum[b] - math.pi
                ) > 1e-8:
                    raise InvalidSlit(
                        "slit interior is not geodesic: welded vertex pair "
                        f"({a}, {b}) has angle sums "
                        f"({self._angle_sum[a]:.12f}, {self._angle_sum[b]:.12f})"
                    )

    # -- basic queries --------------------------------------------------------

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def edge_length(self, u: int, v: int) -> float:
        return self.edge_lengths[edge_key(u, v)]

    def side_lengths(self, t: int) -> np.ndarray:
        """Lengths of triangle t's sides in halfedge order (01, 12, 20)."""
        return self._side_lengths[t]

    def is_boundary_vertex(self, v: int) -> bool:
        return v in self._boundary_vertices

    def interior_edge_triangles(self):
        """Sorted list of (edge_key, triangle, twin triangle) for glued edges."""
        out = []
        for (t, s), twin in self._twin.items():
            if twin is None:
                continue
            u, v = self._halfedge_vertices((t, s))
            if u < v:
                out.append((edge_key(u, v), t, twin[0]))
        return sorted(out)

    def slit_vertices(self) -> set[int]:
        out = set()
        for slit in self.core_slits:
            out.update(slit.side_a)
            out.update(slit.side_b)
        return out

    def weld_partner(self, v: int):
        """Welded counterpart of a slit-side vertex, else None."""
        return self._weld_partner.get(v)

    def weld_classes(self) -> np.ndarray:
        """Vertex -> class index, identifying welded slit-side pairs."""
        cls = np.arange(self.num_vertices)
        for a, b in self._weld_partner.items():
            r = min(a, b)
            cls[a] = cls[b] = r
        # compress to consecutive class ids
        _, inv = np.unique(cls, return_inverse=True)
        return inv

    def triangle_areas(self) -> np.ndarray:
        L = self._side_lengths
        s = 0.5 * L.sum(axis=1)
        val = s * (s - L[:, 0]) * (s - L[:, 1]) * (s - L[:, 2])
        return np.sqrt(np.maximum(val, 0.0))

    # -- angles and deficits ---------------------------------------------------

    def corner_angle(self, t: int, corner: int) -> float:
        """Law-of-cosines interior angle at the given corner (0, 1 or 2)."""
        return float(self._corner_angles[t, corner])

    def vertex_angle_sum(self, v: int) -> float:
        return float(self._angle_sum[v])

    def cone_deficit(self, v: int) -> float:
        """2*pi minus the total angle around v in the welded manifold.

        Slit endpoints count as interior cone points; interior slit-side
        vertices are combined with their weld partner.  Ordinary boundary
        vertices have no deficit (use :meth:`boundary_turning`).
        """
        slit_vs = self.slit_vertices()
        if v in slit_vs:
            partner = self._weld_partner.get(v)
            if partner is None:
                # slit endpoint: the weld closes the link on itself
                return TWO_PI - float(self._angle_sum[v])
            return TWO_PI - float(self._angle_sum[v] + self._angle_sum[partner])
        if v in self._boundary_vertices:
            raise BoundaryVertex(
                f"vertex {v} is on the boundary; its deficit is undefined"
            )
        return TWO_PI - float(self._angle_sum[v])

    def boundary_turning(self, v: int) -> float:
        """pi minus the angle sum at an ordinary boundary vertex."""
        if v not in self._boundary_vertices or v in self.slit_vertices():
            raise MeshError(f"vertex {v} is not an ordinary boundary vertex")
        return math.pi - float(self._angle_sum[v])

    # -- developments ----------------------------------------------------------

    def local_chart(self, t: int) -> np.ndarray:
        """Canonical planar layout of triangle t (ccw, v0 at the origin)."""
        l01, l12, l20 = self._side_lengths[t]
        x2 = (l01 * l01 + l20 * l20 - l12 * l12) / (2.0 * l01)
        y2 = math.sqrt(max(l20 * l20 - x2 * x2, 0.0))
        return np.array([[0.0, 0.0], [l01, 0.0], [x2, y2]])

    def local_charts(self) -> np.ndarray:
        """All canonical layouts at once, shape (num_triangles, 3, 2)."""
        l01, l12, l20 = self._side_lengths.T
        x2 = (l01 * l01 + l20 * l20 - l12 * l12) / (2.0 * l01)
        y2 = np.sqrt(np.maximum(l20 * l20 - x2 * x2, 0.0))
        out = np.zeros((self.num_triangles, 3, 2))
        out[:, 1, 0] = l01
        out[:, 2, 0] = x2
        out[:, 2, 1] = y2
        return out

    def _shared_edge(self, t: int, t2: int, gate=None):
        shared = set(map(int, self.triangles[t])) & set(map(int, self.triangles[t2]))
        if gate is not None:
            if not set(gate) <= shared:
                raise PathError(f"gate {gate} is not shared by triangles {t}, {t2}")
            return gate
        if len(shared) == 2:
            return edge_key(*shared)
        if len(shared) == 3:
            raise PathError(
                f"triangles {t} and {t2} share all three vertices; "
                "provide explicit gates"
            )
        raise PathError(f"triangles {t} and {t2} do not share an edge")

    def _unfold(self, t: int, motion: Motion, t2: int, gate=None) -> Motion:
        """Placement of t2 when t is placed by `motion` and they share an edge."""
        u, v = self._shared_edge(t, t2, gate)
        placed = motion(self.local_chart(t))
        chart2 = self.local_chart(t2)
        tri, tri2 = list(self.triangles[t]), list(self.triangles[t2])
        pu, pv = placed[tri.index(u)], placed[tri.index(v)]
        cu, cv = chart2[tri2.index(u)], chart2[tri2.index(v)]
        return motion_from_segments(cu, cv, pu, pv)

    def develop(self, path: DiscretePath) -> list[Motion]:
        """Placements along the strip, in the start triangle's chart frame.

        Returns one Motion per strip position; for a closed path one extra
        Motion is appended: the final placement of the start triangle after
        going around.
        """
        self._validate_path(path)
        motions = [Motion.identity()]
        ts = path.triangles
        gates = path.gates or (None,) * len(path.steps())
        for step, (a, b) in enumerate(path.steps()):
            motions.append(self._unfold(a, motions[-1], b, gates[step]))
        return motions

    def _validate_path(self, path: DiscretePath):
        if len(path.triangles) == 0:
            raise PathError("empty path")
        if path.gates is not None and len(path.gates) != len(path.steps()):
            raise PathError("gates length must match the number of steps")
        for t in path.triangles:
            if not (0 <= t < self.num_triangles):
                raise PathError(f"triangle id {t} out of range")
        gates = path.gates or (None,) * len(path.steps())
        for (a, b), g in zip(path.steps(), gates):
            self._shared_edge(a, b, g)

    def transport_along(self, path: DiscretePath) -> float:
        """Rotation applied to a vector transported along the strip.

        The angle is expressed in the development frame of the start
        triangle; for a closed path it is the holonomy angle (a ccw loop
        around a single cone returns the cone's deficit).  The chart of the
        final triangle is placed by a rotation *inverse* to this one.
        """
        motions = self.develop(path)
        return -motions[-1].angle()

    def burgers_vector(self, circuit: DiscretePath, basepoint=None) -> np.ndarray:
        """Developed closure gap of a closed circuit at the given basepoint.

        ``basepoint`` is a barycentric coordinate triple in the start
        triangle (default: centroid); the result is expressed in the
        development frame of the start triangle.
        """
        if not circuit.closed:
            raise OpenCircuit("Burgers vectors are defined for closed circuits")
        if basepoint is None:
            basepoint = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
        bary = np.asarray(basepoint, dtype=float)
        if bary.shape != (3,) or abs(bary.sum() - 1.0) > 1e-12:
            raise PathError("basepoint must be barycentric coordinates summing to 1")
        motions = self.develop(circuit)
        x = bary @ self.local_chart(circuit.triangles[0])
        return motions[-1](x) - x

    # -- canonical strips -------------------------------------------------------

    def triangles_around_vertex(self, v: int):
        """Ordered fan of triangles around v; (fan, closes_into_cycle)."""
        if not (0 <= v < self.num_vertices):
            raise MeshError(f"vertex {v} out of range")
        return self._walk_fan(v)

    def vertex_star_strip(self, v: int) -> DiscretePath:
        """Closed strip encircling an interior vertex once."""
        fan, is_cycle = self._walk_fan(v)
        if not is_cycle:
            raise PathError(f"vertex {v} is on the boundary; its star is not a loop")
        if len(fan) < 3:
            raise PathError(f"vertex {v} has fewer than 3 incident triangles")
        return DiscretePath(tuple(fan), True)

    def boundary_collar_strip(self, loop_index: int) -> DiscretePath:
        """Closed strip of all triangles hugging the given boundary loop."""
        loop = self._boundary_loop_halfedges[loop_index]
        strip: list[int] = []
        for he in loop:
            t, _ = he
            _, head = self._halfedge_vertices(he)
            # fan around `head` from this triangle to the next boundary edge,
            # rotating away from the hole into the surface
            fan = [t]
            cur = t
            while True:
                nxt = self._prev_around(head, cur)
                if nxt is None:
                    break
                fan.append(nxt)
                cur = nxt
            for f in fan:
                if not strip or strip[-1] != f:
                    strip.append(f)
        while len(strip) > 1 and strip[0] == strip[-1]:
            strip.pop()
        if len(strip) < 3:
            raise PathError("boundary loop collar is degenerate")
        return DiscretePath(tuple(strip), True)

    def slit_loop_index(self, slit: CoreSlit) -> int:
        for i, loop in enumerate(self.boundary_loops):
            if slit.plus_vertex in loop and slit.minus_vertex in loop:
                if set(loop) <= set(slit.side_a) | set(slit.side_b):
                    return i
        raise InvalidSlit("slit has no boundary loop of its own")

    def slit_collar_strip(self, slit: CoreSlit) -> DiscretePath:
        """Closed strip encircling a core slit (the whole dipole) once."""
        return self.boundary_collar_strip(self.slit_loop_index(slit))

    def outer_loop_indices(self) -> list[int]:
        slit_loops = {self.slit_loop_index(s) for s in self.core_slits}
        return [i for i in range(len(self.boundary_loops)) if i not in slit_loops]

    # -- serialization -----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "vertices": self.num_vertices,
            "triangles": [[int(i), int(j), int(k)] for i, j, k in self.triangles],
            "edge_lengths": {
                f"{u}-{v}": self.edge_lengths[(u, v)]
                for u, v in sorted(self.edge_lengths)
            },
            "core_slits": [
                {
                    "plus": s.plus_vertex,
                    "minus": s.minus_vertex,
                    "theta": s.theta,
                    "d": s.core_length,
                }
                for s in self.core_slits
            ],
        }

    def to_json(self, **kwargs) -> str:
        kwargs.setdefault("indent", 2)
        kwargs.setdefault("sort_keys", True)
        return json.dumps(self.to_dict(), **kwargs)

    @staticmethod
    def from_dict(data: dict) -> "IntrinsicMesh":
        lengths = {}
        for key, val in data["edge_lengths"].items():
            u, v = key.split("-")
            lengths[(int(u), int(v))] = float(val)
        return IntrinsicMesh(
            data["triangles"],
            lengths,
            data.get("core_slits", ()),
            num_vertices=data.get("vertices"),
        )

    @staticmethod
    def from_json(text: str) -> "IntrinsicMesh":
        return IntrinsicMesh.from_dict(json.loads(text))


def _normalize_length_keys(edge_lengths):
    for key, val in edge_lengths.items():
        if isinstance(key, str):
            u, v = key.split("-")
            yield (int(u), int(v)), val
        else:
            u, v = key
            yield (int(u), int(v)), val


def build_mesh(triangles, edge_lengths, core_slits=()) -> IntrinsicMesh:
    """Validate and build an :class:`IntrinsicMesh`.

    Raises :class:`TriangleInequalityViolation`, :class:`NonManifoldEdge`,
    :class:`InconsistentOrientation` or :class:`InvalidSlit` on bad input.
    """
    return IntrinsicMesh(triangles, edge_lengths, core_slits)


def corner_angle(mesh: IntrinsicMesh, triangle: int, corner: int) -> float:
    return mesh.corner_angle(triangle, corner)


def cone_deficit(mesh: IntrinsicMesh, vertex: int) -> float:
    return mesh.cone_deficit(vertex)


def transport_along(mesh: IntrinsicMesh, path: DiscretePath) -> float:
    return mesh.transport_along(path)


def burgers_vector(mesh: IntrinsicMesh, circuit: DiscretePath, basepoint=None):
    return mesh.burgers_vector(circuit, basepoint)


def save_mesh(mesh: IntrinsicMesh, path) -> None:
    with open(path, "w") as fh:
        fh.write(mesh.to_json())
        fh.write("\n")


def load_mesh(path) -> IntrinsicMesh:
    with open(path) as fh:
        return IntrinsicMesh.from_json(fh.read())
