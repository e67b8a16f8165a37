"""Elastic energies of piecewise-linear maps over cone meshes and charts.

The discrete energy is sum_T area_T W(df_T o E_T) with E_T the parallel
orthonormal frame expressed in each triangle's canonical chart; on the
smooth side the same integrand is evaluated by per-triangle midpoint
quadrature against the frame field.  Minimization is limited-memory
quasi-Newton (scipy L-BFGS-B) from the spanning-tree development, with
seeded perturbed restarts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .cone_mesh import IntrinsicMesh, Motion, rotation
from .errors import (
    DislohomError,
    HolonomyObstruction,
    MaxIterations,
    NonSmoothPoint,
)
from .weitzenbock import FrameField, frame_divergence, sqrt_det_metric


@dataclass(frozen=True)
class MeshFrame:
    """Parallel orthonormal frame, one rotation per triangle's local chart."""

    rotations: np.ndarray  # (m, 2, 2)
    root: int
    seed_rotation: float
    max_consistency_residual: float

    def rotated(self, extra: float) -> "MeshFrame":
        return MeshFrame(
            self.rotations @ rotation(extra), self.root,
            self.seed_rotation + extra, self.max_consistency_residual,
        )


def _bfs_development(mesh: IntrinsicMesh, root: int):
    """Develop the whole mesh along a BFS spanning tree of the dual graph.

    Returns per-triangle placement motions (local chart -> root plane) and
    the maximum rotation mismatch over non-tree edges; a mismatch means the
    transport has holonomy, i.e. the mesh is not a valid dislocated body.
    """
    m = mesh.num_triangles
    placements: list[Motion | None] = [None] * m
    placements[root] = Motion.identity()
    adjacency: dict[int, list[int]] = {t: [] for t in range(m)}
    for _, t1, t2 in mesh.interior_edge_triangles():
        adjacency[t1].append(t2)
        adjacency[t2].append(t1)
    queue = [root]
    residual = 0.0
    while queue:
        t = queue.pop(0)
        for t2 in adjacency[t]:
            placed = mesh._unfold(t, placements[t], t2)
            if placements[t2] is None:
                placements[t2] = placed
                queue.append(t2)
            else:
                residual = max(
                    residual,
                    float(np.abs(placed.rot - placements[t2].rot).max()),
                )
    missing = [t for t, p in enumerate(placements) if p is None]
    if missing:
        raise DislohomError(
            f"mesh is not connected: {len(missing)} unreachable triangles"
        )
    return placements, residual


def propagate_frame(mesh: IntrinsicMesh, root: int = 0,
                    seed_rotation: float = 0.0,
                    tol: float = 1e-10) -> MeshFrame:
    """Spread a frame over the mesh by parallel transport from the root.

    Verifies path independence: every non-tree dual edge must close with a
    rotation residual below ``tol``, else :class:`HolonomyObstruction`.
    """
    placements, residual = _bfs_development(mesh, root)
    if residual > tol:
        raise HolonomyObstruction("non-tree", residual)
    seed = rotation(seed_rotation)
    rotations = np.stack([p.rot.T @ seed for p in placements])
    return MeshFrame(rotations, root, seed_rotation, residual)


def development_positions(mesh: IntrinsicMesh, root: int = 0) -> np.ndarray:
    """Weld-class positions of the BFS development (exact on flat meshes)."""
    placements, _ = _bfs_development(mesh, root)
    cls = mesh.weld_classes()
    ncls = int(cls.max()) + 1
    pos = np.zeros((ncls, 2))
    have = np.zeros(ncls, dtype=bool)
    charts = mesh.local_charts()
    for t, tri in enumerate(mesh.triangles):
        placed = placements[t](charts[t])
        for corner, v in enumerate(tri):
            c = cls[v]
            if not have[c]:
                pos[c] = placed[corner]
                have[c] = True
    pos -= pos[cls[mesh.triangles[root][0]]]
    return pos


@dataclass
class PLMap:
    """Piecewise-linear map: one image point per weld class of vertices.

    The two sides of each core slit share their classes, so maps are
    continuous across the weld by construction.
    """

    mesh: IntrinsicMesh
    positions: np.ndarray  # (num_classes, 2)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        cls = self.mesh.weld_classes()
        if self.positions.shape != (int(cls.max()) + 1, 2):
            raise DislohomError(
                f"expected positions of shape ({int(cls.max()) + 1}, 2)"
            )
        if not np.all(np.isfinite(self.positions)):
            raise DislohomError("map positions must be finite")

    def vertex_positions(self) -> np.ndarray:
        return self.positions[self.mesh.weld_classes()]

    @staticmethod
    def from_development(mesh: IntrinsicMesh, root: int = 0) -> "PLMap":
        return PLMap(mesh, development_positions(mesh, root))


class PLSystem:
    """Precomputed arrays for fast energy/gradient evaluation on one mesh."""

    def __init__(self, mesh: IntrinsicMesh, frame: MeshFrame, archetype):
        charts = mesh.local_charts()
        V = np.stack([charts[:, 1] - charts[:, 0], charts[:, 2] - charts[:, 0]],
                     axis=-1)
        self.inv_v = np.linalg.inv(V)
        self.areas = mesh.triangle_areas()
        self.frames = frame.rotations
        cls = mesh.weld_classes()
        self.tri_cls = cls[mesh.triangles]
        self.ncls = int(cls.max()) + 1
        self.mesh = mesh
        self.archetype = archetype
        # d(df)/dF pulled through B = F (invV E): dW/dF = G (invV E)^T
        self.pull = self.inv_v @ self.frames

    def deformation_argument(self, positions: np.ndarray) -> np.ndarray:
        p = positions[self.tri_cls]  # (m, 3, 2)
        F = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
        return F @ self.pull

    def densities(self, positions: np.ndarray) -> np.ndarray:
        return self.archetype.evaluate(self.deformation_argument(positions))

    def energy(self, positions: np.ndarray) -> float:
        return float(np.dot(self.areas, self.densities(positions)))

    def gradient(self, positions: np.ndarray) -> np.ndarray:
        B = self.deformation_argument(positions)
        G = self.archetype.gradient(B)
        dF = self.areas[:, None, None] * (G @ np.swapaxes(self.pull, -1, -2))
        out = np.zeros((self.ncls, 2))
        np.add.at(out, self.tri_cls[:, 1], dF[:, :, 0])
        np.add.at(out, self.tri_cls[:, 2], dF[:, :, 1])
        np.add.at(out, self.tri_cls[:, 0], -(dF[:, :, 0] + dF[:, :, 1]))
        return out


def energy(plmap: PLMap, mesh: IntrinsicMesh, frame: MeshFrame, archetype) -> float:
    """I(f) = sum_T area_T W(df_T o E_T)."""
    return PLSystem(mesh, frame, archetype).energy(plmap.positions)


def energy_gradient(plmap: PLMap, mesh: IntrinsicMesh, frame: MeshFrame,
                    archetype) -> np.ndarray:
    """Per-class derivative of the energy; rows sum to zero."""
    return PLSystem(mesh, frame, archetype).gradient(plmap.positions)


@dataclass
class MinimizeOptions:
    tol: float = 1e-8
    max_iter: int = 3000
    restarts: int = 5
    seed: int = 0
    perturbation: float = 0.05  # relative to the mean edge length


@dataclass
class MinimizeResult:
    plmap: PLMap | None
    energy: float
    grad_norm: float
    iterations: int
    nfev: int
    restart_energies: list
    converged: bool
    message: str
    positions: object = None  # smooth-side minimizers carry raw chart points

    @property
    def restart_spread(self) -> float:
        es = self.restart_energies
        ref = max(abs(min(es)), 1e-30)
        return (max(es) - min(es)) / ref

    def summary(self) -> dict:
        return {
            "energy": self.energy,
            "grad_norm": self.grad_norm,
            "iterations": self.iterations,
            "nfev": self.nfev,
            "restart_energies": list(self.restart_energies),
            "restart_spread": self.restart_spread,
            "converged": self.converged,
        }


def _run_lbfgs(sys_like, x0_free, pinned, opts):
    ncls = sys_like.ncls

    def unpack(x):
        pos = np.empty((ncls, 2))
        pos[pinned] = 0.0
        pos[~pinned] = x.reshape(-1, 2)
        return pos

    def fun(x):
        pos = unpack(x)
        g = sys_like.gradient(pos)
        return sys_like.energy(pos), g[~pinned].ravel()

    res = optimize.minimize(
        fun, x0_free, jac=True, method="L-BFGS-B",
        options=dict(maxiter=opts.max_iter, maxcor=10, maxls=60,
                     ftol=1e-18, gtol=opts.tol),
    )
    pos = unpack(res.x)
    # stationarity of the gauge-reduced problem (the pinned row is minus the
    # sum of all the others and only accumulates roundoff)
    grad_norm = float(np.abs(sys_like.gradient(pos)[~pinned]).max())
    return pos, float(res.fun), grad_norm, int(res.nit), int(res.nfev), res

def minimize(mesh: IntrinsicMesh, frame: MeshFrame, archetype,
             opts: MinimizeOptions | None = None, x0: PLMap | None = None,
             strict: bool = False) -> MinimizeResult:
    """Minimize the PL elastic energy; deterministic given opts.seed.

    Gauge: the first weld class is pinned at the origin (translations);
    rotations are left free since energy values are rotation invariant.
    Runs 1 + opts.restarts seeded starts and reports the best.
    """
    opts = opts or MinimizeOptions()
    system = PLSystem(mesh, frame, archetype)
    base = x0.positions.copy() if x0 is not None else development_positions(
        mesh, frame.root
    )
    pinned = np.zeros(system.ncls, dtype=bool)
    pinned[mesh.weld_classes()[mesh.triangles[frame.root][0]]] = True
    base = base - base[pinned][0]

    mean_edge = float(np.mean(list(mesh.edge_lengths.values())))
    rng = np.random.default_rng(opts.seed)
    best = None
    energies = []
    total_it = total_fev = 0
    for r in range(opts.restarts + 1):
        start = base.copy()
        if r > 0:
            start += opts.perturbation * mean_edge * rng.standard_normal(
                start.shape
            )
        pos, val, gnorm, nit, nfev, res = _run_lbfgs(
            system, start[~pinned].ravel(), pinned, opts
        )
        energies.append(val)
        total_it += nit
        total_fev += nfev
        if best is None or val < best[1]:
            best = (pos, val, gnorm, res)
    pos, val, gnorm, res = best
    converged = gnorm < opts.tol
    result = MinimizeResult(
        plmap=PLMap(mesh, pos), energy=val, grad_norm=gnorm,
        iterations=total_it, nfev=total_fev, restart_energies=energies,
        converged=converged, message=str(res.message),
    )
    if strict and not converged:
        raise MaxIterations(
            f"gradient norm {gnorm:.3e} above tol {opts.tol:.1e} after "
            f"{total_it} iterations", result,
        )
    return result


# ---------------------------------------------------------------------------
# smooth side: PL maps on a planar chart triangulation


def _quad_barycentric(level: int) -> np.ndarray:
    """Equal-weight quadrature nodes: centroids of 4^(level-1) subtriangles."""
    tris = [np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])]
    for _ in range(level - 1):
        nxt = []
        for t in tris:
            a, b, c = t
            ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
            nxt += [
                np.array([a, ab, ca]), np.array([ab, b, bc]),
                np.array([ca, bc, c]), np.array([ab, bc, ca]),
            ]
        tris = nxt
    return np.array([t.mean(axis=0) for t in tris])  # (nq, 3)


@dataclass
class ChartMesh:
    """A planar triangulation of (part of) the chart domain."""

    points: np.ndarray     # (nv, 2)
    triangles: np.ndarray  # (nt, 3) ccw

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=int)

    def refined(self, rounds: int = 1) -> "ChartMesh":
        pts = list(self.points)
        tris = [tuple(t) for t in self.triangles]
        for _ in range(rounds):
            mid = {}

            def midpoint(u, v):
                key = (u, v) if u < v else (v, u)
                if key not in mid:
                    pts.append(0.5 * (pts[u] + pts[v]))
                    mid[key] = len(pts) - 1
                return mid[key]

            out = []
            for i, j, k in tris:
                ij, jk, ki = midpoint(i, j), midpoint(j, k), midpoint(k, i)
                out += [(i, ij, ki), (ij, j, jk), (ki, jk, k), (ij, jk, ki)]
            tris = out
        return ChartMesh(np.asarray(pts), np.asarray(tris))

    def max_edge_length(self) -> float:
        p = self.points[self.triangles]
        e = np.linalg.norm(
            p - np.roll(p, -1, axis=1), axis=-1
        )
        return float(e.max())


class SmoothSystem:
    """Quadrature of W(df o E(x)) sqrt(det g(x)) for PL maps on a chart mesh."""

    def __init__(self, field: FrameField, chart: ChartMesh, archetype,
                 quad_level: int = 1):
        self.field = field
        self.chart = chart
        self.archetype = archetype
        p = chart.points[chart.triangles]  # (m, 3, 2)
        V = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
        self.inv_v = np.linalg.inv(V)
        self.areas = 0.5 * np.abs(np.linalg.det(V))
        bary = _quad_barycentric(quad_level)  # (nq, 3)
        self.qpts = np.einsum("qk,mkx->mqx", bary, p)  # (m, nq, 2)
        self.weights = self.areas[:, None] / bary.shape[0]
        field.require_inside(self.qpts.reshape(-1, 2))
        self.Eq = field.frame(self.qpts)            # (m, nq, 2, 2)
        self.sqrtg = sqrt_det_metric(field, self.qpts)  # (m, nq)
        self.tri_cls = chart.triangles
        self.ncls = len(chart.points)

    def _df(self, positions):
        p = positions[self.tri_cls]
        F = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
        return F @ self.inv_v  # (m, 2, 2), constant per triangle

    def energy(self, positions) -> float:
        B = np.einsum("mab,mqbc->mqac", self._df(positions), self.Eq)
        vals = self.archetype.evaluate(B)
        return float(np.sum(self.weights * self.sqrtg * vals))

    def gradient(self, positions) -> np.ndarray:
        df = self._df(positions)
        B = np.einsum("mab,mqbc->mqac", df, self.Eq)
        G = self.archetype.gradient(B)
        w = self.weights * self.sqrtg
        dDf = np.einsum("mq,mqac,mqbc->mab", w, G, self.Eq)
        dF = dDf @ np.swapaxes(self.inv_v, -1, -2)
        out = np.zeros((self.ncls, 2))
        np.add.at(out, self.tri_cls[:, 1], dF[:, :, 0])
        np.add.at(out, self.tri_cls[:, 2], dF[:, :, 1])
        np.add.at(out, self.tri_cls[:, 0], -(dF[:, :, 0] + dF[:, :, 1]))
        return out


def smooth_energy(field: FrameField, chart: ChartMesh, positions, archetype,
                  quad_level: int = 1) -> float:
    """Elastic energy of the PL map on a chart triangulation."""
    return SmoothSystem(field, chart, archetype, quad_level).energy(
        np.asarray(positions, dtype=float)
    )


def smooth_energy_of_map(field: FrameField, chart: ChartMesh, test_map,
                         archetype, quad_level: int = 2) -> float:
    """Quadrature of the energy of a differentiable map (df given exactly)."""
    sysm = SmoothSystem(field, chart, archetype, quad_level)
    df = test_map.df(sysm.qpts)
    B = np.einsum("mqab,mqbc->mqac", df, sysm.Eq)
    vals = archetype.evaluate(B)
    return float(np.sum(sysm.weights * sysm.sqrtg * vals))


def minimize_smooth(field: FrameField, chart: ChartMesh, archetype,
                    opts: MinimizeOptions | None = None, x0=None,
                    quad_level: int = 1, strict: bool = False) -> MinimizeResult:
    """Minimize the smooth-body energy over PL maps on the chart mesh."""
    opts = opts or MinimizeOptions()
    system = SmoothSystem(field, chart, archetype, quad_level)
    base = np.asarray(x0, dtype=float) if x0 is not None else chart.points.copy()
    pinned = np.zeros(system.ncls, dtype=bool)
    pinned[0] = True
    base = base - base[0]

    mean_edge = float(
        np.mean(np.linalg.norm(np.diff(chart.points[chart.triangles], axis=1),
                               axis=-1))
    )
    rng = np.random.default_rng(opts.seed)
    best = None
    energies = []
    total_it = total_fev = 0
    for r in range(opts.restarts + 1):
        start = base.copy()
        if r > 0:
            start += opts.perturbation * mean_edge * rng.standard_normal(
                start.shape
            )
        pos, val, gnorm, nit, nfev, res = _run_lbfgs(
            system, start[~pinned].ravel(), pinned, opts
        )
        energies.append(val)
        total_it += nit
        total_fev += nfev
        if best is None or val < best[1]:
            best = (pos, val, gnorm, res)
    pos, val, gnorm, res = best
    converged = gnorm < opts.tol
    result = MinimizeResult(
        plmap=None, energy=val, grad_norm=gnorm, iterations=total_it,
        nfev=total_fev, restart_energies=energies, converged=converged,
        message=str(res.message), positions=pos,
    )
    if strict and not converged:
        raise MaxIterations("smooth minimization did not converge", result)
    return result


# ---------------------------------------------------------------------------
# Euler-Lagrange residual with the torsion-trace term


@dataclass(frozen=True)
class DifferentiableMap:
    """A twice-differentiable map with exact derivatives for residual checks.

    ``d2f(x)`` has layout [..., a, k, l] = second derivative of component a
    along chart coordinates k, l.
    """

    f: callable
    df: callable
    d2f: callable


def affine_map(A, b=(0.0, 0.0)) -> DifferentiableMap:
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    return DifferentiableMap(
        f=lambda x: np.asarray(x) @ A.T + b,
        df=lambda x: np.broadcast_to(A, np.asarray(x).shape[:-1] + (2, 2)).copy(),
        d2f=lambda x: np.zeros(np.asarray(x).shape[:-1] + (2, 2, 2)),
    )


def sinusoidal_map(amp=0.1, freq=2.0) -> DifferentiableMap:
    """x + amp sin(freq y) in the first component: smooth and nontrivial."""

    def f(x):
        x = np.asarray(x, dtype=float)
        out = x.copy()
        out[..., 0] = x[..., 0] + amp * np.sin(freq * x[..., 1])
        return out

    def df(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = 1.0
        out[..., 0, 1] = amp * freq * np.cos(freq * x[..., 1])
        return out

    def d2f(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 0, 1, 1] = -amp * freq * freq * np.sin(freq * x[..., 1])
        return out

    return DifferentiableMap(f, df, d2f)


def el_residual(field: FrameField, test_map: DifferentiableMap, archetype, points,
                use_divergence: bool = False) -> np.ndarray:
    """Strong-form equilibrium residual at the given chart points.

    residual^a = sum_ij d2W/dB_i dB_j (df o E) (E_i E_j f)^a
               - T^j_{ji} dW/dB_i^a,
    with the trace term realized either via the torsion trace (default) or
    via the volume-form divergence (``use_divergence``); both agree.
    """
    if getattr(archetype, "hessian", None) is None:
        raise NonSmoothPoint(
            f"archetype {getattr(archetype, 'name', archetype)!r} has no "
            "C^2 evaluation; use the smooth test density"
        )
    pts = np.asarray(points, dtype=float)
    field.require_inside(pts)
    E = field.frame(pts)
    dE = field.frame_jac(pts)
    df = test_map.df(pts)
    d2f = test_map.d2f(pts)
    B = df @ E
    H = archetype.hessian(B)       # (..., a, i, b, j)
    G = archetype.gradient(B)      # (..., a, i)
    # (E_i E_j f)^b = E^k_i d_k(E^l_j) d_l f^b + E^k_i E^l_j d_k d_l f^b
    EiEjf = np.einsum("...ki,...ljk,...bl->...bij", E, dE, df) + np.einsum(
        "...ki,...lj,...bkl->...bij", E, E, d2f
    )
    term1 = np.einsum("...aibj,...bij->...a", H, EiEjf)
    if use_divergence:
        div = frame_divergence(field, pts)
    else:
        from .weitzenbock import torsion_trace

        div = -torsion_trace(field, pts)
    term2 = np.einsum("...ai,...i->...a", G, div)
    return term1 + term2
