"""Smooth frame fields on a planar chart: metric, torsion, geodesics.

A frame field assigns every chart point an invertible 2x2 matrix whose
columns are the frame vectors in chart coordinates.  Declaring the frame
parallel defines a flat connection with distant parallelism; its geodesics
are the integral curves of constant frame-direction, and its torsion is the
negative Lie bracket of the frame columns.  Frame directions ("c-vectors")
therefore live in one global trivialization, which makes per-triangle
Burgers defects plain vector sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .dislocation_builder import TriangulationData
from .errors import (
    FieldError,
    LeftDomain,
    OutOfDomain,
    QualityBoundViolated,
    ShootingDiverged,
)


@dataclass(frozen=True)
class FrameField:
    """Analytic frame on an axis-aligned rectangular chart.

    ``frame(x)`` maps points (..., 2) to matrices (..., 2, 2) with columns
    E_1, E_2; ``frame_jac`` returns (..., 2, 2, 2) with entry [i, j, l] equal
    to the derivative of E_ij along chart coordinate l.
    """

    name: str
    domain: tuple[float, float, float, float]  # (xmin, xmax, ymin, ymax)
    frame: callable
    frame_jac: callable
    analytic_jac: bool = True
    params: dict = dataclass_field(default_factory=dict)

    def contains(self, pts, slack: float = 1e-12) -> np.ndarray:
        pts = np.asarray(pts)
        x, y = pts[..., 0], pts[..., 1]
        x0, x1, y0, y1 = self.domain
        return (x >= x0 - slack) & (x <= x1 + slack) & (y >= y0 - slack) & (y <= y1 + slack)

    def require_inside(self, pts):
        if not np.all(self.contains(pts)):
            raise OutOfDomain(f"point outside the chart domain {self.domain}")


def _as_points(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


# ---------------------------------------------------------------------------
# registry


def identity_field(domain=(0.0, 1.0, 0.0, 1.0)) -> FrameField:
    def frame(pts):
        pts = _as_points(pts)
        out = np.zeros(pts.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = 1.0
        return out

    def jac(pts):
        pts = _as_points(pts)
        return np.zeros(pts.shape[:-1] + (2, 2, 2))

    return FrameField("identity", domain, frame, jac)


def constant_torsion_field(tau=0.5, domain=(0.0, 1.0, 0.0, 1.0)) -> FrameField:
    """Frame columns rotated by tau*y: flat intrinsic metric, torsion of
    constant chart magnitude tau."""

    def frame(pts):
        pts = _as_points(pts)
        ang = tau * pts[..., 1]
        c, s = np.cos(ang), np.sin(ang)
        out = np.empty(pts.shape[:-1] + (2, 2))
        out[..., 0, 0] = c
        out[..., 1, 0] = s
        out[..., 0, 1] = -s
        out[..., 1, 1] = c
        return out

    def jac(pts):
        pts = _as_points(pts)
        ang = tau * pts[..., 1]
        c, s = np.cos(ang), np.sin(ang)
        out = np.zeros(pts.shape[:-1] + (2, 2, 2))
        out[..., 0, 0, 1] = -tau * s
        out[..., 1, 0, 1] = tau * c
        out[..., 0, 1, 1] = -tau * c
        out[..., 1, 1, 1] = -tau * s
        return out

    return FrameField("constant_torsion", domain, frame, jac, params={"tau": tau})


def bracket_demo_field(domain=(0.0, 1.0, 0.0, 1.0)) -> FrameField:
    """E_1 = d/dx, E_2 = x d/dx + d/dy; [E_1, E_2] = E_1."""

    def frame(pts):
        pts = _as_points(pts)
        out = np.zeros(pts.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 0, 1] = pts[..., 0]
        out[..., 1, 1] = 1.0
        return out

    def jac(pts):
        pts = _as_points(pts)
        out = np.zeros(pts.shape[:-1] + (2, 2, 2))
        out[..., 0, 1, 0] = 1.0
        return out

    return FrameField("bracket_demo", domain, frame, jac)


def gradient_field(amp=0.1, freq=2.0, domain=(0.0, 1.0, 0.0, 1.0)) -> FrameField:
    """E = d(phi) for the diffeomorphism phi(x, y) = (x + amp sin(freq y), y);
    coordinate frames of a pullback have zero torsion."""

    def frame(pts):
        pts = _as_points(pts)
        out = np.zeros(pts.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 0, 1] = amp * freq * np.cos(freq * pts[..., 1])
        out[..., 1, 1] = 1.0
        return out

    def jac(pts):
        pts = _as_points(pts)
        out = np.zeros(pts.shape[:-1] + (2, 2, 2))
        out[..., 0, 1, 1] = -amp * freq * freq * np.sin(freq * pts[..., 1])
        return out

    return FrameField("gradient_demo", domain, frame, jac,
                      params={"amp": amp, "freq": freq})


def grid_sampled_field(base: FrameField, nx=33, ny=33) -> FrameField:
    """Bilinear interpolation of a sampled frame; jacobian by central
    differences (flagged non-analytic)."""
    from scipy.interpolate import RegularGridInterpolator

    x0, x1, y0, y1 = base.domain
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    grid = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1)
    values = base.frame(grid)  # (nx, ny, 2, 2)
    interp = RegularGridInterpolator(
        (xs, ys), values, method="linear", bounds_error=False, fill_value=None
    )

    def frame(pts):
        pts = _as_points(pts)
        return interp(pts)

    h = 0.25 * min((x1 - x0) / (nx - 1), (y1 - y0) / (ny - 1))

    def jac(pts):
        pts = _as_points(pts)
        out = np.empty(pts.shape[:-1] + (2, 2, 2))
        for l in range(2):
            dp = np.zeros(2)
            dp[l] = h
            out[..., l] = (frame(pts + dp) - frame(pts - dp)) / (2 * h)
        return out

    return FrameField(
        f"grid_sampled[{base.name}]", base.domain, frame, jac,
        analytic_jac=False, params={"nx": nx, "ny": ny, "base": base.name},
    )


FIELD_REGISTRY = {
    "identity": identity_field,
    "constant_torsion": constant_torsion_field,
    "bracket_demo": bracket_demo_field,
    "gradient_demo": gradient_field,
}


def get_field(name: str, domain=(0.0, 1.0, 0.0, 1.0), **params) -> FrameField:
    if name == "grid_sampled":
        base_name = params.pop("base", "constant_torsion")
        nx = params.pop("nx", 33)
        ny = params.pop("ny", 33)
        return grid_sampled_field(get_field(base_name, domain, **params), nx, ny)
    if name not in FIELD_REGISTRY:
        raise FieldError(
            f"unknown frame field {name!r}; known: {sorted(FIELD_REGISTRY)} "
            "and grid_sampled"
        )
    return FIELD_REGISTRY[name](domain=domain, **params)


# ---------------------------------------------------------------------------
# pointwise geometry


def metric_at(field: FrameField, x) -> np.ndarray:
    """Intrinsic metric (E E^T)^{-1}: the frame columns are orthonormal."""
    field.require_inside(x)
    E = field.frame(_as_points(x))
    return np.linalg.inv(E @ np.swapaxes(E, -1, -2))


def sqrt_det_metric(field: FrameField, x) -> np.ndarray:
    E = field.frame(_as_points(x))
    return 1.0 / np.abs(np.linalg.det(E))


def torsion_at(field: FrameField, x) -> np.ndarray:
    """Components T^k_{ij} with T(E_i, E_j) = -[E_i, E_j] = T^k_{ij} E_k.

    Returned with index layout [..., k, i, j]; antisymmetric in (i, j).
    """
    field.require_inside(x)
    pts = _as_points(x)
    E = field.frame(pts)
    dE = field.frame_jac(pts)
    # [E_i, E_j]^m = E_li d_l E_mj - E_lj d_l E_mi
    bracket = np.einsum("...li,...mjl->...mij", E, dE) - np.einsum(
        "...lj,...mil->...mij", E, dE
    )
    Einv = np.linalg.inv(E)
    return -np.einsum("...km,...mij->...kij", Einv, bracket)


def torsion_apply(T: np.ndarray, X, Y) -> np.ndarray:
    """T(X, Y) for frame-coefficient vectors X, Y; frame coefficients out."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    return np.einsum("...kij,...i,...j->...k", T, X, Y)


def torsion_trace(field: FrameField, x) -> np.ndarray:
    """The trace vector (T^j_{j i})_i appearing in the equilibrium equations."""
    T = torsion_at(field, x)
    return np.einsum("...jji->...i", T)


def frame_divergence(field: FrameField, x) -> np.ndarray:
    """div E_i from the volume-form contraction d(iota_{E_i} dVol) = div E_i dVol.

    In chart coordinates dVol has density 1/|det E|, so
    div E_i = det E * d_l(E_li / det E); equals -T^j_{ji} identically.
    """
    field.require_inside(x)
    pts = _as_points(x)
    E = field.frame(pts)
    dE = field.frame_jac(pts)
    det = np.linalg.det(E)
    Einv = np.linalg.inv(E)
    # Jacobi: d_l det E = det E * tr(E^{-1} d_l E)
    ddet = det[..., None] * np.einsum("...km,...mkl->...l", Einv, dE)
    div = np.einsum("...lil->...i", dE) - np.einsum(
        "...li,...l->...i", E, ddet
    ) / det[..., None]
    return div


# ---------------------------------------------------------------------------
# geodesics


def _shoot_steps(scale: float) -> int:
    return max(100, int(math.ceil(scale / 1e-3)))


def geodesic_shoot(field: FrameField, p, c, t_end, nsteps=None, refine=1,
                   dense=False, check_domain=True):
    """Integrate the geodesic ODE gamma' = E(gamma) c with classical RK4.

    ``c`` is a constant frame-direction vector; the g-length of the path is
    |c| * t_end by orthonormality.  Broadcasts over leading axes.  ``refine``
    multiplies the step count (the 10x reference mode of the oracles).
    """
    p = _as_points(p)
    c = _as_points(c)
    t_arr = np.asarray(t_end, dtype=float)
    shape = np.broadcast_shapes(p.shape[:-1], c.shape[:-1], t_arr.shape)
    x = np.broadcast_to(p, shape + (2,)).copy()
    cc = np.broadcast_to(c, shape + (2,))
    if nsteps is None:
        scale = float(np.max(np.abs(t_arr) * np.linalg.norm(cc, axis=-1))) if x.size else 0.0
        nsteps = _shoot_steps(scale)
    nsteps = int(nsteps * refine)
    dt = (np.broadcast_to(t_arr, shape) / nsteps)[..., None]

    def rhs(y):
        return np.einsum("...ij,...j->...i", field.frame(y), cc)

    if check_domain:
        field.require_inside(x)
    traj = [x.copy()] if dense else None
    for step in range(nsteps):
        k1 = rhs(x)
        k2 = rhs(x + 0.5 * dt * k1)
        k3 = rhs(x + 0.5 * dt * k2)
        k4 = rhs(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if check_domain and not np.all(field.contains(x, slack=1e-9)):
            bad = ~field.contains(x, slack=1e-9)
            t_exit = float(np.min(np.broadcast_to(t_arr, shape)[bad])) * (
                (step + 1) / nsteps
            )
            raise LeftDomain(t_exit)
        if dense:
            traj.append(x.copy())
    if dense:
        return np.stack(traj), x
    return x


def geodesic_connect(field: FrameField, p, q, tol=5e-13, max_iter=50,
                     nsteps=None):
    """Chart-local boundary value solve: find (c, t) with the unit
    frame-direction c and g-length t whose geodesic from p ends at q."""
    p = _as_points(p)
    q = _as_points(q)
    shape = np.broadcast_shapes(p.shape, q.shape)
    p = np.broadcast_to(p, shape).copy()
    q = np.broadcast_to(q, shape).copy()
    Emid = field.frame(0.5 * (p + q))
    v = np.linalg.solve(Emid, (q - p)[..., None])[..., 0]
    if nsteps is None:
        nsteps = _shoot_steps(1.5 * float(np.max(np.linalg.norm(v, axis=-1))) if v.size else 0.0)

    def endpoint(vv):
        return geodesic_shoot(field, p, vv, 1.0, nsteps=nsteps, check_domain=False)

    for _ in range(max_iter):
        r = endpoint(v) - q
        err = np.linalg.norm(r, axis=-1)
        if np.all(err < tol):
            break
        delta = 1e-7 * max(1.0, float(np.max(np.linalg.norm(v, axis=-1))))
        r0 = (endpoint(v + np.array([delta, 0.0])) - q - r) / delta
        r1 = (endpoint(v + np.array([0.0, delta])) - q - r) / delta
        J = np.stack([r0, r1], axis=-1)
        v = v - np.linalg.solve(J, r[..., None])[..., 0]
    else:
        raise ShootingDiverged(
            f"Newton shooting stalled at residual {float(np.max(err)):.3e}"
        )
    t = np.linalg.norm(v, axis=-1)
    safe = np.where(t > 0, t, 1.0)[..., None]
    c = np.where((t > 0)[..., None], v / safe, np.array([1.0, 0.0]))
    return c, t


# ---------------------------------------------------------------------------
# geodesic triangulation


@dataclass
class GeodesicTriangulation:
    """Structured triangulation whose edges are frame geodesics.

    Edge records are directional: ``edge_records[(u, v)]`` holds the unit
    frame-direction and g-length of the geodesic from vertex u to vertex v,
    each direction solved independently (so angle-sum checks measure real
    solver error, not an algebraic identity).
    """

    field: FrameField
    n: int
    delta: float
    h: float
    vertices: np.ndarray  # (nv, 2) chart coordinates
    triangles: np.ndarray  # (nt, 3) ccw
    edge_records: dict
    sides: np.ndarray     # (nt, 3) lengths (a, b, c)
    angles: np.ndarray    # (nt, 3) (alpha, beta, gamma)
    burgers: np.ndarray   # (nt, 2) corner-A frame
    angle_deviation: np.ndarray  # (nt,) max |angle - euclidean angle|

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def max_edge_length(self) -> float:
        return float(self.sides.max())

    def triangle_burgers_global(self, t: int) -> np.ndarray:
        """Boundary sum of length * frame-direction, in global frame coords."""
        v1, v2, v3 = self.triangles[t]
        total = np.zeros(2)
        for u, w in ((v1, v2), (v2, v3), (v3, v1)):
            c, l = self.edge_records[(int(u), int(w))]
            total += l * c
        return total

    def triangle_burgers(self, t: int) -> np.ndarray:
        """Per-triangle Burgers defect in the triangle's corner-A frame."""
        c12, _ = self.edge_records[(int(self.triangles[t, 0]), int(self.triangles[t, 1]))]
        phi = math.atan2(c12[1], c12[0])
        cph, sph = math.cos(phi), math.sin(phi)
        rot = np.array([[cph, sph], [-sph, cph]])
        return rot @ self.triangle_burgers_global(t)

    def to_triangulation_data(self) -> TriangulationData:
        return TriangulationData(
            incidence=self.triangles.copy(),
            sides=self.sides.copy(),
            angles=self.angles.copy(),
            burgers=self.burgers.copy(),
        )


def triangulate(field: FrameField, n: int, delta: float = math.pi / 9,
                retries: int = 3) -> GeodesicTriangulation:
    """Geodesic triangulation with edge lengths in [1/n, 3/(2n)] and angles
    in [delta, pi - delta]; shrinks the lattice spacing and retries (at most
    ``retries`` times) rather than returning degenerate triangles."""
    if n < 2:
        raise FieldError("n must be at least 2")
    if not (0.0 < delta <= math.pi / 6):
        raise FieldError("delta must lie in (0, pi/6]")
    h = 1.25 / n
    last_error = None
    for attempt in range(retries + 1):
        try:
            return _triangulate_once(field, n, delta, h * 0.9**attempt)
        except QualityBoundViolated as exc:
            last_error = exc
    raise last_error


def _triangulate_once(field, n, delta, h):
    x0, x1, y0, y1 = field.domain
    # geodesic edges bulge only O(h^2) beyond their endpoints, so a fraction
    # of a cell of clearance keeps everything inside the chart
    keep_m = 0.25 * h
    keep_lo = np.array([x0 + keep_m, y0 + keep_m])
    keep_hi = np.array([x1 - keep_m, y1 - keep_m])
    if np.any(keep_hi <= keep_lo):
        raise FieldError("chart domain too small for the requested resolution")

    # Vertices sit on a uniform equilateral lattice in the chart, warped by
    # the inverse metric square root at the center so lattice steps have
    # g-length ~ h.  (Advecting the lattice geodesically row by row instead
    # accumulates an O(torsion * diameter) relative shear that breaks the
    # edge-length bounds at fine n, independent of h.)
    center = np.array([0.5 * (x0 + x1), 0.5 * (y0 + y1)])
    gc = metric_at(field, center)
    evals, evecs = np.linalg.eigh(gc)
    warp = evecs @ np.diag(1.0 / np.sqrt(evals)) @ evecs.T
    ang60 = math.pi / 3
    I = int(math.ceil((x1 - x0) / h)) + 1
    J = int(math.ceil((y1 - y0) / (h * math.sin(ang60)))) + 1
    nrows, ncols = 2 * J + 1, 2 * I + 1
    jj, ii = np.meshgrid(
        np.arange(-J, J + 1), np.arange(-I, I + 1), indexing="ij"
    )
    lattice = h * np.stack(
        [ii + 0.5 * jj, math.sin(ang60) * jj], axis=-1
    )
    grid = center + lattice @ warp.T
    valid = np.all((grid >= keep_lo - 1e-12) & (grid <= keep_hi + 1e-12), axis=-1)

    tris_idx = []
    for j in range(nrows - 1):
        for i in range(ncols - 1):
            if valid[j, i] and valid[j, i + 1] and valid[j + 1, i]:
                tris_idx.append(((j, i), (j, i + 1), (j + 1, i)))
            if valid[j, i + 1] and valid[j + 1, i + 1] and valid[j + 1, i]:
                tris_idx.append(((j, i + 1), (j + 1, i + 1), (j + 1, i)))
    if not tris_idx:
        raise QualityBoundViolated((0,), "resolution")

    used = sorted({v for tri in tris_idx for v in tri})
    vid = {v: k for k, v in enumerate(used)}
    vertices = np.array([grid[v] for v in used])
    triangles = np.array([[vid[a], vid[b], vid[c]] for a, b, c in tris_idx])

    # every directed edge gets its own BVP solve, in one batch
    records: dict[tuple[int, int], tuple[np.ndarray, float]] = {}
    need = []
    for tri in triangles:
        for s in range(3):
            u, v = int(tri[s]), int(tri[(s + 1) % 3])
            for pair in ((u, v), (v, u)):
                if pair not in records:
                    records[pair] = None
                    need.append(pair)
    ps = vertices[[u for u, _ in need]]
    qs = vertices[[v for _, v in need]]
    cs, ts = geodesic_connect(field, ps, qs)
    for (u, v), c, t in zip(need, cs, ts):
        records[(u, v)] = (c, float(t))

    nt = len(triangles)
    sides = np.zeros((nt, 3))
    angles = np.zeros((nt, 3))
    burgers = np.zeros((nt, 2))
    deviation = np.zeros(nt)
    for t, (v1, v2, v3) in enumerate(triangles):
        v1, v2, v3 = int(v1), int(v2), int(v3)
        lc = records[(v1, v2)][1]
        la = records[(v2, v3)][1]
        lb = records[(v3, v1)][1]
        sides[t] = (la, lb, lc)

        def corner(u, w1, w2):
            c1 = records[(u, w1)][0]
            c2 = records[(u, w2)][0]
            dot = float(np.clip(np.dot(c1, c2), -1.0, 1.0))
            return math.acos(dot)

        alpha = corner(v1, v2, v3)
        beta = corner(v2, v3, v1)
        gamma = corner(v3, v1, v2)
        angles[t] = (alpha, beta, gamma)

        for u, w in ((v1, v2), (v2, v3), (v3, v1)):
            c, l = records[(u, w)]
            burgers[t] += l * c
        c12 = records[(v1, v2)][0]
        phi = math.atan2(c12[1], c12[0])
        rot = np.array(
            [[math.cos(phi), math.sin(phi)], [-math.sin(phi), math.cos(phi)]]
        )
        burgers[t] = rot @ burgers[t]

        e_ang = _euclidean_angles(la, lb, lc)
        deviation[t] = float(np.max(np.abs(angles[t] - e_ang)))

        if not (1.0 / n - 1e-12 <= min(sides[t]) and max(sides[t]) <= 1.5 / n + 1e-12):
            raise QualityBoundViolated(t, "edge-length")
        if min(angles[t]) < delta or max(angles[t]) > math.pi - delta:
            raise QualityBoundViolated(t, "angle")
        if abs(angles[t].sum() - math.pi) > 1e-6:
            raise QualityBoundViolated(t, "angle-sum")

    return GeodesicTriangulation(
        field=field, n=n, delta=delta, h=h, vertices=vertices,
        triangles=triangles, edge_records=records, sides=sides, angles=angles,
        burgers=burgers, angle_deviation=deviation,
    )


def _euclidean_angles(la, lb, lc):
    def ang(l1, l2, lo):
        return math.acos(np.clip((l1 * l1 + l2 * l2 - lo * lo) / (2 * l1 * l2), -1, 1))

    return np.array([ang(lb, lc, la), ang(lc, la, lb), ang(la, lb, lc)])


# ---------------------------------------------------------------------------
# Cartan loops


def torsion_from_loops(field: FrameField, p, X, Y, eps,
                       samples_per_side: int = 32) -> np.ndarray:
    """Estimate T(X, Y) from the Burgers vector of a small loop.

    The loop is the image, under radial geodesic shooting from p, of the
    parallelogram with edges sqrt(eps) X, sqrt(eps) Y *centered* at the
    origin of the frame chart (centering kills the half-order moment term,
    leaving a clean O(eps) error).  X, Y and the result are frame
    coefficient vectors.
    """
    p = _as_points(p)
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    s = math.sqrt(eps)
    c0 = -0.5 * s * (X + Y)
    corners = [c0, c0 + s * X, c0 + s * (X + Y), c0 + s * Y]
    ts = np.linspace(0.0, 1.0, samples_per_side, endpoint=False)[:, None]
    sigma = np.concatenate(
        [
            (1 - ts) * corners[k][None, :] + ts * corners[(k + 1) % 4][None, :]
            for k in range(4)
        ]
    )
    norms = np.linalg.norm(sigma, axis=-1)
    tmax = float(norms.max())
    nsteps = _shoot_steps(tmax)
    loop = geodesic_shoot(field, p, sigma, 1.0, nsteps=nsteps)
    nxt = np.roll(loop, -1, axis=0)
    mids = 0.5 * (loop + nxt)
    Einv = np.linalg.inv(field.frame(mids))
    segs = np.einsum("kij,kj->ki", Einv, nxt - loop)
    return segs.sum(axis=0) / eps
