"""Archetypal energy densities on 2x2 matrices and their analysis.

The isotropic family measures the distance to SO(2); its quasiconvex
envelope has the closed planar form in terms of signed singular values
(dist^p where mu1 + mu2 >= 1, else (1 - 2 det A)^(p/2)).  The cubic family
penalizes stretch along the lattice axes; its envelope simply clips
compression.  All evaluations broadcast over leading axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArchetypeError, InconclusiveSamples

TWO_PI = 2.0 * math.pi


def _mats(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.shape[-2:] != (2, 2):
        raise ArchetypeError(f"expected 2x2 matrices, got shape {A.shape}")
    return A


def rotation2(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def cofactor(A) -> np.ndarray:
    """Gradient of det on 2x2 matrices."""
    A = _mats(A)
    out = np.empty_like(A)
    out[..., 0, 0] = A[..., 1, 1]
    out[..., 0, 1] = -A[..., 1, 0]
    out[..., 1, 0] = -A[..., 0, 1]
    out[..., 1, 1] = A[..., 0, 0]
    return out


def signed_singular_values(A):
    """(mu1, mu2) with mu1 = sigma1 and mu2 = sign(det A) sigma2.

    Closed form: mu_{1,2} = (sqrt(|A|^2 + 2 det A) +/- sqrt(|A|^2 - 2 det A)) / 2.
    """
    A = _mats(A)
    fro2 = np.sum(A * A, axis=(-2, -1))
    det = np.linalg.det(A)
    sp = np.sqrt(np.maximum(fro2 + 2.0 * det, 0.0))
    sm = np.sqrt(np.maximum(fro2 - 2.0 * det, 0.0))
    return 0.5 * (sp + sm), 0.5 * (sp - sm)


def nearest_rotation(A) -> np.ndarray:
    """Closest element of SO(2) in Frobenius norm (valid for any det sign).

    At the nonsmooth locus mu1 + mu2 = 0 the polar factor of the SVD with
    nonnegative sigma2 is used as the subgradient choice.
    """
    A = _mats(A)
    t = A[..., 0, 0] + A[..., 1, 1]
    u = A[..., 1, 0] - A[..., 0, 1]
    hyp = np.hypot(t, u)
    ok = hyp > 1e-300
    safe = np.where(ok, hyp, 1.0)
    c = np.where(ok, t / safe, 1.0)
    s = np.where(ok, u / safe, 0.0)
    R = np.empty_like(A)
    R[..., 0, 0] = c
    R[..., 0, 1] = -s
    R[..., 1, 0] = s
    R[..., 1, 1] = c
    if not np.all(ok):
        U, _, Vt = np.linalg.svd(np.asarray(A[~ok]))
        R[~ok] = U @ Vt
    return R


# ---------------------------------------------------------------------------
# isotropic family


def w_iso(A, p: float = 2.0):
    """dist^p(A, SO(2))."""
    mu1, mu2 = signed_singular_values(A)
    d2 = (mu1 - 1.0) ** 2 + (mu2 - 1.0) ** 2
    return d2 ** (0.5 * p)


def grad_w_iso(A, p: float = 2.0):
    A = _mats(A)
    mu1, mu2 = signed_singular_values(A)
    d2 = (mu1 - 1.0) ** 2 + (mu2 - 1.0) ** 2
    scale = p * d2 ** (0.5 * p - 1.0) if p != 2.0 else np.full_like(d2, 2.0)
    return scale[..., None, None] * (A - nearest_rotation(A))


def qw_iso(A, p: float = 2.0):
    """Quasiconvex envelope of w_iso: dist^p on {mu1 + mu2 >= 1}, else
    (1 - 2 det A)^(p/2); continuous across the interface."""
    A = _mats(A)
    mu1, mu2 = signed_singular_values(A)
    hard = mu1 + mu2 >= 1.0
    d2 = (mu1 - 1.0) ** 2 + (mu2 - 1.0) ** 2
    soft = 1.0 - 2.0 * np.linalg.det(A)
    return np.where(hard, d2 ** (0.5 * p), np.maximum(soft, 0.0) ** (0.5 * p))


def grad_qw_iso(A, p: float = 2.0):
    """On the interface the limit from the mu1 + mu2 > 1 side is returned
    (for p = 2 the two branch gradients agree there)."""
    A = _mats(A)
    mu1, mu2 = signed_singular_values(A)
    hard = (mu1 + mu2 >= 1.0)[..., None, None]
    soft = np.maximum(1.0 - 2.0 * np.linalg.det(A), 0.0)
    gsoft = (-p * soft ** (0.5 * p - 1.0))[..., None, None] * cofactor(A)
    return np.where(hard, grad_w_iso(A, p), gsoft)


# ---------------------------------------------------------------------------
# cubic family


def _column_norms(A):
    return np.sqrt(np.sum(_mats(A) ** 2, axis=-2))  # (..., 2): |A e_1|, |A e_2|


def w_cubic(A, betas=(1.0, 1.0)):
    """sum_i beta_i (|A e_i| - 1)^2: penalizes stretch along lattice axes."""
    n = _column_norms(A)
    b = np.asarray(betas, dtype=float)
    return np.sum(b * (n - 1.0) ** 2, axis=-1)


def grad_w_cubic(A, betas=(1.0, 1.0)):
    A = _mats(A)
    n = _column_norms(A)
    b = np.asarray(betas, dtype=float)
    safe = np.where(n > 0, n, 1.0)
    coef = np.where(n > 0, 2.0 * b * (n - 1.0) / safe, 0.0)
    return coef[..., None, :] * A


def qw_cubic(A, betas=(1.0, 1.0)):
    """Envelope sum_i beta_i (|A e_i| - 1)_+^2: compression costs nothing."""
    n = _column_norms(A)
    b = np.asarray(betas, dtype=float)
    return np.sum(b * np.maximum(n - 1.0, 0.0) ** 2, axis=-1)


def grad_qw_cubic(A, betas=(1.0, 1.0)):
    A = _mats(A)
    n = _column_norms(A)
    b = np.asarray(betas, dtype=float)
    safe = np.where(n > 0, n, 1.0)
    coef = 2.0 * b * np.maximum(n - 1.0, 0.0) / safe
    return coef[..., None, :] * A


def composite_cubic(A, betas=(1.0, 1.0), p: float = 2.0):
    """qw_cubic + qw_iso: all hypotheses plus a discrete symmetry group."""
    return qw_cubic(A, betas) + qw_iso(A, p)


def grad_composite_cubic(A, betas=(1.0, 1.0), p: float = 2.0):
    return grad_qw_cubic(A, betas) + grad_qw_iso(A, p)


# ---------------------------------------------------------------------------
# smooth polyconvex test density (for residual studies needing C^2)


def w_smooth_test(A):
    """(|A|^2 - 2)^2 / 4 + (det A - 1)^2: C-infinity, zero exactly on SO(2)."""
    A = _mats(A)
    fro2 = np.sum(A * A, axis=(-2, -1))
    det = np.linalg.det(A)
    return 0.25 * (fro2 - 2.0) ** 2 + (det - 1.0) ** 2


def grad_w_smooth_test(A):
    A = _mats(A)
    fro2 = np.sum(A * A, axis=(-2, -1))
    det = np.linalg.det(A)
    return (fro2 - 2.0)[..., None, None] * A + (2.0 * (det - 1.0))[
        ..., None, None
    ] * cofactor(A)


def hess_w_smooth_test(A):
    """Hessian with layout [..., a, i, b, j] = d2 W / dA_ai dA_bj."""
    A = _mats(A)
    fro2 = np.sum(A * A, axis=(-2, -1))
    det = np.linalg.det(A)
    cof = cofactor(A)
    eye4 = np.einsum("ab,ij->aibj", np.eye(2), np.eye(2))
    H = 2.0 * np.einsum("...ai,...bj->...aibj", A, A)
    H += (fro2 - 2.0)[..., None, None, None, None] * eye4
    H += 2.0 * np.einsum("...ai,...bj->...aibj", cof, cof)
    # d cof(A)[H] = cof(H) is linear: contributes 2 (det - 1) * cof'
    dcof = np.zeros(A.shape[:-2] + (2, 2, 2, 2))
    dcof[..., 0, 0, 1, 1] = 1.0
    dcof[..., 0, 1, 1, 0] = -1.0
    dcof[..., 1, 0, 0, 1] = -1.0
    dcof[..., 1, 1, 0, 0] = 1.0
    H += (2.0 * (det - 1.0))[..., None, None, None, None] * dcof
    return H


# ---------------------------------------------------------------------------
# archetype registry


@dataclass(frozen=True)
class Archetype:
    """An energy density with its gradient and symmetry metadata.

    ``symmetry`` is "continuous" for SO(2) or a tuple of generator angles of
    a discrete rotation subgroup.  ``growth`` holds the (alpha, beta) fitted
    at registration for alpha(|A|^p - 1) <= W <= beta(1 + |A|^p).
    """

    name: str
    p: float
    evaluate: callable
    gradient: callable
    symmetry: object
    params: dict = field(default_factory=dict)
    hessian: callable = None
    growth: tuple = (None, None)
    lipschitz: float = None

    def __call__(self, A):
        return self.evaluate(A)


def _fit_growth(evaluate, p, rng):
    """Estimate growth constants on spheres |A| in {0.1, 1, 10, 100}."""
    dirs = rng.standard_normal((400, 2, 2))
    dirs /= np.linalg.norm(dirs, axis=(-2, -1), keepdims=True)
    alphas, betas = [], []
    for radius in (0.1, 1.0, 10.0, 100.0):
        A = radius * dirs
        vals = evaluate(A)
        if np.any(vals < -1e-12):
            raise ArchetypeError("archetype takes negative values")
        betas.append(np.max(vals / (1.0 + radius**p)))
        if radius > 1.0:
            alphas.append(np.min(vals / (radius**p - 1.0)))
    alpha = float(min(alphas))
    beta = float(max(betas))
    if alpha <= 0.0:
        raise ArchetypeError(
            "no positive coercivity constant fits the sampled growth"
        )
    return alpha, beta


def _fit_lipschitz(evaluate, p, rng):
    A = rng.standard_normal((500, 2, 2)) * rng.uniform(0.2, 4.0, (500, 1, 1))
    B = A + rng.standard_normal((500, 2, 2)) * rng.uniform(0.01, 2.0, (500, 1, 1))
    num = np.abs(evaluate(A) - evaluate(B))
    den = (
        1.0
        + np.linalg.norm(A, axis=(-2, -1)) ** (p - 1)
        + np.linalg.norm(B, axis=(-2, -1)) ** (p - 1)
    ) * np.linalg.norm(A - B, axis=(-2, -1))
    return float(np.max(num / np.maximum(den, 1e-300)))


def _register(name, p, evaluate, gradient, symmetry, params, hessian=None,
              check_growth=True):
    rng = np.random.default_rng(1234)
    growth = _fit_growth(evaluate, p, rng) if check_growth else (None, None)
    lip = _fit_lipschitz(evaluate, p, rng) if check_growth else None
    return Archetype(
        name=name, p=p, evaluate=evaluate, gradient=gradient,
        symmetry=symmetry, params=params, hessian=hessian, growth=growth,
        lipschitz=lip,
    )


def get_archetype(name: str, p: float = 2.0, b1: float = 1.0, b2: float = 1.0):
    """Archetypes by name: w_iso(p), qw_iso(p), w_cubic(b1,b2),
    qw_cubic(b1,b2), composite_cubic(b1,b2,p), smooth_test."""
    if p < 2.0:
        raise ArchetypeError("the closed-form envelope needs p >= 2")
    betas = (b1, b2)
    cubic_sym = (0.5 * math.pi,) if b1 == b2 else (math.pi,)
    if name == "w_iso":
        return _register(name, p, lambda A: w_iso(A, p),
                         lambda A: grad_w_iso(A, p), "continuous", {"p": p})
    if name == "qw_iso":
        return _register(name, p, lambda A: qw_iso(A, p),
                         lambda A: grad_qw_iso(A, p), "continuous", {"p": p})
    if name == "w_cubic":
        return _register(name, 2.0, lambda A: w_cubic(A, betas),
                         lambda A: grad_w_cubic(A, betas), cubic_sym,
                         {"b1": b1, "b2": b2})
    if name == "qw_cubic":
        return _register(name, 2.0, lambda A: qw_cubic(A, betas),
                         lambda A: grad_qw_cubic(A, betas), cubic_sym,
                         {"b1": b1, "b2": b2})
    if name == "composite_cubic":
        return _register(name, p, lambda A: composite_cubic(A, betas, p),
                         lambda A: grad_composite_cubic(A, betas, p),
                         cubic_sym, {"b1": b1, "b2": b2, "p": p})
    if name == "smooth_test":
        return _register(name, 4.0, w_smooth_test, grad_w_smooth_test,
                         "continuous", {}, hessian=hess_w_smooth_test)
    raise ArchetypeError(f"unknown archetype {name!r}")


# ---------------------------------------------------------------------------
# symmetry probe


@dataclass(frozen=True)
class SymmetryClassification:
    kind: str            # "continuous" | "discrete" | "not_solid"
    generators: tuple    # generator angles of the rotation subgroup
    order: int
    max_residual: float

    def generator_names(self):
        if self.kind != "discrete":
            return []
        names = {1: (), 2: ("pi",), 3: ("2pi/3",), 4: ("pi/2",), 6: ("pi/3",)}
        if self.order in names:
            return list(names[self.order])
        return [f"2pi/{self.order}"]


def symmetry_probe(archetype, angle_grid=None, sample_matrices=None,
                   tol: float = 1e-9, max_order: int = 64,
                   seed: int = 99) -> SymmetryClassification:
    """Classify the right-rotation invariance of an energy density.

    Sweeps a dense angle grid for the continuous case and exact subgroup
    angles 2 pi / k for discrete groups.  Raises InconclusiveSamples when
    invariance at some angle holds for part of the samples only.
    """
    evaluate = archetype.evaluate if hasattr(archetype, "evaluate") else archetype
    if angle_grid is None:
        angle_grid = np.linspace(0.0, TWO_PI, 629, endpoint=False)
    if np.max(np.diff(angle_grid, append=TWO_PI)) > 1.05e-2:
        raise ArchetypeError("angle grid resolution must be <= 1e-2 rad")
    if sample_matrices is None:
        rng = np.random.default_rng(seed)
        sample_matrices = rng.standard_normal((24, 2, 2)) * rng.uniform(
            0.3, 2.5, (24, 1, 1)
        )
    samples = _mats(sample_matrices)
    base = evaluate(samples)
    scale = 1.0 + np.abs(base)

    def residuals(angle):
        rotated = samples @ rotation2(float(angle))
        return np.abs(evaluate(rotated) - base) / scale

    tol_break = 1e-6  # clearly broken above this, symmetric below tol

    def invariant(angle):
        r = residuals(angle)
        rmax = float(r.max())
        if rmax < tol:
            return True, rmax
        if rmax > tol_break:
            return False, rmax
        hit = r < tol
        if hit.any() and not hit.all():
            raise InconclusiveSamples(
                f"rotation by {float(angle):.6f} leaves {int(hit.sum())} of "
                f"{hit.size} samples invariant (max residual {rmax:.2e})"
            )
        return False, rmax

    grid_flags = []
    max_res = 0.0
    for ang in angle_grid:
        ok, r = invariant(ang)
        grid_flags.append(ok)
        max_res = max(max_res, r)
    if all(grid_flags):
        return SymmetryClassification("continuous", (), 0, max_res)

    order = 1
    for k in range(max_order, 1, -1):
        ok = all(invariant(TWO_PI * j / k)[0] for j in range(1, k))
        if ok:
            order = k
            break
    generators = (TWO_PI / order,) if order > 1 else ()
    return SymmetryClassification("discrete", generators, order, max_res)


# ---------------------------------------------------------------------------
# implants, material connection, intrinsic metric


def intrinsic_metric_from_implants(implants) -> np.ndarray:
    """Per-implant metric (E E^T)^{-1}; invariant under right rotations of E."""
    E = _mats(implants)
    return np.linalg.inv(E @ np.swapaxes(E, -1, -2))


def material_connection_from_implants(mesh, implants) -> dict:
    """Per-interior-edge transfer maps Pi = E_q o E_p^{-1}.

    ``implants`` holds one matrix per triangle (in that triangle's own
    chart); the transfer maps tangent frames of triangle p to triangle q
    across their shared edge and leaves the implanted density invariant.
    """
    E = _mats(implants)
    if len(E) != mesh.num_triangles:
        raise ArchetypeError("one implant per triangle required")
    Einv = np.linalg.inv(E)
    return {
        (key, t1, t2): E[t2] @ Einv[t1]
        for key, t1, t2 in mesh.interior_edge_triangles()
    }


def connection_invariance_residual(archetype, implants, transfer, t_from,
                                   t_to, samples=None, seed=7) -> float:
    """max_A |W_p(A o Pi) - W_q(A)| over sample matrices A."""
    evaluate = archetype.evaluate if hasattr(archetype, "evaluate") else archetype
    E = _mats(implants)
    if samples is None:
        rng = np.random.default_rng(seed)
        samples = rng.standard_normal((32, 2, 2)) * rng.uniform(
            0.4, 2.0, (32, 1, 1)
        )
    lhs = evaluate(samples @ transfer @ E[t_from])
    rhs = evaluate(samples @ E[t_to])
    return float(np.max(np.abs(lhs - rhs)))
