"""Families of perturbed inverse metrics on the flat 2-torus.

A family holds a reference inverse metric g0^{-1}, k symmetric-tensor
deformation directions h_1..h_k with parameter box (-eps, eps)^k, and a
potential. The classical symbol is

    p_u(x, xi) = <g_u^{-1}(x) xi, xi> + V(x),
    g_u^{-1}(x) = g0^{-1}(x) + sum_j u_j h_j(x),

linear in u. The module also certifies the two admissibility conditions
(invertible mixed Hessian d_u' d_xi p_u near the energy shell, and one
conformal direction h_alpha = a(x) g0^{-1}) and provides the
traceless/conformal splitting of deformation tensors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import FamilyError, PositivityError
from .fields import (
    ConstantField,
    RadialBumpField,
    ScalarField,
    SymTensorField,
    as_field,
    wrap_delta,
)


@dataclass(eq=False)
class MetricFamily:
    g0_inv: SymTensorField
    directions: tuple
    epsilon: float
    potential: ScalarField
    conformal_index: Optional[int] = None
    conformal_factor: Optional[ScalarField] = None
    conformal_neighborhood: Optional[tuple] = None  # ((cx, cy), radius); None = whole torus
    label: str = "family"

    def __post_init__(self):
        self.directions = tuple(self.directions)
        self.potential = as_field(self.potential)
        if self.epsilon <= 0:
            raise FamilyError("epsilon must be positive")

    @property
    def k(self):
        return len(self.directions)

    def describe(self):
        return {
            "label": self.label,
            "epsilon": self.epsilon,
            "g0_inv": self.g0_inv.describe(),
            "directions": [h.describe() for h in self.directions],
            "potential": self.potential.describe(),
            "conformal_index": self.conformal_index,
            "conformal_neighborhood": (
                None
                if self.conformal_neighborhood is None
                else [list(self.conformal_neighborhood[0]), self.conformal_neighborhood[1]]
            ),
        }

    # -- u-box sampling -------------------------------------------------

    def corner_set(self, scale=1.0):
        """All 2^k corners of the (scaled) parameter box."""
        k = self.k
        signs = np.array(np.meshgrid(*([[-1.0, 1.0]] * k), indexing="ij")).reshape(k, -1).T
        return signs * (scale * self.epsilon)

    def check_u(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.k:
            raise FamilyError(f"u must have {self.k} components, got shape {u.shape}")
        if np.any(np.abs(u) > self.epsilon * (1 + 1e-12)):
            raise FamilyError("u outside the closed parameter box")
        return u

    # -- pointwise metric data ------------------------------------------

    def direction_values(self, x):
        """Stack h_j(x): shape (..., k, 2, 2)."""
        return np.stack([h.value(x) for h in self.directions], axis=-3)

    def direction_dx(self, x):
        """Stack of first derivatives d_k h_j(x): shape (..., j, d, 2, 2)."""
        return np.stack([h.dx(x) for h in self.directions], axis=-4)

    def ginv(self, x, u):
        """g_u^{-1}(x) as (..., 2, 2); u broadcasts against x batches."""
        u = np.asarray(u, dtype=float)
        H = self.direction_values(x)
        return self.g0_inv.value(x) + np.einsum("...j,...jab->...ab", u, H)

    def ginv_dx(self, x, u):
        u = np.asarray(u, dtype=float)
        dH = self.direction_dx(x)
        return self.g0_inv.dx(x) + np.einsum("...j,...jdab->...dab", u, dH)

    def ginv_dx2(self, x, u):
        u = np.asarray(u, dtype=float)
        d2H = np.stack([h.dx2(x) for h in self.directions], axis=-5)
        return self.g0_inv.dx2(x) + np.einsum("...j,...jdeab->...deab", u, d2H)

    # -- symbol and derivatives ------------------------------------------

    def symbol(self, u, x, xi):
        G = self.ginv(x, u)
        return np.einsum("...ab,...a,...b->...", G, xi, xi) + self.potential.value(x)

    def symbol_grad_xi(self, u, x, xi):
        return 2.0 * np.einsum("...ab,...b->...a", self.ginv(x, u), xi)

    def symbol_grad_x(self, u, x, xi):
        dG = self.ginv_dx(x, u)
        return np.einsum("...dab,...a,...b->...d", dG, xi, xi) + self.potential.grad(x)

    def symbol_du(self, u, x, xi):
        # g_u is linear in u, so d_u p is u-independent
        H = self.direction_values(x)
        return np.einsum("...jab,...a,...b->...j", H, xi, xi)

    def mixed_hessian(self, x, xi, uprime_indices=None):
        """d_u' d_xi p_u (..., i, j) with i the xi index; u-independent."""
        H = self.direction_values(x)
        M = 2.0 * np.einsum("...jab,...b->...aj", H, xi)
        if uprime_indices is not None:
            M = M[..., :, list(uprime_indices)]
        return M

    def flow_data(self, x, u):
        """All pointwise data the Hamiltonian flow RHS needs, in one pass."""
        return {
            "G": self.ginv(x, u),
            "dG": self.ginv_dx(x, u),
            "d2G": self.ginv_dx2(x, u),
            "H": self.direction_values(x),
            "dH": self.direction_dx(x),
            "gradV": self.potential.grad(x),
            "hessV": self.potential.hess(x),
        }


# ---------------------------------------------------------------------------
# torus model example
# ---------------------------------------------------------------------------


def build_torus_example(
    a1,
    b1,
    a2,
    b2,
    a3,
    *,
    epsilon,
    bump=None,
    potential=0.0,
    extra_directions=(),
    conformal_neighborhood=None,
    center=None,
    label="torus-example",
):
    """k >= 3 family: two traceless direction blocks plus one conformal block.

    h1 = b(x) [[a1, b1], [b1, -a1]],  h2 = b(x) [[a2, b2], [b2, -a2]],
    h3 = b(x) [[a3, 0], [0, a3]],

    where ``bump`` is None (fields taken as given, e.g. constants) or a
    (center, radius) pair selecting the standard radial bump so that all
    entries are smooth on the torus. ``extra_directions`` appends further
    SymTensorField blocks depending on left-over parameters.

    Rejects non-periodic coefficient fields and a conformal factor a3
    vanishing somewhere inside the bump support.
    """
    coeffs = {name: as_field(f) for name, f in
              zip(("a1", "b1", "a2", "b2", "a3"), (a1, b1, a2, b2, a3))}
    for name, f in coeffs.items():
        if not f.is_periodic():
            raise FamilyError(f"coefficient field {name} is not 2pi-periodic")

    if bump is None:
        bump_field = ConstantField(1.0)
        bump_center = np.array([np.pi, np.pi]) if center is None else np.asarray(center, float)
        support_mask_fn = lambda x: np.ones(x.shape[:-1], dtype=bool)
    else:
        bcenter, bradius = bump
        bump_field = RadialBumpField(bcenter, bradius)
        bump_center = np.asarray(bcenter, dtype=float)
        support_mask_fn = lambda x: bump_field.value(x) > 0.0

    # a3 must not vanish on the support of the bump
    grid = np.linspace(0.0, 2 * np.pi, 96, endpoint=False)
    X = np.stack(np.meshgrid(grid, grid, indexing="ij"), axis=-1).reshape(-1, 2)
    mask = support_mask_fn(X)
    a3_vals = coeffs["a3"].value(X)[mask]
    if a3_vals.size and np.min(np.abs(a3_vals)) <= 1e-12:
        raise FamilyError("conformal factor a3 vanishes inside the bump support")

    def block(a, b):
        fa = a * bump_field
        fb = b * bump_field
        return SymTensorField(fa, fb, -1.0 * fa)

    h1 = block(coeffs["a1"], coeffs["b1"])
    h2 = block(coeffs["a2"], coeffs["b2"])
    h3 = SymTensorField.scaled_identity(coeffs["a3"] * bump_field)
    directions = (h1, h2, h3) + tuple(extra_directions)
    for j, h in enumerate(directions):
        if not h.is_periodic():
            raise FamilyError(f"direction {j} is not 2pi-periodic")

    if conformal_neighborhood is None:
        if bump is None:
            neighborhood = None  # constant factor: whole torus
        else:
            neighborhood = (tuple(bump_center.tolist()), 0.5 * bump[1])
    else:
        neighborhood = conformal_neighborhood

    return MetricFamily(
        g0_inv=SymTensorField.identity(),
        directions=directions,
        epsilon=float(epsilon),
        potential=as_field(potential),
        conformal_index=2,
        conformal_factor=coeffs["a3"] * bump_field,
        conformal_neighborhood=neighborhood,
        label=label,
    )


def identity_family(epsilon=0.05, k=3, potential=0.0):
    """Zero-deformation family: g_u = g_0 for every u."""
    zero = SymTensorField.constant(np.zeros((2, 2)))
    return MetricFamily(
        g0_inv=SymTensorField.identity(),
        directions=tuple(zero for _ in range(k)),
        epsilon=epsilon,
        potential=as_field(potential),
        label="identity-family",
    )


# ---------------------------------------------------------------------------
# positive definiteness
# ---------------------------------------------------------------------------


@dataclass
class PositiveDefiniteReport:
    margin: float
    worst_x: np.ndarray
    worst_u: np.ndarray
    ok: bool

    def to_dict(self):
        return {
            "margin": float(self.margin),
            "worst_x": self.worst_x.tolist(),
            "worst_u": self.worst_u.tolist(),
            "ok": bool(self.ok),
        }


def check_positive_definite(family, grid_n=48, corner_scales=(1.0,)):
    """Minimum eigenvalue of g_u^{-1}(x) over a grid times the u-box corners.

    The 2x2 eigenvalue is closed form. A nonpositive margin means the
    family is not a metric everywhere on the box; the report carries the
    violating (x, u).
    """
    grid = np.linspace(0.0, 2 * np.pi, grid_n, endpoint=False)
    X = np.stack(np.meshgrid(grid, grid, indexing="ij"), axis=-1).reshape(-1, 2)
    H = family.direction_values(X)  # (P, k, 2, 2)
    G0 = family.g0_inv.value(X)
    best = None
    for scale in corner_scales:
        for u in family.corner_set(scale):
            G = G0 + np.einsum("j,pjab->pab", u, H)
            tr = G[:, 0, 0] + G[:, 1, 1]
            disc = np.sqrt((G[:, 0, 0] - G[:, 1, 1]) ** 2 + 4.0 * G[:, 0, 1] ** 2)
            lam_min = 0.5 * (tr - disc)
            i = int(np.argmin(lam_min))
            if best is None or lam_min[i] < best[0]:
                best = (float(lam_min[i]), X[i].copy(), u.copy())
    margin, wx, wu = best
    return PositiveDefiniteReport(margin=margin, worst_x=wx, worst_u=wu, ok=margin > 0.0)


def require_positive_definite(family, **kw):
    rep = check_positive_definite(family, **kw)
    if not rep.ok:
        raise PositivityError(
            f"g_u^-1 loses positivity (margin {rep.margin:.3e})", x=rep.worst_x, u=rep.worst_u
        )
    return rep


# ---------------------------------------------------------------------------
# admissibility
# ---------------------------------------------------------------------------


@dataclass
class AdmissibilityReport:
    condition_A: bool
    min_abs_det: float
    det_floor: float
    witness: Optional[dict]
    condition_B: bool
    min_abs_a: float
    uprime_indices: tuple
    band: tuple
    c_estimate: float
    t: float
    samples: int

    def to_dict(self):
        return {
            "condition_A": bool(self.condition_A),
            "min_abs_det": float(self.min_abs_det),
            "det_floor": float(self.det_floor),
            "witness": self.witness,
            "condition_B": bool(self.condition_B),
            "min_abs_a": float(self.min_abs_a),
            "uprime_indices": list(self.uprime_indices),
            "band": [float(self.band[0]), float(self.band[1])],
            "c_estimate": float(self.c_estimate),
            "t": float(self.t),
            "samples": int(self.samples),
        }

    @property
    def admissible(self):
        return self.condition_A and self.condition_B


def estimate_band_constant(family, E, t=0.1, n_shell=64, safety=1.25, flow_tol=1e-10):
    """Sampled maximisation of k * max_ij |d_u (p_0 o G_u^{-t})| over the shell.

    Scanned over u in {0} union corner sets at full and half scale; the
    result carries a multiplicative safety factor. Only the band width
    downstream depends on it.
    """
    from .hamflow import flow_batch  # local import to keep module layering acyclic

    sob = qmc.Sobol(d=3, scramble=False)
    pts = sob.random(n_shell)
    y = pts[:, :2] * 2 * np.pi
    theta = pts[:, 2] * 2 * np.pi
    V = family.potential.value(y)
    r2 = E - V
    if np.any(r2 <= 0):
        y = y[r2 > 0]
        theta = theta[r2 > 0]
        r2 = r2[r2 > 0]
    eta = np.sqrt(r2)[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    Z0 = np.concatenate([y, eta], axis=1)

    u_samples = np.vstack([
        np.zeros((1, family.k)),
        family.corner_set(1.0),
        family.corner_set(0.5),
    ])
    zero_u = np.zeros(family.k)
    nu = u_samples.shape[0]
    Z_all = np.tile(Z0, (nu, 1))
    U_all = np.repeat(u_samples, Z0.shape[0], axis=0)
    res = flow_batch(family, U_all, -t, Z_all, tol=flow_tol,
                     want_monodromy=False, want_usens=True)
    xe = res.endpoints[:, :2]
    xie = res.endpoints[:, 2:]
    grad_x = family.symbol_grad_x(zero_u, xe, xie)
    grad_xi = family.symbol_grad_xi(zero_u, xe, xie)
    grad_z = np.concatenate([grad_x, grad_xi], axis=1)  # (B, 4)
    dvals = np.einsum("bz,bzj->bj", grad_z, res.u_sensitivity)
    worst = float(np.max(np.abs(dvals)))
    return safety * family.k * worst


def check_condition_A(
    family,
    E,
    uprime_indices=(0, 1),
    sample_budget=2**14,
    *,
    t=0.1,
    det_floor=1e-6,
    flow_tol=1e-10,
    x_patch=None,
):
    """Scan |det d_u' d_xi p_u| over the energy band times the u-box.

    Deterministic low-discrepancy samples in (y, theta, band energy, u)
    plus the full u corner set on a shell subsample. Admissibility is a
    pointwise notion; ``x_patch = (center, radius)`` restricts the spatial
    scan to a disc (needed for bump-localised families, which are only
    admissible near the deformation support). "For all" is not decidable
    numerically; the report carries the scanned floor and, on failure, a
    witness point.
    """
    if len(uprime_indices) != 2:
        raise FamilyError("u' must select an n-tuple of coordinates with n = 2")
    k = family.k
    eps = family.epsilon

    c_est = estimate_band_constant(family, E, t=t, flow_tol=flow_tol)
    half_width = c_est * eps
    band = (E - half_width, E + half_width)

    sob = qmc.Sobol(d=4 + k, scramble=False)
    pts = sob.random(sample_budget)
    if x_patch is None:
        y = pts[:, :2] * 2 * np.pi
    else:
        (pcx, pcy), prad = x_patch
        rr = prad * np.sqrt(pts[:, 0])
        aa = 2 * np.pi * pts[:, 1]
        y = np.stack([pcx + rr * np.cos(aa), pcy + rr * np.sin(aa)], axis=-1)
    theta = pts[:, 2] * 2 * np.pi
    Eband = band[0] + (band[1] - band[0]) * pts[:, 3]
    U = (2.0 * pts[:, 4:] - 1.0) * eps

    V = family.potential.value(y)
    r2 = np.maximum(Eband - V, 0.0)
    keep = r2 > 0
    y, theta, r2, U = y[keep], theta[keep], r2[keep], U[keep]
    xi = np.sqrt(r2)[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=-1)

    # corner enumeration in u on a shell subsample (p_u is linear in u, but
    # the scan stays general)
    nsub = min(1024, y.shape[0])
    corners = family.corner_set(1.0)
    yc = np.tile(y[:nsub], (corners.shape[0], 1))
    xic = np.tile(xi[:nsub], (corners.shape[0], 1))
    Uc = np.repeat(corners, nsub, axis=0)

    y_all = np.vstack([y, yc])
    xi_all = np.vstack([xi, xic])
    U_all = np.vstack([U, Uc])

    M = family.mixed_hessian(y_all, xi_all, uprime_indices)
    dets = M[:, 0, 0] * M[:, 1, 1] - M[:, 0, 1] * M[:, 1, 0]
    absdets = np.abs(dets)
    i = int(np.argmin(absdets))
    min_det = float(absdets[i])
    ok = min_det >= det_floor
    witness = None
    if not ok:
        witness = {
            "x": y_all[i].tolist(),
            "xi": xi_all[i].tolist(),
            "u": U_all[i].tolist(),
            "abs_det": min_det,
        }

    cond_B, min_a = check_condition_B(family)

    return AdmissibilityReport(
        condition_A=ok,
        min_abs_det=min_det,
        det_floor=det_floor,
        witness=witness,
        condition_B=cond_B,
        min_abs_a=min_a,
        uprime_indices=tuple(uprime_indices),
        band=band,
        c_estimate=c_est,
        t=t,
        samples=int(y_all.shape[0]),
    )


def check_condition_B(family, grid_n=64, tol=1e-10):
    """Verify h_alpha(x) = a(x) g0^{-1}(x) with a != 0 on the declared patch."""
    if family.conformal_index is None or family.conformal_factor is None:
        return False, 0.0
    if family.conformal_neighborhood is None:
        grid = np.linspace(0.0, 2 * np.pi, grid_n, endpoint=False)
        X = np.stack(np.meshgrid(grid, grid, indexing="ij"), axis=-1).reshape(-1, 2)
    else:
        (cx, cy), rad = family.conformal_neighborhood
        rr = np.sqrt(np.linspace(0.0, 1.0, 24)) * rad
        th = np.linspace(0.0, 2 * np.pi, 32, endpoint=False)
        R, T = np.meshgrid(rr, th, indexing="ij")
        X = np.stack([cx + R * np.cos(T), cy + R * np.sin(T)], axis=-1).reshape(-1, 2)
    a = family.conformal_factor.value(X)
    h = family.directions[family.conformal_index].value(X)
    g0 = family.g0_inv.value(X)
    defect = np.max(np.abs(h - a[:, None, None] * g0))
    min_a = float(np.min(np.abs(a)))
    ok = defect <= tol * max(1.0, float(np.max(np.abs(a)))) and min_a > 1e-12
    return ok, min_a


# ---------------------------------------------------------------------------
# traceless / conformal splitting
# ---------------------------------------------------------------------------


def _assert_flat_reference(family):
    probe = np.array([[0.3, 1.1], [4.0, 5.5]])
    g0 = family.g0_inv.value(probe)
    if np.max(np.abs(g0 - np.eye(2))) > 1e-13:
        raise FamilyError("traceless/conformal splitting implemented for the flat reference metric")


def traceless_conformal_split(tensor, family):
    """Pointwise v = (v - (tr v / 2) g0) + (tr v / 2) g0 on the flat torus.

    Returns (traceless part, conformal part) as tensor fields; the
    traceless part has vanishing g0-trace to round-off and the two parts
    are pointwise g0-orthogonal.
    """
    _assert_flat_reference(family)
    half_trace = 0.5 * (tensor.f11 + tensor.f22)
    conformal = SymTensorField.scaled_identity(half_trace)
    traceless = SymTensorField(
        tensor.f11 - half_trace,
        tensor.f12,
        tensor.f22 - half_trace,
    )
    return traceless, conformal


def traceless_basis(n):
    """Basis q_j of traceless quadratic forms in dimension n.

    kappa_n = (n^2 + n - 2) / 2 forms: xi_1^2 - xi_i^2 for 2 <= i <= n and
    the mixed products xi_j xi_k for j < k.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    forms = []
    for i in range(1, n):
        Q = np.zeros((n, n))
        Q[0, 0] = 1.0
        Q[i, i] = -1.0
        forms.append(Q)
    for j in range(n):
        for kk in range(j + 1, n):
            Q = np.zeros((n, n))
            Q[j, kk] = 0.5
            Q[kk, j] = 0.5
            forms.append(Q)
    assert len(forms) == kappa(n)
    return forms


def kappa(n):
    return (n * n + n - 2) // 2


def basis_rank_check(forms, sphere_samples, threshold=1e-8, seed=0):
    """Minimum rank over sphere points of the tangential gradient rows.

    ``sphere_samples`` is either an integer count (seeded uniform points)
    or an array of unit vectors (S, n). For the full traceless basis the
    expected value is n - 1.
    """
    n = forms[0].shape[0]
    if np.isscalar(sphere_samples):
        rng = np.random.default_rng(seed)
        xi = rng.normal(size=(int(sphere_samples), n))
        xi /= np.linalg.norm(xi, axis=1, keepdims=True)
    else:
        xi = np.asarray(sphere_samples, dtype=float)
        xi = xi / np.linalg.norm(xi, axis=1, keepdims=True)
    min_rank = None
    for v in xi:
        rows = []
        for Q in forms:
            g = 2.0 * Q @ v
            rows.append(g - np.dot(g, v) * v)  # tangential part
        A = np.array(rows)
        sv = np.linalg.svd(A, compute_uv=False)
        rank = int(np.sum(sv > threshold * max(1.0, sv[0] if sv.size else 1.0)))
        min_rank = rank if min_rank is None else min(min_rank, rank)
    return min_rank
