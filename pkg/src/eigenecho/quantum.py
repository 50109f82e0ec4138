"""Pseudospectral realisation of -h^2 Laplace-Beltrami(g_u) + V on the torus.

The operator acts in the "weighted gauge": with rho = sqrt(det g_u) and
spectral derivatives D_i,

    H f = -h^2 rho^{-1/2} D_i ( rho g_u^{ij} D_j ( rho^{-1/2} f) ) + V f,

which is exactly Hermitian for the plain grid inner product (D_i is
anti-Hermitian once the Nyquist derivative is zeroed, and the quadratic
form is assembled symmetrically), so the propagator is exactly unitary
there. Physical wavefunction values are recovered by the rho^{-1/2}
ungauging; inner products and norms reported to callers use the
reference measure dx unless stated otherwise.

Time stepping is Lanczos (Krylov) exponentiation of the spectrally
shifted operator with residual-controlled substeps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import FamilyError, PositivityError, PropagationError

TWO_PI = 2.0 * np.pi

GAUGE_REFERENCE = "reference-volume"
GAUGE_WEIGHTED = "gu-weighted"


def next_pow2(n):
    p = 1
    while p < n:
        p *= 2
    return p


def default_grid_size(m, factor=8, pad=16):
    """Resolution rule: next power of two >= factor * max|m_i| + pad."""
    m = np.asarray(m, dtype=int).reshape(2)
    return next_pow2(factor * int(np.max(np.abs(m))) + pad)


def grid_points(N):
    g = np.arange(N) * (TWO_PI / N)
    X1, X2 = np.meshgrid(g, g, indexing="ij")
    return np.stack([X1, X2], axis=-1)


def constant_potential_value(family, tol=1e-12):
    """Potential value if V is constant; raises otherwise (flat eigenfunctions
    are only exact for constant V)."""
    probe = np.array([[0.0, 0.0], [1.1, 2.7], [4.2, 0.4], [5.9, 5.1]])
    v = family.potential.value(probe)
    if np.max(np.abs(v - v[0])) > tol * max(1.0, abs(float(v[0]))):
        raise FamilyError("flat eigenfunctions need a constant potential")
    return float(v[0])


@dataclass
class OperatorHandle:
    family: object
    u: np.ndarray
    h: float
    N: int
    g11: np.ndarray
    g12: np.ndarray
    g22: np.ndarray
    rho: np.ndarray
    sqrt_rho: np.ndarray
    inv_sqrt_rho: np.ndarray
    V: np.ndarray
    kx: np.ndarray
    ky: np.ndarray
    spectral_radius: float
    spectral_floor: float

    @property
    def shift(self):
        return 0.5 * (self.spectral_radius + self.spectral_floor)

    @property
    def half_width(self):
        return 0.5 * (self.spectral_radius - self.spectral_floor)

    def apply(self, f):
        """H f in the weighted gauge; Hermitian on the plain grid product."""
        w = self.inv_sqrt_rho * f
        W = np.fft.fft2(w)
        d1 = np.fft.ifft2(1j * self.kx * W)
        d2 = np.fft.ifft2(1j * self.ky * W)
        a1 = self.rho * (self.g11 * d1 + self.g12 * d2)
        a2 = self.rho * (self.g12 * d1 + self.g22 * d2)
        div = np.fft.ifft2(1j * self.kx * np.fft.fft2(a1) + 1j * self.ky * np.fft.fft2(a2))
        return -self.h**2 * self.inv_sqrt_rho * div + self.V * f


def build_operator(family, u, h, N):
    """Precompute grid fields and a provable spectral-radius bound."""
    if N % 2:
        raise FamilyError("grid size N must be even")
    u = np.asarray(u, dtype=float).reshape(family.k)
    X = grid_points(N)
    G = family.ginv(X.reshape(-1, 2), u).reshape(N, N, 2, 2)
    g11, g12, g22 = G[..., 0, 0], G[..., 0, 1], G[..., 1, 1]
    det = g11 * g22 - g12 * g12
    tr = g11 + g22
    lam_min = 0.5 * (tr - np.sqrt(np.maximum((g11 - g22) ** 2 + 4 * g12**2, 0.0)))
    if np.min(lam_min) <= 0:
        i = np.unravel_index(int(np.argmin(lam_min)), lam_min.shape)
        raise PositivityError("g_u^-1 not positive definite on the grid",
                              x=X[i], u=u)
    rho = det**-0.5
    V = family.potential.value(X.reshape(-1, 2)).reshape(N, N)

    k = np.fft.fftfreq(N, d=1.0 / N)  # integer wavenumbers
    kd = k.copy()
    kd[N // 2] = 0.0  # zero the Nyquist derivative: keeps D anti-Hermitian
    kx = kd[:, None] * np.ones(N)[None, :]
    ky = np.ones(N)[:, None] * kd[None, :]

    lam_max = 0.5 * (tr + np.sqrt((g11 - g22) ** 2 + 4 * g12**2))
    kmax2 = 2.0 * (N / 2 - 1) ** 2
    radius = (h**2 * kmax2 * float(np.max(rho * lam_max)) * float(np.max(1.0 / rho))
              + float(np.max(V)))
    floor = float(np.min(V))

    return OperatorHandle(
        family=family, u=u, h=float(h), N=N,
        g11=g11, g12=g12, g22=g22,
        rho=rho, sqrt_rho=np.sqrt(rho), inv_sqrt_rho=1.0 / np.sqrt(rho),
        V=V, kx=kx, ky=ky,
        spectral_radius=radius, spectral_floor=floor,
    )


def power_iteration(handle, n_iter=40, seed=0):
    """Largest Rayleigh quotient reached by power iteration (oracle check)."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(handle.N, handle.N)) + 1j * rng.normal(size=(handle.N, handle.N))
    v /= np.linalg.norm(v)
    best = 0.0
    for _ in range(n_iter):
        w = handle.apply(v)
        rq = float(np.real(np.vdot(v, w)))
        best = max(best, abs(rq))
        nw = np.linalg.norm(w)
        if nw == 0:
            break
        v = w / nw
    return best


# ---------------------------------------------------------------------------
# wave states
# ---------------------------------------------------------------------------


@dataclass
class WaveState:
    amplitudes: np.ndarray
    h: float
    gauge: str = GAUGE_REFERENCE
    handle: Optional[OperatorHandle] = None
    meta: dict = field(default_factory=dict)

    @property
    def N(self):
        return self.amplitudes.shape[0]

    def reference_values(self):
        """Grid values of the physical wavefunction phi (reference gauge)."""
        if self.gauge == GAUGE_REFERENCE:
            return self.amplitudes
        return self.handle.inv_sqrt_rho * self.amplitudes

    def to_reference(self):
        return WaveState(self.reference_values().copy(), self.h, GAUGE_REFERENCE,
                         None, dict(self.meta))


def flat_eigenfunction(m, h, N=None, V0=0.0):
    """Exact eigenfunction phi(x) = (2 pi)^{-1} exp(i <m, x>) and E(h).

    L^2-normalised for the reference measure on ((2 pi)^2, dx); the grid
    must resolve the mode (N >= 2 max|m_i| + 2).
    """
    m = np.asarray(m, dtype=int).reshape(2)
    if N is None:
        N = default_grid_size(m)
    if N < 2 * int(np.max(np.abs(m))) + 2:
        raise FamilyError(f"grid N = {N} does not resolve m = {m.tolist()}")
    X = grid_points(N)
    phase = m[0] * X[..., 0] + m[1] * X[..., 1]
    amps = np.exp(1j * phase) / TWO_PI
    E = h**2 * float(m @ m) + V0
    return WaveState(amps, float(h), GAUGE_REFERENCE, None, {"m": m.tolist()}), E


def inner_reference(a, b):
    """<a, b> = int a conj(b) dx via the (exact for band-limited) grid rule."""
    av = a.reference_values() if isinstance(a, WaveState) else a
    bv = b.reference_values() if isinstance(b, WaveState) else b
    N = av.shape[0]
    return complex(np.sum(av * np.conj(bv)) * (TWO_PI / N) ** 2)


def norm_state(state):
    """L^2 norm under the state's declared measure."""
    N = state.N
    cell = (TWO_PI / N) ** 2
    if state.gauge == GAUGE_WEIGHTED:
        # plain grid sum of |weighted amplitudes|^2 is the g_u-weighted norm
        return float(np.sqrt(np.sum(np.abs(state.amplitudes) ** 2) * cell))
    return float(np.sqrt(np.sum(np.abs(state.amplitudes) ** 2) * cell))


# ---------------------------------------------------------------------------
# Lanczos propagation
# ---------------------------------------------------------------------------


def _lanczos_substep(handle, v, tau, tol, max_dim):
    """One Krylov step of exp(-i tau (H - shift)/h) v; returns (w, err, dim)."""
    h = handle.h
    shift = handle.shift
    theta = abs(tau) / h
    beta0 = np.linalg.norm(v)
    if beta0 == 0.0:
        return v, 0.0, 0
    q = v / beta0
    Q = [q]
    alphas = []
    betas = []
    y = None
    for j in range(max_dim):
        w = handle.apply(Q[j]) - shift * Q[j]
        alphas.append(float(np.real(np.vdot(Q[j], w))))
        w = w - alphas[j] * Q[j]
        if j > 0:
            w = w - betas[j - 1] * Q[j - 1]
        # full reorthogonalisation; cheap at these Krylov dimensions
        for qi in Q:
            w = w - np.vdot(qi, w) * qi
        beta = float(np.linalg.norm(w))
        ev, Z = eigh_tridiagonal(np.array(alphas), np.array(betas))
        y = Z @ (np.exp(-1j * tau / h * ev) * Z[0])
        err = beta * abs(y[-1]) * min(1.0, theta)
        if beta <= 1e-13 * max(1.0, abs(alphas[j])):  # happy breakdown: exact
            err = 0.0
        if err <= tol:
            out = np.zeros_like(v)
            for coef, qi in zip(y, Q):
                out += coef * qi
            return beta0 * out, err, j + 1
        betas.append(beta)
        Q.append(w / beta)
    return None, err, max_dim


def propagate(state, handle, t, tol=1e-9, krylov_dim=24, theta_max=20.0,
              max_splits=16):
    """phi -> exp(-i t H / h) phi with adaptive Krylov substeps.

    The substep comes from the spectral-radius estimate of the shifted
    operator (|H - shift| tau / h <= theta_max); each substep is accepted
    on a residual estimate and halved on failure. Norm preservation is
    structural (orthonormal Krylov basis, unitary tridiagonal exponential).
    """
    if state.N != handle.N:
        raise PropagationError(f"state grid {state.N} != operator grid {handle.N}")
    if abs(state.h - handle.h) > 1e-15:
        raise PropagationError("state and operator disagree on h")
    if t == 0.0:
        return WaveState(state.amplitudes.copy(), state.h, state.gauge,
                         state.handle, dict(state.meta))

    if state.gauge == GAUGE_REFERENCE:
        psi = handle.sqrt_rho * state.amplitudes
    else:
        psi = state.amplitudes.copy()

    nsub = max(1, int(np.ceil(abs(t) * handle.half_width / (handle.h * theta_max))))
    remaining = t
    tau = t / nsub
    splits = 0
    while abs(remaining) > 1e-15 * abs(t):
        step = np.sign(remaining) * min(abs(tau), abs(remaining))
        sub_tol = tol * abs(step) / abs(t)
        out, err, dim = _lanczos_substep(handle, psi, step, sub_tol, krylov_dim)
        if out is None:
            splits += 1
            if splits > max_splits:
                raise PropagationError(
                    f"Krylov residual {err:.2e} above tolerance after {max_splits} halvings")
            tau = tau / 2.0
            continue
        phase = np.exp(-1j * step / handle.h * handle.shift)
        psi = phase * out
        remaining -= step
    return WaveState(psi, state.h, GAUGE_WEIGHTED, handle, dict(state.meta))


# ---------------------------------------------------------------------------
# pointwise evaluation
# ---------------------------------------------------------------------------


def evaluate(state, x):
    """Trigonometric interpolation of the physical value phi(x).

    Exact for band-limited grid functions; for weighted states the
    rho^{-1/2} ungauging uses the closed-form metric determinant at x, so
    the returned value is the wavefunction itself.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    N = state.N
    F = np.fft.fft2(state.amplitudes) / N**2
    k = np.fft.fftfreq(N, d=1.0 / N)
    e1 = np.exp(1j * pts[:, 0:1] * k[None, :])  # (P, N)
    e2 = np.exp(1j * pts[:, 1:2] * k[None, :])
    vals = np.einsum("pa,ab,pb->p", e1, F, e2)
    if state.gauge == GAUGE_WEIGHTED:
        handle = state.handle
        G = handle.family.ginv(pts, handle.u)
        det = G[:, 0, 0] * G[:, 1, 1] - G[:, 0, 1] ** 2
        rho_x = det**-0.5
        vals = vals / np.sqrt(rho_x)
    return complex(vals[0]) if single else vals


# ---------------------------------------------------------------------------
# Loschmidt echo
# ---------------------------------------------------------------------------


def loschmidt_echo(family, u, h, m, t_grid, N=None, tol=1e-9, krylov_dim=24,
                   theta_max=20.0):
    """Survival probability M(t) = |<e^{-i t P_u / h} phi_h, phi_h>_dx|^2.

    Propagates once through the sorted time grid, reusing the state
    between samples. Returns an array of rows (t, M).
    """
    m = np.asarray(m, dtype=int).reshape(2)
    if N is None:
        N = default_grid_size(m)
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0):
        raise FamilyError("echo time grid must be strictly increasing")
    handle = build_operator(family, u, h, N)
    phi0, _ = flat_eigenfunction(m, h, N, V0=constant_potential_value(family))
    state = phi0
    rows = []
    t_prev = 0.0
    for t in t_grid:
        if t == 0.0:
            rows.append([0.0, 1.0])
            continue
        state = propagate(state, handle, t - t_prev, tol=tol,
                          krylov_dim=krylov_dim, theta_max=theta_max)
        t_prev = t
        amp = inner_reference(state, phi0)
        rows.append([t, float(abs(amp) ** 2)])
    return np.array(rows)


# ---------------------------------------------------------------------------
# snapshots: binary arrays with a JSON header
# ---------------------------------------------------------------------------

_MAGIC = b"EECHOW1\n"


def save_wave(path, state, family_hash=""):
    header = {
        "N": state.N,
        "h": state.h,
        "gauge": state.gauge,
        "family_hash": family_hash,
        "meta": state.meta,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        fh.write(np.ascontiguousarray(state.amplitudes, dtype=np.complex128).tobytes())


def load_wave(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise FamilyError(f"{path} is not a wave snapshot")
        n = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(n).decode())
        data = np.frombuffer(fh.read(), dtype=np.complex128)
    N = header["N"]
    amps = data.reshape(N, N).copy()
    state = WaveState(amps, header["h"], header["gauge"], None, header.get("meta", {}))
    return state, header
