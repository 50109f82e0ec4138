"""Hamiltonian flow of the metric-family symbol with variational data.

Integrates z' = J grad p_u(z) on T*T^2 together with the variational
equations for the 4x4 monodromy d_z G_u^s and the inhomogeneous
variational equations for the parameter sensitivity d_u G_u^s. The
integrator is an adaptive embedded Dormand-Prince 5(4) pair running on
whole batches of trajectories at once (one shared adaptive step,
error-controlled by the worst member), which keeps Newton solves over
thousands of shell nodes cheap and deterministic.

Variable-metric Hamiltonians are non-separable, so instead of a
structure-preserving scheme the module monitors the symplectic defect
M^T J M - J and the energy defect explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import StepSizeUnderflow
from .fields import wrap_point

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4

J4 = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])


def rk45(rhs, y0, t_end, rtol, atol, max_steps=200_000):
    """Integrate y' = rhs(y) from 0 to t_end for a batch y0 of shape (B, D).

    Shared adaptive step; the error norm is the max over batch members of
    the RMS of componentwise scaled errors. Deterministic for a fixed
    batch. Returns (y, nsteps, nfev).
    """
    y = np.array(y0, dtype=float)
    t = 0.0
    direction = 1.0 if t_end >= 0 else -1.0
    T = abs(t_end)
    if T == 0.0:
        return y, 0, 0

    k1 = rhs(y)
    nfev = 1
    dt = min(T, max(1e-6 * T, 0.01 * T * rtol**0.2))
    nsteps = 0
    while t < T:
        dt = min(dt, T - t)
        if dt < 1e-14 * max(T, 1.0):
            raise StepSizeUnderflow(f"step size underflow at flow time {direction * t:.6g}",
                                    time=direction * t)
        ks = [k1]
        for i in range(1, 7):
            yi = y + (direction * dt) * np.tensordot(_A[i], ks[:i], axes=([0], [0]))
            ks.append(rhs(yi))
            nfev += 1
        ynew = y + (direction * dt) * np.tensordot(_B5, ks, axes=([0], [0]))
        err = (direction * dt) * np.tensordot(_E, ks, axes=([0], [0]))
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
        ratio = err / scale
        enorm = float(np.sqrt(np.max(np.mean(ratio * ratio, axis=-1))))
        if not np.isfinite(enorm):
            dt *= 0.25
            continue
        if enorm <= 1.0:
            t += dt
            y = ynew
            k1 = ks[6]  # FSAL
            factor = 5.0 if enorm == 0.0 else min(5.0, max(0.2, 0.9 * enorm**-0.2))
            dt *= factor
        else:
            dt *= max(0.2, 0.9 * enorm**-0.2)
        nsteps += 1
        if nsteps > max_steps:
            raise StepSizeUnderflow("exceeded maximum step count", time=direction * t)
    return y, nsteps, nfev


@dataclass
class PhasePoint:
    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        self.x = wrap_point(np.asarray(self.x, dtype=float).reshape(2))
        self.xi = np.asarray(self.xi, dtype=float).reshape(2)

    def as_array(self):
        return np.concatenate([self.x, self.xi])


@dataclass
class FlowBatchResult:
    endpoints: np.ndarray          # (B, 4), x wrapped to [0, 2pi)
    monodromy: Optional[np.ndarray]      # (B, 4, 4)
    u_sensitivity: Optional[np.ndarray]  # (B, 4, ns)
    usens_indices: Optional[tuple]
    energy_drift: np.ndarray       # (B,)
    time: float
    nsteps: int
    nfev: int


@dataclass
class FlowJet:
    endpoint: PhasePoint
    monodromy: np.ndarray
    u_sensitivity: np.ndarray
    energy_drift: float
    time: float


def _rhs_factory(family, U, want_monodromy, usens_indices):
    ns = 0 if usens_indices is None else len(usens_indices)
    idx = None if usens_indices is None else list(usens_indices)
    want_jet = want_monodromy or ns > 0
    m_off = 4
    s_off = 4 + (16 if want_monodromy else 0)

    def rhs(Y):
        x = Y[:, 0:2]
        xi = Y[:, 2:4]
        G = family.ginv(x, U)
        dG = family.ginv_dx(x, U)
        gradV = family.potential.grad(x)
        out = np.empty_like(Y)
        out[:, 0:2] = 2.0 * np.einsum("bij,bj->bi", G, xi)
        out[:, 2:4] = -(np.einsum("bdij,bi,bj->bd", dG, xi, xi) + gradV)
        if not want_jet:
            return out
        d2G = family.ginv_dx2(x, U)
        hessV = family.potential.hess(x)
        A = np.empty((Y.shape[0], 4, 4))
        A11 = 2.0 * np.einsum("bkij,bj->bik", dG, xi)
        A[:, 0:2, 0:2] = A11
        A[:, 0:2, 2:4] = 2.0 * G
        A[:, 2:4, 0:2] = -(np.einsum("bikac,ba,bc->bik", d2G, xi, xi) + hessV)
        A[:, 2:4, 2:4] = -np.swapaxes(A11, 1, 2)
        if want_monodromy:
            M = Y[:, m_off:m_off + 16].reshape(-1, 4, 4)
            out[:, m_off:m_off + 16] = np.matmul(A, M).reshape(-1, 16)
        if ns:
            H = family.direction_values(x)[:, idx]
            dH = family.direction_dx(x)[:, idx]
            S = Y[:, s_off:s_off + 4 * ns].reshape(-1, 4, ns)
            F = np.empty((Y.shape[0], 4, ns))
            F[:, 0:2, :] = 2.0 * np.einsum("bjac,bc->baj", H, xi)
            F[:, 2:4, :] = -np.einsum("bjdac,ba,bc->bdj", dH, xi, xi)
            out[:, s_off:s_off + 4 * ns] = (np.matmul(A, S) + F).reshape(-1, 4 * ns)
        return out

    return rhs, ns, s_off


def flow_batch(
    family,
    U,
    s,
    Z0,
    tol=1e-12,
    want_monodromy=True,
    want_usens=True,
    usens_indices=None,
):
    """Flow a batch of phase points for time s with per-node parameters U.

    U is (B, k) (or (k,), broadcast), Z0 is (B, 4). ``usens_indices``
    restricts the sensitivity columns (default: all directions when
    ``want_usens``).
    """
    Z0 = np.atleast_2d(np.asarray(Z0, dtype=float))
    B = Z0.shape[0]
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = np.broadcast_to(U, (B, family.k)).copy()
    if usens_indices is None:
        usens_indices = tuple(range(family.k)) if want_usens else None

    rhs, ns, s_off = _rhs_factory(family, U, want_monodromy, usens_indices)
    D = 4 + (16 if want_monodromy else 0) + 4 * ns
    Y0 = np.zeros((B, D))
    Y0[:, 0:4] = Z0
    if want_monodromy:
        Y0[:, 4:20] = np.eye(4).reshape(-1)

    e0 = family.symbol(U, Z0[:, 0:2], Z0[:, 2:4])
    Y, nsteps, nfev = rk45(rhs, Y0, s, rtol=tol, atol=tol)
    endpoints = Y[:, 0:4].copy()
    endpoints[:, 0:2] = wrap_point(endpoints[:, 0:2])
    e1 = family.symbol(U, endpoints[:, 0:2], endpoints[:, 2:4])

    return FlowBatchResult(
        endpoints=endpoints,
        monodromy=Y[:, 4:20].reshape(B, 4, 4) if want_monodromy else None,
        u_sensitivity=Y[:, s_off:s_off + 4 * ns].reshape(B, 4, ns) if ns else None,
        usens_indices=usens_indices,
        energy_drift=e1 - e0,
        time=s,
        nsteps=nsteps,
        nfev=nfev,
    )


def flow(family, u, s, z0, tol=1e-12):
    """Single-trajectory flow with full monodromy and u-sensitivity."""
    if isinstance(z0, PhasePoint):
        z0 = z0.as_array()
    res = flow_batch(family, np.asarray(u, float), s, z0[None, :], tol=tol)
    return FlowJet(
        endpoint=PhasePoint(res.endpoints[0, 0:2], res.endpoints[0, 2:4]),
        monodromy=res.monodromy[0],
        u_sensitivity=res.u_sensitivity[0],
        energy_drift=float(res.energy_drift[0]),
        time=s,
    )


def symplectic_defect(M):
    """Max-entry norm of M^T J M - J (zero for exact symplectic maps)."""
    M = np.asarray(M)
    return float(np.max(np.abs(np.swapaxes(M, -1, -2) @ J4 @ M - J4)))


def spatial_jacobian(family, u, t, z, tol=1e-12):
    """|det| of the x-x block of d(pi G_u^{-t}) for the flow started at z."""
    if isinstance(z, PhasePoint):
        z = z.as_array()
    res = flow_batch(family, np.asarray(u, float), -t, np.asarray(z, float)[None, :],
                     tol=tol, want_monodromy=True, want_usens=False)
    blk = res.monodromy[0, 0:2, 0:2]
    return float(abs(blk[0, 0] * blk[1, 1] - blk[0, 1] * blk[1, 0]))


def spatial_jacobian_batch(family, U, t, Z, tol=1e-12):
    res = flow_batch(family, U, -t, Z, tol=tol, want_monodromy=True, want_usens=False)
    blk = res.monodromy[:, 0:2, 0:2]
    return np.abs(blk[:, 0, 0] * blk[:, 1, 1] - blk[:, 0, 1] * blk[:, 1, 0])


def flow_trace(family, u, z0, times, tol=1e-12):
    """Trajectory samples at the given times: rows (t, x1, x2, xi1, xi2, drift)."""
    if isinstance(z0, PhasePoint):
        z0 = z0.as_array()
    u = np.asarray(u, dtype=float)
    times = np.asarray(times, dtype=float)
    z = np.asarray(z0, dtype=float).copy()
    e0 = float(family.symbol(u, z[0:2], z[2:4]))
    rows = []
    t_prev = 0.0
    for t in times:
        if t != t_prev:
            res = flow_batch(family, u, t - t_prev, z[None, :], tol=tol,
                             want_monodromy=False, want_usens=False)
            znew = res.endpoints[0].copy()
            # keep the unwrapped starting point for the next segment
            z = np.concatenate([znew[0:2], znew[2:4]])
            t_prev = t
        e = float(family.symbol(u, z[0:2], z[2:4]))
        rows.append([t, z[0], z[1], z[2], z[3], e - e0])
    return np.array(rows)
