"""Newton solvers on the canonical graph of the backward flow.

The implicit parametrisation behind the variance integrand solves

    pi G_{(u', u'')}^{-t}(y, eta) = x   (mod 2pi)

for the n = 2 volume-preserving parameters u' (flow condition form of the
stationary-phase equation). The Jacobian of the residual in u' is the
spatial block of the flow's u-sensitivity and scales like -t times the
mixed Hessian d_u' d_xi p_u, so for small boxes and the relevant times the
Newton basin contains u' = 0; full steps with residual-halving line search
are used. Nodes whose root leaves the parameter box are excluded (the
deformation cutoff vanishes there anyway).

The companion solver inverts the same relation for y at fixed u', whose
Jacobian is a perturbation of the identity; it underlies the
change-of-variables quadrature in the theory module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NewtonNoConvergence, NewtonOutOfBox
from .fields import wrap_delta
from .hamflow import flow_batch

STATUS_OK = 0
STATUS_NO_CONVERGENCE = 1
STATUS_OUT_OF_BOX = 2


def embed_parameters(u_prime, u_dd, uprime_indices, k):
    """Assemble full parameter vectors from (u', u'') blocks. Batched."""
    u_prime = np.atleast_2d(np.asarray(u_prime, dtype=float))
    B = u_prime.shape[0]
    rest = [j for j in range(k) if j not in uprime_indices]
    U = np.zeros((B, k))
    U[:, list(uprime_indices)] = u_prime
    u_dd = np.asarray(u_dd, dtype=float).reshape(-1)
    if len(rest) != u_dd.size:
        raise ValueError(f"u'' must have {len(rest)} components")
    U[:, rest] = u_dd
    return U


@dataclass
class UPrimeSolution:
    u_prime: np.ndarray
    jacobian: np.ndarray   # d_u' (pi G^{-t}) at the converged point
    residual: float
    iterations: int


def solve_uprime_batch(
    family,
    x,
    u_dd,
    t,
    Y,
    ETA,
    *,
    uprime_indices=(0, 1),
    tol=1e-10,
    max_iter=30,
    max_halvings=3,
    flow_tol=1e-12,
    wander_factor=2.0,
):
    """Solve pi G^{-t}_{(u', u'')}(y, eta) = x for each node of a batch.

    Returns (UP (B, 2), J (B, 2, 2), residual (B,), status (B,)). Status
    is OK / NO_CONVERGENCE / OUT_OF_BOX per node; J is the converged
    spatial u-sensitivity block (the Newton Jacobian).
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    ETA = np.atleast_2d(np.asarray(ETA, dtype=float))
    B = Y.shape[0]
    x = np.asarray(x, dtype=float).reshape(2)
    eps = family.epsilon
    k = family.k

    UP = np.zeros((B, 2))
    J = np.tile(np.eye(2), (B, 1, 1))
    res_norm = np.full(B, np.inf)
    status = np.full(B, STATUS_NO_CONVERGENCE, dtype=int)
    active = np.ones(B, dtype=bool)

    def residual_and_jac(up, rows):
        U = embed_parameters(up, u_dd, uprime_indices, k)
        Z0 = np.concatenate([Y[rows], ETA[rows]], axis=1)
        res = flow_batch(family, U, -t, Z0, tol=flow_tol,
                         want_monodromy=False, usens_indices=uprime_indices)
        F = wrap_delta(res.endpoints[:, :2] - x)
        return F, res.u_sensitivity[:, 0:2, :]

    F, Jb = residual_and_jac(UP, np.arange(B))
    res_norm = np.linalg.norm(F, axis=1)
    J[:] = Jb

    for _ in range(max_iter):
        conv = active & (res_norm <= tol)
        status[conv] = STATUS_OK
        active &= ~conv
        # nodes wandering far outside the box will not come back
        wander = active & (np.max(np.abs(UP), axis=1) > wander_factor * eps)
        status[wander] = STATUS_OUT_OF_BOX
        active &= ~wander
        if not np.any(active):
            break
        rows = np.flatnonzero(active)
        step = -np.linalg.solve(J[rows], F[rows][:, :, None])[:, :, 0]
        lam = np.ones(len(rows))
        pending = np.ones(len(rows), dtype=bool)
        for _ in range(max_halvings + 1):
            idx = np.flatnonzero(pending)
            if idx.size == 0:
                break
            cand = UP[rows[idx]] + lam[idx, None] * step[idx]
            Fc, Jc = residual_and_jac(cand, rows[idx])
            nc = np.linalg.norm(Fc, axis=1)
            better = nc < res_norm[rows[idx]]
            acc = rows[idx[better]]
            UP[acc] = cand[better]
            F[acc] = Fc[better]
            J[acc] = Jc[better]
            res_norm[acc] = nc[better]
            pending[idx[better]] = False
            lam[idx[~better]] *= 0.5
        # nodes that improved on no step length: give up
        stuck = rows[pending]
        status[stuck] = STATUS_NO_CONVERGENCE
        active[stuck] = False

    conv = active & (res_norm <= tol)
    status[conv] = STATUS_OK

    inbox = np.max(np.abs(UP), axis=1) <= eps * (1 + 1e-12)
    status[(status == STATUS_OK) & ~inbox] = STATUS_OUT_OF_BOX
    return UP, J, res_norm, status


def solve_uprime(family, x, u_dd, t, y, eta, **kw):
    """Single-node wrapper; raises on failure instead of returning codes."""
    UP, J, rn, status = solve_uprime_batch(
        family, x, u_dd, t, np.asarray(y, float)[None], np.asarray(eta, float)[None], **kw
    )
    if status[0] == STATUS_OUT_OF_BOX:
        raise NewtonOutOfBox("u' left the parameter box", u_prime=UP[0])
    if status[0] != STATUS_OK:
        raise NewtonNoConvergence("u' Newton did not converge",
                                  residual=float(rn[0]))
    return UPrimeSolution(u_prime=UP[0], jacobian=J[0], residual=float(rn[0]),
                          iterations=-1)


def solve_spatial_start_batch(
    family,
    U,
    t,
    x,
    ETA=None,
    *,
    theta=None,
    E=None,
    uprime_indices=(0, 1),
    tol=1e-11,
    max_iter=25,
    flow_tol=1e-12,
):
    """Find the start point y with pi G_U^{-t}(y, eta(y)) = x, per node.

    Two modes: fixed covector (``ETA`` given, (B, 2)) or shell-constrained
    (``theta`` and ``E`` given: eta(y) = sqrt(E - V(y)) thetahat, so the
    node stays on the energy shell while y moves). Returns
    (Y, F_y, F_up, eta, status) where F_y = d(endpoint)/dy including the
    eta(y) coupling and F_up the spatial u-sensitivity block.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    B = U.shape[0]
    x = np.asarray(x, dtype=float).reshape(2)

    fixed = ETA is not None
    if fixed:
        ETA = np.broadcast_to(np.asarray(ETA, dtype=float), (B, 2)).copy()
        that = None
    else:
        theta = np.broadcast_to(np.asarray(theta, dtype=float).reshape(-1), (B,))
        that = np.stack([np.cos(theta), np.sin(theta)], axis=-1)

    def eta_of(Yc):
        if fixed:
            return ETA, None
        V = family.potential.value(Yc)
        r = np.sqrt(E - V)
        eta = r[:, None] * that
        gradV = family.potential.grad(Yc)
        dr = -gradV / (2.0 * r[:, None])            # (B, 2)
        deta = that[:, :, None] * dr[:, None, :]    # d eta_i / d y_j
        return eta, deta

    # first-order guess from the backward free flight at the target point
    G = family.ginv(np.broadcast_to(x, (B, 2)), U)
    eta0, _ = eta_of(np.broadcast_to(x, (B, 2)).copy())
    Y = x + 2 * t * np.einsum("bij,bj->bi", G, eta0)

    F_y = np.tile(np.eye(2), (B, 1, 1))
    F_up = np.zeros((B, 2, 2))
    eta = eta0
    status = np.full(B, STATUS_NO_CONVERGENCE, dtype=int)
    for _ in range(max_iter):
        eta, deta = eta_of(Y)
        Z0 = np.concatenate([Y, eta], axis=1)
        res = flow_batch(family, U, -t, Z0, tol=flow_tol,
                         want_monodromy=True, usens_indices=uprime_indices)
        F = wrap_delta(res.endpoints[:, :2] - x)
        M = res.monodromy
        F_y = M[:, 0:2, 0:2].copy()
        if deta is not None:
            F_y += np.matmul(M[:, 0:2, 2:4], deta)
        F_up = res.u_sensitivity[:, 0:2, :]
        rn = np.linalg.norm(F, axis=1)
        done = rn <= tol
        status[done] = STATUS_OK
        if np.all(done):
            break
        Y = Y - np.linalg.solve(F_y, F[:, :, None])[:, :, 0]
    return Y, F_y, F_up, eta, status
