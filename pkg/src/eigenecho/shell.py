"""Liouville (co-area) quadrature on the energy shell p_0^{-1}(E).

For p_0 = |xi|^2 + V(y) on the flat torus the shell fiber over y is the
circle |xi| = r(y) = sqrt(E - V(y)) and the co-area weight
d sigma(xi) / |grad_xi p_0| = (r dtheta) / (2 r) = dtheta / 2 is uniform,
so nodes are a uniform torus grid in y crossed with uniform angles. The
total mass |p_0^{-1}(E)| is (2 pi)^2 pi whenever E clears the potential
everywhere, which the caustic margin enforces.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CausticError, FamilyError


@dataclass
class ShellQuadrature:
    y: np.ndarray          # (Q, 2)
    eta: np.ndarray        # (Q, 2)
    weights: np.ndarray    # (Q,)
    total_mass: float
    E: float
    ny: int
    ntheta: int

    def nodes(self):
        return np.concatenate([self.y, self.eta], axis=1)

    def integrate(self, values):
        values = np.asarray(values)
        return float(np.sum(self.weights * values))

    def average(self, values):
        return self.integrate(values) / self.total_mass


def _assert_flat_reference(family):
    probe = np.array([[0.2, 0.9], [3.1, 5.0]])
    if np.max(np.abs(family.g0_inv.value(probe) - np.eye(2))) > 1e-13:
        raise FamilyError("shell quadrature assumes the flat reference metric")


def shell_radius(family, E, y, margin=None):
    """Fiber radius sqrt(E - V(y)); raises CausticError inside the margin."""
    V = family.potential.value(y)
    gap = E - V
    if margin is None:
        margin = 0.1 * abs(E)
    if np.any(gap <= margin):
        i = int(np.argmin(gap))
        bad = np.atleast_2d(y)[i] if np.ndim(y) > 1 else y
        raise CausticError(
            f"E - V = {float(np.min(gap)):.3e} within margin {margin:.3e} at y = {bad}"
        )
    return np.sqrt(gap)


def shell_quadrature(family, E, resolution=(32, 32), margin=None, cache_dir=None):
    """Uniform (y, theta) co-area rule on p_0^{-1}(E).

    ``resolution`` is (points per y axis, angle count). Weights implement
    the unnormalised Liouville measure; ``total_mass`` is their sum.
    """
    _assert_flat_reference(family)
    ny, ntheta = resolution

    if cache_dir is not None:
        key = json.dumps(
            {"E": E, "ny": ny, "ntheta": ntheta, "margin": margin,
             "family": family.describe()},
            sort_keys=True,
        )
        digest = hashlib.sha256(key.encode()).hexdigest()[:20]
        path = Path(cache_dir) / f"shell_{digest}.npz"
        if path.exists():
            data = np.load(path)
            return ShellQuadrature(
                y=data["y"], eta=data["eta"], weights=data["weights"],
                total_mass=float(data["total_mass"]), E=E, ny=ny, ntheta=ntheta,
            )

    grid = np.linspace(0.0, 2 * np.pi, ny, endpoint=False)
    Y = np.stack(np.meshgrid(grid, grid, indexing="ij"), axis=-1).reshape(-1, 2)
    r = shell_radius(family, E, Y, margin=margin)

    theta = np.linspace(0.0, 2 * np.pi, ntheta, endpoint=False)
    ct, st = np.cos(theta), np.sin(theta)

    y_nodes = np.repeat(Y, ntheta, axis=0)
    r_nodes = np.repeat(r, ntheta)
    dirs = np.tile(np.stack([ct, st], axis=-1), (Y.shape[0], 1))
    eta = r_nodes[:, None] * dirs

    cell = (2 * np.pi / ny) ** 2 * (2 * np.pi / ntheta)
    weights = np.full(y_nodes.shape[0], 0.5 * cell)
    quad = ShellQuadrature(
        y=y_nodes, eta=eta, weights=weights,
        total_mass=float(np.sum(weights)), E=E, ny=ny, ntheta=ntheta,
    )

    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        np.savez(path, y=quad.y, eta=quad.eta, weights=quad.weights,
                 total_mass=quad.total_mass)
    return quad


def liouville_mass(family, E):
    """|p_0^{-1}(E)| for the flat torus: (2 pi)^2 pi above the potential."""
    # verify the shell clears the caustic margin, then use the closed form
    grid = np.linspace(0.0, 2 * np.pi, 64, endpoint=False)
    Y = np.stack(np.meshgrid(grid, grid, indexing="ij"), axis=-1).reshape(-1, 2)
    shell_radius(family, E, Y)
    return (2 * np.pi) ** 2 * np.pi
