"""Probability measure on the deformation box B^k(eps).

d nu(u) = c_k(eps) chi^2(u) du with chi a tensor-product plateau bump:
chi(u) = prod_i chi1(u_i / eps), chi1 = 1 on [-1/2, 1/2], C^inf, supported
in [-1, 1]. The compact support kills boundary terms in the stationary
phase analysis, so both the normalisation c_k(eps) and the variance
prediction depend on chi^2 and the profile is recorded in every report.

Quadrature options over u: tensor Clenshaw-Curtis (nested, so refinement
deltas reuse every sample; endpoint nodes carry chi = 0 and are skipped by
callers) for small k, and scrambled-Sobol QMC with chi^2 importance
weights and replicate spreads for larger k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc


def _smooth_step(t):
    """C^inf monotone step: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=float)
    a = np.where(t > 0, np.exp(-1.0 / np.maximum(t, 1e-300)), 0.0)
    b = np.where(t < 1, np.exp(-1.0 / np.maximum(1.0 - t, 1e-300)), 0.0)
    return a / (a + b)


def plateau_profile(s):
    """chi1(s): 1 on |s| <= 1/2, smooth monotone decay to 0 at |s| = 1."""
    s = np.abs(np.asarray(s, dtype=float))
    return _smooth_step(2.0 * (1.0 - s))


def _gauss_pieces(npts):
    """Composite Gauss-Legendre on [-1, -1/2], [-1/2, 1/2], [1/2, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    pieces = []
    for a, b in [(-1.0, -0.5), (-0.5, 0.5), (0.5, 1.0)]:
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        pieces.append((mid + half * x, half * w))
    return (np.concatenate([p[0] for p in pieces]),
            np.concatenate([p[1] for p in pieces]))


def profile_l2_norm(npts=60):
    """A1 = int_{-1}^{1} chi1(s)^2 ds by piecewise Gauss (plateau exact)."""
    x, w = _gauss_pieces(npts)
    return float(np.sum(w * plateau_profile(x) ** 2))


@dataclass
class DeformationMeasure:
    k: int
    epsilon: float
    profile: str
    c_k: float
    one_dim_norm: float  # A1 = int chi1^2

    def chi(self, u):
        u = np.asarray(u, dtype=float)
        return np.prod(plateau_profile(u / self.epsilon), axis=-1)

    def chi_sq(self, u):
        return self.chi(u) ** 2

    def density(self, u):
        """d nu / du."""
        return self.c_k * self.chi_sq(u)

    def describe(self):
        return {"k": self.k, "epsilon": self.epsilon, "profile": self.profile,
                "c_k": self.c_k}


def make_measure(k, epsilon, profile="plateau"):
    """Normalisation by exact tensorisation of the 1-D profile integral:
    int_B chi^2 du = (eps A1)^k, so c_k(eps) = (eps A1)^{-k} and the scaling
    law c_k(eps) = eps^{-k} c_k(1) holds to round-off."""
    if profile != "plateau":
        raise ValueError(f"unknown cutoff profile {profile!r}")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    A1 = profile_l2_norm()
    return DeformationMeasure(k=int(k), epsilon=float(epsilon), profile=profile,
                              c_k=float((epsilon * A1) ** -k), one_dim_norm=A1)


# ---------------------------------------------------------------------------
# tensor Clenshaw-Curtis rule over the box
# ---------------------------------------------------------------------------


def clenshaw_curtis(n):
    """Nodes (descending) and weights on [-1, 1]; n odd keeps 0 a node.

    Weights solve the Chebyshev-Vandermonde moment system exactly; for
    n <= 65 this is stable and deterministic. The even-index subset of an
    (n-1)/2 + 1 point rule is nested inside.
    """
    if n < 2:
        raise ValueError("need at least 2 nodes")
    j = np.arange(n)
    x = np.cos(np.pi * j / (n - 1))
    T = np.cos(np.outer(np.arange(n), np.arccos(np.clip(x, -1, 1))))
    mom = np.zeros(n)
    for kk in range(0, n, 2):
        mom[kk] = 2.0 / (1.0 - kk * kk) if kk != 1 else 0.0
    w = np.linalg.solve(T, mom)
    return x, w


@dataclass
class TensorRule:
    nodes: np.ndarray        # (Q, k) points in the box
    weights: np.ndarray      # (Q,) product Lebesgue weights
    coarse_mask: np.ndarray  # (Q,) membership in the nested coarse rule
    coarse_weights: np.ndarray  # (Q,) weights of the coarse rule (0 off-mask)
    nodes_per_dim: int


def tensor_u_rule(measure, nodes_per_dim=11):
    """Tensor Clenshaw-Curtis rule on B^k(eps) with a nested coarse subrule.

    ``nodes_per_dim`` must be odd >= 5 so the coarse rule (every other
    node) is itself a Clenshaw-Curtis rule.
    """
    n = int(nodes_per_dim)
    if n % 2 == 0 or n < 5:
        raise ValueError("nodes_per_dim must be odd and >= 5")
    eps, k = measure.epsilon, measure.k
    x, w = clenshaw_curtis(n)
    nc = (n + 1) // 2
    xc, wc = clenshaw_curtis(nc)
    fine_is_coarse = np.zeros(n, dtype=bool)
    fine_is_coarse[::2] = True
    wc_full = np.zeros(n)
    wc_full[::2] = wc

    grids = np.meshgrid(*([x] * k), indexing="ij")
    nodes = eps * np.stack([g.reshape(-1) for g in grids], axis=-1)
    wgrids = np.meshgrid(*([w] * k), indexing="ij")
    weights = eps**k * np.prod(np.stack([g.reshape(-1) for g in wgrids]), axis=0)
    cmask = np.meshgrid(*([fine_is_coarse] * k), indexing="ij")
    coarse_mask = np.all(np.stack([g.reshape(-1) for g in cmask]), axis=0)
    cgrids = np.meshgrid(*([wc_full] * k), indexing="ij")
    coarse_weights = eps**k * np.prod(np.stack([g.reshape(-1) for g in cgrids]), axis=0)
    coarse_weights[~coarse_mask] = 0.0
    return TensorRule(nodes=nodes, weights=weights, coarse_mask=coarse_mask,
                      coarse_weights=coarse_weights, nodes_per_dim=n)


def gauss_box_rule(epsilon, dims, nodes_per_dim=12):
    """Piecewise Gauss-Legendre tensor rule on [-eps, eps]^dims.

    Used for smooth chi^2-weighted integrands where nesting is not needed
    (theory-side quadratures). ``nodes_per_dim`` counts per piece triple.
    """
    per_piece = max(2, int(round(nodes_per_dim / 3)))
    x, w = _gauss_pieces(per_piece)
    x = epsilon * x
    w = epsilon * w
    if dims == 1:
        return x[:, None], w
    grids = np.meshgrid(*([x] * dims), indexing="ij")
    nodes = np.stack([g.reshape(-1) for g in grids], axis=-1)
    wg = np.meshgrid(*([w] * dims), indexing="ij")
    weights = np.prod(np.stack([g.reshape(-1) for g in wg]), axis=0)
    return nodes, weights


def sobol_u_rule(measure, m=7, replicates=4, seed=0):
    """Randomised QMC: ``replicates`` scrambled Sobol point sets of 2^m nodes.

    Returns a list of (nodes, weights) pairs; weights are the plain box
    volume per node (chi^2 importance enters through the integrand), and
    the replicate spread estimates the error.
    """
    eps, k = measure.epsilon, measure.k
    out = []
    vol = (2 * eps) ** k
    for r in range(replicates):
        sob = qmc.Sobol(d=k, scramble=True, seed=seed + 1000 * r)
        pts = sob.random_base2(m)
        nodes = (2.0 * pts - 1.0) * eps
        weights = np.full(nodes.shape[0], vol / nodes.shape[0])
        out.append((nodes, weights))
    return out
