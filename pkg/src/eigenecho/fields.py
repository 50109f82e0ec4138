"""Smooth periodic fields on the 2-torus [0, 2pi)^2.

Scalar fields expose closed-form values, gradients and Hessians at
arbitrary points; no finite differences anywhere. Symmetric 2-tensor
fields are assembled from three scalar entries. Everything is
vectorised: points are arrays of shape (..., 2) and results broadcast
over the leading axes.
"""

from __future__ import annotations

import numpy as np

from .errors import FamilyError

TWO_PI = 2.0 * np.pi


def wrap_point(x):
    """Reduce torus coordinates to the fundamental domain [0, 2pi)."""
    return np.mod(x, TWO_PI)


def wrap_delta(d):
    """Reduce coordinate differences to the minimal image in [-pi, pi)."""
    return np.mod(np.asarray(d) + np.pi, TWO_PI) - np.pi


def torus_distance(a, b):
    """Minimal-image Euclidean distance between torus points."""
    return np.linalg.norm(wrap_delta(np.asarray(a) - np.asarray(b)), axis=-1)


def as_field(f):
    if isinstance(f, ScalarField):
        return f
    if np.isscalar(f):
        return ConstantField(float(f))
    raise TypeError(f"cannot interpret {f!r} as a scalar field")


class ScalarField:
    """Base class for smooth scalar fields with exact first/second derivatives."""

    def value(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def hess(self, x):
        raise NotImplementedError

    def describe(self):
        """JSON-serialisable description (used for hashing and manifests)."""
        raise NotImplementedError

    def is_periodic(self, n_samples=64, tol=1e-12, rng_seed=7):
        """Check value agreement under x -> x + 2pi e_i at random points."""
        rng = np.random.default_rng(rng_seed)
        x = rng.uniform(0.0, TWO_PI, size=(n_samples, 2))
        v = self.value(x)
        scale = max(1.0, float(np.max(np.abs(v))))
        for i in range(2):
            shifted = x.copy()
            shifted[:, i] += TWO_PI
            if np.max(np.abs(self.value(shifted) - v)) > tol * scale:
                return False
        return True

    def __add__(self, other):
        return SumField(self, as_field(other))

    __radd__ = __add__

    def __sub__(self, other):
        return SumField(self, ProductField(as_field(other), ConstantField(-1.0)))

    def __mul__(self, other):
        return ProductField(self, as_field(other))

    __rmul__ = __mul__

    def __neg__(self):
        return ProductField(self, ConstantField(-1.0))


class ConstantField(ScalarField):
    def __init__(self, c):
        self.c = float(c)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], self.c)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (2,))

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (2, 2))

    def describe(self):
        return {"kind": "constant", "c": self.c}


class FourierField(ScalarField):
    """Truncated Fourier series sum_k [a_k cos(n_k.x) + b_k sin(n_k.x)].

    ``terms`` is a sequence of (n1, n2, a_cos, a_sin) with integer n1, n2.
    """

    def __init__(self, terms):
        terms = [(int(n1), int(n2), float(ac), float(asn)) for n1, n2, ac, asn in terms]
        self.terms = terms
        self._n = np.array([[t[0], t[1]] for t in terms], dtype=float).reshape(-1, 2)
        self._ac = np.array([t[2] for t in terms], dtype=float)
        self._as = np.array([t[3] for t in terms], dtype=float)

    def _phases(self, x):
        x = np.asarray(x, dtype=float)
        return np.tensordot(x, self._n.T, axes=([-1], [0]))  # (..., nterms)

    def value(self, x):
        ph = self._phases(x)
        return np.cos(ph) @ self._ac + np.sin(ph) @ self._as

    def grad(self, x):
        ph = self._phases(x)
        coef = -np.sin(ph) * self._ac + np.cos(ph) * self._as  # (..., T)
        return coef @ self._n  # (..., 2)

    def hess(self, x):
        ph = self._phases(x)
        coef = -np.cos(ph) * self._ac - np.sin(ph) * self._as
        nn = self._n[:, :, None] * self._n[:, None, :]  # (T, 2, 2)
        return np.tensordot(coef, nn, axes=([-1], [0]))

    def describe(self):
        return {"kind": "fourier", "terms": [list(t) for t in self.terms]}


class RadialBumpField(ScalarField):
    """Compactly supported C^inf bump around a torus point.

    b(x) = A * exp(1 - r0^2 / (r0^2 - s)) for s = |x - x0|_torus^2 < r0^2,
    and 0 outside. Writing the profile in s = r^2 keeps it smooth at the
    centre; r0 < pi keeps the support clear of the cut locus.
    """

    def __init__(self, center, radius, amplitude=1.0):
        radius = float(radius)
        if not 0.0 < radius < np.pi:
            raise FamilyError(f"bump radius must lie in (0, pi), got {radius}")
        self.center = np.asarray(center, dtype=float).reshape(2)
        self.radius = radius
        self.amplitude = float(amplitude)

    def _profile(self, x):
        x = np.asarray(x, dtype=float)
        delta = wrap_delta(x - self.center)
        s = np.sum(delta * delta, axis=-1)
        r2 = self.radius**2
        inside = s < r2 * (1.0 - 1e-14)
        q = np.where(inside, r2 - s, 1.0)
        f = np.where(inside, np.exp(1.0 - r2 / q), 0.0)
        fp = np.where(inside, -f * r2 / q**2, 0.0)
        fpp = np.where(inside, f * (r2**2 / q**4 - 2.0 * r2 / q**3), 0.0)
        a = self.amplitude
        return delta, a * f, a * fp, a * fpp

    def value(self, x):
        return self._profile(x)[1]

    def grad(self, x):
        delta, _, fp, _ = self._profile(x)
        return 2.0 * fp[..., None] * delta

    def hess(self, x):
        delta, _, fp, fpp = self._profile(x)
        outer = delta[..., :, None] * delta[..., None, :]
        eye = np.eye(2)
        return 4.0 * fpp[..., None, None] * outer + 2.0 * fp[..., None, None] * eye

    def describe(self):
        return {
            "kind": "radial-bump",
            "center": self.center.tolist(),
            "radius": self.radius,
            "amplitude": self.amplitude,
        }


class SumField(ScalarField):
    def __init__(self, a, b):
        self.a = as_field(a)
        self.b = as_field(b)

    def value(self, x):
        return self.a.value(x) + self.b.value(x)

    def grad(self, x):
        return self.a.grad(x) + self.b.grad(x)

    def hess(self, x):
        return self.a.hess(x) + self.b.hess(x)

    def describe(self):
        return {"kind": "sum", "a": self.a.describe(), "b": self.b.describe()}


class ProductField(ScalarField):
    def __init__(self, a, b):
        self.a = as_field(a)
        self.b = as_field(b)

    def value(self, x):
        return self.a.value(x) * self.b.value(x)

    def grad(self, x):
        av, bv = self.a.value(x), self.b.value(x)
        return av[..., None] * self.b.grad(x) + bv[..., None] * self.a.grad(x)

    def hess(self, x):
        av, bv = self.a.value(x), self.b.value(x)
        ag, bg = self.a.grad(x), self.b.grad(x)
        cross = ag[..., :, None] * bg[..., None, :]
        return (
            av[..., None, None] * self.b.hess(x)
            + bv[..., None, None] * self.a.hess(x)
            + cross
            + np.swapaxes(cross, -1, -2)
        )

    def describe(self):
        return {"kind": "product", "a": self.a.describe(), "b": self.b.describe()}


class CallableField(ScalarField):
    """Ad-hoc field from plain callables; mainly for tests and error paths."""

    def __init__(self, fn, grad_fn=None, hess_fn=None, label="callable"):
        self.fn = fn
        self.grad_fn = grad_fn
        self.hess_fn = hess_fn
        self.label = label

    def value(self, x):
        return np.asarray(self.fn(np.asarray(x, dtype=float)))

    def grad(self, x):
        if self.grad_fn is None:
            raise NotImplementedError("gradient not provided for callable field")
        return np.asarray(self.grad_fn(np.asarray(x, dtype=float)))

    def hess(self, x):
        if self.hess_fn is None:
            raise NotImplementedError("hessian not provided for callable field")
        return np.asarray(self.hess_fn(np.asarray(x, dtype=float)))

    def describe(self):
        return {"kind": "callable", "label": self.label}


ZERO = ConstantField(0.0)
ONE = ConstantField(1.0)


class SymTensorField:
    """Symmetric 2x2 tensor field with entries given by scalar fields.

    Stores the upper triangle (f11, f12, f22); symmetry is therefore
    structural. Values come back as (..., 2, 2) arrays; first and second
    spatial derivatives as (..., d, 2, 2) and (..., d, e, 2, 2) with the
    derivative indices leading.
    """

    def __init__(self, f11, f12, f22):
        self.f11 = as_field(f11)
        self.f12 = as_field(f12)
        self.f22 = as_field(f22)

    @classmethod
    def identity(cls):
        return cls(ONE, ZERO, ONE)

    @classmethod
    def constant(cls, mat):
        mat = np.asarray(mat, dtype=float)
        if mat.shape != (2, 2) or abs(mat[0, 1] - mat[1, 0]) > 0:
            raise FamilyError("constant tensor must be a symmetric 2x2 matrix")
        return cls(ConstantField(mat[0, 0]), ConstantField(mat[0, 1]), ConstantField(mat[1, 1]))

    @classmethod
    def scaled_identity(cls, f):
        f = as_field(f)
        return cls(f, ZERO, f)

    def entries(self):
        return (self.f11, self.f12, self.f22)

    def entry(self, i, j):
        return (self.f11, self.f12, self.f12, self.f22)[2 * i + j]

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape[:-1] + (2, 2))
        v11 = self.f11.value(x)
        v12 = self.f12.value(x)
        v22 = self.f22.value(x)
        out[..., 0, 0] = v11
        out[..., 0, 1] = v12
        out[..., 1, 0] = v12
        out[..., 1, 1] = v22
        return out

    def dx(self, x):
        """First derivatives, index order (..., d, i, j) with d the x-derivative."""
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape[:-1] + (2, 2, 2))
        g11 = self.f11.grad(x)
        g12 = self.f12.grad(x)
        g22 = self.f22.grad(x)
        out[..., :, 0, 0] = g11
        out[..., :, 0, 1] = g12
        out[..., :, 1, 0] = g12
        out[..., :, 1, 1] = g22
        return out

    def dx2(self, x):
        """Second derivatives, index order (..., d, e, i, j)."""
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape[:-1] + (2, 2, 2, 2))
        h11 = self.f11.hess(x)
        h12 = self.f12.hess(x)
        h22 = self.f22.hess(x)
        out[..., :, :, 0, 0] = h11
        out[..., :, :, 0, 1] = h12
        out[..., :, :, 1, 0] = h12
        out[..., :, :, 1, 1] = h22
        return out

    def is_periodic(self, **kw):
        return all(f.is_periodic(**kw) for f in self.entries())

    def describe(self):
        return {
            "kind": "sym-tensor",
            "f11": self.f11.describe(),
            "f12": self.f12.describe(),
            "f22": self.f22.describe(),
        }
