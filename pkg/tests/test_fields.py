import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eigenecho.fields import (
    ConstantField,
    FourierField,
    ProductField,
    RadialBumpField,
    SymTensorField,
    wrap_delta,
    wrap_point,
)

RNG = np.random.default_rng(42)


def fd_grad(f, x, h=1e-6):
    g = np.zeros(2)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        g[i] = (f.value(x + e) - f.value(x - e)) / (2 * h)
    return g


def fd_hess(f, x, h=1e-4):
    H = np.zeros((2, 2))
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        H[i] = (f.grad(x + e) - f.grad(x - e)) / (2 * h)
    return 0.5 * (H + H.T)


FIELDS = [
    ConstantField(1.7),
    FourierField([(1, 0, 0.8, 0.0), (2, 3, 0.1, -0.4), (0, 1, 0.0, 0.3)]),
    RadialBumpField((1.0, 2.0), 2.0),
    RadialBumpField((3.0, 3.0), 1.5, amplitude=-2.0),
    ProductField(FourierField([(1, 1, 0.5, 0.2)]), RadialBumpField((2.0, 2.0), 2.5)),
]


@pytest.mark.parametrize("f", FIELDS, ids=lambda f: type(f).__name__)
def test_derivatives_match_finite_differences(f):
    pts = RNG.uniform(0, 2 * np.pi, size=(30, 2))
    for x in pts:
        g = f.grad(x)
        H = f.hess(x)
        assert np.allclose(g, fd_grad(f, x), atol=1e-6, rtol=1e-6)
        assert np.allclose(H, fd_hess(f, x), atol=5e-5, rtol=5e-5)


@pytest.mark.parametrize("f", FIELDS, ids=lambda f: type(f).__name__)
def test_periodicity(f):
    assert f.is_periodic()


def test_vectorised_evaluation_matches_pointwise():
    f = ProductField(FourierField([(1, 2, 0.3, 0.1)]), RadialBumpField((1.5, 4.0), 2.2))
    pts = RNG.uniform(0, 2 * np.pi, size=(4, 5, 2))
    v = f.value(pts)
    g = f.grad(pts)
    H = f.hess(pts)
    assert v.shape == (4, 5)
    assert g.shape == (4, 5, 2)
    assert H.shape == (4, 5, 2, 2)
    for i in range(4):
        for j in range(5):
            assert v[i, j] == pytest.approx(float(f.value(pts[i, j])), abs=0)
            assert np.array_equal(g[i, j], f.grad(pts[i, j]))


def test_bump_support_and_smoothness():
    b = RadialBumpField((np.pi, np.pi), 2.0)
    assert b.value(np.array([np.pi, np.pi])) == pytest.approx(1.0)
    # vanishes outside the support, including across the periodic seam
    far = np.array([np.pi + 2.5, np.pi])
    assert b.value(far) == 0.0
    assert np.all(b.grad(far) == 0.0)
    # flat to round-off at the support edge
    edge = np.array([np.pi + 2.0 - 1e-6, np.pi])
    assert abs(b.value(edge)) < 1e-200


def test_bump_center_regularity():
    b = RadialBumpField((1.0, 1.0), 1.0)
    x0 = np.array([1.0, 1.0])
    assert np.allclose(b.grad(x0), 0.0)
    H = b.hess(x0)
    # radially symmetric maximum: hessian is a negative multiple of I
    assert H[0, 0] == pytest.approx(H[1, 1])
    assert H[0, 1] == pytest.approx(0.0)
    assert H[0, 0] < 0


@settings(max_examples=50, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50))
def test_wrap_delta_is_minimal_image(d1, d2):
    d = wrap_delta(np.array([d1, d2]))
    assert np.all(d >= -np.pi - 1e-12)
    assert np.all(d < np.pi + 1e-12)
    r = np.mod(d - np.array([d1, d2]), 2 * np.pi)
    assert np.all(np.minimum(r, 2 * np.pi - r) < 1e-9)


def test_wrap_point_range():
    x = np.array([[7.0, -1.0], [100.0, 6.2831853]])
    w = wrap_point(x)
    assert np.all(w >= 0.0) and np.all(w < 2 * np.pi)


def test_sym_tensor_field_shapes_and_symmetry():
    T = SymTensorField(FourierField([(1, 0, 1.0, 0.0)]), ConstantField(0.25),
                       RadialBumpField((2.0, 2.0), 2.0))
    pts = RNG.uniform(0, 2 * np.pi, size=(7, 2))
    V = T.value(pts)
    assert V.shape == (7, 2, 2)
    assert np.array_equal(V[:, 0, 1], V[:, 1, 0])
    D = T.dx(pts)
    assert D.shape == (7, 2, 2, 2)
    assert np.array_equal(D[..., 0, 1], D[..., 1, 0])
    D2 = T.dx2(pts)
    assert D2.shape == (7, 2, 2, 2, 2)
    # derivative order: d/dx_k of the entry fields
    for k in range(2):
        e = np.zeros(2)
        e[k] = 1e-6
        fd = (T.value(pts + e) - T.value(pts - e)) / 2e-6
        assert np.allclose(D[:, k], fd, atol=1e-5)


def test_identity_tensor():
    T = SymTensorField.identity()
    x = RNG.uniform(0, 2 * np.pi, size=(3, 2))
    assert np.allclose(T.value(x), np.eye(2))
    assert np.allclose(T.dx(x), 0.0)
