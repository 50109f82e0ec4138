import numpy as np
import pytest

from eigenecho.errors import CausticError
from eigenecho.fields import FourierField
from eigenecho.metric import build_torus_example
from eigenecho.shell import liouville_mass, shell_quadrature


def test_total_mass_flat(trivial_family):
    # closed-form co-area mass for |xi|^2 on the flat 2-torus: (2pi)^2 pi,
    # independent of E
    quad = shell_quadrature(trivial_family, E=1.0, resolution=(16, 24))
    assert quad.total_mass == pytest.approx((2 * np.pi) ** 2 * np.pi, rel=1e-12)
    quad2 = shell_quadrature(trivial_family, E=4.0, resolution=(16, 24))
    assert quad2.total_mass == pytest.approx(quad.total_mass, rel=1e-12)


def test_normalisation_and_positivity(trivial_family):
    quad = shell_quadrature(trivial_family, E=1.0, resolution=(12, 16))
    assert np.all(quad.weights > 0)
    assert quad.average(np.ones(quad.y.shape[0])) == pytest.approx(1.0, rel=1e-13)


def test_mean_zero_periodic_integrand(trivial_family):
    quad = shell_quadrature(trivial_family, E=1.0, resolution=(20, 8))
    vals = np.cos(quad.y[:, 0])
    assert abs(quad.integrate(vals)) < 1e-10


def test_nodes_on_shell_with_potential():
    V = FourierField([(1, 0, 0.2, 0.0)])
    fam = build_torus_example(1.0, 0.0, 0.0, 1.0, 1.0, epsilon=0.05, potential=V)
    quad = shell_quadrature(fam, E=1.0, resolution=(16, 16))
    p0 = fam.symbol(np.zeros(3), quad.y, quad.eta)
    assert np.max(np.abs(p0 - 1.0)) < 1e-12
    # mass unchanged: the fiber shrinks but the co-area weight compensates
    assert quad.total_mass == pytest.approx((2 * np.pi) ** 2 * np.pi, rel=1e-12)


def test_caustic_margin_enforced():
    V = FourierField([(1, 0, 0.95, 0.0)])
    fam = build_torus_example(1.0, 0.0, 0.0, 1.0, 1.0, epsilon=0.05, potential=V)
    with pytest.raises(CausticError):
        shell_quadrature(fam, E=1.0, resolution=(16, 16))


def test_cache_roundtrip(tmp_path, trivial_family):
    q1 = shell_quadrature(trivial_family, E=1.0, resolution=(8, 8), cache_dir=tmp_path)
    q2 = shell_quadrature(trivial_family, E=1.0, resolution=(8, 8), cache_dir=tmp_path)
    assert np.array_equal(q1.y, q2.y)
    assert np.array_equal(q1.eta, q2.eta)
    assert np.array_equal(q1.weights, q2.weights)
    assert len(list(tmp_path.glob("shell_*.npz"))) == 1


def test_liouville_mass_helper(trivial_family):
    assert liouville_mass(trivial_family, 1.0) == pytest.approx(4 * np.pi**3)
