import numpy as np
import pytest

from eigenecho.errors import NewtonOutOfBox
from eigenecho.fields import FourierField, wrap_delta
from eigenecho.hamflow import flow_batch
from eigenecho.metric import build_torus_example
from eigenecho.uprime import (
    STATUS_OK,
    embed_parameters,
    solve_spatial_start_batch,
    solve_uprime,
    solve_uprime_batch,
)

RNG = np.random.default_rng(23)


def shell_nodes(n, E=1.0):
    y = RNG.uniform(0, 2 * np.pi, size=(n, 2))
    th = RNG.uniform(0, 2 * np.pi, size=n)
    eta = np.sqrt(E) * np.stack([np.cos(th), np.sin(th)], axis=-1)
    return y, eta


def test_embed_parameters():
    U = embed_parameters(np.array([[0.1, 0.2]]), np.array([0.3]), (0, 1), 3)
    assert np.allclose(U, [[0.1, 0.2, 0.3]])
    U = embed_parameters(np.array([[0.1, 0.2]]), np.array([0.3]), (0, 2), 3)
    assert np.allclose(U, [[0.1, 0.3, 0.2]])


def test_consistency_at_zero(constant_family):
    # x taken as the unperturbed backward endpoint: the root is u' = 0
    y, eta = shell_nodes(1)
    t = 0.1
    res = flow_batch(constant_family, np.zeros(3), -t,
                     np.concatenate([y, eta], axis=1), tol=1e-12,
                     want_monodromy=False, want_usens=False)
    x = res.endpoints[0, :2]
    sol = solve_uprime(constant_family, x, np.array([0.0]), t, y[0], eta[0])
    assert np.allclose(sol.u_prime, 0.0, atol=1e-12)
    assert sol.residual <= 1e-10


@pytest.mark.parametrize("fam", ["constant_family", "bump_family"])
def test_roundtrip_recovery(fam, request):
    # plant roots u'* inside the half box, derive the matching shell start
    # points around a fixed observation point, and recover the roots from 0
    family = request.getfixturevalue(fam)
    t, eps = 0.1, family.epsilon
    n = 200
    x = np.array([1.0, 2.0])
    th = RNG.uniform(0, 2 * np.pi, size=n)
    eta = np.stack([np.cos(th), np.sin(th)], axis=-1)
    up_true = RNG.uniform(-eps / 2, eps / 2, size=(n, 2))
    u_dd = np.array([0.01])
    U = embed_parameters(up_true, u_dd, (0, 1), 3)
    Y, _, _, _, status = solve_spatial_start_batch(family, U, t, x, ETA=eta)
    assert np.all(status == STATUS_OK)
    UP, J, rn, status = solve_uprime_batch(family, x, u_dd, t, Y, eta)
    assert np.all(status == STATUS_OK)
    assert np.max(rn) <= 1e-10
    assert np.max(np.abs(UP - up_true)) <= 1e-8


def test_jacobian_nondegeneracy_scaling(bump_family):
    # Newton Jacobian = -t * d_u' d_xi p_u * (1 + O(t)) with the limit at the
    # observation point; Richardson over a t-halving pair removes the O(t)
    x = np.array([1.0, 2.0])
    eta = np.array([0.8, -0.6])
    u_dd = np.array([0.02])
    up_true = np.array([0.012, -0.017])
    target = np.linalg.det(bump_family.mixed_hessian(x, eta, (0, 1)))
    U = embed_parameters(up_true[None], u_dd, (0, 1), 3)
    ratios = []
    ts = [0.05, 0.025, 0.0125]
    for t in ts:
        Y, _, _, _, status = solve_spatial_start_batch(bump_family, U, t, x,
                                                       ETA=eta[None])
        assert status[0] == STATUS_OK
        sol = solve_uprime(bump_family, x, u_dd, t, Y[0], eta)
        assert np.allclose(sol.u_prime, up_true, atol=1e-8)
        ratios.append(np.linalg.det(sol.jacobian) / t**2)
    raw_dev = abs(ratios[-1] - target) / abs(target)
    # observed order ~2 (the remainder of the t-linearisation is quadratic)
    p = np.log2((ratios[0] - ratios[1]) / (ratios[1] - ratios[2]))
    assert p >= 1.5
    rich = ratios[2] + (ratios[2] - ratios[1]) / (2**p - 1)
    rich_dev = abs(rich - target) / abs(target)
    assert raw_dev <= 0.05
    assert rich_dev <= raw_dev


def test_unreachable_target_is_out_of_box(constant_family):
    y, eta = shell_nodes(1)
    x = np.mod(y[0] + np.array([2.0, 2.0]), 2 * np.pi)
    with pytest.raises(NewtonOutOfBox):
        solve_uprime(constant_family, x, np.array([0.0]), 0.1, y[0], eta[0])


def test_spatial_start_fixed_covector(constant_family):
    # constant coefficients: the start point solves y = x + 2 t A_u eta exactly
    t = 0.05
    xi0 = np.array([0.6, 0.8])
    x = np.array([1.0, 2.0])
    ups = RNG.uniform(-0.02, 0.02, size=(6, 2))
    U = embed_parameters(ups, np.array([0.01]), (0, 1), 3)
    Y, F_y, F_up, eta, status = solve_spatial_start_batch(
        constant_family, U, t, x, ETA=np.tile(xi0, (6, 1)))
    assert np.all(status == STATUS_OK)
    for i in range(6):
        A = constant_family.ginv(x, U[i])
        expect = x + 2 * t * A @ xi0
        assert np.allclose(wrap_delta(Y[i] - expect), 0.0, atol=1e-10)
        assert np.allclose(F_y[i], np.eye(2), atol=1e-9)
        # d_u' (pi G^{-t}) = -2 t [h_1 eta, h_2 eta] for the linear flow
        H = constant_family.direction_values(Y[i])
        expect_J = -2 * t * np.stack([H[0] @ xi0, H[1] @ xi0], axis=-1)
        assert np.allclose(F_up[i], expect_J, atol=1e-9)


def test_spatial_start_on_shell_with_potential():
    V = FourierField([(1, 0, 0.15, 0.0), (0, 1, 0.0, 0.1)])
    fam = build_torus_example(1.0, 0.0, 0.0, 1.0, 1.0, epsilon=0.05, potential=V,
                              label="potential-family")
    E, t = 1.0, 0.08
    theta = np.array([0.3, 1.9, 4.4])
    U = np.tile(np.array([0.01, -0.02, 0.015]), (3, 1))
    x = np.array([2.5, 3.1])
    Y, F_y, F_up, eta, status = solve_spatial_start_batch(
        fam, U, t, x, theta=theta, E=E)
    assert np.all(status == STATUS_OK)
    # nodes really sit on the shell and flow back to x
    p0 = fam.symbol(np.zeros(3), Y, eta)
    assert np.max(np.abs(p0 - E)) < 1e-10
    res = flow_batch(fam, U, -t, np.concatenate([Y, eta], axis=1), tol=1e-12,
                     want_monodromy=False, want_usens=False)
    assert np.max(np.abs(wrap_delta(res.endpoints[:, :2] - x))) < 1e-9
