import numpy as np
import pytest

from eigenecho.fields import FourierField, RadialBumpField, SymTensorField
from eigenecho.manifest import canonical_json
from eigenecho.measure import make_measure
from eigenecho.metric import build_torus_example
from eigenecho.moments import _values_for_nodes, decay_study, estimate_moments
from eigenecho.quantum import evaluate, flat_eigenfunction

X_OBS = np.array([1.0, 2.0])


@pytest.fixture(scope="module")
def measure3():
    return make_measure(3, 0.05)


def small_report(family, measure, **kw):
    args = dict(x=X_OBS, t=0.1, h=1 / 5, m=(3, 4), nodes_per_dim=5)
    args.update(kw)
    return estimate_moments(family, measure, **args)


def test_t_zero_is_degenerate(bump_family, measure3):
    rep = small_report(bump_family, measure3, t=0.0)
    phi, _ = flat_eigenfunction((3, 4), 1 / 5)
    val = evaluate(phi, X_OBS)
    assert abs(rep.variance_re) < 1e-18
    assert rep.mean_re == pytest.approx(np.real(val), abs=1e-14)
    for p in rep.p_list:
        assert rep.odd_moments[p] == pytest.approx(np.real(val) ** p, abs=1e-14)


def test_u_zero_node_reproduces_phase_law(bump_family):
    # the u = 0 quadrature node sees the exact unperturbed evolution
    t, h = 0.13, 1 / 5
    vals = _values_for_nodes(bump_family, np.array([3, 4]), h, 64, X_OBS, t,
                             np.zeros((1, 3)), 1e-10, 24, 20.0)
    phi, E = flat_eigenfunction((3, 4), h)
    expected = np.exp(-1j * t * E / h) * evaluate(phi, X_OBS)
    assert abs(vals[0] - expected) < 1e-9


def test_desk_scale_moment_structure(bump_family, measure3):
    # at moderate 1/h the deformation barely moves the value: the mean sits
    # near the unperturbed value and the raw second moment near |phi(x)|^2
    rep = small_report(bump_family, measure3)
    theta = 11.0 - 0.5  # <m, x> - t E / h
    assert rep.mean_re == pytest.approx(np.cos(theta) / (2 * np.pi), abs=5e-4)
    assert rep.second_moment_abs == pytest.approx(1 / (4 * np.pi**2), abs=2e-4)
    assert 0.0 <= rep.variance_re < 1e-4
    assert rep.mean_to_std_ratio > 0.2  # the literal mean has not decayed yet


def test_variance_identity_exact(bump_family, measure3):
    rep = small_report(bump_family, measure3)
    assert rep.variance_re == rep.second_moment_re - rep.mean_re**2


def test_reports_are_deterministic(bump_family, measure3):
    a = small_report(bump_family, measure3).to_dict()
    b = small_report(bump_family, measure3).to_dict()
    assert canonical_json(a) == canonical_json(b)


def test_worker_pool_matches_serial(bump_family, measure3):
    a = small_report(bump_family, measure3, workers=1).to_dict()
    b = small_report(bump_family, measure3, workers=2).to_dict()
    assert canonical_json(a) == canonical_json(b)


def test_refinement_stability(bump_family, measure3):
    # doubling the per-dim budget moves each tracked quantity by less than
    # the (conservative, nested-delta) error estimate
    r5 = small_report(bump_family, measure3, nodes_per_dim=5)
    r9 = small_report(bump_family, measure3, nodes_per_dim=9)
    checks = [
        (r5.mean_re, r9.mean_re, r5.mean_re_error),
        (r5.second_moment_abs, r9.second_moment_abs, r5.second_moment_abs_error),
        (r5.odd_moments[1], r9.odd_moments[1], r5.odd_moment_errors[1]),
        (r5.odd_moments[3], r9.odd_moments[3], r5.odd_moment_errors[3]),
    ]
    ok = sum(abs(a - b) <= err + 1e-12 for a, b, err in checks)
    assert ok >= 3


def test_qmc_path_for_larger_k():
    bump = ((1.0, 2.0), 2.5)
    b = RadialBumpField(*bump)
    extra = (
        SymTensorField(0.3 * b * FourierField([(1, 0, 1.0, 0.0)]),
                       0.0, -0.3 * b * FourierField([(1, 0, 1.0, 0.0)])),
        SymTensorField(0.0, 0.3 * b * FourierField([(0, 1, 0.0, 1.0)]), 0.0),
    )
    fam = build_torus_example(1.0, 0.0, 0.0, 1.0, 1.0, epsilon=0.04, bump=bump,
                              extra_directions=extra, label="torus-k5")
    meas = make_measure(5, 0.04)
    rep = estimate_moments(fam, meas, X_OBS, t=0.05, h=1.0, m=(1, 0),
                           method="qmc", qmc_m=5, qmc_replicates=3, seed=7)
    assert rep.method == "qmc"
    assert rep.node_count > 0
    assert rep.second_moment_abs == pytest.approx(1 / (4 * np.pi**2), rel=0.05)
    rep2 = estimate_moments(fam, meas, X_OBS, t=0.05, h=1.0, m=(1, 0),
                            method="qmc", qmc_m=5, qmc_replicates=3, seed=7)
    assert canonical_json(rep.to_dict()) == canonical_json(rep2.to_dict())


def test_decay_study_shape(bump_family, measure3):
    study = decay_study(bump_family, measure3, X_OBS, 0.1,
                        [(1, 0), (2, 0), (3, 0)], E=1.0, p_list=(1, 3),
                        nodes_per_dim=5)
    assert study.h_list == [1.0, 0.5, pytest.approx(1 / 3)]
    assert set(study.slopes) == {1, 3}
    assert len(study.rows()) == 6
    assert study.second_abs_ratio >= 1.0


def test_decay_study_needs_three_points(bump_family, measure3):
    with pytest.raises(ValueError, match="3 lattice"):
        decay_study(bump_family, measure3, X_OBS, 0.1, [(1, 0), (2, 0)], E=1.0)
