import numpy as np
import pytest

from eigenecho.errors import FamilyError
from eigenecho.quantum import (
    GAUGE_WEIGHTED,
    build_operator,
    default_grid_size,
    evaluate,
    flat_eigenfunction,
    inner_reference,
    load_wave,
    loschmidt_echo,
    norm_state,
    power_iteration,
    propagate,
    save_wave,
)

RNG = np.random.default_rng(5)
U_SAMPLE = np.array([0.02, 0.01, 0.03])


def band_limited_state(N, h, modes, seed=0):
    rng = np.random.default_rng(seed)
    from eigenecho.quantum import WaveState, grid_points

    X = grid_points(N)
    amps = np.zeros((N, N), dtype=complex)
    for m in modes:
        c = rng.normal() + 1j * rng.normal()
        amps += c * np.exp(1j * (m[0] * X[..., 0] + m[1] * X[..., 1]))
    amps /= np.sqrt(np.sum(np.abs(amps) ** 2) * (2 * np.pi / N) ** 2)
    return WaveState(amps, h)


# -- grid rule and eigenfunctions ----------------------------------------


def test_default_grid_size():
    assert default_grid_size((3, 4)) == 64
    assert default_grid_size((5, 12)) == 128
    assert default_grid_size((7, 24)) == 256


def test_flat_eigenfunction_energy():
    _, E = flat_eigenfunction((3, 4), 1 / 5)
    assert E == pytest.approx(1.0)
    state, E1 = flat_eigenfunction((1, 0), 1.0)
    assert E1 == pytest.approx(1.0)
    assert evaluate(state, np.zeros(2)) == pytest.approx(1 / (2 * np.pi))


def test_flat_eigenfunction_norm_exact():
    for m, N in [((3, 4), 10), ((3, 4), 64), ((1, 0), 4)]:
        state, _ = flat_eigenfunction(m, 0.2, N=N)
        assert norm_state(state) == pytest.approx(1.0, abs=1e-14)


def test_unresolved_grid_rejected():
    with pytest.raises(FamilyError):
        flat_eigenfunction((3, 4), 0.2, N=6)


# -- operator -------------------------------------------------------------


def test_operator_diagonal_on_fourier_modes(trivial_family):
    h, N = 0.2, 32
    handle = build_operator(trivial_family, np.zeros(3), h, N)
    for m in [(3, 4), (0, 1), (-5, 2)]:
        state, E = flat_eigenfunction(m, h, N)
        out = handle.apply(state.amplitudes)
        assert np.allclose(out, E * state.amplitudes, atol=1e-12)


def test_hermiticity_defect(bump_family):
    h, N = 0.2, 32
    handle = build_operator(bump_family, U_SAMPLE, h, N)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        f = rng.normal(size=(N, N)) + 1j * rng.normal(size=(N, N))
        g = rng.normal(size=(N, N)) + 1j * rng.normal(size=(N, N))
        lhs = np.vdot(g, handle.apply(f))
        rhs = np.vdot(handle.apply(g), f)
        assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(f) * np.linalg.norm(g)


def test_spectral_radius_dominates_rayleigh(bump_family):
    handle = build_operator(bump_family, U_SAMPLE, 0.2, 32)
    rq = power_iteration(handle, n_iter=50)
    assert handle.spectral_radius >= rq
    # and the bound is not absurdly loose
    assert handle.spectral_radius <= 4.0 * rq


# -- propagation ----------------------------------------------------------


def test_eigenvector_phase_law(constant_family):
    # u = 0: the output is exactly e^{-i t E / h} phi_h
    h, N, t = 1 / 5, 64, 0.7
    handle = build_operator(constant_family, np.zeros(3), h, N)
    state, E = flat_eigenfunction((3, 4), h, N)
    out = propagate(state, handle, t, tol=1e-10)
    expected = np.exp(-1j * t * E / h) * state.amplitudes
    assert np.max(np.abs(out.reference_values() - expected)) <= 1e-8


def test_norm_drift(bump_family):
    h, N, t = 1 / 5, 64, 0.1
    handle = build_operator(bump_family, U_SAMPLE, h, N)
    state, _ = flat_eigenfunction((3, 4), h, N)
    psi0 = handle.sqrt_rho * state.amplitudes
    n0 = np.sqrt(np.sum(np.abs(psi0) ** 2) * (2 * np.pi / N) ** 2)
    out = propagate(state, handle, t, tol=1e-10)
    assert abs(norm_state(out) - n0) <= 1e-9


def test_semigroup_property(bump_family):
    h, N, t = 1 / 5, 64, 0.1
    handle = build_operator(bump_family, U_SAMPLE, h, N)
    state, _ = flat_eigenfunction((3, 4), h, N)
    once = propagate(state, handle, t, tol=1e-10)
    twice = propagate(propagate(state, handle, t / 2, tol=1e-10), handle, t / 2,
                      tol=1e-10)
    assert np.max(np.abs(once.amplitudes - twice.amplitudes)) <= 1e-7


def test_unitarity_of_pairings(bump_family):
    h, N, t = 0.2, 32, 0.15
    handle = build_operator(bump_family, U_SAMPLE, h, N)
    cell = (2 * np.pi / N) ** 2
    for seed in range(5):
        s1 = band_limited_state(N, h, [(1, 0), (2, -1), (0, 3)], seed)
        s2 = band_limited_state(N, h, [(1, 1), (-2, 0), (3, 1)], seed + 100)
        p1 = handle.sqrt_rho * s1.amplitudes
        p2 = handle.sqrt_rho * s2.amplitudes
        before = np.vdot(p2, p1) * cell
        o1 = propagate(s1, handle, t, tol=1e-10)
        o2 = propagate(s2, handle, t, tol=1e-10)
        after = np.vdot(o2.amplitudes, o1.amplitudes) * cell
        assert abs(after - before) <= 1e-8


# -- evaluation -----------------------------------------------------------


def test_evaluate_grid_points_after_ungauging(bump_family):
    h, N = 1 / 5, 64
    handle = build_operator(bump_family, U_SAMPLE, h, N)
    state, _ = flat_eigenfunction((3, 4), h, N)
    out = propagate(state, handle, 0.1, tol=1e-10)
    from eigenecho.quantum import grid_points

    X = grid_points(N)
    idx = [(0, 0), (5, 40), (33, 12)]
    pts = np.array([X[i, j] for i, j in idx])
    vals = evaluate(out, pts)
    ref = out.reference_values()
    for (i, j), v in zip(idx, vals):
        assert abs(v - ref[i, j]) < 1e-10


def test_evaluate_resolution_study(bump_family):
    # N -> 2N: pointwise value of the propagated state is grid-converged
    # (measured shift ~2e-8, set by the deformation's spectral tail)
    h, t = 1 / 5, 0.1
    x = np.array([1.0, 2.0])
    vals = []
    for N in (64, 128):
        handle = build_operator(bump_family, U_SAMPLE, h, N)
        state, _ = flat_eigenfunction((3, 4), h, N)
        out = propagate(state, handle, t, tol=1e-10)
        vals.append(evaluate(out, x))
    assert abs(vals[0] - vals[1]) <= 1e-7


def test_semiclassical_band_localisation(bump_family):
    # Fourier mass outside the energy band decays as h shrinks
    from eigenecho.metric import estimate_band_constant

    E, t = 1.0, 0.1
    c = estimate_band_constant(bump_family, E, t=t)
    width = (c + 1.0) * 0.25  # energy-cutoff width; a free small parameter
    fractions = []
    for m, h in [((3, 4), 1 / 5), ((5, 12), 1 / 13)]:
        N = default_grid_size(m)
        handle = build_operator(bump_family, U_SAMPLE, h, N)
        state, _ = flat_eigenfunction(m, h, N)
        out = propagate(state, handle, t, tol=1e-10)
        F = np.abs(np.fft.fft2(out.reference_values())) ** 2
        k = np.fft.fftfreq(N, d=1.0 / N)
        K1, K2 = np.meshgrid(k, k, indexing="ij")
        energies = h**2 * (K1**2 + K2**2)
        outside = np.abs(energies - E) > width
        fractions.append(float(np.sum(F[outside]) / np.sum(F)))
    assert fractions[1] < fractions[0]


# -- Loschmidt echo -------------------------------------------------------


def test_echo_unperturbed_is_unity(constant_family):
    rows = loschmidt_echo(constant_family, np.zeros(3), 1 / 5, (3, 4),
                          np.linspace(0.0, 0.5, 6))
    assert rows[0, 1] == 1.0
    assert np.max(np.abs(rows[:, 1] - 1.0)) <= 1e-8


def test_echo_range_and_decay(bump_family):
    rows = loschmidt_echo(bump_family, U_SAMPLE, 1 / 5, (3, 4),
                          np.linspace(0.0, 0.5, 11))
    assert np.all(rows[:, 1] >= 0.0)
    assert np.all(rows[:, 1] <= 1.0 + 1e-8)
    # perturbed evolution loses overlap (reported, not a paper value)
    assert rows[-1, 1] < 1.0


def test_echo_requires_increasing_grid(constant_family):
    with pytest.raises(FamilyError):
        loschmidt_echo(constant_family, np.zeros(3), 0.2, (1, 0), [0.2, 0.1])


# -- snapshots ------------------------------------------------------------


def test_wave_snapshot_roundtrip(tmp_path, bump_family):
    h, N = 1 / 5, 64
    handle = build_operator(bump_family, U_SAMPLE, h, N)
    state, _ = flat_eigenfunction((3, 4), h, N)
    out = propagate(state, handle, 0.1, tol=1e-10)
    path = tmp_path / "state.wave"
    save_wave(path, out, family_hash="abc123")
    loaded, header = load_wave(path)
    assert header["family_hash"] == "abc123"
    assert header["gauge"] == GAUGE_WEIGHTED
    assert np.array_equal(loaded.amplitudes, out.amplitudes)
    assert loaded.h == out.h
