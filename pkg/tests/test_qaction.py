import math

import numpy as np
import pytest

from qchaos.errors import GridError, ModelError
from qchaos.models import ActionParams, Grid2D, PotentialCoeffs, ScalarField2D, TransitionRecord
from qchaos.utils.qaction import (
    FitDataset,
    compare_fields,
    endpoint_momenta,
    euclidean_energy_profile,
    fit_error,
    fit_quantum_action,
    predicted_amplitude,
    quantum_potential_field,
    riccati_quantum_potential,
    riccati_residual,
    solve_euclidean_bvp,
    split_normalization,
    susy_partner_1d,
    verify_energy_balance,
    verify_momentum_condition,
)
from qchaos.utils.schrodinger2d import ground_state_1d


def harmonic_action(a, b, T, mass=1.0, omega=1.0):
    """Classical Euclidean action of the isotropic oscillator."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    factor = mass * omega / (2.0 * math.sinh(omega * T))
    return factor * ((a @ a + b @ b) * math.cosh(omega * T) - 2.0 * a @ b)


def mehler_kernel(a, b, T, mass=1.0, omega=1.0):
    """Exact Euclidean propagator of the 2-D isotropic oscillator."""
    return mass * omega / (2.0 * math.pi * math.sinh(omega * T)) * math.exp(-harmonic_action(a, b, T, mass, omega))


def mehler_records(points, T, delta):
    stencil = [(x + dx, y + dy) for x, y in points
               for dx, dy in ((delta, 0.0), (-delta, 0.0), (0.0, delta), (0.0, -delta))]
    return [TransitionRecord(a, b, T, mehler_kernel(a, b, T)) for a in points for b in list(points) + stencil]


# --- boundary value problem ---------------------------------------------------

def test_static_path_at_the_minimum():
    params = ActionParams(coeffs=PotentialCoeffs(v0=0.3, v2=0.5, v22=0.25))
    traj = solve_euclidean_bvp(params, (0.0, 0.0), (0.0, 0.0), 4.5, n_nodes=65)
    np.testing.assert_allclose(traj.positions, 0.0, atol=1e-12)
    assert traj.action_value == pytest.approx(0.3 * 4.5)


def test_harmonic_action_matches_closed_form(harmonic):
    a, b, T = (1.0, 0.5), (-0.5, 1.0), 4.5
    traj = solve_euclidean_bvp(harmonic, a, b, T, n_nodes=257, richardson=True)
    assert traj.action_value == pytest.approx(harmonic_action(a, b, T), rel=1e-6)

    t = traj.times[:, None]
    exact = (np.sinh(T - t) * np.array(a) + np.sinh(t) * np.array(b)) / math.sinh(T)
    np.testing.assert_allclose(traj.positions, exact, atol=5e-4)


def test_free_particle_amplitude_is_the_heat_kernel():
    T, mass = 1.5, 1.0
    free = ActionParams(mass=mass, log_norm=math.log(mass / (2.0 * math.pi * T)))
    a, b = (0.2, -0.4), (1.0, 0.7)
    distance2 = (b[0] - a[0]) ** 2 + (b[1] - a[1]) ** 2
    expected = mass / (2.0 * math.pi * T) * math.exp(-mass * distance2 / (2.0 * T))
    assert predicted_amplitude(free, a, b, T, n_nodes=33) == pytest.approx(expected, rel=1e-12)


def test_v0_shift_scales_the_amplitude(pullen_edmonds):
    a, b, T, delta = (0.5, 0.2), (-0.3, 0.9), 2.0, 0.37
    base = predicted_amplitude(pullen_edmonds, a, b, T, n_nodes=65)
    shifted = ActionParams(coeffs=pullen_edmonds.coeffs.shifted(delta))
    assert predicted_amplitude(shifted, a, b, T, n_nodes=65) == pytest.approx(base * math.exp(-delta * T), rel=1e-9)


def test_action_is_symmetric_in_the_end_points(pullen_edmonds):
    a, b = (1.0, 0.5), (-0.3, 1.2)
    forward = solve_euclidean_bvp(pullen_edmonds, a, b, 4.5, n_nodes=129)
    backward = solve_euclidean_bvp(pullen_edmonds, b, a, 4.5, n_nodes=129)
    assert forward.action_value == pytest.approx(backward.action_value, rel=1e-9)
    np.testing.assert_allclose(forward.positions, backward.positions[::-1], atol=1e-8)


def test_euclidean_energy_is_conserved_along_the_path(pullen_edmonds):
    traj = solve_euclidean_bvp(pullen_edmonds, (1.0, 0.5), (-0.3, 1.2), 4.5, n_nodes=257)
    energy = euclidean_energy_profile(pullen_edmonds, traj)
    assert np.ptp(energy) < 5e-3 * (1.0 + np.max(np.abs(energy)))


def test_endpoint_momentum_is_the_action_gradient(pullen_edmonds):
    a, b, T, eps = (0.4, -0.2), (0.8, 0.6), 3.0, 1e-5
    traj = solve_euclidean_bvp(pullen_edmonds, a, b, T, n_nodes=129)
    _, p_end = endpoint_momenta(pullen_edmonds, traj)
    for axis in range(2):
        shift = np.zeros(2)
        shift[axis] = eps
        plus = solve_euclidean_bvp(pullen_edmonds, a, tuple(np.array(b) + shift), T, n_nodes=129)
        minus = solve_euclidean_bvp(pullen_edmonds, a, tuple(np.array(b) - shift), T, n_nodes=129)
        derivative = (plus.action_value - minus.action_value) / (2.0 * eps)
        assert p_end[axis] == pytest.approx(derivative, rel=1e-5, abs=1e-7)


def test_action_converges_quadratically_in_the_node_count(pullen_edmonds):
    a, b, T = (1.0, 0.5), (-0.5, 1.0), 4.5
    actions = [solve_euclidean_bvp(pullen_edmonds, a, b, T, n_nodes=n).action_value for n in (65, 129, 257)]
    coarse_change = actions[0] - actions[1]
    fine_change = actions[1] - actions[2]
    assert coarse_change / fine_change == pytest.approx(4.0, rel=0.1)

    reference = solve_euclidean_bvp(pullen_edmonds, a, b, T, n_nodes=1025).action_value
    extrapolated = solve_euclidean_bvp(pullen_edmonds, a, b, T, n_nodes=65, richardson=True).action_value
    assert abs(extrapolated - reference) < 0.1 * abs(actions[0] - reference)


def test_convex_potential_has_a_single_stationary_path(harmonic):
    traj = solve_euclidean_bvp(harmonic, (1.0, 0.5), (-0.5, 1.0), 4.5, n_nodes=129, check_basins=True)
    assert traj.alternate_action is None


def test_double_well_reports_a_second_stationary_path(caplog):
    double_well = ActionParams(coeffs=PotentialCoeffs(v2=-1.0, v4=1.0))
    alternates = []
    with caplog.at_level('WARNING', logger='qchaos.utils.qaction'):
        for seed in range(5):
            traj = solve_euclidean_bvp(double_well, (0.0, 0.0), (0.0, 0.0), 4.5, n_nodes=129,
                                       check_basins=True, seed=seed)
            np.testing.assert_allclose(traj.positions, 0.0, atol=1e-12)
            assert traj.action_value == pytest.approx(0.0, abs=1e-12)
            alternates.append(traj.alternate_action)
    assert any(value is not None for value in alternates)
    assert "Second stationary path" in caplog.text


def test_bvp_rejects_invalid_input(harmonic):
    with pytest.raises(ModelError):
        solve_euclidean_bvp(harmonic, (0, 0), (1, 0), 0.0)
    with pytest.raises(ModelError):
        solve_euclidean_bvp(harmonic, (0, 0), (1, 0), 1.0, n_nodes=8)


# --- fit ------------------------------------------------------------------------

def _self_generated(params, T, n_nodes):
    points = [(x, y) for x in (-1.0, -0.3, 0.4, 1.0) for y in (-0.8, 0.1, 0.9)]
    records = [
        TransitionRecord(a, b, T, predicted_amplitude(params, a, b, T, n_nodes=n_nodes))
        for a in points[:4] for b in points
    ]
    return FitDataset(records, (-1.0, 1.0))


def test_fit_error_vanishes_on_self_generated_data(pullen_edmonds):
    params = ActionParams(mass=1.0, log_norm=-1.2, coeffs=pullen_edmonds.coeffs)
    data = _self_generated(params, 1.0, 33)
    assert fit_error(params, data, n_nodes=33) < 1e-20
    assert fit_error(params, data, mode='raw', n_nodes=33) < 1e-20
    other = ActionParams(mass=1.0, log_norm=-1.2, coeffs=PotentialCoeffs.classical(0.5, 0.3))
    assert fit_error(other, data, n_nodes=33) > 1e-8


def test_fit_error_is_smallest_at_the_oscillator_action(harmonic):
    T = 4.5
    axis = (-1.0, -0.3, 0.4, 1.0)
    points = [(x, y) for x in axis for y in axis]
    data = FitDataset([TransitionRecord(a, b, T, mehler_kernel(a, b, T)) for a in points for b in points])
    exact = ActionParams(mass=1.0, log_norm=math.log(1.0 / (2.0 * math.pi * math.sinh(T))),
                         coeffs=harmonic.coeffs)
    best = fit_error(exact, data, n_nodes=257, richardson=True)
    assert best < 1e-9

    perturbed = [
        ActionParams(mass=1.001, log_norm=exact.log_norm, coeffs=exact.coeffs),
        ActionParams(mass=1.0, log_norm=exact.log_norm + 1e-3, coeffs=exact.coeffs),
    ]
    for name in ('v2', 'v22', 'v4', 'v11'):
        for step in (-1e-3, 1e-3):
            coeffs = PotentialCoeffs.from_dict({**exact.coeffs.to_dict(), name: getattr(exact.coeffs, name) + step})
            perturbed.append(ActionParams(mass=1.0, log_norm=exact.log_norm, coeffs=coeffs))
    for params in perturbed:
        assert fit_error(params, data, n_nodes=257, richardson=True) > 10.0 * best


@pytest.mark.slow
def test_fit_recovers_a_known_action(pullen_edmonds):
    truth = ActionParams(mass=1.05, log_norm=-1.0, coeffs=PotentialCoeffs(v2=0.55, v22=0.2, v4=0.01))
    data = _self_generated(truth, 1.0, 33)
    result = fit_quantum_action(data, pullen_edmonds, n_nodes=33, max_nfev=100)
    assert result.residual < 1e-10
    assert result.params.mass == pytest.approx(1.05, abs=1e-3)
    assert result.params.coeffs.v2 == pytest.approx(0.55, abs=1e-3)
    assert result.params.coeffs.v22 == pytest.approx(0.2, abs=1e-3)
    assert result.params.coeffs.v4 == pytest.approx(0.01, abs=1e-3)
    assert result.c == pytest.approx(-1.0, abs=1e-3)
    assert [row['parameter'] for row in result.to_table(pullen_edmonds)] == [
        'mass', 'v0', 'v11', 'v2', 'v22', 'v13', 'v4', 'v24', 'v44', 'log_norm']


def test_fit_dataset_validation():
    with pytest.raises(ModelError, match="one T"):
        FitDataset([TransitionRecord((0, 0), (1, 0), 1.0, 0.1), TransitionRecord((0, 0), (1, 0), 2.0, 0.1)])
    with pytest.raises(ModelError, match="10 distinct"):
        FitDataset([TransitionRecord((0, 0), (float(k), 0), 1.0, 0.1) for k in range(1, 5)])
    with pytest.raises(ModelError, match="positive"):
        FitDataset([TransitionRecord((0, 0), (float(k), 0), 1.0, 0.0) for k in range(1, 12)])


def test_split_normalization():
    T = 4.5
    log_norm = math.log(1.0 / math.pi)
    assert split_normalization(1.0, 0.5, log_norm - T * 1.0, T) == pytest.approx((log_norm, 1.0))
    assert split_normalization(1.0, -0.1, 0.7, T) == (0.7, 0.0)


# --- Feynman-Kac conditions on the exact oscillator kernel --------------------

def test_momentum_and_energy_conditions_on_the_mehler_kernel(harmonic):
    points = [(x, y) for x in (-0.5, 0.0, 0.5) for y in (-0.5, 0.0, 0.5)]
    records = mehler_records(points, 4.5, 0.05)
    assert verify_momentum_condition(harmonic, records, 0.05, n_nodes=257) < 1e-3
    assert verify_energy_balance(harmonic, records, 0.05) < 1e-8


def test_energy_balance_detects_a_wrong_potential(harmonic):
    points = [(x, y) for x in (-0.5, 0.0, 0.5) for y in (-0.5, 0.0, 0.5)]
    records = mehler_records(points, 4.5, 0.05)
    wrong = ActionParams(coeffs=PotentialCoeffs(v2=0.7))
    assert verify_energy_balance(wrong, records, 0.05) > 0.1


# --- Riccati route --------------------------------------------------------------

def _harmonic_psi(grid):
    X, Y = grid.mesh()
    return ScalarField2D(grid, np.exp(-0.5 * (X ** 2 + Y ** 2)) / math.sqrt(math.pi))


def test_riccati_potential_of_the_oscillator_is_exact(harmonic):
    grid = Grid2D.square(4.0, 41)
    riccati = riccati_quantum_potential(_harmonic_psi(grid))
    fitted = quantum_potential_field(harmonic, grid)
    assert compare_fields(riccati, fitted, riccati.valid()) < 1e-10
    assert not riccati.valid()[0, 0]


def test_riccati_residual_and_energy_shift(harmonic):
    grid = Grid2D.square(4.0, 41)
    psi = _harmonic_psi(grid)
    residual = riccati_residual(psi, harmonic, 1.0)
    assert residual.rms() < 1e-10
    shifted = riccati_residual(psi, harmonic, 1.25)
    np.testing.assert_allclose(shifted.values[shifted.valid()], 2.0 * 0.25, atol=1e-10)


def test_compare_fields_needs_one_grid():
    a = ScalarField2D(Grid2D.square(1.0, 16), np.ones((16, 16)))
    b = ScalarField2D(Grid2D.square(2.0, 16), np.ones((16, 16)))
    with pytest.raises(GridError):
        compare_fields(a, b)


# --- SUSY partner ---------------------------------------------------------------

def test_susy_partner_of_the_oscillator():
    x = np.linspace(-6.0, 6.0, 3001)
    psi = np.exp(-x ** 2 / 4.0)
    partner = susy_partner_1d(x, psi, x ** 2 / 4.0 - 0.5)
    mask = partner.mask
    np.testing.assert_allclose(partner.w_s[mask], x[mask] / 2.0, atol=1e-3)
    np.testing.assert_allclose(partner.v_plus[mask], x[mask] ** 2 / 4.0 + 0.5, atol=1e-3)
    assert partner.convention_deviation < 1e-3
    assert partner.riccati_defect < 1e-3


def test_susy_partner_from_the_discrete_ground_state():
    x = np.linspace(-10.0, 10.0, 2001)
    v = x ** 2 / 4.0
    psi, e0 = ground_state_1d(x, v, mass=0.5)
    assert e0 == pytest.approx(0.5, abs=1e-4)
    partner = susy_partner_1d(x, psi, v - e0)
    central = partner.mask & (np.abs(x) < 4.0)
    np.testing.assert_allclose(partner.v_plus[central], x[central] ** 2 / 4.0 + 0.5, atol=1e-2)
