import math

import numpy as np
import pytest
from scipy.stats import chisquare

from qchaos.errors import ModelError, ShellSamplingError, TrajectoryEscapeError
from qchaos.models import ActionParams, PhaseState, PotentialCoeffs, eval_potential, hamiltonian
from qchaos.utils.dynamics import (
    SectionSpec,
    absolute_energy,
    accessible_box,
    integrate,
    lyapunov_finite_time,
    lyapunov_two_trajectory,
    member_seed,
    poincare_section,
    run_ensemble,
    sample_energy_shell,
    sample_energy_shell_many,
    section_fixed_points,
)


def test_harmonic_orbit_is_periodic(harmonic):
    s0 = PhaseState(1.0, -0.5, 0.2, 0.7)
    states = integrate(harmonic, s0, 2.0 * math.pi, dt=1e-3)
    np.testing.assert_allclose(states[-1].as_array(), s0.as_array(), atol=1e-7)
    assert states[-1].t == pytest.approx(2.0 * math.pi)


def test_stride_controls_the_output(harmonic):
    states = integrate(harmonic, PhaseState(1.0, 0.0, 0.0, 0.0), 1.0, dt=1e-2, stride=10)
    assert len(states) == 11
    assert states[1].t == pytest.approx(0.1)


def test_energy_is_conserved(pullen_edmonds):
    s0 = PhaseState(1.0, 0.5, 0.8, -1.1)
    energy = hamiltonian(pullen_edmonds, s0)
    states = integrate(pullen_edmonds, s0, 100.0, dt=1e-3, stride=1000)
    drift = max(abs(hamiltonian(pullen_edmonds, s) - energy) for s in states)
    assert drift < 1e-9 * energy


def test_integration_is_reversible(pullen_edmonds):
    s0 = PhaseState(1.0, 0.5, 0.8, -1.1)
    end = integrate(pullen_edmonds, s0, 10.0, dt=1e-3)[-1]
    back = integrate(pullen_edmonds, PhaseState(end.x, end.y, -end.px, -end.py), 10.0, dt=1e-3)[-1]
    np.testing.assert_allclose([back.x, back.y, -back.px, -back.py], s0.as_array(), atol=1e-8)


def test_escape_is_reported():
    inverted = ActionParams(coeffs=PotentialCoeffs(v2=-0.5))
    with pytest.raises(TrajectoryEscapeError):
        integrate(inverted, PhaseState(1.0, 0.0, 0.0, 0.0), 100.0, dt=1e-2)


def test_shell_samples_have_the_requested_energy(pullen_edmonds):
    states = sample_energy_shell_many(pullen_edmonds, 2.0, 200, seed=1)
    assert len(states) == 200
    assert max(abs(hamiltonian(pullen_edmonds, s) - 2.0) for s in states) < 1e-12
    again = sample_energy_shell_many(pullen_edmonds, 2.0, 200, seed=1)
    assert [s.as_array().tolist() for s in states] == [s.as_array().tolist() for s in again]


def test_single_shell_sample_is_seeded(pullen_edmonds):
    a = sample_energy_shell(pullen_edmonds, 4.0, member_seed(11, 3))
    b = sample_energy_shell(pullen_edmonds, 4.0, member_seed(11, 3))
    c = sample_energy_shell(pullen_edmonds, 4.0, member_seed(11, 4))
    assert a == b
    assert a != c
    assert hamiltonian(pullen_edmonds, a) == pytest.approx(4.0, abs=1e-12)


def test_shell_sampling_errors(pullen_edmonds):
    with pytest.raises(ShellSamplingError, match="below the potential minimum"):
        sample_energy_shell_many(pullen_edmonds, -1.0, 10, seed=0)
    unbounded = ActionParams(coeffs=PotentialCoeffs(v2=-0.5))
    with pytest.raises(ShellSamplingError, match="not bounded"):
        sample_energy_shell(unbounded, 1.0, seed=0)


def test_absolute_energy(pullen_edmonds):
    assert absolute_energy(pullen_edmonds, 2.0) == 2.0
    raised = ActionParams(coeffs=pullen_edmonds.coeffs.shifted(0.7))
    assert absolute_energy(raised, 2.0, 'minimum') == pytest.approx(2.7)
    with pytest.raises(ModelError):
        absolute_energy(raised, 2.0, 'median')


def test_harmonic_section_is_a_fixed_point(harmonic):
    # equal frequencies: the orbit closes after one period, so every crossing repeats
    s0 = PhaseState(0.5, 0.0, 0.3, 1.0)
    section = poincare_section(harmonic, s0, SectionSpec('y', 0.0, 1), n_crossings=5, dt=1e-3)
    assert not section.partial
    np.testing.assert_allclose(section.points, np.tile([0.5, 0.3], (5, 1)), atol=1e-6)
    np.testing.assert_allclose(section.times, 2.0 * math.pi * np.arange(1, 6), atol=1e-6)
    assert section.energy == pytest.approx(hamiltonian(harmonic, s0))


def test_section_time_cap_gives_a_partial_section(harmonic):
    section = poincare_section(harmonic, PhaseState(0.5, 0.0, 0.3, 1.0), n_crossings=5, dt=1e-2, t_max=10.0)
    assert section.partial
    assert len(section.points) == 1


def test_inaccessible_section_plane(harmonic):
    with pytest.raises(ModelError, match="not accessible"):
        poincare_section(harmonic, PhaseState(0.5, 0.0, 0.3, 1.0), SectionSpec('y', 5.0, 1))


def test_axis_orbit_is_a_section_fixed_point(pullen_edmonds):
    points = section_fixed_points(pullen_edmonds, 1.0, SectionSpec(), guesses=[0.0])
    assert len(points) == 1
    assert points[0].x == pytest.approx(0.0, abs=1e-8)
    assert points[0].px == pytest.approx(0.0, abs=1e-8)
    assert points[0].kind in ('elliptic', 'hyperbolic')


def test_harmonic_lyapunov_exponent_vanishes(harmonic):
    record = lyapunov_finite_time(harmonic, PhaseState(1.0, 0.0, 0.0, 1.0), 200.0, dt=1e-2)
    assert abs(record.lam) < 1e-6
    assert record.trace.shape[1] == 2
    assert record.trace[-1, 0] == pytest.approx(200.0)


def test_lyapunov_rejects_zero_tangent(harmonic):
    with pytest.raises(ModelError):
        lyapunov_finite_time(harmonic, PhaseState(1.0, 0.0, 0.0, 1.0), 10.0, tangent=[0, 0, 0, 0])


@pytest.mark.slow
def test_tangent_map_agrees_with_two_trajectory_oracle():
    action = ActionParams.classical(v2=0.5, v22=0.25)
    checked = 0
    for index in range(10):
        state = sample_energy_shell(action, 8.0, member_seed(5, index))
        tangent = lyapunov_finite_time(action, state, 2000.0, dt=1e-2).lam
        if tangent < 0.02:
            continue
        oracle = lyapunov_two_trajectory(action, state, 2000.0, dt=1e-2)
        assert tangent == pytest.approx(oracle, rel=0.05)
        checked += 1
    assert checked > 0


def test_ensemble_members_match_single_runs(pullen_edmonds):
    ensemble = run_ensemble(pullen_edmonds, 2.0, 3, 10.0, seed=7, dt=1e-2, system='classical', workers=3)
    assert [r.seed_index for r in ensemble.records] == [0, 1, 2]
    assert not ensemble.failures
    for index, record in enumerate(ensemble.records):
        state = sample_energy_shell(pullen_edmonds, 2.0, member_seed(7, index))
        assert record.lam == lyapunov_finite_time(pullen_edmonds, state, 10.0, dt=1e-2).lam
    serial = run_ensemble(pullen_edmonds, 2.0, 3, 10.0, seed=7, dt=1e-2, workers=1)
    np.testing.assert_array_equal(serial.lambdas, ensemble.lambdas)


def test_ensemble_energy_reference(pullen_edmonds):
    raised = ActionParams(coeffs=pullen_edmonds.coeffs.shifted(1.0))
    ensemble = run_ensemble(raised, 2.0, 2, 5.0, seed=3, dt=1e-2, energy_reference='minimum')
    assert ensemble.energy == 2.0
    assert ensemble.energy_absolute == pytest.approx(3.0)
    assert all(r.energy == pytest.approx(3.0) for r in ensemble.records)


def _fourier_misfit(points, order=6):
    """Largest deviation of r(theta) about the centroid from its Fourier fit, relative to the mean radius."""
    centered = points - points.mean(axis=0)
    theta = np.arctan2(centered[:, 1], centered[:, 0])
    r = np.hypot(centered[:, 0], centered[:, 1])
    basis = np.column_stack([np.ones_like(theta)]
                            + [f(k * theta) for k in range(1, order + 1) for f in (np.cos, np.sin)])
    coeffs, *_ = np.linalg.lstsq(basis, r, rcond=None)
    return np.max(np.abs(r - basis @ coeffs)) / np.mean(r)


def _chaotic_state(action, E):
    for index in range(30):
        state = sample_energy_shell(action, E, member_seed(3, index))
        if lyapunov_finite_time(action, state, 2000.0, dt=1e-2).lam > 0.05:
            return state
    pytest.fail(f"no chaotic shell sample at E = {E}")


def test_shell_positions_are_uniform_on_the_accessible_region(pullen_edmonds):
    E, n = 2.0, 4000
    states = sample_energy_shell_many(pullen_edmonds, E, n, seed=2024)
    x_lo, x_hi, y_lo, y_hi = accessible_box(pullen_edmonds, E)
    counts, _, _ = np.histogram2d([s.x for s in states], [s.y for s in states], bins=8,
                                  range=[[x_lo, x_hi], [y_lo, y_hi]])

    fx = x_lo + (np.arange(400) + 0.5) * (x_hi - x_lo) / 400
    fy = y_lo + (np.arange(400) + 0.5) * (y_hi - y_lo) / 400
    X, Y = np.meshgrid(fx, fy, indexing='ij')
    inside = eval_potential(pullen_edmonds.coeffs, X, Y) <= E
    area = inside.reshape(8, 50, 8, 50).sum(axis=(1, 3)) / inside.sum()
    expected = area * n
    kept = expected >= 5.0
    observed = counts[kept]
    assert chisquare(observed, expected[kept] * observed.sum() / expected[kept].sum()).pvalue > 1e-3

    angles = np.arctan2([s.py for s in states], [s.px for s in states])
    by_angle, _ = np.histogram(angles, bins=12, range=(-math.pi, math.pi))
    assert chisquare(by_angle).pvalue > 1e-3


def test_section_crossings_lie_on_the_energy_shell(pullen_edmonds):
    s0 = PhaseState(1.0, 0.5, 0.8, -1.1)
    energy = hamiltonian(pullen_edmonds, s0)
    for spec in (SectionSpec('y', 0.0, 1), SectionSpec('x', 0.3, -1)):
        section = poincare_section(pullen_edmonds, s0, spec, n_crossings=20, dt=1e-3)
        states = section.states()
        assert len(states) == 20
        for state in states:
            assert hamiltonian(pullen_edmonds, state) == pytest.approx(energy, rel=1e-8)
            plane = state.y if spec.coordinate == 'y' else state.x
            assert plane == pytest.approx(spec.value, abs=1e-9)
        assert np.all(spec.direction * section.normal_momenta > 0)


def test_softened_potential_rejects_planes_beyond_the_central_basin():
    # v4 < 0 opens the potential far out; the plane must still cut the basin around the minimum
    softened = ActionParams(coeffs=PotentialCoeffs(v2=0.5, v22=0.25, v4=-0.01))
    s0 = PhaseState(0.5, 0.0, 0.0, 1.9)
    with pytest.raises(ModelError, match="not accessible"):
        poincare_section(softened, s0, SectionSpec('y', 4.0, 1))
    section = poincare_section(softened, s0, SectionSpec('y', 0.0, 1), n_crossings=3, dt=1e-2)
    assert len(section.points) == 3


@pytest.mark.slow
def test_regular_orbit_section_is_a_closed_curve(pullen_edmonds):
    E = 2.0
    q = 0.05
    s0 = PhaseState(q, 0.0, 0.0, math.sqrt(2.0 * (E - float(eval_potential(pullen_edmonds.coeffs, q, 0.0)))))
    regular = poincare_section(pullen_edmonds, s0, SectionSpec('y', 0.0, 1), n_crossings=80, dt=1e-2)
    assert _fourier_misfit(regular.points) < 1e-2

    chaotic = poincare_section(pullen_edmonds, _chaotic_state(pullen_edmonds, 6.0), SectionSpec('y', 0.0, 1),
                               n_crossings=200, dt=1e-2)
    assert _fourier_misfit(chaotic.points) > 0.1


@pytest.mark.slow
def test_exponent_does_not_depend_on_the_initial_tangent(pullen_edmonds):
    state = _chaotic_state(pullen_edmonds, 6.0)
    lams = [lyapunov_finite_time(pullen_edmonds, state, 2e4, dt=1e-2, tangent=tangent).lam
            for tangent in (None, [1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, -1.0])]
    for lam in lams[1:]:
        assert lam == pytest.approx(lams[0], rel=0.02)


@pytest.mark.slow
def test_ensemble_mean_exponent_grows_with_energy(pullen_edmonds):
    means = [np.mean(run_ensemble(pullen_edmonds, E, 50, 1000.0, seed=17, dt=1e-2, workers=4).lambdas)
             for E in (2.0, 4.0, 6.0, 8.0)]
    assert all(later > earlier for earlier, later in zip(means, means[1:]))
