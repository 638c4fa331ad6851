"""Reproduction runs. Hours of CPU; enabled with QCHAOS_ACCEPTANCE=1."""
import numpy as np
import pandas as pd
import pytest

from qchaos import create_pipeline
from qchaos.config import RunConfig, resolve_threads
from qchaos.models import ActionParams, Grid2D, hamiltonian
from qchaos.utils.artifacts import parse_table
from qchaos.utils.qaction import riccati_residual
from qchaos.utils.dynamics import (
    integrate,
    lyapunov_finite_time,
    lyapunov_two_trajectory,
    member_seed,
    run_ensemble,
    sample_energy_shell,
)
from qchaos.utils.schrodinger2d import ground_state

pytestmark = pytest.mark.acceptance


def _config(tmp_path, **sections):
    data = {'output_dir': str(tmp_path / 'out')}
    data.update(sections)
    return RunConfig.parse_obj(data)


def test_harmonic_action_is_self_dual(tmp_path):
    config = _config(tmp_path, model={'couplings': [0.0]},
                     solver={'half_width': 6.0, 'n_grid': 160, 'dt': 1e-3, 'T': 4.5})
    pipeline = create_pipeline(config)
    for stage in ('ground-state', 'amplitudes', 'fit-action'):
        pipeline.run_stage(stage)
    out = pipeline.cache.out_dir
    e_gr = float(pd.read_csv(out / 'ground-state' / 'energy.csv')['E_gr'].iloc[0])
    fitted = parse_table(pd.read_csv(out / 'fit-action' / 'fit_v22_0.csv'))

    assert e_gr == pytest.approx(1.0, abs=1e-3)
    assert fitted['mass'] == pytest.approx(1.0, abs=1e-3)
    assert fitted['v2'] == pytest.approx(0.5, abs=1e-3)
    assert fitted['v0'] - e_gr == pytest.approx(0.0, abs=2e-3)
    for name in ('v11', 'v22', 'v13', 'v4', 'v24', 'v44'):
        assert abs(fitted[name]) < 1e-3


def test_integrable_ensemble_has_no_chaos():
    ensemble = run_ensemble(ActionParams.classical(0.5, 0.0), 4.0, 100, 2e4, seed=1, dt=1e-2, workers=8)
    assert np.all(ensemble.lambdas < 1e-3)


def test_tangent_map_matches_divergence_oracle():
    action = ActionParams.classical(0.5, 0.25)
    checked = 0
    for index in range(200):
        state = sample_energy_shell(action, 2.0, member_seed(99, index))
        tangent = lyapunov_finite_time(action, state, 2e4, dt=1e-2).lam
        if tangent < 0.02:
            continue
        oracle = lyapunov_two_trajectory(action, state, 2e4, dt=1e-2)
        assert tangent == pytest.approx(oracle, rel=0.05)
        checked += 1
        if checked == 10:
            break
    assert checked == 10


def test_long_run_energy_drift():
    action = ActionParams.classical(0.5, 0.25)
    state = sample_energy_shell(action, 8.0, member_seed(3, 0))
    states = integrate(action, state, 2e4, dt=1e-3, stride=100000)
    energies = np.array([hamiltonian(action, s) for s in states])
    assert np.max(np.abs(energies - 8.0)) < 8e-8


def test_quantum_system_is_less_chaotic(tmp_path):
    config = _config(tmp_path, model={'couplings': [0.05, 0.25]},
                     dynamics={'n_ensemble': 100, 'T_c': 2000.0, 'dt': 1e-2, 'n_orbits': 10, 'n_crossings': 100})
    pipeline = create_pipeline(config)
    pipeline.run_all()
    summary = pd.read_csv(pipeline.cache.out_dir / 'stats' / 'summary.csv')
    for column in ('R', 'R_at_0.002', 'R_at_0.01'):
        ratio = summary.pivot_table(index=['v22', 'E'], columns='system', values=column)
        assert np.all(ratio['classical'] > ratio['quantum'])


@pytest.fixture(scope='module')
def reference_run(tmp_path_factory):
    """Default configuration at both couplings with 500-member ensembles."""
    out = tmp_path_factory.mktemp('reference')
    config = _config(out, model={'couplings': [0.05, 0.25]},
                     dynamics={'n_ensemble': 500, 'T_c': 2e4, 'dt': 1e-2})
    pipeline = create_pipeline(config, threads=resolve_threads())
    pipeline.run_all()
    return pipeline.cache.out_dir


def test_coupled_fit_reproduces_reference_action(reference_run):
    fitted = parse_table(pd.read_csv(reference_run / 'fit-action' / 'fit_v22_0.25.csv'))
    assert fitted['mass'] == pytest.approx(0.976, rel=0.05)
    assert fitted['v2'] == pytest.approx(0.5684, rel=0.05)
    assert fitted['v22'] == pytest.approx(0.2469, rel=0.05)
    assert abs(fitted['v4'] + 0.00067) < 5e-4
    for name in ('v11', 'v13', 'v24', 'v44'):
        assert abs(fitted[name]) < 5e-3


def test_riccati_route_matches_fitted_potential(reference_run):
    summary = pd.read_csv(reference_run / 'riccati' / 'riccati_summary.csv')
    assert np.all(summary['route_rms_difference'] < 0.03)


def test_riccati_residual_is_small_and_shrinks_with_the_grid(reference_run):
    summary = pd.read_csv(reference_run / 'riccati' / 'riccati_summary.csv')
    assert np.all(summary['residual_rms'] < 1e-2)

    action = ActionParams.classical(0.5, 0.25)
    residuals = []
    for n in (96, 192):
        psi, energy = ground_state(action, Grid2D.square(6.0, n), tol=1e-10, dt=1e-3)
        residuals.append(riccati_residual(psi, action, energy).rms())
    coarse, fine = residuals
    assert coarse < 1e-2
    assert fine < 0.5 * coarse


def test_endpoint_conditions_hold_across_the_lattice(reference_run):
    for v22 in ('0.05', '0.25'):
        checks = pd.read_csv(reference_run / 'fit-action' / f"checks_v22_{v22}.csv")
        assert checks['momentum_deviation'].iloc[0] < 0.05
        assert checks['energy_balance_deviation'].iloc[0] < 0.05


def test_quantum_system_is_less_chaotic_at_full_size(reference_run):
    summary = pd.read_csv(reference_run / 'stats' / 'summary.csv')
    for column in ('R', 'R_at_0.002', 'R_at_0.005', 'R_at_0.01'):
        ratio = summary.pivot_table(index=['v22', 'E'], columns='system', values=column)
        assert np.all(ratio['classical'] > ratio['quantum'])


def test_gaussian_fit_error_falls_with_energy(reference_run):
    summary = pd.read_csv(reference_run / 'stats' / 'summary.csv')
    classical = summary[(summary['system'] == 'classical') & np.isclose(summary['v22'], 0.25)].sort_values('E')
    assert list(classical['E']) == [2.0, 4.0, 6.0, 8.0]
    np.testing.assert_allclose(classical['eps_fit'], [0.60, 0.39, 0.30, 0.27], atol=0.15)
    assert np.all(np.diff(classical['eps_fit']) < 0)
    assert np.all(np.diff(classical['sigma']) < 0)


def test_mean_exponent_is_linear_in_energy(reference_run):
    fits = pd.read_csv(reference_run / 'stats' / 'linear_fit.csv')
    fits = fits[np.isclose(fits['v22'], 0.25)].set_index('system')
    assert fits.loc['classical', 'lambda0'] == pytest.approx(-0.040, abs=0.01)
    assert fits.loc['classical', 'slope'] == pytest.approx(0.033, abs=0.01)
    assert fits.loc['quantum', 'lambda0'] == pytest.approx(-0.026, abs=0.01)
    assert fits.loc['quantum', 'slope'] == pytest.approx(0.024, abs=0.01)
    assert fits.loc['quantum', 'slope'] < fits.loc['classical', 'slope']


def test_weaker_coupling_is_less_chaotic(reference_run):
    summary = pd.read_csv(reference_run / 'stats' / 'summary.csv')
    for system in ('classical', 'quantum'):
        rows = summary[summary['system'] == system]
        weak = rows[np.isclose(rows['v22'], 0.05)].set_index('E')
        strong = rows[np.isclose(rows['v22'], 0.25)].set_index('E')
        for E in strong.index:
            assert weak.loc[E, 'R'] < strong.loc[E, 'R']
            assert weak.loc[E, 'peak'] < strong.loc[E, 'peak']
