import pytest

from qchaos.config import ENV_CONFIGS, RunConfig, get_env_config, load_config, resolve_threads
from qchaos.errors import ConfigError


def test_defaults():
    config = RunConfig()
    assert config.model.couplings == [0.05, 0.25]
    assert config.stats.lambda_c == 0.005
    assert config.dynamics.energy_reference == 'minimum'
    assert config.fit.residual_mode == 'log'


def test_yaml_round_trip(tmp_path, small_config):
    path = tmp_path / 'run.yaml'
    small_config.to_yaml(path)
    loaded = RunConfig.from_yaml(path)
    assert loaded == small_config
    assert loaded.stats.near_zero_window == (-0.01, 0.05)


def test_partial_yaml_keeps_defaults():
    config = RunConfig.from_yaml_text("dynamics:\n  n_ensemble: 10\n")
    assert config.dynamics.n_ensemble == 10
    assert config.dynamics.T_c == 20000.0
    assert RunConfig.from_yaml_text("") == RunConfig()


@pytest.mark.parametrize("text", [
    "fit:\n  residual_mode: cubic\n",
    "solver:\n  half_width: 1.0\nfit:\n  lattice_half_width: 1.5\n",
    "model:\n  couplings: []\n",
    "model:\n  colour: red\n",
    "dynamics:\n  energies: [-1.0]\n",
    "stats:\n  positive_window: [0.2, 0.1]\n",
    "- just\n- a list\n",
    "model: [unclosed\n",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        RunConfig.from_yaml_text(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        RunConfig.from_yaml(tmp_path / 'absent.yaml')


def test_section_hash(small_config):
    before = small_config.section_hash(['model', 'solver'])
    assert before == small_config.section_hash(['solver', 'model'])
    small_config.dynamics.n_ensemble = 16
    assert small_config.section_hash(['model', 'solver']) == before
    small_config.solver.T = 2.0
    assert small_config.section_hash(['model', 'solver']) != before


def test_out_dir_precedence(tmp_path, monkeypatch, small_config):
    path = tmp_path / 'run.yaml'
    small_config.to_yaml(path)
    monkeypatch.setenv('QCHAOS_OUT_DIR', str(tmp_path / 'env'))
    assert load_config(path).output_dir == str(tmp_path / 'env')
    assert load_config(path, out_dir=str(tmp_path / 'cli')).output_dir == str(tmp_path / 'cli')
    monkeypatch.delenv('QCHAOS_OUT_DIR')
    assert load_config(path, seed=3).dynamics.seed == 3


def test_resolve_threads(monkeypatch):
    assert resolve_threads(3) == 3
    monkeypatch.setenv('QCHAOS_THREADS', '2')
    assert resolve_threads() == 2
    monkeypatch.setenv('QCHAOS_THREADS', 'many')
    with pytest.raises(ConfigError):
        resolve_threads()
    with pytest.raises(ConfigError):
        resolve_threads(-1)
    monkeypatch.delenv('QCHAOS_THREADS')
    assert resolve_threads() >= 1


def test_env_config():
    assert get_env_config('testing') is ENV_CONFIGS['testing']
    assert get_env_config('testing').LOG_LEVEL == 'DEBUG'
    assert not hasattr(get_env_config('production'), 'THREADS')
    with pytest.raises(ConfigError):
        get_env_config('staging')
