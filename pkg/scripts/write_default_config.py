import os
import sys
from pathlib import Path

# Add the project root to Python path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from qchaos.config import RunConfig  # noqa: E402


def write_config(path: str, smoke: bool = False):
    """Benchmark configuration (T=4.5, v22 in {0.05, 0.25}, T_c=2e4, E in {2,4,6,8}).

    The smoke tier shortens T_c to 2e3 and the ensembles to 100 members.
    """
    config = RunConfig()
    if smoke:
        config.dynamics.T_c = 2000.0
        config.dynamics.n_ensemble = 100
        config.output_dir = 'output_smoke'
    config.to_yaml(path)
    print(f"Wrote {'smoke' if smoke else 'benchmark'} configuration to {Path(path).resolve()}")


if __name__ == "__main__":
    args = [a for a in sys.argv[1:] if not a.startswith('--')]
    write_config(args[0] if args else 'qchaos.yaml', smoke='--smoke' in sys.argv)
