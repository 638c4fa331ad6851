"""Command line entry points: run stages, emit plot data, write a config."""
import logging
from pathlib import Path
from typing import Callable, List, Optional

import typer

from . import create_pipeline
from .config import RunConfig, load_config
from .errors import ConfigError, MissingDependencyError, ModelError, NumericalError, StaleCacheError
from .services.pipeline import STAGES
from .utils.plots import emit_plots

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_DEPENDENCY = 3

app = typer.Typer(add_completion=False, help="Classical vs quantum chaos of the coupled quartic oscillator")


def _fail(message: str, code: int):
    logger.error(message, exc_info=True)
    typer.echo(f"Error: {message}", err=True)
    raise typer.Exit(code)


def _guarded(action: Callable[[], None]):
    """Run `action`, mapping the error families onto exit codes."""
    try:
        action()
    except ConfigError as e:
        _fail(str(e), EXIT_CONFIG)
    except (MissingDependencyError, StaleCacheError) as e:
        _fail(str(e), EXIT_DEPENDENCY)
    except (NumericalError, ModelError) as e:
        _fail(f"{type(e).__name__}: {e}", EXIT_NUMERICAL)


def run_stages(stage: str, config: Optional[Path], seed: Optional[int], threads: Optional[int], force: bool,
               out: Optional[str], lambda_c: Optional[float], progress: bool):
    if stage != 'all' and stage not in STAGES:
        raise ConfigError(f"Unknown stage '{stage}' (expected 'all' or one of {', '.join(STAGES)})")
    run_config = load_config(config, out_dir=out, seed=seed)
    if lambda_c is not None:
        run_config.stats.lambda_c = lambda_c
    pipeline = create_pipeline(run_config, threads=threads, force=force, progress=progress)
    stages: List[str] = list(STAGES) if stage == 'all' else [stage]
    for name in stages:
        outputs = pipeline.run_stage(name)
        typer.echo(f"{name}: {len(outputs)} artifacts in {Path(run_config.output_dir) / name}")


@app.command()
def run(stage: str = typer.Option('all', help="Stage name or 'all'"),
        config: Optional[Path] = typer.Option(None, help="YAML run configuration"),
        seed: Optional[int] = typer.Option(None, help="Override dynamics.seed"),
        threads: Optional[int] = typer.Option(None, help="Worker threads (default: QCHAOS_THREADS or all cores)"),
        force: bool = typer.Option(False, help="Recompute even when cached artifacts are fresh"),
        out: Optional[str] = typer.Option(None, help="Output directory"),
        lambda_c: Optional[float] = typer.Option(None, help="Chaotic cutoff for R"),
        progress: bool = typer.Option(False, help="Show progress bars")) -> None:
    """Run one stage (or all of them, in dependency order)."""
    _guarded(lambda: run_stages(stage, config, seed, threads, force, out, lambda_c, progress))


def _stage_command(name: str):
    def command(config: Optional[Path] = typer.Option(None, help="YAML run configuration"),
                seed: Optional[int] = typer.Option(None, help="Override dynamics.seed"),
                threads: Optional[int] = typer.Option(None, help="Worker threads"),
                force: bool = typer.Option(False, help="Recompute even when cached artifacts are fresh"),
                out: Optional[str] = typer.Option(None, help="Output directory"),
                lambda_c: Optional[float] = typer.Option(None, help="Chaotic cutoff for R"),
                progress: bool = typer.Option(False, help="Show progress bars")) -> None:
        _guarded(lambda: run_stages(name, config, seed, threads, force, out, lambda_c, progress))

    command.__doc__ = f"Shortcut for `run --stage {name}`."
    return command


for _name in list(STAGES) + ['all']:
    app.command(name=_name)(_stage_command(_name))


@app.command()
def plots(config: Optional[Path] = typer.Option(None, help="YAML run configuration"),
          out: Optional[str] = typer.Option(None, help="Output directory")) -> None:
    """Write plot data files and plot_figures.py under <out>/plots/."""

    def action():
        run_config = load_config(config, out_dir=out)
        bundle = emit_plots(run_config.output_dir)
        typer.echo(f"Plot data written to {bundle.script.parent}")
        if bundle.missing:
            typer.echo(f"Missing artifacts for: {', '.join(bundle.missing)}", err=True)

    _guarded(action)


@app.command('init-config')
def init_config(path: Path = typer.Argument(Path('qchaos.yaml'), help="Where to write the configuration"),
                overwrite: bool = typer.Option(False, help="Replace an existing file")) -> None:
    """Write the default (benchmark) run configuration."""

    def action():
        if path.exists() and not overwrite:
            raise ConfigError(f"{path} exists; pass --overwrite to replace it")
        path.parent.mkdir(parents=True, exist_ok=True)
        RunConfig().to_yaml(path)
        typer.echo(f"Default configuration written to {path}")

    _guarded(action)


if __name__ == "__main__":
    app()
