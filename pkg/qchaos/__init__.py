import logging
from pathlib import Path
from typing import Optional, Union

from .config import RunConfig, load_config, resolve_threads

__version__ = '0.1.0'

logger = logging.getLogger(__name__)


def create_pipeline(config: Optional[Union[RunConfig, str, Path]] = None, threads: Optional[int] = None,
                    force: bool = False, progress: bool = False):
    """Pipeline for a RunConfig, a YAML path, or the built-in defaults."""
    from .services.pipeline import Pipeline

    if not isinstance(config, RunConfig):
        config = load_config(config)
    threads = resolve_threads(threads)
    logger.debug(f"Pipeline on {threads} threads writing to {config.output_dir}")
    return Pipeline(config, threads=threads, force=force, progress=progress)
