import hashlib
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

from ..errors import MissingDependencyError, StaleCacheError

logger = logging.getLogger(__name__)

MANIFEST = 'manifest.json'


class CacheService:
    """Stage artifacts on disk, validated by manifest hashes.

    Every stage owns `<out>/<stage>/` and a manifest recording the hash of the
    configuration sections it depends on, the sha256 of each input file and
    the list (and hashes) of its outputs.
    """

    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def stage_dir(self, stage: str) -> Path:
        path = self.out_dir / stage
        path.mkdir(parents=True, exist_ok=True)
        return path

    def get_manifest(self, stage: str) -> Optional[Dict[str, Any]]:
        """Manifest of a stage, or None if the stage never completed"""
        path = self.out_dir / stage / MANIFEST
        if not path.exists():
            return None
        try:
            return json.loads(path.read_text())
        except json.JSONDecodeError:
            logger.warning(f"Unreadable manifest for stage '{stage}', treating it as missing")
            return None

    def set_manifest(self, stage: str, config_hash: str, inputs: Iterable[Path], outputs: Iterable[Path]):
        """Record a completed stage"""
        manifest = {
            'stage': stage,
            'config_hash': config_hash,
            'inputs': {self._relative(p): self.file_hash(p) for p in sorted(inputs)},
            'outputs': {self._relative(p): self.file_hash(p) for p in sorted(outputs)},
        }
        self.write_text(self.out_dir / stage / MANIFEST, json.dumps(manifest, indent=2, sort_keys=True) + '\n')

    def outputs(self, stage: str) -> List[Path]:
        manifest = self.get_manifest(stage)
        return [] if manifest is None else [self.out_dir / p for p in manifest['outputs']]

    def is_fresh(self, stage: str, config_hash: str, inputs: Iterable[Path]) -> bool:
        """True when the recorded run used the same configuration, inputs and still has its outputs"""
        manifest = self.get_manifest(stage)
        if manifest is None or manifest.get('config_hash') != config_hash:
            return False
        expected = {self._relative(p): self.file_hash(p) for p in inputs}
        if manifest.get('inputs') != expected:
            return False
        for name, digest in manifest.get('outputs', {}).items():
            path = self.out_dir / name
            if not path.exists() or self.file_hash(path) != digest:
                return False
        return True

    def require(self, stage: str, prerequisite: str, config_hash: str, force: bool = False) -> List[Path]:
        """Outputs of `prerequisite`, checked against the current configuration."""
        manifest = self.get_manifest(prerequisite)
        if manifest is None:
            raise MissingDependencyError(stage, prerequisite)
        if manifest.get('config_hash') != config_hash:
            if not force:
                raise StaleCacheError(
                    f"Artifacts of '{prerequisite}' were produced under a different configuration; "
                    f"re-run '{prerequisite}' or pass --force")
            logger.warning(f"Reusing stale artifacts of '{prerequisite}' for '{stage}' (forced)")
        paths = [self.out_dir / p for p in manifest['outputs']]
        missing = [p for p in paths if not p.exists()]
        if missing:
            raise MissingDependencyError(stage, prerequisite)
        return paths

    def write_text(self, path: Union[str, Path], text: str):
        """Atomic write: temporary file in the target directory, then rename."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix='.tmp')
        try:
            with os.fdopen(fd, 'w', newline='') as f:
                f.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.remove(tmp)
            raise

    @staticmethod
    def file_hash(path: Union[str, Path]) -> str:
        digest = hashlib.sha256()
        with open(path, 'rb') as f:
            for chunk in iter(lambda: f.read(1 << 20), b''):
                digest.update(chunk)
        return digest.hexdigest()

    def _relative(self, path: Union[str, Path]) -> str:
        return Path(path).resolve().relative_to(self.out_dir.resolve()).as_posix()
