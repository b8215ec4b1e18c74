"""
Run manifests.

Every artifact directory a command produces holds one `run_manifest.yaml`
recording the command line, the config snapshot, seeds, hashes of the
checkpoints involved, the tool version and stage timings.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import yaml
from pydantic import ValidationError

from .. import __version__
from ..exceptions import DataError
from ..models.report_models import RunManifest
from ..networks.checkpoint import parameter_hash
from ..tools.volume_io import PathLike

logger = logging.getLogger(__name__)

RUN_MANIFEST_FILE = "run_manifest.yaml"


def build_run_manifest(
    config_snapshot: Optional[Dict[str, Any]] = None,
    seeds: Optional[Dict[str, int]] = None,
    checkpoint_dirs: Iterable[PathLike] = (),
    command_line: Optional[List[str]] = None,
    timings: Optional[Dict[str, float]] = None,
) -> RunManifest:
    """Collect provenance; checkpoints are hashed from their parameter files."""
    return RunManifest(
        command_line=list(command_line or []),
        config_snapshot=config_snapshot or {},
        seeds=seeds or {},
        checkpoint_hashes={Path(d).name: parameter_hash(d) for d in checkpoint_dirs},
        tool_version=__version__,
        timings_s=dict(timings or {}),
    )


def write_run_manifest(manifest: RunManifest, directory: PathLike) -> Path:
    """Write (or replace) the manifest of an artifact directory."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    path = root / RUN_MANIFEST_FILE
    path.write_text(yaml.safe_dump(manifest.model_dump(mode="json"), sort_keys=False), encoding="utf-8")
    logger.debug(f"Wrote run manifest {path}")
    return path


def read_run_manifest(directory: PathLike) -> RunManifest:
    path = Path(directory) / RUN_MANIFEST_FILE
    if not path.exists():
        raise DataError(f"Run manifest not found: {path}")
    try:
        return RunManifest(**(yaml.safe_load(path.read_text(encoding="utf-8")) or {}))
    except ValidationError as e:
        raise DataError(f"Invalid run manifest {path}: {e}") from e
