import logging
import os
import time
from typing import Any, Dict, Optional, Sequence

from dischargekit.models import RunManifest
from dischargekit.utils import file_digest, write_json

log = logging.getLogger(__name__)


def manifest_path(output_path: str) -> str:
    return output_path + ".run.json"


class RunTimer:
    """Wall-clock duration of a command"""

    def __init__(self):
        self.started = time.monotonic()

    @property
    def elapsed(self) -> float:
        return round(time.monotonic() - self.started, 6)


def build_run_manifest(
    command: str,
    config: Dict[str, Any],
    inputs: Sequence[str],
    outputs: Sequence[str],
    duration_seconds: float = 0.0,
) -> RunManifest:
    from dischargekit import __version__

    return RunManifest(
        command=command,
        config=dict(config),
        inputs=list(inputs),
        outputs=list(outputs),
        digests={path: file_digest(path) for path in inputs if os.path.isfile(path)},
        tool_version=__version__,
        duration_seconds=duration_seconds,
    )


def write_run_manifest(run: RunManifest, path: Optional[str] = None) -> str:
    """Write the manifest next to the first output (or to path) atomically"""
    if path is None:
        if not run.outputs:
            raise ValueError("run has no outputs to place the manifest next to")
        path = manifest_path(run.outputs[0])
    write_json(path, run)
    log.info("Wrote run manifest %s", path)
    return path
