"""
File persistence for pipeline artifacts: atomic writes, CSV frames and staleness checks.
"""
import io
import logging
import os
import tempfile
from pathlib import Path
from typing import Iterable, Optional

import pandas as pd

from errors import MissingArtifact

logger = logging.getLogger(__name__)


def atomic_write_text(path, text: str) -> Path:
    """Write text to a temp file next to path, then rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def frame_to_csv_text(frame: pd.DataFrame) -> str:
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, lineterminator="\n")
    return buffer.getvalue()


def write_frame(path, frame: pd.DataFrame) -> Path:
    return atomic_write_text(path, frame_to_csv_text(frame))


def latest_mtime(path) -> Optional[float]:
    """Newest modification time of a file, or of any file under a directory."""
    path = Path(path)
    if not path.exists():
        return None
    if path.is_dir():
        times = [p.stat().st_mtime_ns for p in path.rglob("*") if p.is_file()]
        times.append(path.stat().st_mtime_ns)
        return max(times)
    return path.stat().st_mtime_ns


class ArtifactManager:
    """Manages every artifact a pipeline run reads from or writes to its output directory."""

    def __init__(self, output_dir):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.output_dir / name

    def require(self, name: str) -> Path:
        """Path of an artifact an earlier stage must have produced."""
        path = self.path(name)
        if not path.exists():
            raise MissingArtifact(path)
        return path

    def write_text(self, name: str, text: str) -> Path:
        path = atomic_write_text(self.path(name), text)
        logger.debug("wrote %s", path)
        return path

    def write_frame(self, name: str, frame: pd.DataFrame) -> Path:
        return self.write_text(name, frame_to_csv_text(frame))

    def is_fresh(self, outputs: Iterable[str], inputs: Iterable) -> bool:
        """
        True when every output exists and none is older than any input.

        Args:
            outputs: Artifact names inside the output directory
            inputs: Paths (files or directories) the outputs were built from

        Returns:
            False if an output is missing or an input changed after it was written
        """
        output_times = []
        for name in outputs:
            mtime = latest_mtime(self.path(name))
            if mtime is None:
                return False
            output_times.append(mtime)

        input_times = [t for t in (latest_mtime(p) for p in inputs if p) if t is not None]
        if not output_times:
            return False
        if not input_times:
            return True
        return min(output_times) >= max(input_times)
