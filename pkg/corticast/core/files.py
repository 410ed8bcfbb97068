"""
File helpers: atomic artifact writes
"""

import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Union

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class AtomicFileWriter:
    """Context manager writing to a sibling temporary file, renamed into place on success

    A failure inside the block removes the temporary file, so no partial
    output is ever visible at the destination path.
    """

    def __init__(self, path: PathLike, mode: str = "wb", encoding: str = None):
        self.path = Path(path)
        self.mode = mode
        self.encoding = encoding
        self.temp_file_path = None
        self._handle = None

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fd, self.temp_file_path = tempfile.mkstemp(
            prefix=f".{self.path.name}.", suffix=".tmp", dir=str(self.path.parent)
        )
        kwargs = {"newline": ""} if "b" not in self.mode else {}
        self._handle = os.fdopen(fd, self.mode, encoding=self.encoding, **kwargs)
        return self._handle

    def __exit__(self, exc_type, exc_val, exc_tb):
        self._handle.close()
        if exc_type is None:
            os.replace(self.temp_file_path, self.path)
            logger.debug(f"Wrote {self.path}")
        elif os.path.exists(self.temp_file_path):
            os.remove(self.temp_file_path)
            logger.debug(f"Discarded partial write to {self.path}")
        return False


def write_bytes_atomic(path: PathLike, payload: bytes) -> None:
    with AtomicFileWriter(path, "wb") as handle:
        handle.write(payload)


def write_json_atomic(path: PathLike, data: Any) -> None:
    """Write JSON with a stable key order so reruns are byte-identical"""
    text = json.dumps(data, indent=2, sort_keys=True) + "\n"
    with AtomicFileWriter(path, "w", encoding="utf-8") as handle:
        handle.write(text)
