"""Small shared helpers: atomic file output and deterministic JSON."""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Union

PathLike = Union[str, os.PathLike]


def atomic_write_bytes(path: PathLike, data: bytes) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dumps_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path: PathLike, obj: Any) -> None:
    atomic_write_text(path, dumps_json(obj))


def read_json(path: PathLike) -> Any:
    with open(path) as fh:
        return json.load(fh)


def thread_cap(default: int | None = None) -> int:
    """Worker count, capped by the STROKEPIPE_THREADS environment variable."""
    cpu = os.cpu_count() or 1
    raw = os.environ.get("STROKEPIPE_THREADS")
    if raw:
        try:
            return max(1, min(int(raw), cpu))
        except ValueError:
            raise ValueError(f"STROKEPIPE_THREADS must be an integer, got {raw!r}") from None
    return max(1, default if default is not None else cpu)
