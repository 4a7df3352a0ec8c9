"""Run manifests, atomic output writes, digests, and seed fan-out."""

from __future__ import annotations

import contextlib
import hashlib
import json
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator

from . import __version__


def stage_seed(seed: int, stage: str) -> int:
    """One config seed fans out to a stable per-stage seed."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2**63)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@contextlib.contextmanager
def atomic_output(path: str | Path) -> Iterator[Path]:
    """Yield a temp path that replaces `path` only on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    tmp_path = Path(tmp)
    try:
        yield tmp_path
        os.replace(tmp_path, path)
    except BaseException:
        with contextlib.suppress(OSError):
            tmp_path.unlink()
        raise


def write_json_atomic(path: str | Path, payload: dict) -> None:
    with atomic_output(path) as tmp:
        tmp.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def worker_count() -> int:
    raw = os.environ.get("CONVO_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def write_run_manifest(
    out_dir: str | Path,
    command: str,
    config_snapshot: dict,
    seed: int,
    input_paths: list[str | Path],
    output_names: list[str],
    started: datetime,
) -> Path:
    manifest = {
        "tool": "convoflow",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": config_snapshot,
        "inputs": {
            str(p): sha256_file(p) for p in sorted(map(str, input_paths))
        },
        "outputs": sorted(output_names),
        "started_utc": started.astimezone(timezone.utc).isoformat(),
        "finished_utc": datetime.now(timezone.utc).isoformat(),
    }
    path = Path(out_dir) / f"manifest_{command}.json"
    write_json_atomic(path, manifest)
    return path
