"""Run manifest and run-directory lock.

``manifest.json`` records, per stage, whether it completed, a fingerprint
of the configuration it ran with, and the SHA-256 digest of every artifact
it wrote (paths relative to the run directory). Writes go to a temporary
file that is renamed over the manifest, so the file on disk is always a
complete document.
"""

from __future__ import annotations

from collections.abc import Iterable
import contextlib
import hashlib
import json
import os
import pathlib
from typing import Any

from combiverse.errors import RunLockedError, ValidationError
from combiverse.utils_logger import logger

MANIFEST_NAME = "manifest.json"
LOCK_NAME = ".lock"
STAGES = ("decompose", "reconstruct", "combine")


def file_digest(path: str | pathlib.Path) -> str:
    digest = hashlib.sha256()
    with pathlib.Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def fingerprint(document: Any) -> str:
    """Stable digest of a JSON-serializable configuration fragment."""
    text = json.dumps(document, sort_keys=True, default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def atomic_write_text(path: pathlib.Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


class RunManifest:
    """Stage bookkeeping for one run directory."""

    def __init__(self, run_dir: str | pathlib.Path, data: dict[str, Any] | None = None) -> None:
        self.run_dir = pathlib.Path(run_dir)
        self.data: dict[str, Any] = data or {"config": {}, "stages": {}}

    @property
    def path(self) -> pathlib.Path:
        return self.run_dir / MANIFEST_NAME

    @classmethod
    def load(cls, run_dir: str | pathlib.Path) -> RunManifest:
        path = pathlib.Path(run_dir) / MANIFEST_NAME
        if not path.exists():
            return cls(run_dir)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ValidationError(f"{path} is not valid JSON: {e}") from e
        return cls(run_dir, data)

    def save(self) -> pathlib.Path:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        atomic_write_text(self.path, json.dumps(self.data, indent=2, sort_keys=True) + "\n")
        return self.path

    def stage(self, name: str) -> dict[str, Any]:
        return self.data["stages"].get(name, {})

    def is_complete(self, name: str) -> bool:
        return bool(self.stage(name).get("complete"))

    def is_current(self, name: str, config_fingerprint: str) -> bool:
        """Completed with the same configuration and every artifact matching its digest."""
        entry = self.stage(name)
        if not entry.get("complete"):
            return False
        if entry.get("fingerprint") != config_fingerprint:
            logger.info(f"Stage {name} ran with a different configuration, re-running")
            return False
        for rel, expected in entry.get("artifacts", {}).items():
            path = self.run_dir / rel
            if not path.exists() or file_digest(path) != expected:
                logger.warning(f"Artifact {rel} of stage {name} is missing or changed, re-running")
                return False
        return True

    def mark_complete(
        self, name: str, artifacts: Iterable[pathlib.Path], config_fingerprint: str
    ) -> None:
        digests = {
            pathlib.Path(p).relative_to(self.run_dir).as_posix(): file_digest(p)
            for p in sorted(artifacts)
        }
        self.data["stages"][name] = {
            "complete": True,
            "fingerprint": config_fingerprint,
            "artifacts": digests,
            "error": None,
        }
        self.save()

    def mark_failed(self, name: str, error: BaseException) -> None:
        self.data["stages"][name] = {"complete": False, "error": f"{type(error).__name__}: {error}"}
        self.save()

    def invalidate_after(self, name: str) -> None:
        """Mark every stage after ``name`` as incomplete."""
        for later in STAGES[STAGES.index(name) + 1 :]:
            if later in self.data["stages"]:
                self.data["stages"][later]["complete"] = False
        self.save()

    def set_config(self, document: dict[str, Any]) -> None:
        self.data["config"] = document


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


@contextlib.contextmanager
def run_lock(run_dir: str | pathlib.Path):
    """Hold an exclusive lock file on ``run_dir`` for the duration of the block.

    A lock left by a process that no longer exists is taken over with a warning.

    Raises:
        RunLockedError: A live process holds the lock.
    """
    folder = pathlib.Path(run_dir)
    folder.mkdir(parents=True, exist_ok=True)
    lock = folder / LOCK_NAME
    for _ in range(2):
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            try:
                holder = int(lock.read_text(encoding="utf-8").strip() or "0")
            except (OSError, ValueError):
                holder = 0
            if holder and _pid_alive(holder):
                raise RunLockedError(f"{folder} is locked by process {holder}") from None
            logger.warning(f"Removing stale lock {lock} (process {holder} is gone)")
            lock.unlink(missing_ok=True)
            continue
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(str(os.getpid()))
        break
    else:
        raise RunLockedError(f"could not acquire {lock}")
    try:
        yield lock
    finally:
        lock.unlink(missing_ok=True)


__all__ = [
    "LOCK_NAME",
    "MANIFEST_NAME",
    "STAGES",
    "RunManifest",
    "atomic_write_text",
    "file_digest",
    "fingerprint",
    "run_lock",
]
