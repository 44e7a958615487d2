"""
File-based workspace: JSON-lines helpers, the stage manifest and the
advisory lock that gives one command exclusive ownership.
"""
import hashlib
import json
import logging
import os
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from errors import WorkspaceLockedError

logger = logging.getLogger(__name__)

TOOL_VERSION = "1.0.0"
MANIFEST_NAME = "manifest.json"
LOCK_NAME = ".lock"


def write_jsonl(path: Path, records: Iterable[dict]) -> int:
    """Write records one per line; returns the number written."""
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
            n += 1
    return n


def read_jsonl(path: Path) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                yield json.loads(line)


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_digest(paths: Iterable[Path]) -> str:
    """Digest over several files (or directories, walked in sorted order).

    Names enter the digest relative to the given path, so moving a tree keeps its digest.
    """
    h = hashlib.sha256()
    for p in sorted(Path(p) for p in paths):
        if p.is_dir():
            files = [(q.relative_to(p).as_posix(), q) for q in sorted(p.rglob("*")) if q.is_file()]
        else:
            files = [(p.name, p)] if p.exists() else []
        for name, q in files:
            h.update(name.encode("utf-8"))
            h.update(file_digest(q).encode("ascii"))
    return h.hexdigest()


@dataclass
class StageRecord:
    outputs: dict[str, str] = field(default_factory=dict)  # relative path -> digest
    inputs_hash: str = ""
    config_hash: str = ""


@dataclass
class WorkspaceManifest:
    root: Path
    stages: dict[str, StageRecord] = field(default_factory=dict)
    tool_version: str = TOOL_VERSION

    @classmethod
    def load(cls, root: Path) -> "WorkspaceManifest":
        path = root / MANIFEST_NAME
        if not path.exists():
            return cls(root=root)
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        stages = {name: StageRecord(**rec) for name, rec in data.get("stages", {}).items()}
        return cls(root=root, stages=stages, tool_version=data.get("tool_version", TOOL_VERSION))

    def has(self, stage: str) -> bool:
        return stage in self.stages

    def is_fresh(self, stage: str, inputs_hash: str, cfg_hash: str) -> bool:
        """True when the stage ran with these inputs and config and its outputs are intact."""
        rec = self.stages.get(stage)
        if rec is None or rec.inputs_hash != inputs_hash or rec.config_hash != cfg_hash:
            return False
        for rel, digest in rec.outputs.items():
            p = self.root / rel
            if not p.exists() or file_digest(p) != digest:
                return False
        return True

    def record(self, stage: str, outputs: Iterable[Path], inputs_hash: str, cfg_hash: str) -> None:
        digests = {
            Path(p).relative_to(self.root).as_posix(): file_digest(Path(p)) for p in sorted(outputs)
        }
        self.stages[stage] = StageRecord(outputs=digests, inputs_hash=inputs_hash, config_hash=cfg_hash)
        self.save()

    def save(self) -> None:
        # write-temp-then-rename keeps the manifest atomic
        path = self.root / MANIFEST_NAME
        tmp = path.with_suffix(".json.tmp")
        payload = {
            "tool_version": self.tool_version,
            "stages": {name: asdict(rec) for name, rec in sorted(self.stages.items())},
        }
        with open(tmp, "w", encoding="utf-8", newline="\n") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
        os.replace(tmp, path)


@contextmanager
def workspace_lock(root: Path):
    root.mkdir(parents=True, exist_ok=True)
    lock_path = root / LOCK_NAME
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as e:
        raise WorkspaceLockedError(
            f"workspace {root} is locked by another command (remove {lock_path} if stale)"
        ) from e
    try:
        os.write(fd, str(os.getpid()).encode("ascii"))
        os.close(fd)
        yield
    finally:
        try:
            lock_path.unlink()
        except FileNotFoundError:
            logger.warning("lock file %s vanished before release", lock_path)
