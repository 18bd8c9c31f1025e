import json
import logging
import os
import shlex
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib import metadata
from typing import List, Optional

from src.errors import OutputCollisionError

logger = logging.getLogger(__name__)

PACKAGE = "eiv-leverage"


def library_version() -> str:
    try:
        return metadata.version(PACKAGE)
    except metadata.PackageNotFoundError:
        return "0.1.0"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """What produced an artifact; re-running `command` reproduces it (timestamps aside)."""

    command: str
    seed: int
    target: str  # scenario name or dataset path
    threads: int = 1
    started_at: str = field(default_factory=_now)
    finished_at: Optional[str] = None
    artifacts: List[str] = field(default_factory=list)
    version: str = field(default_factory=library_version)

    @classmethod
    def start(cls, argv: List[str], seed: int, target: str, threads: int = 1) -> "RunManifest":
        return cls(command=shlex.join(["python", "main.py", *argv]), seed=seed, target=target, threads=threads)

    def finish(self, *artifacts: str) -> None:
        self.finished_at = _now()
        self.artifacts.extend(artifacts)

    def write(self, out_path: str) -> str:
        path = manifest_path(out_path)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2)
            fh.write("\n")
        logger.debug(f"Manifest written: {path}")
        return path


def manifest_path(out_path: str) -> str:
    return out_path + ".manifest.json"


def load_manifest(path: str) -> RunManifest:
    with open(path, encoding="utf-8") as fh:
        return RunManifest(**json.load(fh))


def check_collision(out_path: str, force: bool) -> None:
    for path in (out_path, manifest_path(out_path)):
        if os.path.exists(path) and not force:
            raise OutputCollisionError(f"{path} exists; pass --force to overwrite")
