"""Run manifest: which config produced which files, with their checksums.

Each stage records the checksum of the config sections it depends on and a
SHA-256 per output file.  A downstream stage calls :meth:`Manifest.require`
before reading an upstream output; a missing stage, a changed config or a
modified file raises :class:`StaleInputError` instead of silently reusing it.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from . import __version__

MANIFEST_NAME = "manifest.json"


class StaleInputError(RuntimeError):
    pass


def file_checksum(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    def __init__(self, root: Path, data: dict | None = None):
        self.root = Path(root)
        self.data = data or {
            "format": "ceulab-manifest",
            "version": 1,
            "code_version": __version__,
            "stages": {},
        }

    @classmethod
    def open(cls, root: str | Path) -> "Manifest":
        root = Path(root)
        path = root / MANIFEST_NAME
        if not path.exists():
            return cls(root)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise StaleInputError(f"{path}: unreadable manifest ({exc})") from exc
        if data.get("format") != "ceulab-manifest":
            raise StaleInputError(f"{path}: not a ceulab manifest")
        return cls(root, data)

    @property
    def stages(self) -> dict:
        return self.data["stages"]

    def record(self, stage: str, config_checksum: str, outputs, inputs=None, extra=None,
               config=None) -> None:
        """Record ``stage`` with checksums of its ``outputs`` (paths relative
        to the run root) and the upstream stages it consumed."""
        entry = {
            "config_checksum": config_checksum,
            "code_version": __version__,
            "inputs": {name: self.stages[name]["config_checksum"] for name in (inputs or ())},
            "outputs": {
                str(Path(p)): file_checksum(self.root / p) for p in sorted(map(str, outputs))
            },
        }
        if config is not None:
            entry["config"] = config
        if extra:
            entry["extra"] = extra
        self.stages[stage] = entry
        self.save()

    def require(self, stage: str, config_checksum: str) -> dict:
        """Check that ``stage`` ran under the current config and that its
        files are unchanged since."""
        entry = self.stages.get(stage)
        if entry is None:
            raise StaleInputError(f"stage {stage!r} has not been run in {self.root}")
        if entry["config_checksum"] != config_checksum:
            raise StaleInputError(
                f"stage {stage!r} in {self.root} was produced by a different config; re-run it"
            )
        for rel, digest in entry["outputs"].items():
            path = self.root / rel
            if not path.exists():
                raise StaleInputError(f"{path}: recorded output is missing")
            if file_checksum(path) != digest:
                raise StaleInputError(f"{path}: contents changed since stage {stage!r} wrote it")
        return entry

    def save(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / MANIFEST_NAME
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")
