"""Checkpoint files: ``.npz`` holding the parameter arrays plus a JSON header
with format version, model config and a SHA-256 over the arrays."""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelParams

FORMAT_VERSION = 1
_META = "__meta__"
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


def save(params: ModelParams, path: str | Path, extra: dict | None = None) -> str:
    """Write ``params`` to ``path``; returns the parameter checksum."""
    digest = params.checksum()
    meta = {
        "format": "ceulab-checkpoint",
        "version": FORMAT_VERSION,
        "config": params.config.to_dict(),
        "checksum": digest,
        "extra": extra or {},
    }
    payload = dict(params.arrays)
    payload[_META] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    # np.savez stamps the wall clock into the zip; a fixed date keeps files byte-stable
    with zipfile.ZipFile(Path(path), "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(payload):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(payload[name]))
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=_ZIP_DATE), buf.getvalue())
    return digest


def load(path: str | Path) -> tuple[ModelParams, dict]:
    """Read a checkpoint, verifying version and checksum."""
    try:
        with np.load(Path(path)) as data:
            if _META not in data:
                raise CheckpointError(f"{path}: missing checkpoint header")
            meta = json.loads(bytes(data[_META]).decode())
            arrays = {k: data[k].astype(np.float64) for k in data.files if k != _META}
    except (zipfile.BadZipFile, ValueError, EOFError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    if meta.get("format") != "ceulab-checkpoint" or meta.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format {meta.get('version')}")
    params = ModelParams(ModelConfig(**meta["config"]), arrays)
    if params.checksum() != meta["checksum"]:
        raise CheckpointError(f"{path}: checksum mismatch")
    return params, meta
