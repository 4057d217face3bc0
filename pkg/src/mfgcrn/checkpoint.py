"""Single-file parameter checkpoints.

The file is a numpy ``.npz`` archive written without pickling. Every parameter
is stored as a little-endian float64 array under its store path, and a JSON
header (format version, model config, normalisation stats, free-form extras)
is stored as UTF-8 bytes under ``__header__``.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import NormalizationStats
from .errors import SchemaError
from .model import ModelConfig
from .numerics import ParameterStore

FORMAT = "mfgcrn-checkpoint"
VERSION = 1
_HEADER = "__header__"


def save_checkpoint(path, store: ParameterStore, cfg: ModelConfig,
                    stats: NormalizationStats | None = None, extra: dict | None = None) -> Path:
    header = {"format": FORMAT, "version": VERSION, "model": cfg.to_dict(),
              "stats": stats.to_dict() if stats is not None else None,
              "shapes": {p: list(v.shape) for p, v in store.items()}, "extra": extra or {}}
    arrays = {p: np.ascontiguousarray(v, dtype="<f8") for p, v in store.items()}
    arrays[_HEADER] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path, dtype=np.float64):
    """Returns (ParameterStore, ModelConfig, NormalizationStats | None, extra)."""
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise SchemaError(f"{path}: not a checkpoint ({exc})") from exc
    with archive:
        if _HEADER not in archive.files:
            raise SchemaError(f"{path}: missing checkpoint header")
        header = json.loads(archive[_HEADER].tobytes().decode())
        if header.get("format") != FORMAT:
            raise SchemaError(f"{path}: unknown format {header.get('format')!r}")
        if header.get("version") != VERSION:
            raise SchemaError(f"{path}: unsupported checkpoint version {header.get('version')}")
        store = ParameterStore(dtype)
        for p in sorted(header["shapes"]):
            arr = archive[p]
            if list(arr.shape) != header["shapes"][p]:
                raise SchemaError(f"{path}: slot {p} has shape {arr.shape}, header says {header['shapes'][p]}")
            store.add(p, arr)
    cfg = ModelConfig.from_dict(header["model"])
    stats = NormalizationStats.from_dict(header["stats"]) if header["stats"] is not None else None
    return store, cfg, stats, header["extra"]
