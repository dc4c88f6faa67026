"""Versioned JSON container for trained model weights.

One format for every model type; a type tag tells them apart and a version
field makes stale files fail loudly instead of deserializing garbage.
Floats round-trip exactly (json emits shortest-repr doubles).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "kgdial-model"
VERSION = 1


class ModelIOError(Exception):
    """Wrong format, version, or model type on disk."""


def save_model(path: str | Path, type_tag: str, config: dict,
               weights: dict[str, np.ndarray], meta: dict) -> None:
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "type": type_tag,
        "config": config,
        "meta": meta,
        "weights": {
            name: {"shape": list(arr.shape),
                   "data": np.asarray(arr, dtype=np.float64).ravel().tolist()}
            for name, arr in weights.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_model(path: str | Path, expected_type: str) -> tuple[dict, dict[str, np.ndarray], dict]:
    """Returns (config, weights, meta); raises ModelIOError on any mismatch."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != FORMAT:
        raise ModelIOError(f"{path}: not a {FORMAT} file")
    if payload.get("version") != VERSION:
        raise ModelIOError(
            f"{path}: file version {payload.get('version')} != supported {VERSION}")
    if payload.get("type") != expected_type:
        raise ModelIOError(
            f"{path}: model type {payload.get('type')!r}, expected {expected_type!r}")
    weights = {}
    for name, spec in payload["weights"].items():
        arr = np.array(spec["data"], dtype=np.float64).reshape(spec["shape"])
        if not np.isfinite(arr).all():
            raise ModelIOError(f"{path}: non-finite values in weight {name!r}")
        weights[name] = arr
    return payload["config"], weights, payload["meta"]
