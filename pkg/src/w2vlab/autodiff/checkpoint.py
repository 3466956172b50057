"""Checkpoints: one ``.npz`` archive of named float64 arrays plus a JSON header.

Layout of keys inside the archive::

    param/<name>      model parameters
    opt/<key>         optimizer state (moments under opt/m/<name>, opt/v/<name>)
    extra/<key>       any additional named arrays (e.g. PCA projection)
    __meta__          UTF-8 JSON string: seed, model kind, architecture, ...

``np.savez`` stores raw IEEE-754 bytes, so a save/load round trip is bit-exact.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def save_checkpoint(path, params: dict[str, np.ndarray], optimizer: dict | None = None,
                    extra: dict[str, np.ndarray] | None = None, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"param/{k}": np.asarray(v) for k, v in params.items()}
    for k, v in (optimizer or {}).items():
        arrays[f"opt/{k}"] = np.asarray(v)
    for k, v in (extra or {}).items():
        arrays[f"extra/{k}"] = np.asarray(v)
    arrays["__meta__"] = np.array(json.dumps(meta or {}, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> dict:
    with np.load(Path(path), allow_pickle=False) as data:
        out = {"params": {}, "optimizer": {}, "extra": {}, "meta": {}}
        for key in data.files:
            if key == "__meta__":
                out["meta"] = json.loads(str(data[key]))
                continue
            section, name = key.split("/", 1)
            target = {"param": "params", "opt": "optimizer", "extra": "extra"}[section]
            out[target][name] = data[key].copy()
    return out
