"""Checkpoint container: named float64 tensors plus a JSON header.

Layout (a NumPy ``.npz`` archive):

* ``__header__``: UTF-8 JSON bytes ``{"format": "vila-ckpt/1", "kind": ..., "config": {...}, "extra": {...}}``
* every other entry: one parameter tensor under its flat name, e.g. ``enc.L0.wq``

Shapes are carried by the arrays themselves.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "vila-ckpt/1"


def save_checkpoint(path, params: dict, kind: str, config: dict, extra: dict | None = None) -> None:
    header = {"format": FORMAT, "kind": kind, "config": config, "extra": extra or {}}
    blob = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    with open(Path(path), "wb") as fh:
        np.savez(fh, __header__=blob, **{k: np.asarray(v) for k, v in sorted(params.items())})


def load_checkpoint(path) -> tuple[dict, dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(bytes(data["__header__"]).decode())
        if header.get("format") != FORMAT:
            raise ValueError(f"unsupported checkpoint format {header.get('format')!r}")
        params = {k: data[k].astype(np.float64) for k in data.files if k != "__header__"}
    return params, header
