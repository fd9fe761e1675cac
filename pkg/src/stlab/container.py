"""Binary container with JSON sidecar for datasets and networks.

Layout: ``<base>.bin`` holds the named arrays back to back, each written as
raw float64 little-endian in column-major order; ``<base>.json`` records the
array directory (name, rows, cols, byte offset) plus caller metadata. The
sidecar is canonical JSON (sorted keys), so re-saving identical content is
byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_NAME = "stlab-container-v1"


def save_arrays(base: str | Path, arrays: dict[str, np.ndarray], meta: dict) -> tuple[Path, Path]:
    """Write arrays + metadata; returns (bin_path, json_path)."""
    base = Path(base)
    base.parent.mkdir(parents=True, exist_ok=True)
    bin_path = base.with_suffix(".bin")
    json_path = base.with_suffix(".json")

    directory = []
    offset = 0
    with open(bin_path, "wb") as fh:
        for name, arr in arrays.items():
            a = np.asarray(arr, dtype=np.float64)
            if a.ndim != 2:
                raise ValueError(f"array {name!r} must be 2-D, got shape {a.shape}")
            blob = np.asfortranarray(a).tobytes(order="F")
            fh.write(blob)
            directory.append(
                {"name": name, "rows": a.shape[0], "cols": a.shape[1], "offset": offset}
            )
            offset += len(blob)

    sidecar = {"format": FORMAT_NAME, "arrays": directory, "meta": meta}
    json_path.write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")
    return bin_path, json_path


def load_arrays(base: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back arrays + metadata written by :func:`save_arrays`."""
    base = Path(base)
    sidecar = json.loads(base.with_suffix(".json").read_text())
    if sidecar.get("format") != FORMAT_NAME:
        raise ValueError(f"unrecognized container format: {sidecar.get('format')!r}")
    raw = base.with_suffix(".bin").read_bytes()
    arrays = {}
    for entry in sidecar["arrays"]:
        rows, cols, offset = entry["rows"], entry["cols"], entry["offset"]
        count = rows * cols
        flat = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        arrays[entry["name"]] = flat.reshape((rows, cols), order="F").copy()
    return arrays, sidecar["meta"]
