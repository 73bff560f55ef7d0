"""Self-describing binary checkpoint container.

Layout: 4-byte magic "AIT1", an 8-byte little-endian header length, a
UTF-8 JSON header (model description, normalization statistics, and the
ordered parameter manifest with shapes), then the concatenated raw
float64 little-endian arrays in manifest order, C-contiguous.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .data import NormStats
from .errors import ValidationError

MAGIC = b"AIT1"

__all__ = ["MAGIC", "save_checkpoint", "load_checkpoint"]


def save_checkpoint(path, values: dict[str, np.ndarray], description: dict,
                    norm_stats: NormStats | None = None) -> None:
    """Write parameter values plus everything needed to reload them.

    ``values`` maps parameter paths to arrays (see ParameterSet.snapshot);
    ``description`` is the model wrapper's describe() output.
    """
    names = sorted(values)
    header = {
        "format_version": 1,
        "model": description,
        "norm": norm_stats.to_dict() if norm_stats is not None else None,
        "params": [{"name": n, "shape": list(values[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            arr = np.ascontiguousarray(values[n], dtype="<f8")
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict, NormStats | None]:
    """Read a checkpoint back; returns (values, description, norm_stats)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValidationError(f"not an {MAGIC.decode()} checkpoint: bad magic {magic!r}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        try:
            header = json.loads(fh.read(header_len).decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ValidationError(f"corrupt checkpoint header: {exc}") from exc
        if header.get("format_version") != 1:
            raise ValidationError(
                f"unsupported checkpoint format version {header.get('format_version')!r}"
            )
        values: dict[str, np.ndarray] = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ValidationError(f"checkpoint truncated at parameter {entry['name']!r}")
            values[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    norm = header.get("norm")
    stats = NormStats.from_dict(norm) if norm is not None else None
    return values, header["model"], stats
