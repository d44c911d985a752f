"""Model weight checkpoints: a JSON header followed by a flat f32le payload.

Layout: 4-byte magic "AMDW", uint32 little-endian header length, the UTF-8
JSON header {version, config, param_index:[{name, shape, offset}]}, then the
payload. Offsets are byte positions within the payload. Weights are stored as
32-bit floats, so save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import ModelConfig

MAGIC = b"AMDW"
VERSION = 1


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray],
                    config: ModelConfig, extra: dict | None = None) -> None:
    index = []
    offset = 0
    blobs = []
    for name, value in params.items():
        blob = np.ascontiguousarray(value, dtype="<f4").tobytes()
        index.append({"name": name, "shape": list(value.shape),
                      "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {"version": VERSION, "config": config.to_dict(),
              "param_index": index}
    if extra:
        header["extra"] = extra
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path
                    ) -> tuple[dict[str, np.ndarray], ModelConfig, dict]:
    """Returns (params as float64 arrays, config, extra header fields)."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: bad magic, not a checkpoint file")
    (header_len,) = struct.unpack("<I", raw[4:8])
    try:
        header = json.loads(raw[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: corrupt checkpoint header: {e}") from e
    if header.get("version") != VERSION:
        raise DataError(
            f"{path}: unsupported checkpoint version {header.get('version')!r}")
    payload = raw[8 + header_len:]
    params: dict[str, np.ndarray] = {}
    for entry in header["param_index"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        lo = entry["offset"]
        hi = lo + 4 * count
        if hi > len(payload):
            raise DataError(
                f"{path}: payload length {len(payload)} bytes, parameter "
                f"{entry['name']!r} needs {hi}")
        arr = np.frombuffer(payload[lo:hi], dtype="<f4").reshape(shape)
        params[entry["name"]] = arr.astype(np.float64)
    config = ModelConfig.from_dict(header["config"])
    return params, config, header.get("extra", {})
