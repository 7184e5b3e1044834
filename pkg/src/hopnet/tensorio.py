"""Flat binary tensor format with JSON sidecar metadata.

Layout (all little-endian):
    bytes 0..7   magic b"HOPTNSR1"
    byte  8      length D of the dtype string
    bytes 9..    D ascii bytes, a numpy dtype string such as "<f8"
    next  1      ndim (uint8)
    next  8*ndim shape (uint64 each)
    rest         row-major payload

Metadata lives next to the tensor in <path>.json (sorted keys, no
timestamps), keeping payloads byte-stable for checksum comparison.
"""

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ValidationError

MAGIC = b"HOPTNSR1"


def save_tensor(path, arr: np.ndarray, meta: dict | None = None) -> None:
    path = Path(path)
    arr = np.ascontiguousarray(arr)
    dt = arr.dtype.newbyteorder("<")
    ds = dt.str.encode()
    if len(ds) > 255:
        raise ValidationError(f"dtype string too long: {ds!r}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([len(ds)]))
        fh.write(ds)
        fh.write(bytes([arr.ndim]))
        fh.write(np.asarray(arr.shape, dtype="<u8").tobytes())
        fh.write(arr.astype(dt, copy=False).tobytes())
    if meta is not None:
        with open(path.with_name(path.name + ".json"), "w") as fh:
            json.dump(meta, fh, sort_keys=True, indent=1)
            fh.write("\n")


def load_tensor(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ValidationError(f"{path}: not a hopnet tensor file")
        dlen = fh.read(1)[0]
        dt = np.dtype(fh.read(dlen).decode())
        ndim = fh.read(1)[0]
        shape = tuple(np.frombuffer(fh.read(8 * ndim), dtype="<u8").astype(int))
        data = np.frombuffer(fh.read(), dtype=dt)
    expected = int(np.prod(shape)) if shape else 1
    if data.size != expected:
        raise ValidationError(f"{path}: payload has {data.size} elements, header says {expected}")
    arr = data.reshape(shape).copy()
    side = path.with_name(path.name + ".json")
    meta = {}
    if side.exists():
        with open(side) as fh:
            meta = json.load(fh)
    return arr, meta


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
