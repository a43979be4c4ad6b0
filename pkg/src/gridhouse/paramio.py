"""Versioned flat-binary parameter snapshots: a magic string, a JSON header
describing the arrays, then raw little-endian buffers in header order."""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"GHPARAMS"
FORMAT_VERSION = 1


def save_params(path: str, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    arrays = []
    buffers = []
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        arrays.append({"name": name, "shape": list(arr.shape)})
        buffers.append(arr.tobytes())
    header = json.dumps({
        "format_version": FORMAT_VERSION,
        "arrays": arrays,
        "meta": meta or {},
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack(">I", len(header)))
        f.write(header)
        for buf in buffers:
            f.write(buf)


def load_params(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a parameter snapshot (bad magic)")
        (hlen,) = struct.unpack(">I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format_version {header.get('format_version')!r}")
        params = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            n = int(np.prod(shape)) if shape else 1
            buf = f.read(8 * n)
            if len(buf) != 8 * n:
                raise ValueError(f"{path}: truncated buffer for {spec['name']}")
            params[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        trailing = f.read(1)
        if trailing:
            raise ValueError(f"{path}: trailing bytes after last array")
    return params, header.get("meta", {})
