"""Versioned binary checkpoints and parameter-hash manifests.

Layout (little-endian)::

    magic   b"CVTNCKPT"
    u16     format version
    u32     config length, then that many bytes of UTF-8 JSON
    u32     parameter count
    per parameter:
        u16 name length, UTF-8 name
        u8  ndim, ndim x u32 extents
        product(extents) x f64 row-major data
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import CvtnModel, ModelConfig

MAGIC = b"CVTNCKPT"
VERSION = 1


def serialize_params(params: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(params)))
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def _read_params(buf: io.BytesIO) -> dict[str, np.ndarray]:
    def take(n):
        chunk = buf.read(n)
        if len(chunk) != n:
            raise DataError("checkpoint truncated")
        return chunk

    (count,) = struct.unpack("<I", take(4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n = int(np.prod(shape, dtype=np.int64))
        out[name] = np.frombuffer(take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
    return out


def group_digest(model: CvtnModel, group: str) -> str:
    """SHA-256 of one parameter group's serialized bytes."""
    return hashlib.sha256(serialize_params({k: p.data for k, p in model.group(group).items()})).hexdigest()


def save(model: CvtnModel, path: str | Path) -> None:
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        fh.write(serialize_params({k: p.data for k, p in model.parameters().items()}))


def load(path: str | Path) -> CvtnModel:
    buf = io.BytesIO(Path(path).read_bytes())
    if buf.read(len(MAGIC)) != MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack("<H", buf.read(2))
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (clen,) = struct.unpack("<I", buf.read(4))
    model = CvtnModel(ModelConfig.from_dict(json.loads(buf.read(clen).decode("utf-8"))))
    params = _read_params(buf)
    missing = set(model.parameters()) - set(params)
    if missing:
        raise DataError(f"{path}: missing parameters {sorted(missing)}")
    model.load_state_dict(params)
    return model


def write_manifest(model: CvtnModel, path: str | Path) -> None:
    """Plain-text ``group name shape sha256`` lines plus one digest per group."""
    lines = []
    for group in ("cve", "cte"):
        for name, p in sorted(model.group(group).items()):
            digest = hashlib.sha256(np.ascontiguousarray(p.data, dtype="<f8").tobytes()).hexdigest()
            shape = "x".join(str(s) for s in p.shape)
            lines.append(f"{group}\t{name}\t{shape}\t{digest}")
    for group in ("cve", "cte"):
        lines.append(f"#group\t{group}\t-\t{group_digest(model, group)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> dict[str, str]:
    """Map of parameter name (or ``#group:<name>``) to digest."""
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        kind, name, _shape, digest = line.split("\t")
        out[f"#group:{name}" if kind == "#group" else name] = digest
    return out
