"""Binary label/logit files, atomic writes and content-hash manifests.

Label sequence (``.lbl``)::

    bytes 0-3    magic b"MSQ1"
    bytes 4-19   uint32 LE: width, height, frames, objects
    then         frames * height * width uint8 labels, row-major per frame

Logit frame (``.lgt``)::

    bytes 0-3    magic b"LGT1"
    bytes 4-15   uint32 LE: channels, height, width
    then         channels * height * width float32 LE, channel-major
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import DataError

LABEL_MAGIC = b"MSQ1"
LOGIT_MAGIC = b"LGT1"
_LABEL_HEADER = struct.Struct("<4sIIII")
_LOGIT_HEADER = struct.Struct("<4sIII")


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    atomic_write_bytes(path, dumps_json(obj).encode())


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def encode_labels(labels, num_objects: int) -> bytes:
    labels = np.asarray(labels)
    if labels.ndim != 3:
        raise DataError(f"label sequence must be (T, H, W), got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() > num_objects):
        raise DataError(f"labels must lie in 0..{num_objects}")
    t, h, w = labels.shape
    return _LABEL_HEADER.pack(LABEL_MAGIC, w, h, t, num_objects) + labels.astype("u1").tobytes()


def decode_labels(data: bytes, source="<bytes>") -> tuple[np.ndarray, int]:
    if len(data) < _LABEL_HEADER.size:
        raise DataError(f"{source}: truncated header")
    magic, w, h, t, n = _LABEL_HEADER.unpack_from(data)
    if magic != LABEL_MAGIC:
        raise DataError(f"{source}: bad magic {magic!r} in header field 'magic'")
    for name, v in (("width", w), ("height", h)):
        if v == 0:
            raise DataError(f"{source}: header field '{name}' must be positive")
    if n > 255:
        raise DataError(f"{source}: header field 'objects' = {n} exceeds 8-bit labels")
    expected = _LABEL_HEADER.size + t * h * w
    if len(data) != expected:
        raise DataError(f"{source}: header field 'frames' = {t} implies {expected} bytes, file has {len(data)}")
    labels = np.frombuffer(data, dtype="u1", offset=_LABEL_HEADER.size).reshape(t, h, w).copy()
    if labels.size and labels.max() > n:
        raise DataError(f"{source}: label {labels.max()} exceeds header field 'objects' = {n}")
    return labels, n


def write_labels(path, labels, num_objects: int):
    atomic_write_bytes(path, encode_labels(labels, num_objects))


def read_labels(path) -> tuple[np.ndarray, int]:
    return decode_labels(Path(path).read_bytes(), source=str(path))


def encode_logits(logits) -> bytes:
    arr = np.asarray(logits)
    if arr.ndim != 3:
        raise DataError(f"logit map must be (C, H, W), got {arr.shape}")
    c, h, w = arr.shape
    return _LOGIT_HEADER.pack(LOGIT_MAGIC, c, h, w) + arr.astype("<f4").tobytes()


def decode_logits(data: bytes, source="<bytes>") -> np.ndarray:
    if len(data) < _LOGIT_HEADER.size:
        raise DataError(f"{source}: truncated header")
    magic, c, h, w = _LOGIT_HEADER.unpack_from(data)
    if magic != LOGIT_MAGIC:
        raise DataError(f"{source}: bad magic {magic!r} in header field 'magic'")
    expected = _LOGIT_HEADER.size + 4 * c * h * w
    if len(data) != expected:
        raise DataError(f"{source}: header dims {c}x{h}x{w} imply {expected} bytes, file has {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=_LOGIT_HEADER.size).reshape(c, h, w).astype(np.float64)


def write_logits(path, logits):
    atomic_write_bytes(path, encode_logits(logits))


def read_logits(path) -> np.ndarray:
    return decode_logits(Path(path).read_bytes(), source=str(path))


def logit_path(root, branch: str, frame: int) -> Path:
    return Path(root) / "logits" / branch / f"frame_{frame:05d}.lgt"


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, command: str, files, extra=None) -> dict:
    """Write ``manifest.json`` hashing ``files`` (paths relative to ``out_dir``)."""
    out_dir = Path(out_dir)
    artifacts = {}
    for f in sorted(Path(p).relative_to(out_dir).as_posix() for p in files):
        artifacts[f] = sha256_file(out_dir / f)
    manifest = {"command": command, "artifacts": artifacts}
    if extra:
        manifest.update(extra)
    write_json(out_dir / "manifest.json", manifest)
    return manifest
