"""Binary container for named float64 arrays plus a JSON header.

Layout (all integers little-endian)::

    magic       8 bytes  b"ODESTRM\\x00"
    version     uint32
    header_len  uint32, then header_len bytes of UTF-8 JSON
    n_arrays    uint32
    per array:  uint16 name_len, name, uint8 ndim, ndim x uint32 dims,
                prod(dims) x float64
    checksum    32-byte SHA-256 of every preceding byte
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"ODESTRM\x00"
FORMAT_VERSION = 1


def encode(header: dict, arrays: dict[str, np.ndarray]) -> bytes:
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(head)), head, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        key = name.encode("utf-8")
        parts.append(struct.pack("<HB", len(key), arr.ndim) + key)
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def decode(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(blob) < len(MAGIC) + 8 + 32 or not blob.startswith(MAGIC):
        raise CheckpointError("not an odestream container (bad magic)")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch: file is corrupt or truncated")
    try:
        pos = len(MAGIC)
        version, head_len = struct.unpack_from("<II", body, pos)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported container version {version}")
        pos += 8
        header = json.loads(body[pos:pos + head_len].decode("utf-8"))
        pos += head_len
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            key_len, ndim = struct.unpack_from("<HB", body, pos)
            pos += 3
            name = body[pos:pos + key_len].decode("utf-8")
            pos += key_len
            shape = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            arrays[name] = np.frombuffer(body, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * n
    except CheckpointError:
        raise
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"malformed container: {exc}") from exc
    if pos != len(body):
        raise CheckpointError("trailing bytes after last array")
    return header, arrays


def write(path: str | Path, header: dict, arrays: dict[str, np.ndarray]) -> str:
    """Write a container and return the hex SHA-256 of the whole file."""
    blob = encode(header, arrays)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def read(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    return decode(blob)


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
