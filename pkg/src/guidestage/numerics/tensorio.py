"""Binary tensor files.

Layout: the 8-byte magic ``GSTENS01``, a little-endian u32 rank, ``rank``
little-endian u32 dims, then the float32 payload in row-major order.
Values are stored as float32, so a round trip rounds float64 input.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"GSTENS01"


class TensorFormatError(ValueError):
    pass


def tensor_to_bytes(arr) -> bytes:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if any(d <= 0 for d in arr.shape):
        raise TensorFormatError(f"dims must be positive, got {arr.shape}")
    header = MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    return header + arr.astype("<f4").tobytes(order="C")


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 12 or buf[:8] != MAGIC:
        raise TensorFormatError("bad magic")
    (rank,) = struct.unpack_from("<I", buf, 8)
    off = 12 + 4 * rank
    if len(buf) < off:
        raise TensorFormatError("truncated header")
    dims = struct.unpack_from(f"<{rank}I", buf, 12)
    n = int(np.prod(dims)) if rank else 0
    if len(buf) != off + 4 * n:
        raise TensorFormatError(f"payload has {len(buf) - off} bytes, expected {4 * n}")
    return np.frombuffer(buf, dtype="<f4", offset=off).astype(np.float64).reshape(dims)


def atomic_write(path: str | os.PathLike, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_tensor(path, arr, sidecar: dict | None = None) -> None:
    atomic_write(path, tensor_to_bytes(arr))
    if sidecar is not None:
        side = Path(str(path) + ".json")
        atomic_write(side, (json.dumps(sidecar, sort_keys=True, indent=2) + "\n").encode())


def load_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())
