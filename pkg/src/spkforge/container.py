"""Binary container for named parameter arrays.

Byte-exact layout (all integers little-endian, no padding):

    offset  size  field
    0       4     magic, ASCII "SPKP"
    4       4     u32 format version (currently 1)
    8       4     u32 entry count N
    then N entries, each:
            2     u16 name length L
            L     name, UTF-8
            1     u8 ndim
            4*ndim  u32 dims
            8*prod(dims)  float64 values, C (row-major) order

Entries are written in sorted-name order so equal parameter sets produce
byte-identical files.  Values are float64 to round-trip training state
exactly.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import PackagingError

MAGIC = b"SPKP"
VERSION = 1


def save_params(path, arrays):
    """Write {name: ndarray} to ``path``.  Arrays are cast to float64."""
    items = sorted(arrays.items())
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(items)))
        for name, arr in items:
            # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d,
            # and tobytes() emits C order for any layout anyway
            arr = np.asarray(arr, dtype=np.float64)
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise PackagingError(f"parameter name too long: {name[:40]}...")
            if arr.ndim > 0xFF:
                raise PackagingError(f"parameter {name!r} has too many dimensions")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_params(path):
    """Read a container back into {name: float64 ndarray}."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise PackagingError(f"{path}: not a parameter container (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise PackagingError(f"{path}: unsupported container version {version}")
    out = {}
    pos = 12
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            n = int(np.prod(dims)) if ndim else 1
            vals = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).copy()
            pos += 8 * n
            out[name] = vals.reshape(dims)
    except (struct.error, ValueError) as exc:
        raise PackagingError(f"{path}: truncated or corrupt container: {exc}") from exc
    if pos != len(blob):
        raise PackagingError(f"{path}: {len(blob) - pos} trailing bytes after last entry")
    if len(out) != count:
        raise PackagingError(f"{path}: duplicate parameter names")
    return out
