"""Independent writer/reader for the promptdist tensor container.

Implemented from the documented byte layout, deliberately not importing the
consumer package: round-tripping through two codebases is what keeps the
format honest.

    bytes 0..3    magic "PDLE"
    bytes 4..7    version u32 le (1)
    bytes 8..11   dtype code u32 le: 0 = f32, 1 = f64, 2 = u32
    bytes 12..15  rank u32 le
    then          rank dims, u64 le each
    then          row-major payload
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

MAGIC = b"PDLE"
VERSION = 1
DTYPES = {"f32": (0, np.dtype("<f4")), "f64": (1, np.dtype("<f8")),
          "u32": (2, np.dtype("<u4"))}
CODES = {code: np_dtype for _, (code, np_dtype) in DTYPES.items()}


class TensorFileError(ValueError):
    pass


def write_tensor(path, array: np.ndarray, dtype: str) -> None:
    if dtype not in DTYPES:
        raise TensorFileError(f"unknown dtype {dtype!r}")
    code, np_dtype = DTYPES[dtype]
    arr = np.asarray(array)
    payload = arr.astype(np_dtype, order="C")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", VERSION, code, arr.ndim))
        if arr.ndim:
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(payload.tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    blob = open(path, "rb").read()
    if blob[:4] != MAGIC:
        raise TensorFileError(f"{path}: bad magic")
    version, code, rank = struct.unpack_from("<III", blob, 4)
    if version != VERSION:
        raise TensorFileError(f"{path}: unsupported version {version}")
    if code not in CODES:
        raise TensorFileError(f"{path}: unknown dtype code {code}")
    np_dtype = CODES[code]
    dims = struct.unpack_from(f"<{rank}Q", blob, 16) if rank else ()
    offset = 16 + 8 * rank
    count = int(np.prod(dims)) if dims else 1
    if len(blob) - offset != count * np_dtype.itemsize:
        raise TensorFileError(f"{path}: payload size mismatch")
    return np.frombuffer(blob, dtype=np_dtype, count=count,
                         offset=offset).reshape(dims).copy()


def sha256_of(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()
