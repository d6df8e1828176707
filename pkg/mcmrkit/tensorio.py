"""
MCMR tensor files.

Layout, all little-endian::

    magic    4 bytes   b"MCMR"
    version  u32       1
    dtype    u32       0 = complex64, 1 = complex128
    ndim     u32
    dims     u64 each  row-major, slowest first
    payload            interleaved (real, imag) floats
"""
import logging
import math
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
import torch

from .exceptions import (
    BadMagicError,
    TrailingBytesError,
    TruncatedPayloadError,
    UnsupportedDtypeError,
    UnsupportedVersionError,
)
from .types import DType

logger = logging.getLogger(__name__)

MAGIC = b"MCMR"
VERSION = 1

_PREAMBLE = struct.Struct("<4sIII")
_NUMPY_DTYPES = {
    DType.Complex64: np.dtype("<c8"),
    DType.Complex128: np.dtype("<c16"),
}


def header_size(ndim: int) -> int:
    return _PREAMBLE.size + 8 * ndim


def save_tensor(
    path: str | os.PathLike[str],
    t: torch.Tensor,
) -> None:
    """
    Write a tensor to an MCMR file.

    Real tensors are stored as complex with a zero imaginary part.
    The file is written next to its destination and moved into place, so a failed
    write never leaves a partial file behind.

    :param path: Destination file.
    :param t: Tensor to write, at least one dimension.
    """
    if t.dim() == 0:
        raise ValueError("Tensor must have at least one dimension")
    dtype = DType.of(t.dtype)
    array = t.detach().cpu().to(dtype.tensor_dtype).contiguous().numpy()
    array = array.astype(_NUMPY_DTYPES[dtype], copy=False)

    header = _PREAMBLE.pack(MAGIC, VERSION, int(dtype), array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)

    target = Path(path)
    descriptor, temporary = tempfile.mkstemp(dir=target.parent, prefix=".mcmr-")
    try:
        with os.fdopen(descriptor, "wb") as file:
            file.write(header)
            file.write(array.tobytes(order="C"))
        os.replace(temporary, target)
    except BaseException:
        Path(temporary).unlink(missing_ok=True)
        raise
    logger.debug("Wrote %s %s to %s", dtype, list(array.shape), target)


def load_tensor(path: str | os.PathLike[str]) -> torch.Tensor:
    """
    Read a tensor from an MCMR file.

    :param path: Source file.

    :return: Complex tensor with the stored dims and dtype.
    """
    raw = Path(path).read_bytes()
    if len(raw) < _PREAMBLE.size or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: not an MCMR tensor file")
    _, version, code, ndim = _PREAMBLE.unpack_from(raw)
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: format version {version}")
    try:
        dtype = DType(code)
    except ValueError:
        raise UnsupportedDtypeError(f"{path}: dtype code {code}")
    if ndim == 0 or len(raw) < header_size(ndim):
        raise TruncatedPayloadError(f"{path}: header declares {ndim} dims")

    dims = struct.unpack_from(f"<{ndim}Q", raw, _PREAMBLE.size)
    if any(extent < 1 for extent in dims):
        raise TruncatedPayloadError(f"{path}: empty extent in {list(dims)}")
    numpy_dtype = _NUMPY_DTYPES[dtype]
    expected = math.prod(dims) * numpy_dtype.itemsize
    payload = raw[header_size(ndim) :]
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"{path}: dims {list(dims)} need {expected} bytes, found {len(payload)}"
        )
    if len(payload) > expected:
        raise TrailingBytesError(
            f"{path}: {len(payload) - expected} bytes past the declared payload"
        )

    array = np.frombuffer(payload, dtype=numpy_dtype).reshape(dims)
    return torch.from_numpy(array.astype(numpy_dtype.newbyteorder("="), copy=True))


def load_real(path: str | os.PathLike[str]) -> torch.Tensor:
    """
    Read a tensor that holds real data (masks, flows) and drop the imaginary part.
    """
    return load_tensor(path).real.contiguous()
