"""
Binary checkpoint codec shared by the GAN networks and the PLS model.

Layout (all integers little-endian):
    8 bytes   magic b"SKYAUGCK"
    uint32    format version (1)
    uint32    number of entries
    per entry:
        uint16    length of the entry name, followed by the UTF-8 name
        uint32    ndim, followed by ndim x uint64 dimensions
        float64   prod(dims) values in C order (one value when ndim == 0)
"""
import struct
from collections import OrderedDict

import numpy as np

from skyaug.utils.errors import DataError

MAGIC = b"SKYAUGCK"
VERSION = 1


def save_checkpoint(arrays: dict, path) -> None:
    """
    Write named arrays to `path`.

    Args:
        arrays (dict): Ordered mapping of entry name to array-like (torch tensors
            are accepted through their numpy view).
        path (str): Destination file.
    """
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(arrays)))
        for name, value in arrays.items():
            if hasattr(value, "detach"):
                value = value.detach().cpu().numpy()
            arr = np.ascontiguousarray(np.asarray(value, dtype="<f8"))
            _name = name.encode("utf-8")
            f.write(struct.pack("<H", len(_name)))
            f.write(_name)
            f.write(struct.pack("<I", arr.ndim))
            if arr.ndim:
                f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes(order="C"))


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    """
    Read a checkpoint written by `save_checkpoint`.

    Raises:
        DataError: If the magic string, version or payload sizes do not match.
    """
    with open(path, "rb") as f:
        buffer = f.read()

    if buffer[: len(MAGIC)] != MAGIC:
        raise DataError(f"'{path}' is not a skyaug checkpoint (bad magic)")

    offset = len(MAGIC)
    try:
        version, count = struct.unpack_from("<II", buffer, offset)
        offset += 8
        if version != VERSION:
            raise DataError(f"Unsupported checkpoint version {version} in '{path}'")

        arrays = OrderedDict()
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", buffer, offset)
            offset += 2
            name = buffer[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<I", buffer, offset)
            offset += 4
            shape = struct.unpack_from(f"<{ndim}Q", buffer, offset) if ndim else ()
            offset += 8 * ndim
            n_values = int(np.prod(shape)) if ndim else 1
            n_bytes = 8 * n_values
            if offset + n_bytes > len(buffer):
                raise DataError(f"Truncated payload for entry '{name}' in '{path}'")
            arrays[name] = np.frombuffer(buffer, dtype="<f8", count=n_values, offset=offset).reshape(shape).copy()
            offset += n_bytes
    except struct.error as e:
        raise DataError(f"Truncated checkpoint '{path}': {e}")

    if offset != len(buffer):
        raise DataError(f"Trailing bytes after the last entry in '{path}'")

    return arrays
