"""NPY / NPZ reading and writing with strict layout checks.

Only little-endian, C-ordered arrays are accepted. NPZ archives are written
with fixed zip metadata so identical arrays always give identical bytes.
"""
from __future__ import annotations

import io
import zipfile
from pathlib import Path
from typing import Mapping

import numpy as np
from numpy.lib import format as npformat

from .errors import ArrayFormatError

_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def _check_dtype(dtype: np.dtype, name: str) -> None:
    if dtype.hasobject or dtype.fields is not None or dtype.kind not in "biuf":
        raise ArrayFormatError(f"{name}: unsupported dtype {dtype.str}")
    if dtype.byteorder == ">" or (dtype.byteorder == "=" and not np.little_endian):
        raise ArrayFormatError(
            f"{name}: big-endian dtype {dtype.str}; convert with arr.astype(arr.dtype.newbyteorder('<'))")


def _parse_npy(fh, total_size: int, name: str) -> np.ndarray:
    try:
        version = npformat.read_magic(fh)
    except ValueError as exc:
        raise ArrayFormatError(f"{name}: not an NPY file ({exc})") from None
    try:
        if version == (1, 0):
            shape, fortran, dtype = npformat.read_array_header_1_0(fh)
        elif version == (2, 0):
            shape, fortran, dtype = npformat.read_array_header_2_0(fh)
        else:
            raise ArrayFormatError(f"{name}: unsupported NPY version {version[0]}.{version[1]}")
    except ValueError as exc:
        raise ArrayFormatError(f"{name}: malformed NPY header ({exc})") from None
    if fortran:
        raise ArrayFormatError(
            f"{name}: Fortran-ordered array; re-save with np.ascontiguousarray(arr)")
    _check_dtype(dtype, name)
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    actual = total_size - fh.tell()
    if actual < expected:
        raise ArrayFormatError(
            f"{name}: truncated payload, expected {expected} bytes, found {actual}")
    if actual > expected:
        raise ArrayFormatError(
            f"{name}: payload has {actual - expected} trailing bytes beyond the {expected} declared")
    payload = fh.read(expected)
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def read_array(path) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    return _parse_npy(io.BytesIO(data), len(data), str(path))


def _npy_bytes(array: np.ndarray, name: str) -> bytes:
    array = np.asarray(array)
    _check_dtype(array.dtype, name)
    buf = io.BytesIO()
    npformat.write_array(buf, np.ascontiguousarray(array), allow_pickle=False)
    return buf.getvalue()


def write_array(path, array) -> None:
    Path(path).write_bytes(_npy_bytes(array, str(path)))


def write_bundle(path, arrays: Mapping[str, np.ndarray]) -> None:
    """Write an uncompressed NPZ whose bytes depend only on the arrays."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_EPOCH)
            info.compress_type = zipfile.ZIP_STORED
            info.external_attr = 0o644 << 16
            zf.writestr(info, _npy_bytes(arrays[name], f"{path}:{name}"))


def read_bundle(path) -> dict[str, np.ndarray]:
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as exc:
        raise ArrayFormatError(f"{path}: not an NPZ archive ({exc})") from None
    out = {}
    with zf:
        for info in zf.infolist():
            if not info.filename.endswith(".npy"):
                continue
            name = info.filename[:-4]
            data = zf.read(info)
            out[name] = _parse_npy(io.BytesIO(data), len(data), f"{path}:{name}")
    return out


def read_member(path, member: str) -> np.ndarray:
    """Read ``path`` as a bare NPY, or pull ``member`` out of an NPZ bundle."""
    path = Path(path)
    if path.suffix == ".npz":
        bundle = read_bundle(path)
        if member not in bundle:
            raise ArrayFormatError(f"{path}: no member {member!r} (has {sorted(bundle)})")
        return bundle[member]
    return read_array(path)
