"""QVOL volume files, raw import and PNG slice export.

A QVOL file is the 6-byte magic ``QVOL1\\n``, one line of UTF-8 JSON::

    {"dims": [N1, N2, N3], "spacing": [h1, h2, h3], "dtype": "f32", "order": "x-fastest"}

and then ``N1*N2*N3`` little-endian samples with the first index varying
fastest.  ``f32`` files hold scalar volumes, ``u8`` files hold masks (0/1).
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import BadHeader, BadMagic, TruncatedPayload
from .volume import GridSpec, RoiMask, ScalarVolume

__all__ = ["MAGIC", "write_qvol", "read_qvol", "read_header", "quantize", "import_raw",
           "export_slice", "slice_to_bytes"]

MAGIC = b"QVOL1\n"
_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}
_HEADER_KEYS = ("dims", "spacing", "dtype", "order")
_MAX_HEADER = 1 << 16


def _header_bytes(grid: GridSpec, dtype: str) -> bytes:
    header = {"dims": list(grid.dims), "spacing": [float(h) for h in grid.spacing],
              "dtype": dtype, "order": "x-fastest"}
    return json.dumps(header, separators=(", ", ": ")).encode("utf-8") + b"\n"


def quantize(vol: ScalarVolume) -> ScalarVolume:
    """Round a volume to float32 precision, i.e. what a QVOL round trip returns."""
    return vol.like(vol.data.astype(np.float32).astype(np.float64))


def write_qvol(obj, path) -> None:
    """Write a :class:`ScalarVolume` (as f32) or :class:`RoiMask` (as u8)."""
    if isinstance(obj, RoiMask):
        dtype, arr = "u8", obj.member.astype(np.uint8)
    elif isinstance(obj, ScalarVolume):
        dtype, arr = "f32", obj.data
    else:
        raise TypeError(f"cannot write {type(obj).__name__} as QVOL")
    payload = np.asarray(arr, dtype=_DTYPES[dtype]).ravel(order="F").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_header_bytes(obj.grid, dtype))
        fh.write(payload)


def _parse_header(line: bytes) -> tuple[GridSpec, str]:
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadHeader(f"header is not valid JSON: {exc}") from None
    if not isinstance(header, dict) or tuple(header) != _HEADER_KEYS:
        raise BadHeader(f"header keys must be exactly {list(_HEADER_KEYS)} in that order")
    if header["dtype"] not in _DTYPES:
        raise BadHeader(f"unsupported dtype {header['dtype']!r}")
    if header["order"] != "x-fastest":
        raise BadHeader(f"unsupported order {header['order']!r}")
    try:
        dims = tuple(header["dims"])
        if len(dims) != 3 or not all(isinstance(n, int) and not isinstance(n, bool)
                                     for n in dims):
            raise ValueError("dims must be three integers")
        grid = GridSpec(dims, tuple(float(h) for h in header["spacing"]))
    except (TypeError, ValueError) as exc:
        raise BadHeader(f"invalid grid in header: {exc}") from None
    return grid, header["dtype"]


def read_header(path) -> tuple[GridSpec, str]:
    with open(path, "rb") as fh:
        grid, dtype, _ = _read_prefix(fh)
    return grid, dtype


def _read_prefix(fh):
    if fh.read(len(MAGIC)) != MAGIC:
        raise BadMagic("not a QVOL1 file")
    line = fh.readline(_MAX_HEADER)
    if not line.endswith(b"\n"):
        raise BadHeader("header line is missing or not newline-terminated")
    grid, dtype = _parse_header(line[:-1])
    return grid, dtype, fh.tell()


def read_qvol(path):
    """Read a QVOL file; f32 gives a :class:`ScalarVolume`, u8 a :class:`RoiMask`."""
    with open(path, "rb") as fh:
        grid, dtype, _ = _read_prefix(fh)
        dt = _DTYPES[dtype]
        need = grid.size * dt.itemsize
        payload = fh.read(need)
        if len(payload) < need:
            raise TruncatedPayload(f"payload has {len(payload)} bytes, expected {need}")
        if fh.read(1):
            raise BadHeader("trailing bytes after the payload")
    arr = np.frombuffer(payload, dtype=dt).reshape(grid.shape, order="F")
    if dtype == "u8":
        if np.any(arr > 1):
            raise BadHeader("u8 mask payload must contain only 0 and 1")
        return RoiMask(grid, arr.astype(bool))
    return ScalarVolume(grid, arr.astype(np.float64))


def import_raw(path, dims, spacing=(1.0, 1.0, 1.0), dtype: str = "float32",
               byteorder: str = "little", order: str = "x-fastest", offset: int = 0,
               scale: float = 1.0) -> ScalarVolume:
    """Load headerless samples into a volume (optionally multiplied by ``scale``)."""
    dt = np.dtype(dtype).newbyteorder("<" if byteorder == "little" else ">")
    grid = GridSpec(tuple(int(n) for n in dims), tuple(float(h) for h in spacing))
    raw = Path(path).read_bytes()[offset:]
    need = grid.size * dt.itemsize
    if len(raw) < need:
        raise TruncatedPayload(f"raw file has {len(raw)} bytes after offset, expected {need}")
    if order not in ("x-fastest", "z-fastest"):
        raise ValueError("order must be 'x-fastest' or 'z-fastest'")
    arr = np.frombuffer(raw[:need], dtype=dt).astype(np.float64)
    arr = arr.reshape(grid.shape, order="F" if order == "x-fastest" else "C")
    return ScalarVolume(grid, arr * scale)


_AXES = {"x": 0, "y": 1, "z": 2}


def slice_to_bytes(vol: ScalarVolume, axis: str, index: int, window) -> np.ndarray:
    """8-bit image of one slice: ``round((clip(v) - lo) / (hi - lo) * 255)``, half away from zero.

    The image has the later of the two remaining grid axes as rows and the
    earlier as columns (so an axial ``z`` slice shows x across and y down).
    """
    if axis not in _AXES:
        raise ValueError("axis must be one of 'x', 'y', 'z'")
    ax = _AXES[axis]
    n = vol.grid.dims[ax]
    if not 0 <= index < n:
        raise IndexError(f"slice index {index} out of range [0, {n})")
    lo, hi = (float(w) for w in window)
    if not lo < hi:
        raise ValueError("window needs lo < hi")
    plane = np.take(vol.data, index, axis=ax).T
    scaled = (np.clip(plane, lo, hi) - lo) / (hi - lo) * 255.0
    # non-negative, so half-away-from-zero is floor(x + 0.5)
    return np.floor(scaled + 0.5).astype(np.uint8)


def export_slice(vol: ScalarVolume, axis: str, index: int, window, path) -> None:
    img = Image.fromarray(slice_to_bytes(vol, axis, index, window))
    img.save(path, format="PNG", optimize=False)
