"""Image file IO: 16-bit depth (PNG / P5 PGM) and 8-bit RGB (PNG / P6 PPM).

Format is chosen by file extension. PNG goes through Pillow; the Netpbm
binary formats are handled here directly (big-endian samples when
maxval > 255).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError

_NETPBM = {".pgm": b"P5", ".ppm": b"P6", ".pnm": None}


def _read_netpbm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    tokens: list[bytes] = []
    pos = 0
    # header: magic, width, height, maxval; '#' comments allowed between tokens
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise DataError(f"{path}: truncated Netpbm header")
        if raw[pos : pos + 1] == b"#":
            pos = raw.find(b"\n", pos)
            if pos < 0:
                raise DataError(f"{path}: truncated Netpbm header")
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte before the raster
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise DataError(f"{path}: unsupported Netpbm magic {magic!r} (need P5 or P6)")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise DataError(f"{path}: malformed Netpbm header") from exc
    if not 0 < maxval < 65536:
        raise DataError(f"{path}: bad maxval {maxval}")
    channels = 1 if magic == b"P5" else 3
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = width * height * channels
    need = count * dtype.itemsize
    if len(raw) - pos < need:
        raise DataError(f"{path}: raster truncated ({len(raw) - pos} of {need} bytes)")
    arr = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return arr.reshape(shape).astype(np.uint16 if maxval > 255 else np.uint8)


def _write_netpbm(path: Path, arr: np.ndarray) -> None:
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    else:
        raise DataError(f"{path}: cannot write array of shape {arr.shape} as Netpbm")
    if arr.dtype == np.uint16:
        maxval, body = 65535, arr.astype(">u2").tobytes()
    else:
        maxval, body = 255, arr.astype(np.uint8).tobytes()
    h, w = arr.shape[:2]
    path.write_bytes(b"%s\n%d %d\n%d\n" % (magic, w, h, maxval) + body)


def read_image(path) -> np.ndarray:
    """Decode to ``uint8``/``uint16`` array, [H,W] or [H,W,3]."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    if path.suffix.lower() in _NETPBM:
        return _read_netpbm(path)
    try:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                return np.array(im).astype(np.uint16)
            if im.mode in ("L", "RGB"):
                return np.array(im)
            if im.mode in ("RGBA", "P", "LA"):
                return np.array(im.convert("RGB"))
            raise DataError(f"{path}: unsupported image mode {im.mode}")
    except (OSError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"{path}: cannot decode image ({exc})") from exc


def write_image(path, arr: np.ndarray) -> None:
    path = Path(path)
    arr = np.asarray(arr)
    if arr.dtype not in (np.uint8, np.uint16):
        raise DataError(f"{path}: expected uint8 or uint16 data, got {arr.dtype}")
    try:
        if path.suffix.lower() in _NETPBM:
            _write_netpbm(path, arr)
        else:
            Image.fromarray(arr).save(path)
    except OSError as exc:
        raise DataError(f"{path}: cannot write image ({exc})") from exc


def read_depth(path) -> np.ndarray:
    arr = read_image(path)
    if arr.ndim != 2:
        raise DataError(f"{path}: depth must be single-channel, got shape {arr.shape}")
    return arr.astype(np.uint16)


def read_rgb(path) -> np.ndarray:
    arr = read_image(path)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(f"{path}: RGB image must have 3 channels, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        raise DataError(f"{path}: RGB image must be 8-bit, got {arr.dtype}")
    return arr
