"""Binary PGM (P5) reading and writing.

8-bit images use maxval 255; 16-bit images use maxval 65535 stored
big-endian, as the format requires.
"""

from pathlib import Path

import numpy as np

from .errors import FormatError, MissingFileError, ValidationError


def write_pgm(path, image):
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValidationError("PGM images must be 2-D")
    if img.dtype == np.uint8:
        maxval, data = 255, img.tobytes()
    elif img.dtype == np.uint16:
        maxval, data = 65535, img.astype(">u2").tobytes()
    else:
        raise ValidationError(f"unsupported dtype {img.dtype}; use uint8 or uint16")
    h, w = img.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + data)


def _tokens(buf):
    """Yield (token, end_offset) for the three header fields after the magic."""
    pos = 2
    out = []
    while len(out) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated header")
        out.append(buf[start:pos])
    return out, pos + 1  # exactly one whitespace byte precedes the raster


def read_pgm(path):
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"missing file {path}")
    buf = path.read_bytes()
    if buf[:2] != b"P5":
        raise FormatError("not a binary PGM (P5) file", path)
    try:
        (w, h, maxval), offset = _tokens(buf)
        w, h, maxval = int(w), int(h), int(maxval)
    except (FormatError, ValueError) as exc:
        raise FormatError(f"bad header ({exc})", path) from None
    if w <= 0 or h <= 0 or not (0 < maxval < 65536):
        raise FormatError("invalid dimensions or maxval", path)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    need = w * h * dtype.itemsize
    data = buf[offset:]
    if len(data) < need:
        raise FormatError(f"truncated raster: expected {need} bytes, got {len(data)}", path)
    if len(data) > need:
        raise FormatError(f"trailing bytes after raster ({len(data) - need})", path)
    img = np.frombuffer(data, dtype=dtype).reshape(h, w)
    return img.astype(np.uint16 if maxval > 255 else np.uint8)
