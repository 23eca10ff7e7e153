"""Readers and writers for PGM, PPM, PFM and CSV grids."""

from __future__ import annotations

import csv
import io
import os
import sys

import numpy as np

from .errors import InvalidArgumentError, ParseError


class _Header:
    """Whitespace/comment tokenizer over the ASCII header of a netpbm file."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def token(self) -> tuple[bytes, int]:
        d, n = self.data, len(self.data)
        while self.pos < n:
            c = d[self.pos : self.pos + 1]
            if c == b"#":
                while self.pos < n and d[self.pos : self.pos + 1] not in (b"\n", b"\r"):
                    self.pos += 1
            elif c.isspace():
                self.pos += 1
            else:
                break
        start = self.pos
        while self.pos < n and not d[self.pos : self.pos + 1].isspace() and d[self.pos : self.pos + 1] != b"#":
            self.pos += 1
        if start == self.pos:
            raise ParseError("unexpected end of header", offset=start)
        return d[start : self.pos], start

    def integer(self, what: str) -> int:
        tok, at = self.token()
        try:
            value = int(tok)
        except ValueError:
            raise ParseError(f"bad {what} {tok!r}", offset=at) from None
        if value <= 0:
            raise ParseError(f"{what} must be positive", offset=at)
        return value

    def end(self) -> int:
        """Consume the single whitespace byte that ends the header."""
        if self.pos >= len(self.data) or not self.data[self.pos : self.pos + 1].isspace():
            raise ParseError("header must end with one whitespace byte", offset=self.pos)
        self.pos += 1
        return self.pos


def _read_bytes(path) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def _quantize(a: np.ndarray, maxval: int) -> np.ndarray:
    return np.rint(np.clip(a, 0.0, 1.0) * maxval)


def read_netpbm(path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) file into floats in [0, 1].

    PGM gives an ``(H, W)`` array, PPM ``(H, W, 3)``.
    """
    data = _read_bytes(path)
    hdr = _Header(data)
    magic, at = hdr.token()
    if magic not in (b"P5", b"P6"):
        raise ParseError(f"expected magic P5 or P6, got {magic!r}", offset=at)
    channels = 3 if magic == b"P6" else 1
    width = hdr.integer("width")
    height = hdr.integer("height")
    maxval = hdr.integer("maxval")
    if maxval > 65535:
        raise ParseError("maxval exceeds 65535", offset=hdr.pos)
    start = hdr.end()
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * channels * dtype.itemsize
    if len(data) - start < need:
        raise ParseError(f"truncated pixel data: need {need} bytes, have {len(data) - start}", offset=len(data))
    px = np.frombuffer(data, dtype=dtype, count=width * height * channels, offset=start)
    px = px.astype(np.float64) / maxval
    return px.reshape(height, width, channels) if channels == 3 else px.reshape(height, width)


def _write_netpbm(path, a: np.ndarray, magic: bytes, maxval: int) -> None:
    H, W = a.shape[:2]
    q = _quantize(a, maxval).astype(">u2" if maxval > 255 else "u1")
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n%d\n" % (W, H, maxval))
        f.write(q.tobytes())


def write_pgm(path, a, bits: int = 8) -> None:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    if a.ndim != 2:
        raise InvalidArgumentError("PGM needs a single-channel grid")
    if bits not in (8, 16):
        raise InvalidArgumentError("PGM bit depth must be 8 or 16")
    _write_netpbm(path, a, b"P5", 255 if bits == 8 else 65535)


def write_ppm(path, a) -> None:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise InvalidArgumentError("PPM needs an (H, W, 3) image")
    _write_netpbm(path, a, b"P6", 255)


def read_ppm(path) -> np.ndarray:
    data = _read_bytes(path)
    if not data.startswith(b"P6"):
        raise ParseError(f"expected magic P6, got {data[:2]!r}", offset=0)
    return read_netpbm(path)


def read_pgm(path) -> np.ndarray:
    data = _read_bytes(path)
    if not data.startswith(b"P5"):
        raise ParseError(f"expected magic P5, got {data[:2]!r}", offset=0)
    return read_netpbm(path)


def read_pfm(path) -> np.ndarray:
    """Read a PFM file. ``Pf`` gives ``(H, W)``, ``PF`` gives ``(H, W, 3)``.

    A negative scale field means little-endian data; rows are stored bottom
    to top.
    """
    data = _read_bytes(path)
    hdr = _Header(data)
    magic, at = hdr.token()
    if magic not in (b"PF", b"Pf"):
        raise ParseError(f"expected magic PF or Pf, got {magic!r}", offset=at)
    channels = 3 if magic == b"PF" else 1
    width = hdr.integer("width")
    height = hdr.integer("height")
    tok, at = hdr.token()
    try:
        scale = float(tok)
    except ValueError:
        raise ParseError(f"bad scale {tok!r}", offset=at) from None
    if scale == 0:
        raise ParseError("scale must be nonzero", offset=at)
    start = hdr.end()
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    count = width * height * channels
    if len(data) - start < count * 4:
        raise ParseError(f"truncated pixel data: need {count * 4} bytes, have {len(data) - start}", offset=len(data))
    px = np.frombuffer(data, dtype=dtype, count=count, offset=start).astype(np.float32)
    shape = (height, width, channels) if channels == 3 else (height, width)
    return px.reshape(shape)[::-1].copy()


def write_pfm(path, a, little_endian: bool = True) -> None:
    a = np.asarray(a, dtype=np.float32)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    if a.ndim == 2:
        magic = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        magic = b"PF"
    else:
        raise InvalidArgumentError("PFM needs (H, W) or (H, W, 3)")
    H, W = a.shape[:2]
    dtype = "<f4" if little_endian else ">f4"
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n%s\n" % (W, H, b"-1.0" if little_endian else b"1.0"))
        f.write(a[::-1].astype(dtype).tobytes())


def write_csv(path_or_file, rows, header=None) -> None:
    """Write rows to a path, an open text file, or ``"-"`` for stdout."""
    if path_or_file == "-" or path_or_file is None:
        f, close = sys.stdout, False
    elif isinstance(path_or_file, (str, os.PathLike)):
        f, close = open(path_or_file, "w", newline=""), True
    else:
        f, close = path_or_file, False
    try:
        w = csv.writer(f, lineterminator="\n")
        if header:
            w.writerow(header)
        w.writerows(_fmt_row(r) for r in rows)
    finally:
        if close:
            f.close()


def _fmt_row(row):
    return [repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row]


def write_grid_csv(path, a) -> None:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidArgumentError("CSV grids must be 2-D")
    write_csv(path, a.tolist())


def read_grid_csv(path) -> np.ndarray:
    with open(path, newline="") as f:
        text = f.read()
    rows = []
    for i, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row:
            continue
        try:
            rows.append([float(x) for x in row])
        except ValueError as e:
            raise ParseError(str(e), line=i) from None
        if len(rows[-1]) != len(rows[0]):
            raise ParseError(f"expected {len(rows[0])} values, got {len(rows[-1])}", line=i)
    return np.array(rows, dtype=np.float64)
