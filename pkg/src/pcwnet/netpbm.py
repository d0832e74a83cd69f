"""Binary PPM (P6) / PGM (P5) reading and writing, maxval 255."""

import numpy as np

from .errors import ParseError


def write_ppm(path, rgb):
    """``rgb`` is an (H, W, 3) uint8 array."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(rgb.tobytes())


def write_pgm(path, gray):
    """``gray`` is an (H, W) uint8 array."""
    gray = np.ascontiguousarray(gray, dtype=np.uint8)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(gray.tobytes())


def read_ppm(path):
    return _read(path, b"P6", 3)


def read_pgm(path):
    return _read(path, b"P5", 1)


def _read(path, magic, channels):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:2] != magic:
        raise ParseError(f"{path}: expected magic {magic.decode()}", 0)
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and buf[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ParseError(f"{path}: malformed header", start)
        fields.append(int(buf[start:pos]))
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise ParseError(f"{path}: missing whitespace after header", pos)
    pos += 1
    w, h, maxval = fields
    if maxval != 255:
        raise ParseError(f"{path}: unsupported maxval {maxval}", pos - 1)
    need = w * h * channels
    if len(buf) - pos < need:
        raise ParseError(f"{path}: truncated pixel data, expected {need} bytes", len(buf))
    data = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    return data.reshape(h, w, channels) if channels == 3 else data.reshape(h, w)
