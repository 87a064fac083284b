"""Netpbm image I/O: PGM (P2/P5) and PPM (P3/P6), maxval up to 65535.

Comment lines (starting '#') are accepted anywhere in the header.  16-bit
binary samples are big-endian per the netpbm convention.  Writes are
whole-file atomic (write to a temp name, then rename), so an interrupted run
never leaves a torn image behind.
"""

from __future__ import annotations

import os

import numpy as np

_GRAY_MAGIC = {b"P2": False, b"P5": True}
_RGB_MAGIC = {b"P3": False, b"P6": True}


def _header_tokens(f, count):
    """Next `count` whitespace-separated header tokens, skipping comments."""
    tokens = []
    while len(tokens) < count:
        tok = b""
        ch = f.read(1)
        while ch.isspace():
            ch = f.read(1)
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = f.read(1)
            continue
        while ch and not ch.isspace():
            tok += ch
            ch = f.read(1)
        if not tok:
            raise ValueError("truncated netpbm header")
        tokens.append(tok)
    return tokens


def read_netpbm(path):
    """Read a PGM/PPM file: returns (values, maxval).

    Values are uint16, shape (H, W) for grayscale or (H, W, 3) for color.
    """
    with open(path, "rb") as f:
        magic = f.read(2)
        if magic in _GRAY_MAGIC:
            binary, channels = _GRAY_MAGIC[magic], 1
        elif magic in _RGB_MAGIC:
            binary, channels = _RGB_MAGIC[magic], 3
        else:
            raise ValueError(f"{path}: not a PGM/PPM file (magic {magic!r})")
        width, height, maxval = (int(t) for t in _header_tokens(f, 3))
        if not 0 < maxval < 65536:
            raise ValueError(f"{path}: maxval {maxval} out of range")
        n = width * height * channels
        if binary:
            two_byte = maxval > 255
            raw = f.read(n * (2 if two_byte else 1))
            if len(raw) != n * (2 if two_byte else 1):
                raise ValueError(f"{path}: truncated pixel data")
            dtype = ">u2" if two_byte else np.uint8
            values = np.frombuffer(raw, dtype=dtype).astype(np.uint16)
        else:
            values = np.array([int(t) for t in _header_tokens(f, n)], dtype=np.uint16)
    if values.max(initial=0) > maxval:
        raise ValueError(f"{path}: sample exceeds maxval {maxval}")
    shape = (height, width) if channels == 1 else (height, width, 3)
    return values.reshape(shape), maxval


def _atomic_write(path, payload: bytes):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(payload)
    os.replace(tmp, path)


def _encode(magic_binary, magic_ascii, values, maxval, binary):
    values = np.asarray(values)
    if values.min(initial=0) < 0 or values.max(initial=0) > maxval:
        raise ValueError(f"samples outside [0, {maxval}]")
    height, width = values.shape[:2]
    header = f"{width} {height}\n{maxval}\n".encode()
    flat = values.astype(np.uint16).reshape(-1)
    if binary:
        body = flat.astype(">u2" if maxval > 255 else np.uint8).tobytes()
        return magic_binary + b"\n" + header + body
    lines = []
    per_line = 12
    for at in range(0, flat.size, per_line):
        lines.append(" ".join(str(int(v)) for v in flat[at : at + per_line]))
    return magic_ascii + b"\n" + header + ("\n".join(lines) + "\n").encode()


def write_pgm(path, values, maxval: int = 255, binary: bool = True):
    """Write (H, W) integer samples as PGM."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError(f"PGM wants a 2-d array, got shape {values.shape}")
    _atomic_write(path, _encode(b"P5", b"P2", values, maxval, binary))


def write_ppm(path, values, maxval: int = 255, binary: bool = True):
    """Write (H, W, 3) integer samples as PPM."""
    values = np.asarray(values)
    if values.ndim != 3 or values.shape[2] != 3:
        raise ValueError(f"PPM wants an (H, W, 3) array, got shape {values.shape}")
    _atomic_write(path, _encode(b"P6", b"P3", values, maxval, binary))


def to_gray_float(values, maxval: int) -> np.ndarray:
    """Scale to [0, 1]; RGB is converted with Rec.601 luma weights."""
    arr = np.asarray(values, dtype=np.float64) / maxval
    if arr.ndim == 3:
        arr = 0.299 * arr[:, :, 0] + 0.587 * arr[:, :, 1] + 0.114 * arr[:, :, 2]
    return arr


def from_unit_float(img, maxval: int = 255) -> np.ndarray:
    """Quantize values in [0, 1] to integer samples (round-half-up via rint)."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.min(initial=0.0) < 0.0 or arr.max(initial=0.0) > 1.0:
        raise ValueError("expected values in [0, 1]")
    return np.rint(arr * maxval).astype(np.uint16)
