"""16-bit binary PGM (P5) export for visual inspection."""

from __future__ import annotations

import os

import numpy as np


def to_uint16(image: np.ndarray, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Linear map of ``[lo, hi]`` onto ``[0, 65535]``, clipping outside values."""
    if not hi > lo:
        raise ValueError("hi must exceed lo")
    x = (np.asarray(image, dtype=np.float64) - lo) / (hi - lo)
    return np.round(np.clip(x, 0.0, 1.0) * 65535).astype(np.uint16)


def write_pgm(path: str | os.PathLike, image: np.ndarray, lo: float = 0.0, hi: float = 1.0) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"PGM export needs a 2-D image, got shape {img.shape}")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(to_uint16(img, lo, hi).astype(">u2").tobytes())


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    """Read a 16-bit P5 file written by :func:`write_pgm` back as uint16."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 65535:
        raise ValueError(f"expected 16-bit PGM, max value {maxval}")
    return np.frombuffer(data, dtype=">u2", count=w * h, offset=pos).reshape(h, w).astype(np.uint16)
