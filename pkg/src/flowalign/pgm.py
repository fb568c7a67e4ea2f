"""Binary PGM (P5, maxval 255) reader/writer for unit-interval images."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np


def write_pgm(path, img: np.ndarray) -> None:
    """Quantize [0, 1] values to bytes (round half up) and write P5."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("pixel values must lie in [0, 1]")
    quant = np.floor(img * 255.0 + 0.5).astype(np.uint8)
    h, w = img.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(quant.tobytes())


class PgmError(ValueError):
    """Malformed or truncated PGM payload, reported with a byte offset."""


def read_pgm(path) -> np.ndarray:
    """Read a P5 file back to floats in [0, 1] (values / 255)."""
    with open(path, "rb") as fh:
        data = fh.read()

    pos = 0

    def token() -> bytes:
        nonlocal pos
        while pos < len(data):
            ch = data[pos : pos + 1]
            if ch == b"#":  # comment to end of line
                while pos < len(data) and data[pos : pos + 1] != b"\n":
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        if pos >= len(data):
            raise PgmError(f"{path}: truncated header at byte {pos}")
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        return data[start:pos]

    magic = token()
    if magic != b"P5":
        raise PgmError(f"{path}: bad magic {magic!r} at byte 0")
    try:
        w, h, maxval = int(token()), int(token()), int(token())
    except ValueError as exc:
        raise PgmError(f"{path}: non-integer header field near byte {pos}") from exc
    if maxval != 255:
        raise PgmError(f"{path}: unsupported maxval {maxval}")
    pos += 1  # the single whitespace byte after maxval
    payload = data[pos : pos + w * h]
    if len(payload) < w * h:
        raise PgmError(
            f"{path}: truncated payload at byte {pos + len(payload)}, "
            f"expected {w * h} pixel bytes"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def read_dir(directory) -> list[np.ndarray]:
    """All PGMs in a directory, sorted by filename."""
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if p.suffix == ".pgm")
    if not files:
        raise FileNotFoundError(f"no .pgm files in {directory}")
    return [read_pgm(p) for p in files]


def write_indexed(directory, images) -> list[Path]:
    """Write images as NNNN.pgm with zero-padded 4-digit indices."""
    directory = Path(directory)
    os.makedirs(directory, exist_ok=True)
    paths = []
    for i, img in enumerate(images):
        p = directory / f"{i:04d}.pgm"
        write_pgm(p, img)
        paths.append(p)
    return paths
