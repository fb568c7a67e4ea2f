"""Minimal binary PGM (P5) reader for rendering sample grids."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    pos = 0

    def token() -> bytes:
        nonlocal pos
        while pos < len(data):
            ch = data[pos : pos + 1]
            if ch == b"#":
                while pos < len(data) and data[pos : pos + 1] != b"\n":
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        if pos >= len(data):
            raise ValueError(f"{path}: truncated header")
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        return data[start:pos]

    if token() != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(token()), int(token()), int(token())
    pos += 1
    payload = data[pos : pos + w * h]
    if len(payload) < w * h:
        raise ValueError(f"{path}: truncated payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w) / float(maxval)


def read_pgm_dir(directory) -> list[np.ndarray]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ValueError(f"not a directory: {directory}")
    files = sorted(p for p in directory.iterdir() if p.suffix == ".pgm")
    if not files:
        raise ValueError(f"no .pgm files in {directory}")
    return [read_pgm(p) for p in files]
