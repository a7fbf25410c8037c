"""ASCII portable graymap (P2) reading and writing."""

import numpy as np

from .errors import DataError


def write_pgm(path, values01):
    """Write a [0,1] 2-d array as a P2 graymap with maxval 255."""
    arr = np.asarray(values01, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"PGM needs a 2-d array, got shape {arr.shape}")
    ints = np.clip(np.round(arr * 255.0), 0, 255).astype(int)
    h, w = ints.shape
    lines = [f"P2\n{w} {h}\n255\n"]
    for row in ints:
        lines.append(" ".join(str(v) for v in row) + "\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("".join(lines))


def read_pgm(path):
    """Read a P2 graymap back into a [0,1] float array."""
    with open(path, "r", encoding="utf-8") as fh:
        tokens = []
        for line in fh:
            hash_pos = line.find("#")
            if hash_pos >= 0:
                line = line[:hash_pos]
            tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise DataError(f"{path} is not an ASCII P2 graymap")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pixels = np.array([int(v) for v in tokens[4:]], dtype=np.float64)
    if pixels.size != w * h:
        raise DataError(f"{path}: expected {w * h} pixels, found {pixels.size}")
    return (pixels / maxval).reshape(h, w)
