"""Histogram and cost-matrix readers, grid costs and a synthetic image corpus."""
from __future__ import annotations

import os
import re

import numpy as np

from .core import CostMatrix, Histogram, as_histogram, smooth_marginals


class InputError(ValueError):
    """Unreadable or invalid input file."""


def _parse_floats(text: str, path) -> np.ndarray:
    tokens = [t for t in re.split(r"[,\s]+", text.strip()) if t]
    try:
        return np.array([float(t) for t in tokens], dtype=float)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def read_pgm(path) -> np.ndarray:
    """Pixel array of a plain (P2) or raw (P5) PGM file."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise InputError(f"{path}: not a P2/P5 PGM file")
    # header: magic, width, height, maxval, separated by whitespace and comments
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise InputError(f"{path}: truncated PGM header")
        try:
            fields.append(int(data[start:pos]))
        except ValueError:
            raise InputError(f"{path}: bad PGM header field {data[start:pos]!r}") from None
    width, height, maxval = fields
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise InputError(f"{path}: bad PGM dimensions")
    count = width * height
    if magic == b"P2":
        body = re.sub(rb"#[^\n]*", b"", data[pos:])
        try:
            pix = np.array([int(t) for t in body.split()], dtype=float)
        except ValueError:
            raise InputError(f"{path}: non-integer pixel") from None
    else:
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
        avail = (len(data) - pos) // dtype.itemsize
        pix = np.frombuffer(data, dtype=dtype, count=min(count, avail),
                            offset=pos).astype(float)
    if pix.size != count:
        raise InputError(f"{path}: expected {count} pixels, found {pix.size}")
    return pix.reshape(height, width)


def write_pgm(path, pixels, maxval: int = 255) -> None:
    """Write a plain (P2) PGM."""
    pix = np.asarray(pixels)
    h, w = pix.shape
    lines = [f"P2\n{w} {h}\n{maxval}"]
    lines += [" ".join(str(int(x)) for x in row) for row in pix]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def _format_of(path, fmt):
    if fmt is not None:
        return fmt
    ext = os.path.splitext(str(path))[1].lower()
    return "pgm" if ext == ".pgm" else "csv"


def load_histogram(path, fmt: str | None = None, smooth: float | None = None) -> Histogram:
    """Read a histogram from CSV (comma or newline separated) or PGM.

    Values are normalized to sum 1; ``smooth`` mixes in the uniform vector
    through :func:`smooth_marginals`.
    """
    fmt = _format_of(path, fmt)
    if fmt == "csv":
        try:
            with open(path, encoding="utf-8") as fh:
                values = _parse_floats(fh.read(), path)
        except UnicodeDecodeError as exc:
            raise InputError(f"{path}: {exc}") from None
    elif fmt == "pgm":
        values = read_pgm(path).ravel()
    else:
        raise InputError(f"unknown histogram format {fmt!r}")
    if values.size == 0:
        raise InputError(f"{path}: no values")
    if not np.all(np.isfinite(values)):
        raise InputError(f"{path}: non-finite values")
    if np.any(values < 0):
        raise InputError(f"{path}: negative values")
    total = values.sum()
    if total <= 0:
        raise InputError(f"{path}: zero total mass")
    hist = as_histogram(values / total)
    if smooth:
        hist = smooth_marginals(hist, smooth)
    return hist


def load_cost(path) -> CostMatrix:
    """N x N cost matrix from CSV, one row per line."""
    with open(path, encoding="utf-8") as fh:
        rows = [ln for ln in fh.read().splitlines() if ln.strip()]
    mat = [_parse_floats(ln, path) for ln in rows]
    if not mat or any(r.size != len(mat) for r in mat):
        raise InputError(f"{path}: cost matrix must be square")
    try:
        return CostMatrix(np.array(mat))
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def grid_cost(side: int, metric: str = "sq_euclidean", normalized: bool = True) -> CostMatrix:
    """Pairwise pixel distances on a ``side x side`` grid, row-major."""
    if side < 1:
        raise ValueError("side must be >= 1")
    ii, jj = np.divmod(np.arange(side * side), side)
    di = ii[:, None] - ii[None, :]
    dj = jj[:, None] - jj[None, :]
    if metric == "sq_euclidean":
        C = (di ** 2 + dj ** 2).astype(float)
    elif metric == "l1":
        C = (np.abs(di) + np.abs(dj)).astype(float)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    if normalized and C.max() > 0:
        C = C / C.max()
    return CostMatrix(C)


def synthetic_image(rng, side: int = 8) -> np.ndarray:
    """Blob image: 1-3 Gaussian bumps, faint pixels zeroed (digit-like sparsity)."""
    ii, jj = np.mgrid[0:side, 0:side].astype(float)
    img = np.zeros((side, side))
    for _ in range(rng.integers(1, 4)):
        ci, cj = rng.uniform(0, side - 1, size=2)
        s = rng.uniform(0.6, 0.25 * side)
        img += rng.uniform(0.5, 1.0) * np.exp(-((ii - ci) ** 2 + (jj - cj) ** 2) / (2 * s * s))
    img[img < 0.1 * img.max()] = 0.0
    return np.round(255 * img / img.max())


def synthetic_pairs(seed: int, count: int, side: int = 8):
    """``count`` seeded image pairs as flattened, normalized (unsmoothed) histograms."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        a, b = synthetic_image(rng, side).ravel(), synthetic_image(rng, side).ravel()
        out.append((a / a.sum(), b / b.sum()))
    return out
