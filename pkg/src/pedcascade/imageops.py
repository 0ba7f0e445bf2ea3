"""Image container, portable-pixmap I/O, and low-level raster operations."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np


@dataclass
class Image:
    """Row-major raster with values in [0,1], one or three planes."""

    data: np.ndarray  # (h, w) or (h, w, 3), float64

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim == 2:
            pass
        elif a.ndim == 3 and a.shape[2] == 3:
            pass
        else:
            raise ValueError(f"image must be (h,w) or (h,w,3), got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("image contains non-finite values")
        self.data = a

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def planes(self) -> int:
        return 1 if self.data.ndim == 2 else 3


def read_pnm(path: Union[str, Path]) -> Image:
    """Read a PGM/PPM file (P2, P3, P5, P6); values scaled to [0,1]."""
    raw = Path(path).read_bytes()
    if raw[:1] != b"P" or raw[1:2] not in b"2356":
        raise ValueError(f"{path}: not a supported PNM file")
    magic = raw[:2].decode("ascii")

    # Header tokens may be separated by whitespace and '#' comments.
    pos = 2
    tokens = []
    while len(tokens) < 3:
        m = re.compile(rb"\s*(#[^\n]*\n|\S+)").match(raw, pos)
        if m is None:
            raise ValueError(f"{path}: truncated PNM header")
        pos = m.end()
        tok = m.group(1)
        if not tok.startswith(b"#"):
            tokens.append(tok)
    width, height, maxval = (int(t) for t in tokens)
    if maxval <= 0:
        raise ValueError(f"{path}: invalid maxval {maxval}")
    planes = 3 if magic in ("P3", "P6") else 1
    count = width * height * planes

    if magic in ("P5", "P6"):
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.uint8
        data = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
    else:
        data = np.array(raw[pos:].split()[:count], dtype=np.int64)
        if data.size != count:
            raise ValueError(f"{path}: truncated pixel data")
    arr = data.astype(np.float64).reshape(
        (height, width) if planes == 1 else (height, width, 3)
    )
    return Image(arr / maxval)


def write_pnm(path: Union[str, Path], img: Image) -> None:
    """Write a binary PGM (P5) or PPM (P6) file with maxval 255."""
    arr = np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)
    magic = b"P5" if img.planes == 1 else b"P6"
    header = magic + f"\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + arr.tobytes())


def bilinear_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with pixel-center alignment and edge clamping.

    Identity (bit-exact copy) when the output size equals the input size.
    """
    return sample_box_bilinear(arr, 0.0, 0.0, float(arr.shape[1]), float(arr.shape[0]),
                               out_h, out_w)


def sample_box_bilinear(
    arr: np.ndarray,
    x0: float,
    y0: float,
    w: float,
    h: float,
    out_h: int,
    out_w: int,
) -> np.ndarray:
    """Sample a (possibly out-of-bounds) source box into an out_h x out_w grid.

    Out-of-image coordinates are clamped, which replicates border pixels.
    """
    src_x = x0 + (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    src_y = y0 + (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    H, W = arr.shape[:2]
    src_x = np.clip(src_x, 0.0, W - 1.0)
    src_y = np.clip(src_y, 0.0, H - 1.0)
    fx = np.floor(src_x)
    fy = np.floor(src_y)
    tx = src_x - fx
    ty = src_y - fy
    x0i = fx.astype(np.intp)
    y0i = fy.astype(np.intp)
    x1i = np.minimum(x0i + 1, W - 1)
    y1i = np.minimum(y0i + 1, H - 1)

    tx = tx[None, :, None] if arr.ndim == 3 else tx[None, :]
    ty = ty[:, None, None] if arr.ndim == 3 else ty[:, None]
    a = arr[np.ix_(y0i, x0i)]
    b = arr[np.ix_(y0i, x1i)]
    c = arr[np.ix_(y1i, x0i)]
    d = arr[np.ix_(y1i, x1i)]
    top = a * (1.0 - tx) + b * tx
    bot = c * (1.0 - tx) + d * tx
    return top * (1.0 - ty) + bot * ty


def triangle_blur(arr: np.ndarray, radius: int = 1) -> np.ndarray:
    """Separable [1,2,1]/4 triangle filter (radius 1) with replicated borders."""
    if radius != 1:
        raise ValueError("only radius-1 triangle blur is supported")

    def blur_axis(a: np.ndarray, axis: int) -> np.ndarray:
        lo = np.take(a, [0], axis=axis)
        hi = np.take(a, [a.shape[axis] - 1], axis=axis)
        padded = np.concatenate([lo, a, hi], axis=axis)
        n = a.shape[axis]
        left = np.take(padded, range(0, n), axis=axis)
        mid = np.take(padded, range(1, n + 1), axis=axis)
        right = np.take(padded, range(2, n + 2), axis=axis)
        return (left + 2.0 * mid + right) / 4.0

    return blur_axis(blur_axis(arr, 0), 1)


def centered_gradients(plane: np.ndarray):
    """Centered-difference gradients with replicated borders.

    Returns (gx, gy) where gx[i,j] = (I[i,j+1] - I[i,j-1]) / 2.
    """
    padded_x = np.pad(plane, ((0, 0), (1, 1)), mode="edge")
    padded_y = np.pad(plane, ((1, 1), (0, 0)), mode="edge")
    gx = (padded_x[:, 2:] - padded_x[:, :-2]) / 2.0
    gy = (padded_y[2:, :] - padded_y[:-2, :]) / 2.0
    return gx, gy
