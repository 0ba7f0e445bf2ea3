"""Feature-channel stacks (LUV, gradient magnitude, oriented gradients) and
integral images for O(1) rectangular sums."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Union

import numpy as np

from .geometry import Box
from .imageops import Image, centered_gradients, triangle_blur

CHANNEL_COUNTS = {"RGB": 3, "LUV": 3, "G_LUV": 4, "HOG_L": 7, "HOG_LUV": 10}

# Fixed affine ranges used to rescale CIE L*u*v* into [0,1].
_L_MAX = 100.0
_U_MIN, _U_MAX = -134.0, 220.0
_V_MIN, _V_MAX = -140.0, 122.0


@dataclass(frozen=True)
class ChannelConfig:
    """Which channel stack to compute.

    kind -> channel layout:
      RGB:     [R, G, B]
      LUV:     [L, U, V]
      G_LUV:   [G, L, U, V]                  (G = luminance gradient magnitude)
      HOG_L:   [O_0..O_5, L]                 (6 hard-binned orientation channels)
      HOG_LUV: [G, O_0..O_5, L, U, V]
    """

    kind: str = "HOG_LUV"
    orientation_bins: int = 6
    pre_blur: bool = False

    def __post_init__(self):
        if self.kind not in CHANNEL_COUNTS:
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if self.orientation_bins < 1:
            raise ValueError("orientation_bins must be >= 1")

    @property
    def n_channels(self) -> int:
        base = CHANNEL_COUNTS[self.kind]
        if self.orientation_bins != 6 and self.kind in ("HOG_L", "HOG_LUV"):
            return base - 6 + self.orientation_bins
        return base


@dataclass
class ChannelStack:
    """Per-image list of channel planes plus matching integral images.

    integrals[c] has shape (h+1, w+1) with zero first row/column so that a
    rectangle sum needs exactly four reads.
    """

    channels: List[np.ndarray]
    integrals: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.channels:
            raise ValueError("empty channel stack")
        h, w = self.channels[0].shape
        for c in self.channels:
            if c.shape != (h, w):
                raise ValueError("channel dimension mismatch")
        if not self.integrals:
            self.integrals = [integral_image(c) for c in self.channels]

    @property
    def height(self) -> int:
        return self.channels[0].shape[0]

    @property
    def width(self) -> int:
        return self.channels[0].shape[1]

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def as_array(self) -> np.ndarray:
        """(h, w, n_channels) view of the channel planes."""
        return np.stack(self.channels, axis=-1)

    def crop(self, x: int, y: int, w: int, h: int) -> "ChannelStack":
        if x < 0 or y < 0 or x + w > self.width or y + h > self.height:
            raise ValueError("crop out of bounds")
        return ChannelStack([c[y : y + h, x : x + w].copy() for c in self.channels])


def integral_image(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    out = np.zeros((h + 1, w + 1), dtype=np.float64)
    np.cumsum(np.cumsum(plane, axis=0), axis=1, out=out[1:, 1:])
    return out


def rgb_to_luv(rgb: np.ndarray) -> np.ndarray:
    """CIE L*u*v* from linear RGB (sRGB primaries, D65), rescaled to [0,1]."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    x = 0.412453 * r + 0.357580 * g + 0.180423 * b
    y = 0.212671 * r + 0.715160 * g + 0.072169 * b
    z = 0.019334 * r + 0.119193 * g + 0.950227 * b

    yr = y  # white point Y = 1 for [0,1] linear RGB
    eps = 216.0 / 24389.0
    kappa = 24389.0 / 27.0
    l = np.where(yr > eps, 116.0 * np.cbrt(yr) - 16.0, kappa * yr)

    denom = x + 15.0 * y + 3.0 * z
    with np.errstate(invalid="ignore"):
        u_prime = np.where(denom > 0, 4.0 * x / denom, 0.0)
        v_prime = np.where(denom > 0, 9.0 * y / denom, 0.0)
    # D65 reference white in u'v'
    un, vn = 0.19783982, 0.46833631
    u = 13.0 * l * (u_prime - un)
    v = 13.0 * l * (v_prime - vn)

    out = np.empty_like(rgb)
    out[..., 0] = l / _L_MAX
    out[..., 1] = (u - _U_MIN) / (_U_MAX - _U_MIN)
    out[..., 2] = (v - _V_MIN) / (_V_MAX - _V_MIN)
    return out


def gradient_channels(luminance: np.ndarray, n_bins: int):
    """Gradient magnitude and hard-binned orientation channels.

    Each pixel's magnitude is assigned entirely to the bin containing its
    (unsigned) orientation in [0, pi), so the orientation channels sum to
    the magnitude channel exactly.
    """
    gx, gy = centered_gradients(luminance)
    mag = np.sqrt(gx * gx + gy * gy)
    theta = np.mod(np.arctan2(gy, gx), np.pi)
    bins = np.minimum((theta / np.pi * n_bins).astype(np.intp), n_bins - 1)
    oriented = np.zeros(luminance.shape + (n_bins,), dtype=np.float64)
    np.put_along_axis(oriented, bins[..., None], mag[..., None], axis=2)
    return mag, [oriented[..., k] for k in range(n_bins)]


def compute_channels(img: Union[Image, np.ndarray], cfg: ChannelConfig) -> ChannelStack:
    """Compute the channel stack for one image.

    Color kinds require a 3-plane image.  With cfg.pre_blur the finished
    channels are smoothed with a radius-1 triangle filter (linear, so the
    orientation-sum-equals-G conservation is preserved).
    """
    arr = img.data if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"channel kind {cfg.kind} requires a 3-plane image")

    planes: List[np.ndarray]
    if cfg.kind == "RGB":
        planes = [arr[..., 0], arr[..., 1], arr[..., 2]]
    else:
        luv = rgb_to_luv(arr)
        l, u, v = luv[..., 0], luv[..., 1], luv[..., 2]
        if cfg.kind == "LUV":
            planes = [l, u, v]
        elif cfg.kind == "G_LUV":
            mag, _ = gradient_channels(l, cfg.orientation_bins)
            planes = [mag, l, u, v]
        elif cfg.kind == "HOG_L":
            _, oriented = gradient_channels(l, cfg.orientation_bins)
            planes = oriented + [l]
        elif cfg.kind == "HOG_LUV":
            mag, oriented = gradient_channels(l, cfg.orientation_bins)
            planes = [mag] + oriented + [l, u, v]
        else:  # pragma: no cover - guarded by ChannelConfig
            raise ValueError(cfg.kind)

    planes = [np.ascontiguousarray(p, dtype=np.float64) for p in planes]
    if cfg.pre_blur:
        planes = [triangle_blur(p) for p in planes]
    return ChannelStack(planes)


def rect_sum(stack: ChannelStack, channel: int, r: Box) -> float:
    """Sum of channel values inside an integer-aligned in-bounds rectangle."""
    x, y, w, h = r.x, r.y, r.w, r.h
    xi, yi, wi, hi = int(round(x)), int(round(y)), int(round(w)), int(round(h))
    if max(abs(x - xi), abs(y - yi), abs(w - wi), abs(h - hi)) > 1e-9:
        raise ValueError(f"rectangle must be integer-aligned: {r}")
    if xi < 0 or yi < 0 or xi + wi > stack.width or yi + hi > stack.height:
        raise ValueError(f"rectangle out of bounds: {r}")
    ii = stack.integrals[channel]
    return float(ii[yi + hi, xi + wi] - ii[yi, xi + wi] - ii[yi + hi, xi] + ii[yi, xi])
