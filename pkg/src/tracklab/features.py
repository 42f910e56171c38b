"""Patch extraction and featurization for the trackers.

Pixel values live in [0, 1].  Feature maps are per-channel cell grids
(ChannelPatch); the default feature is a 9-orientation-bin HOG with 4x4
pixel cells and 2x2-cell L2 block normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .geometry import BBox

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
HOG_BINS = 9
DEFAULT_CELL = 4


@dataclass
class ImageFrame:
    """One video frame: float pixels in [0, 1], grayscale or RGB."""

    pixels: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim not in (2, 3):
            raise ValueError(f"frame must be HxW or HxWx3, got shape {self.pixels.shape}")
        if self.pixels.ndim == 3 and self.pixels.shape[2] != 3:
            raise ValueError(f"color frames must have 3 channels, got {self.pixels.shape[2]}")
        lo, hi = self.pixels.min(), self.pixels.max()
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"pixel values must lie in [0, 1], got [{lo}, {hi}]")

    @property
    def shape(self):
        return self.pixels.shape[:2]


@dataclass
class ChannelPatch:
    """Per-channel feature cells: channels is (L, cells_h, cells_w)."""

    channels: np.ndarray
    cell_size: int = DEFAULT_CELL
    origin: BBox | None = None

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        if self.channels.ndim != 3:
            raise ValueError("channels must be (L, cells_h, cells_w)")

    @property
    def n_channels(self):
        return self.channels.shape[0]

    @property
    def cell_shape(self):
        return self.channels.shape[1:]


def to_gray(block):
    """Luminance conversion; grayscale input passes through."""
    block = np.asarray(block, dtype=np.float64)
    if block.ndim == 2:
        return block
    r, g, b = LUMA_WEIGHTS
    return r * block[..., 0] + g * block[..., 1] + b * block[..., 2]


def extract_patch(frame, region: BBox):
    """Crop a pixel block for ``region``, replicating border pixels outside.

    The region is rasterized to round(height) x round(width) samples anchored
    at the rounded corner, so integer in-frame translations of the region
    translate the content exactly.
    """
    px = frame.pixels if isinstance(frame, ImageFrame) else np.asarray(frame, dtype=np.float64)
    n_rows = int(round(region.height))
    n_cols = int(round(region.width))
    if n_rows < 1 or n_cols < 1:
        raise ValueError(f"degenerate region: rounds to {n_rows} x {n_cols} pixels")
    r0 = int(round(region.top))
    c0 = int(round(region.left))
    rows = np.clip(r0 + np.arange(n_rows), 0, px.shape[0] - 1)
    cols = np.clip(c0 + np.arange(n_cols), 0, px.shape[1] - 1)
    return px[np.ix_(rows, cols)]


def resample(block, out_h, out_w):
    """Bilinear resample of a pixel block to out_h x out_w."""
    if out_h < 1 or out_w < 1:
        raise ValueError("output dims must be >= 1")
    return cv2.resize(np.asarray(block, dtype=np.float64), (int(out_w), int(out_h)),
                      interpolation=cv2.INTER_LINEAR)


def hog_channels(block, cell_size=DEFAULT_CELL, origin=None):
    """HOG feature cells for a pixel block.

    9 unsigned orientation bins with linear interpolation between the two
    nearest bin centers, magnitude-weighted votes pooled over cell_size^2
    pixel cells, then L2 normalization over 2x2-cell blocks (each cell
    averages the normalized copies from every block containing it).  The
    normalizer floor scales with the overall gradient energy, so the output
    is invariant to positive rescaling of the input.
    """
    gray = to_gray(block)
    if cell_size < 1:
        raise ValueError("cell_size must be >= 1")
    cells_h = gray.shape[0] // cell_size
    cells_w = gray.shape[1] // cell_size
    if cells_h < 1 or cells_w < 1:
        raise ValueError(f"block {gray.shape} smaller than one {cell_size}x{cell_size} cell")
    gray = gray[: cells_h * cell_size, : cells_w * cell_size]

    gy, gx = np.gradient(gray)
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), np.pi)

    pos = ang / (np.pi / HOG_BINS)  # continuous bin coordinate, centers at 0..8
    lo = np.floor(pos)
    frac = pos - lo
    b0 = lo.astype(int) % HOG_BINS
    b1 = (b0 + 1) % HOG_BINS

    rr = np.arange(gray.shape[0]) // cell_size
    cc = np.arange(gray.shape[1]) // cell_size
    cell_id = (rr[:, None] * cells_w + cc[None, :]).ravel()
    hist = np.zeros((cells_h * cells_w, HOG_BINS))
    np.add.at(hist, (cell_id, b0.ravel()), (mag * (1.0 - frac)).ravel())
    np.add.at(hist, (cell_id, b1.ravel()), (mag * frac).ravel())
    hist = hist.reshape(cells_h, cells_w, HOG_BINS)

    out = _block_normalize(hist)
    return ChannelPatch(np.moveaxis(out, 2, 0), cell_size=cell_size, origin=origin)


def _block_normalize(hist):
    """L2 normalization over 2x2-cell blocks, averaged back per cell."""
    cells_h, cells_w, _ = hist.shape
    energy = np.sum(hist ** 2, axis=2)
    # scale-tracking floor: keeps division finite and the output exactly
    # invariant to a positive rescale of the votes
    eps = 1e-9 * np.sqrt(max(energy.max(), 0.0)) + 1e-300

    if cells_h < 2 or cells_w < 2:
        norm = np.sqrt(energy) + eps
        return hist / norm[:, :, None]

    block_energy = (energy[:-1, :-1] + energy[1:, :-1] + energy[:-1, 1:] + energy[1:, 1:])
    block_norm = np.sqrt(block_energy) + eps
    out = np.zeros_like(hist)
    count = np.zeros((cells_h, cells_w))
    for dr in (0, 1):
        for dc in (0, 1):
            sl = (slice(dr, cells_h - 1 + dr), slice(dc, cells_w - 1 + dc))
            out[sl] += hist[sl] / block_norm[:, :, None]
            count[sl] += 1.0
    return out / count[:, :, None]


def gray_channels(block, cell_size=DEFAULT_CELL, origin=None):
    """Single-channel cell-averaged intensity (mean subtracted), as a cheap
    alternative feature for diagnostics."""
    gray = to_gray(block)
    cells_h = gray.shape[0] // cell_size
    cells_w = gray.shape[1] // cell_size
    if cells_h < 1 or cells_w < 1:
        raise ValueError(f"block {gray.shape} smaller than one {cell_size}x{cell_size} cell")
    gray = gray[: cells_h * cell_size, : cells_w * cell_size]
    cells = gray.reshape(cells_h, cell_size, cells_w, cell_size).mean(axis=(1, 3))
    cells = cells - cells.mean()
    return ChannelPatch(cells[None, :, :], cell_size=cell_size, origin=origin)


def featurize(block, kind="hog9", cell_size=DEFAULT_CELL, origin=None):
    """Dispatch on the configured feature kind ("hog9" or "gray")."""
    if kind == "hog9":
        return hog_channels(block, cell_size=cell_size, origin=origin)
    if kind == "gray":
        return gray_channels(block, cell_size=cell_size, origin=origin)
    raise ValueError(f"unknown feature kind {kind!r}")


def apply_window(patch: ChannelPatch, window):
    """Multiply every channel of ``patch`` by a window on its cell grid."""
    window = np.asarray(window, dtype=np.float64)
    if window.shape != patch.cell_shape:
        raise ValueError(f"window {window.shape} does not match cell grid {patch.cell_shape}")
    return ChannelPatch(patch.channels * window[None, :, :],
                        cell_size=patch.cell_size, origin=patch.origin)
