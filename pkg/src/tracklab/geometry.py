"""Boxes, overlap scores, label maps and per-sample loss weights.

Boxes use 0-indexed (left, top) corners with continuous pixel units.  Label
maps are dense per-shift target grids with the peak value pinned to 1 at the
chosen center.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: 0-indexed corner plus strictly positive extents."""

    left: float
    top: float
    width: float
    height: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"box extents must be positive, got {self.width} x {self.height}")

    @property
    def center(self):
        return (self.left + self.width / 2.0, self.top + self.height / 2.0)

    @property
    def area(self):
        return self.width * self.height

    def shifted(self, dx, dy):
        return BBox(self.left + dx, self.top + dy, self.width, self.height)

    def scaled_about_center(self, factor):
        cx, cy = self.center
        w, h = self.width * factor, self.height * factor
        return BBox(cx - w / 2.0, cy - h / 2.0, w, h)


@dataclass(frozen=True)
class SampleWeights:
    """Per-sample loss weight alpha = impact / pair_count.

    ``pair_count`` is the number of candidate offsets a training sample is
    paired with; ``impact`` is the total loss mass the sample carries.
    """

    impact: float
    pair_count: int

    def __post_init__(self):
        if self.pair_count < 1:
            raise ValueError("pair_count must be >= 1")
        if self.impact <= 0:
            raise ValueError("impact must be positive")

    @property
    def alpha(self):
        return self.impact / self.pair_count


@dataclass
class LabelMap:
    """Dense per-shift regression targets with peak 1 at ``center``."""

    values: np.ndarray
    center: tuple[int, int]
    kind: str = "gaussian"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("label values must be 2-D")
        r, c = self.center
        if not (0 <= r < self.values.shape[0] and 0 <= c < self.values.shape[1]):
            raise ValueError(f"center {self.center} outside grid {self.values.shape}")
        if abs(self.values[r, c] - 1.0) > 1e-12:
            raise ValueError("label map must peak at exactly 1 at its center")
        if self.values.min() < 0 or self.values.max() > 1 + 1e-12:
            raise ValueError("label values must lie in [0, 1]")


def clamped_overlap_len(a, a_i, c):
    """Length of the overlap of intervals [a, a+c] and [a_i, a_i+c], >= 0."""
    if c <= 0:
        raise ValueError("interval length must be positive")
    return max(0.0, 2.0 * c - max(a + c, a_i + c) + min(a, a_i))


def overlap_score(box, ref):
    """Area overlap ratio for two boxes of one shared size, in [0, 1].

    With per-axis overlap lengths p_l, p_t the score is
    p_l * p_t / (2 * w * h - p_l * p_t): intersection over union for
    equal-size boxes.
    """
    if abs(box.width - ref.width) > 1e-9 or abs(box.height - ref.height) > 1e-9:
        raise ValueError("overlap_score requires equal box extents; "
                         "use eval.iou for the general ratio")
    p_l = clamped_overlap_len(box.left, ref.left, box.width)
    p_t = clamped_overlap_len(box.top, ref.top, box.height)
    inter = p_l * p_t
    return inter / (2.0 * box.width * box.height - inter)


def delta_loss(box, ref):
    """Localization loss 1 - overlap_score, in [0, 1]."""
    return 1.0 - overlap_score(box, ref)


def _cyclic_abs_displacement(n, center):
    """|r - center| on a cyclic axis of length n, for every index r."""
    d = np.abs(np.arange(n) - center)
    return np.minimum(d, n - d)


def gaussian_labels(shape, center=(0, 0), sigma=1.0):
    """Gaussian label map over cyclic shift displacements, peak 1 at center."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    h, w = shape
    dr = _cyclic_abs_displacement(h, center[0])
    dc = _cyclic_abs_displacement(w, center[1])
    vals = np.exp(-(dr[:, None] ** 2 + dc[None, :] ** 2) / (2.0 * sigma ** 2))
    return LabelMap(vals, (int(center[0]), int(center[1])), "gaussian")


def iou_labels(shape, center=(0, 0), box_w=1.0, box_h=1.0):
    """Overlap-score label map: value at (r, c) scores a box displaced by the
    cyclic shift (r, c) against the box at ``center``."""
    h, w = shape
    dr = _cyclic_abs_displacement(h, center[0]).astype(float)
    dc = _cyclic_abs_displacement(w, center[1]).astype(float)
    p_t = np.maximum(0.0, box_h - dr)[:, None]
    p_l = np.maximum(0.0, box_w - dc)[None, :]
    inter = p_t * p_l
    vals = inter / (2.0 * box_w * box_h - inter)
    return LabelMap(vals, (int(center[0]), int(center[1])), "iou")
