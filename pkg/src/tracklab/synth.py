"""Band-limited synthetic scenes and OTB-format sequence generation.

The translate case composites a high-contrast textured square onto a softer
background and bounces it at a constant integer velocity; the zoom case
rescales a static scene about the object center along a geometric ladder;
the static case repeats one frame.  write_sequence lays frames out as
img/0001.png, img/0002.png, ... plus groundtruth_rect.txt with 1-indexed
"l,t,w,h" lines.
"""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np

from .geometry import BBox


def smooth_texture(rng, shape, cutoff=0.35, rms=0.1):
    """Band-limited random texture with a fixed RMS amplitude."""
    h, w = shape
    spec = np.fft.fft2(rng.standard_normal(shape))
    fr = np.fft.fftfreq(h)[:, None]
    fc = np.fft.fftfreq(w)[None, :]
    spec[np.sqrt(fr ** 2 + fc ** 2) > cutoff] = 0.0
    tex = np.fft.ifft2(spec).real
    return tex * (rms / np.sqrt(np.mean(tex ** 2)))


def texture_image(rng, shape, cutoff=0.5, contrast=0.35):
    """Texture mapped into [0, 1] pixels: 0.5 plus peak-scaled band noise."""
    if not 0 < contrast <= 0.5:
        raise ValueError("contrast must lie in (0, 0.5] to keep pixels in [0, 1]")
    tex = smooth_texture(rng, shape, cutoff=cutoff, rms=1.0)
    tex *= contrast / np.abs(tex).max()
    return 0.5 + tex


def translate_sequence(seed=0, n_frames=100, frame_shape=(240, 320),
                       box_size=(40, 40), velocity=(3, 4), margin=16):
    """Textured square bouncing over a softer background; integer motion.

    ``box_size`` is (width, height) px and ``velocity`` (vx, vy) px/frame.
    The sprite is pasted at integer positions, so its appearance translates
    exactly with the ground-truth box; it reflects off a ``margin``-px inset
    wall to stay in frame.  Returns (frames, boxes).
    """
    rng = np.random.default_rng(seed)
    fh, fw = frame_shape
    bw, bh = box_size
    if bh + 2 * margin > fh or bw + 2 * margin > fw:
        raise ValueError("box plus margins exceeds the frame")
    background = texture_image(rng, frame_shape, cutoff=0.2, contrast=0.2)
    sprite = texture_image(rng, (bh, bw), cutoff=0.8, contrast=0.45)
    top, left = (fh - bh) // 2, (fw - bw) // 2
    vx, vy = velocity
    frames, boxes = [], []
    for _ in range(n_frames):
        frame = background.copy()
        frame[top:top + bh, left:left + bw] = sprite
        frames.append(frame)
        boxes.append(BBox(float(left), float(top), float(bw), float(bh)))
        if not margin <= top + vy <= fh - bh - margin:
            vy = -vy
        if not margin <= left + vx <= fw - bw - margin:
            vx = -vx
        top += vy
        left += vx
    return frames, boxes


def zoom_sequence(seed=0, n_frames=40, frame_shape=(240, 320),
                  box_size=(48, 48), scale_step=1.02):
    """Static scene magnified about the object center by scale_step each frame.

    Frame t shows the scene at magnification scale_step**t; the ground-truth
    box scales by the same factor about a fixed center.  Returns
    (frames, boxes).
    """
    rng = np.random.default_rng(seed)
    fh, fw = frame_shape
    bw, bh = box_size
    scene = texture_image(rng, frame_shape, cutoff=0.6, contrast=0.35)
    cy, cx = fh / 2.0, fw / 2.0
    # sharper sprite at the center so scale scoring has object structure
    sprite = texture_image(rng, (bh, bw), cutoff=0.9, contrast=0.45)
    t0, l0 = int(round(cy - bh / 2)), int(round(cx - bw / 2))
    scene[t0:t0 + bh, l0:l0 + bw] = sprite
    frames, boxes = [], []
    for t in range(n_frames):
        m = scale_step ** t
        mat = np.array([[m, 0.0, cx * (1.0 - m)], [0.0, m, cy * (1.0 - m)]])
        frame = cv2.warpAffine(scene, mat, (fw, fh), flags=cv2.INTER_LINEAR,
                               borderMode=cv2.BORDER_REPLICATE)
        frames.append(np.clip(frame, 0.0, 1.0))
        w, h = bw * m, bh * m
        boxes.append(BBox(cx - w / 2.0, cy - h / 2.0, w, h))
    return frames, boxes


def static_sequence(seed=0, n_frames=20, frame_shape=(240, 320), box_size=(48, 48)):
    """One textured frame repeated; the box never moves."""
    rng = np.random.default_rng(seed)
    fh, fw = frame_shape
    bw, bh = box_size
    scene = texture_image(rng, frame_shape, cutoff=0.6, contrast=0.35)
    sprite = texture_image(rng, (bh, bw), cutoff=0.9, contrast=0.45)
    top, left = (fh - bh) // 2, (fw - bw) // 2
    scene[top:top + bh, left:left + bw] = sprite
    box = BBox(float(left), float(top), float(bw), float(bh))
    return [scene] * n_frames, [box] * n_frames


def _fmt(value):
    r = round(float(value), 3)
    return f"{int(r)}" if r == int(r) else f"{r:g}"


def write_sequence(out_dir, frames, boxes):
    """Write an OTB-layout sequence directory; returns its Path.

    Images go to img/%04d.png (1-based); ground truth to
    groundtruth_rect.txt as 1-indexed "l,t,w,h" lines.
    """
    if len(frames) != len(boxes):
        raise ValueError(f"{len(frames)} frames but {len(boxes)} ground-truth boxes")
    out = Path(out_dir)
    img_dir = out / "img"
    img_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames, start=1):
        px = np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0)
        data = np.round(px * 255.0).astype(np.uint8)
        if data.ndim == 3:
            data = data[:, :, ::-1]  # cv2 writes BGR
        if not cv2.imwrite(str(img_dir / f"{i:04d}.png"), data):
            raise IOError(f"could not write frame {i} under {img_dir}")
    lines = [",".join(_fmt(v) for v in (b.left + 1.0, b.top + 1.0, b.width, b.height))
             for b in boxes]
    (out / "groundtruth_rect.txt").write_text("\n".join(lines) + "\n")
    return out


CASES = {
    "translate": translate_sequence,
    "zoom": zoom_sequence,
    "static": static_sequence,
}


def make_case(case, out_dir, seed=0):
    """Generate one named synthetic case in OTB layout; returns the Path."""
    if case not in CASES:
        raise ValueError(f"unknown case {case!r}; choose from {sorted(CASES)}")
    frames, boxes = CASES[case](seed=seed)
    return write_sequence(out_dir, frames, boxes)
