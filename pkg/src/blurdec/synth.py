"""Procedural video clips for tests and desk-scale experiments.

Each clip is a smooth random background with a few anti-aliased sprites
(rectangles and disks) gliding over it and bouncing off the borders. The
clips are written as 8-bit PNG frame folders in the same layout real
high-frame-rate footage is ingested from, so the rest of the pipeline
cannot tell them apart from camera data.

Reversal pairs: with_reversals=True writes, next to each clip, the same
frames in reverse order. Under an all-ones (box) shutter every window of
the reversed clip produces a snapshot bit-identical to the matching window
of the forward clip while the ground-truth frame order differs, which is
the motion-direction ambiguity in its purest form. Asymmetric codes keep
the two snapshots distinct.
"""

from __future__ import annotations

import numpy as np
from pathlib import Path
from PIL import Image

from .data import DatasetManifest, index_dataset, write_frame


def _smooth_background(height: int, width: int, rng) -> np.ndarray:
    """Low-frequency RGB field in [0.15, 0.85]."""
    cells = rng.random((max(2, height // 16), max(2, width // 16), 3))
    chans = []
    for c in range(3):
        im = Image.fromarray((cells[:, :, c] * 255).astype(np.uint8), mode="L")
        im = im.resize((width, height), resample=Image.BILINEAR)
        chans.append(np.asarray(im, dtype=np.float64) / 255.0)
    return 0.15 + 0.7 * np.stack(chans, axis=-1)


def _rect_coverage(height, width, top, bottom, left, right) -> np.ndarray:
    """Per-pixel overlap area with an axis-aligned box (anti-aliased edges)."""
    ys = np.arange(height, dtype=np.float64)
    xs = np.arange(width, dtype=np.float64)
    cov_y = np.clip(np.minimum(bottom, ys + 1.0) - np.maximum(top, ys), 0.0, 1.0)
    cov_x = np.clip(np.minimum(right, xs + 1.0) - np.maximum(left, xs), 0.0, 1.0)
    return np.outer(cov_y, cov_x)


def _disk_coverage(height, width, cy, cx, radius) -> np.ndarray:
    ys = np.arange(height, dtype=np.float64)[:, None] + 0.5
    xs = np.arange(width, dtype=np.float64)[None, :] + 0.5
    dist = np.hypot(ys - cy, xs - cx)
    return np.clip(radius + 0.5 - dist, 0.0, 1.0)


def _reflect(x: np.ndarray, span: float) -> np.ndarray:
    """Fold positions into [0, span] (elastic bounce off both walls)."""
    period = 2.0 * span
    x = np.mod(x, period)
    return np.where(x > span, period - x, x)


def make_clip(n_frames: int, height: int, width: int, seed: int,
              n_sprites: int = 6, speed: float = 1.5) -> np.ndarray:
    """(F, H, W, 3) float32 frames in [0, 1]."""
    if n_frames < 1 or height < 8 or width < 8:
        raise ValueError("need n_frames >= 1 and at least 8x8 frames")
    rng = np.random.default_rng(seed)
    background = _smooth_background(height, width, rng)

    sprites = []
    for _ in range(n_sprites):
        sprites.append({
            "kind": "disk" if rng.random() < 0.5 else "rect",
            "size": float(rng.uniform(0.08, 0.2) * min(height, width)),
            "aspect": float(rng.uniform(0.6, 1.6)),
            "color": rng.uniform(0.0, 1.0, size=3),
            "y0": float(rng.uniform(0, height)),
            "x0": float(rng.uniform(0, width)),
            "vy": float(rng.uniform(-speed, speed)),
            "vx": float(rng.choice([-1.0, 1.0]) * rng.uniform(0.5 * speed, speed)),
        })

    frames = np.empty((n_frames, height, width, 3), dtype=np.float32)
    for t in range(n_frames):
        img = background.copy()
        for sp in sprites:
            cy = float(_reflect(np.float64(sp["y0"] + sp["vy"] * t), height - 1))
            cx = float(_reflect(np.float64(sp["x0"] + sp["vx"] * t), width - 1))
            if sp["kind"] == "disk":
                cov = _disk_coverage(height, width, cy, cx, sp["size"] / 2)
            else:
                hh = sp["size"] * sp["aspect"] / 2
                hw = sp["size"] / sp["aspect"] / 2
                cov = _rect_coverage(height, width, cy - hh, cy + hh, cx - hw, cx + hw)
            img = img * (1.0 - cov[:, :, None]) + sp["color"][None, None, :] * cov[:, :, None]
        frames[t] = img.astype(np.float32)
    return frames


def write_clip(frames: np.ndarray, clip_dir):
    clip_dir = Path(clip_dir)
    clip_dir.mkdir(parents=True, exist_ok=True)
    for i in range(frames.shape[0]):
        write_frame(clip_dir / f"{i:06d}.png", frames[i])


def make_dataset(root, n_clips: int = 1, n_frames: int = 192, height: int = 64,
                 width: int = 64, seed: int = 0, split: str = "train",
                 with_reversals: bool = True, n_sprites: int = 6,
                 speed: float = 1.5) -> DatasetManifest:
    """Write clips (plus optional reversed twins) and index them.

    Clip folders are named clip_<k> and clip_<k>r for the reversed twin.
    """
    root = Path(root)
    for k in range(n_clips):
        frames = make_clip(n_frames, height, width, seed=seed + k,
                           n_sprites=n_sprites, speed=speed)
        write_clip(frames, root / split / f"clip_{k:03d}")
        if with_reversals:
            write_clip(frames[::-1], root / split / f"clip_{k:03d}r")
    return index_dataset(root, split=split)
