"""Dataset ingestion and training-example assembly.

Expected layout: ``root/<video_id>/%06d.png`` with frames numbered from 0
(a ``root/train`` / ``root/test`` pair is used when present, so published
dataset splits are kept as shipped). Frames are 8-bit images mapped
linearly to [0, 1].

Evaluation windows tile each video contiguously with no overlap, matching
how a physical coded camera would expose back-to-back snapshots. Training
windows may start anywhere (seeded), since each window only has to be a
valid sharp sequence.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .codes import ExposureCode
from .forward import CodedSnapshot, FrameStack, add_noise, synthesize_coded_blur

FRAME_PATTERN = "{:06d}.png"


@dataclass(frozen=True)
class VideoEntry:
    video_id: str
    frame_count: int
    path: str  # relative to the manifest root


@dataclass
class DatasetManifest:
    root: str
    split: str
    videos: list[VideoEntry]

    def __post_init__(self):
        self.videos = sorted(self.videos, key=lambda v: v.video_id)


@dataclass
class TrainingExample:
    snapshot: CodedSnapshot
    gt: FrameStack
    code: ExposureCode
    noise_sigma: float
    seed: int


def read_frame(path) -> np.ndarray:
    """Load one 8-bit frame as (H, W, C) float32 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.shape[-1] == 4:  # drop alpha
        arr = arr[:, :, :3]
    return arr.astype(np.float32) / 255.0


def write_frame(path, image: np.ndarray):
    """Write (H, W, C) [0, 1] floats as an 8-bit PNG (rounded)."""
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    arr = np.round(arr * 255.0).astype(np.uint8)
    if arr.shape[-1] == 1:
        arr = arr[:, :, 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


@functools.lru_cache(maxsize=8)
def _load_video_uint8(video_dir: str, frame_count: int) -> np.ndarray:
    frames = []
    for n in range(frame_count):
        p = Path(video_dir) / FRAME_PATTERN.format(n)
        with Image.open(p) as im:
            arr = np.asarray(im)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.shape[-1] == 4:
            arr = arr[:, :, :3]
        frames.append(arr)
    return np.stack(frames)


def index_dataset(root, split: str = "train", min_frames: int | None = None) -> DatasetManifest:
    """Scan a dataset directory into a manifest sorted by video id.

    ``root/<split>`` is used when that subdirectory exists, else ``root``
    itself is taken to hold the videos of the given split.
    """
    root = Path(root)
    base = root / split if (root / split).is_dir() else root
    if not base.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {base}")
    videos = []
    for d in sorted(p for p in base.iterdir() if p.is_dir()):
        count = len(list(d.glob("*.png")))
        if count == 0:
            continue
        for n in range(count):  # frames must be contiguous from 0
            if not (d / FRAME_PATTERN.format(n)).exists():
                raise FileNotFoundError(f"missing frame {n} in {d}")
        if min_frames is not None and count < min_frames:
            raise ValueError(
                f"video {d.name} has {count} frames, fewer than the window ({min_frames})"
            )
        videos.append(VideoEntry(d.name, count, str(d.relative_to(root))))
    if not videos:
        raise FileNotFoundError(f"no videos found under {base}")
    return DatasetManifest(root=str(root), split=split, videos=videos)


def save_manifest(manifest: DatasetManifest, path):
    """Line-delimited manifest: a header record, then one record per video."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(json.dumps({"root": manifest.root, "split": manifest.split}) + "\n")
        for v in manifest.videos:
            f.write(
                json.dumps(
                    {"video_id": v.video_id, "frame_count": v.frame_count, "path": v.path}
                )
                + "\n"
            )


def load_manifest(path) -> DatasetManifest:
    with open(path) as f:
        header = json.loads(f.readline())
        videos = [VideoEntry(r["video_id"], r["frame_count"], r["path"])
                  for r in map(json.loads, f) if r]
    return DatasetManifest(root=header["root"], split=header["split"], videos=videos)


def load_window(manifest: DatasetManifest, video: VideoEntry, start: int, window: int) -> FrameStack:
    frames = _load_video_uint8(str(Path(manifest.root) / video.path), video.frame_count)
    sel = frames[start : start + window].astype(np.float32) / 255.0
    return FrameStack(frames=sel)


def window_starts(
    manifest: DatasetManifest, window: int, overlap: bool = False, seed: int = 0
) -> list[tuple[VideoEntry, int]]:
    """Window start offsets per video.

    overlap=False: contiguous non-overlapping starts 0, w, 2w, ... (the
    evaluation protocol; every frame is used at most once).
    overlap=True: the same number of windows per video but with seeded
    uniformly random starts (the training protocol).
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if all(v.frame_count < window for v in manifest.videos):
        raise ValueError(f"window {window} larger than every video in the manifest")
    rng = np.random.default_rng(seed)
    out = []
    for v in manifest.videos:
        n_windows = v.frame_count // window
        if overlap:
            starts = rng.integers(0, v.frame_count - window + 1, size=n_windows)
        else:
            starts = range(0, n_windows * window, window)
        out.extend((v, int(s)) for s in starts)
    return out


def sample_windows(
    manifest: DatasetManifest, window: int, overlap: bool = False, seed: int = 0
):
    """Iterate FrameStacks over the dataset (see ``window_starts``)."""
    for video, start in window_starts(manifest, window, overlap=overlap, seed=seed):
        yield load_window(manifest, video, start, window)


def augment(stack: FrameStack, crop: int, seed: int) -> FrameStack:
    """One random crop + flip coin-flips + a 90-degree-multiple rotation.

    The same geometric transform is applied to every frame of the stack, so
    the motion stays consistent. Rotations are restricted to multiples of
    90 degrees: ground truth is never interpolated.
    """
    n, h, w, _ = stack.frames.shape
    if crop > min(h, w):
        raise ValueError(f"crop {crop} larger than frame {h}x{w}")
    rng = np.random.default_rng(seed)
    top = int(rng.integers(0, h - crop + 1))
    left = int(rng.integers(0, w - crop + 1))
    out = stack.frames[:, top : top + crop, left : left + crop, :]
    if rng.random() < 0.5:
        out = out[:, :, ::-1, :]  # horizontal flip
    if rng.random() < 0.5:
        out = out[:, ::-1, :, :]  # vertical flip
    k = int(rng.integers(0, 4))
    if k:
        out = np.rot90(out, k=k, axes=(1, 2))
    return FrameStack(frames=np.ascontiguousarray(out), frame_indices=stack.frame_indices)


def make_training_example(
    stack: FrameStack,
    code: ExposureCode,
    sigma_range: tuple[float, float],
    seed: int,
) -> TrainingExample:
    """Synthesize one (snapshot, ground truth) pair.

    sigma ~ Uniform(sigma_range) and the noise draw both derive from
    ``seed``, so the stored example regenerates bit-exactly.
    """
    if len(code) != stack.n_frames:
        raise ValueError(f"code length {len(code)} != stack frames {stack.n_frames}")
    lo, hi = sigma_range
    if lo < 0 or hi < lo:
        raise ValueError(f"bad sigma range {sigma_range}")
    rng = np.random.default_rng(seed)
    sigma = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    snapshot = synthesize_coded_blur(stack, code)
    snapshot = add_noise(snapshot, sigma, seed=seed + 1)
    return TrainingExample(
        snapshot=snapshot, gt=stack, code=code, noise_sigma=sigma, seed=seed
    )
