"""Coded-exposure image formation.

A snapshot taken through a fluttering shutter is the sum of the scene
frames that fall in the open segments. Discretised over N equal segments,

    B = sum_n bits[n] * I_n,

which we divide by the number of open segments so mean brightness does not
depend on the duty ratio (mimicking camera gain; comparisons across duty
ratios then measure coding, not exposure). Dividing by N instead is
available via ``divide_by="length"`` and is recorded wherever snapshots are
written to disk.

``reblur`` is the same weighted average without the final clamp; it is used
inside the consistency loss and must stay differentiable, so it accepts
torch tensors as well as numpy stacks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codes import ExposureCode


class ZeroThroughputError(ValueError):
    """All-zero code: the shutter never opens, no light reaches the sensor."""


@dataclass
class FrameStack:
    """Ordered sharp frames (N, H, W, C) in [0, 1] with normalized times."""

    frames: np.ndarray
    frame_indices: np.ndarray = None

    def __post_init__(self):
        if self.frames.ndim != 4:
            raise ValueError(f"frames must be (N, H, W, C), got shape {self.frames.shape}")
        if self.frames.shape[-1] not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.frames.shape[-1]}")
        if self.frame_indices is None:
            self.frame_indices = normalized_times(self.frames.shape[0])
        self.frame_indices = np.asarray(self.frame_indices, dtype=np.float64)
        if self.frame_indices.shape != (self.frames.shape[0],):
            raise ValueError("frame_indices length must equal frame count")
        if np.any(np.diff(self.frame_indices) <= 0):
            raise ValueError("frame_indices must be strictly increasing")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def shape(self):
        return self.frames.shape


@dataclass
class CodedSnapshot:
    """One blurry measurement plus the code that produced it."""

    image: np.ndarray
    code: ExposureCode
    noise_sigma: float = 0.0


def normalized_times(n: int) -> np.ndarray:
    """Frame timestamps spread over [0, 1] (a single frame sits at 0)."""
    if n == 1:
        return np.zeros(1)
    return np.arange(n, dtype=np.float64) / (n - 1)


def coded_average(frames, bits, divide_by: str = "ones", frame_axis: int = 0):
    """Weighted frame average sum_n bits[n] * frames[n] / divisor.

    Works on numpy arrays and torch tensors alike (only indexing, ``*`` and
    ``sum`` are used), so the training loss can reuse the exact arithmetic
    of the simulator. No clamping.
    """
    n = frames.shape[frame_axis]
    if len(bits) != n:
        raise ValueError(f"code length {len(bits)} != frame count {n}")
    ones = sum(bits)
    if ones == 0:
        raise ZeroThroughputError("zero light throughput: code has no open segment")
    if divide_by == "ones":
        divisor = float(ones)
    elif divide_by == "length":
        divisor = float(len(bits))
    else:
        raise ValueError(f"divide_by must be 'ones' or 'length', got {divide_by!r}")

    shape = [1] * frames.ndim
    shape[frame_axis] = n
    if isinstance(frames, np.ndarray):
        weights = np.asarray(bits, dtype=frames.dtype).reshape(shape)
    else:  # torch tensor; imported lazily to keep numpy-only use torch-free
        import torch

        weights = torch.as_tensor(bits, dtype=frames.dtype, device=frames.device).reshape(shape)
    return (frames * weights).sum(frame_axis) / divisor


def reblur(stack: FrameStack, code: ExposureCode, divide_by: str = "ones") -> np.ndarray:
    """Unclamped coded average of a stack (the operator inside the loss)."""
    return coded_average(stack.frames, code.bits, divide_by=divide_by)


def synthesize_coded_blur(
    stack: FrameStack, code: ExposureCode, divide_by: str = "ones"
) -> CodedSnapshot:
    """Simulate the coded blurry snapshot of a sharp frame stack.

    The weighted average is clamped to [0, 1]; noise is added separately by
    ``add_noise`` so noiseless synthesis stays exactly reproducible.
    """
    image = np.clip(reblur(stack, code, divide_by=divide_by), 0.0, 1.0)
    return CodedSnapshot(image=image, code=code, noise_sigma=0.0)


def add_noise(snapshot: CodedSnapshot, sigma: float, seed: int) -> CodedSnapshot:
    """Add zero-mean Gaussian read noise of std ``sigma``, clamped to [0, 1].

    Deterministic for a fixed seed; sigma = 0 returns the input unchanged.
    """
    if sigma < 0:
        raise ValueError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return CodedSnapshot(image=snapshot.image.copy(), code=snapshot.code, noise_sigma=0.0)
    rng = np.random.default_rng(seed)
    noisy = snapshot.image + rng.normal(0.0, sigma, size=snapshot.image.shape)
    noisy = np.clip(noisy, 0.0, 1.0).astype(snapshot.image.dtype)
    return CodedSnapshot(image=noisy, code=snapshot.code, noise_sigma=float(sigma))


def toy_translation_scene(
    width: int,
    object_extent: int,
    shift_per_bit: int,
    direction: int,
    n_frames: int,
    height: int = 1,
) -> FrameStack:
    """A bright block translating horizontally on a dark background.

    Both directions traverse the same pixel positions, in opposite order, so
    the pair (direction=+1, direction=-1) is exactly a motion trajectory and
    its time reversal. Under a palindromic code the two give bit-identical
    snapshots; an asymmetric code tells them apart.
    """
    if direction not in (+1, -1):
        raise ValueError(f"direction must be +1 or -1, got {direction}")
    if object_extent < 1 or width < 1 or n_frames < 1:
        raise ValueError("width, object_extent and n_frames must be positive")
    travel = (n_frames - 1) * shift_per_bit
    if object_extent + travel > width:
        raise ValueError(
            f"object (extent {object_extent}, travel {travel}) does not fit in width {width}"
        )
    start = (width - object_extent - travel) // 2
    frames = np.zeros((n_frames, height, width, 1), dtype=np.float64)
    for n in range(n_frames):
        step = n if direction == +1 else (n_frames - 1 - n)
        x = start + step * shift_per_bit
        frames[n, :, x : x + object_extent, 0] = 1.0
    return FrameStack(frames=frames)
