"""Training losses and full-reference quality metrics.

Conventions: torch tensors are channel-first, ``(N, C, H, W)`` for a frame
stack or ``(B, N, C, H, W)`` for a batch of stacks; numpy inputs are
channel-last like the rest of the pipeline and are converted on entry.
Batched inputs return the mean of the per-stack losses.

The fidelity terms keep the frame-wise Euclidean norm under a single square
root (per frame, not per pixel),

    char  = (1/P) sum_n sqrt(||pred_n - gt_n||^2 + eps^2)
    edge  = (1/P) sum_n sqrt(||lap(pred_n) - lap(gt_n)||^2 + eps^2)

with P = H*W*C pixels per frame, eps smoothing the kink at zero so the loss
is differentiable everywhere. A per-pixel variant is available behind
``per_pixel=True`` for comparison runs. The structural term is scaled by
1/N (not 1/P: the per-frame SSIM is already a scalar, and a 1/P prefactor
would shrink it ~5 orders of magnitude below its calibrated weight).

The consistency term recombines the predicted frames with the exposure
code, using the exact arithmetic of the simulator (same normalization),

    reblur = (N/P) sqrt(||avg_code(pred) - B||^2 + eps^2).

SSIM follows the standard definition: 11x11 Gaussian window, sigma 1.5,
stabilizers (0.01*R)^2 and (0.03*R)^2 with R = 1, plain weighted moments,
and the mean taken over the valid (un-padded) window positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .codes import ExposureCode
from .forward import FrameStack, coded_average

SSIM_SIGMA = 1.5
SSIM_RADIUS = 5  # 11x11 window
PSNR_CAP_DB = 100.0


@dataclass(frozen=True)
class LossWeights:
    alpha1: float = 1.0
    alpha2: float = 0.05
    alpha3: float = 0.05
    gamma1: float = 1.0
    gamma2: float = 0.2
    epsilon: float = 1e-3

    def __post_init__(self):
        if min(self.alpha1, self.alpha2, self.alpha3, self.gamma1, self.gamma2) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")


@dataclass(frozen=True)
class LossReport:
    char: float
    ssim: float
    edge: float
    bd: float
    reblur: float
    total: float
    P: int
    N: int


def as_stack_tensor(x) -> torch.Tensor:
    """Coerce to a channel-first stack tensor (N, C, H, W) / (B, N, C, H, W)."""
    if isinstance(x, FrameStack):
        x = x.frames
    if isinstance(x, np.ndarray):
        if x.ndim == 4:  # (N, H, W, C) channel-last
            return torch.from_numpy(np.ascontiguousarray(x.transpose(0, 3, 1, 2)))
        raise ValueError(f"expected (N, H, W, C) numpy stack, got shape {x.shape}")
    if x.ndim not in (4, 5):
        raise ValueError(f"expected (N,C,H,W) or (B,N,C,H,W) tensor, got {tuple(x.shape)}")
    return x


def as_image_tensor(x) -> torch.Tensor:
    """Coerce to a channel-first image tensor (C, H, W) / (B, C, H, W)."""
    if isinstance(x, np.ndarray):
        if x.ndim == 3:  # (H, W, C)
            return torch.from_numpy(np.ascontiguousarray(x.transpose(2, 0, 1)))
        raise ValueError(f"expected (H, W, C) numpy image, got shape {x.shape}")
    return x


def _paired(pred, gt):
    pred = as_stack_tensor(pred)
    gt = as_stack_tensor(gt).to(pred.dtype)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    return pred, gt


def _pixels_per_frame(stack: torch.Tensor) -> int:
    c, h, w = stack.shape[-3:]
    return h * w * c


def charbonnier_loss(pred, gt, eps: float = 1e-3, per_pixel: bool = False) -> torch.Tensor:
    pred, gt = _paired(pred, gt)
    p = _pixels_per_frame(pred)
    sq = (pred - gt).square()
    if per_pixel:
        return torch.sqrt(sq + eps * eps).sum((-1, -2, -3, -4)).mean() / p
    frame_norm_sq = sq.sum((-1, -2, -3))
    return torch.sqrt(frame_norm_sq + eps * eps).sum(-1).mean() / p


def _gaussian_window(dtype, device) -> torch.Tensor:
    x = torch.arange(-SSIM_RADIUS, SSIM_RADIUS + 1, dtype=dtype, device=device)
    k = torch.exp(-0.5 * (x / SSIM_SIGMA) ** 2)
    return k / k.sum()


def _gaussian_filter_valid(img: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    # separable filtering, valid mode, per channel
    c = img.shape[1]
    kh = kernel.reshape(1, 1, 1, -1).expand(c, 1, 1, -1)
    kv = kernel.reshape(1, 1, -1, 1).expand(c, 1, -1, 1)
    return F.conv2d(F.conv2d(img, kh, groups=c), kv, groups=c)


def ssim_index(pred, gt, data_range: float = 1.0) -> torch.Tensor:
    """Mean SSIM per image. Input (B, C, H, W) or (C, H, W); returns (B,)."""
    pred = as_image_tensor(pred)
    gt = as_image_tensor(gt).to(pred.dtype)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    squeeze = pred.ndim == 3
    if squeeze:
        pred, gt = pred[None], gt[None]
    win = 2 * SSIM_RADIUS + 1
    if min(pred.shape[-1], pred.shape[-2]) < win:
        raise ValueError(f"frames smaller than the {win}x{win} SSIM window")
    kernel = _gaussian_window(pred.dtype, pred.device)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_x = _gaussian_filter_valid(pred, kernel)
    mu_y = _gaussian_filter_valid(gt, kernel)
    var_x = _gaussian_filter_valid(pred * pred, kernel) - mu_x * mu_x
    var_y = _gaussian_filter_valid(gt * gt, kernel) - mu_y * mu_y
    cov = _gaussian_filter_valid(pred * gt, kernel) - mu_x * mu_y
    s = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    )
    out = s.mean((-1, -2, -3))
    return out[0] if squeeze else out


def ssim_loss(pred, gt) -> torch.Tensor:
    """(1/N) sum_n (1 - meanSSIM(pred_n, gt_n)), batch-averaged."""
    pred, gt = _paired(pred, gt)
    flat_p = pred.reshape(-1, *pred.shape[-3:])
    flat_g = gt.reshape(-1, *gt.shape[-3:])
    return (1.0 - ssim_index(flat_p, flat_g)).mean()


_LAPLACIAN = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]]


def laplacian(img: torch.Tensor) -> torch.Tensor:
    """3x3 Laplacian per channel with replicate padding; input (B, C, H, W)."""
    c = img.shape[1]
    kernel = torch.tensor(_LAPLACIAN, dtype=img.dtype, device=img.device)
    kernel = kernel.reshape(1, 1, 3, 3).expand(c, 1, 3, 3)
    return F.conv2d(F.pad(img, (1, 1, 1, 1), mode="replicate"), kernel, groups=c)


def edge_loss(pred, gt, eps: float = 1e-3) -> torch.Tensor:
    pred, gt = _paired(pred, gt)
    flat_p = laplacian(pred.reshape(-1, *pred.shape[-3:]))
    flat_g = laplacian(gt.reshape(-1, *gt.shape[-3:]))
    diff_sq = (flat_p - flat_g).square().sum((-1, -2, -3)).reshape(pred.shape[:-3])
    p = _pixels_per_frame(pred)
    return torch.sqrt(diff_sq + eps * eps).sum(-1).mean() / p


def reblur_loss(pred, code: ExposureCode, snapshot_image, eps: float = 1e-3) -> torch.Tensor:
    """(N/P) sqrt(||avg_code(pred) - B||^2 + eps^2), batch-averaged.

    Uses the simulator's coded average (including its 1/ones normalization)
    so synthesis and consistency loss agree exactly.
    """
    pred = as_stack_tensor(pred)
    b = as_image_tensor(snapshot_image).to(pred.dtype)
    n = pred.shape[-4]
    if len(code) != n:
        raise ValueError(f"code length {len(code)} != stack frames {n}")
    recombined = coded_average(pred, code.bits, frame_axis=pred.ndim - 4)
    if recombined.shape != b.shape:
        raise ValueError(f"snapshot shape {tuple(b.shape)} != {tuple(recombined.shape)}")
    p = _pixels_per_frame(pred)
    resid_sq = (recombined - b).square().sum((-1, -2, -3))
    return n * (torch.sqrt(resid_sq + eps * eps)).mean() / p


def loss_terms(pred, gt, code, snapshot_image, eps: float = 1e-3) -> dict:
    """The four differentiable terms, unweighted (torch scalars)."""
    return {
        "char": charbonnier_loss(pred, gt, eps=eps),
        "ssim": ssim_loss(pred, gt),
        "edge": edge_loss(pred, gt, eps=eps),
        "reblur": reblur_loss(pred, code, snapshot_image, eps=eps),
    }


def combine_terms(terms: dict, weights: LossWeights) -> torch.Tensor:
    """Weighted total as a torch scalar (what training backpropagates)."""
    bd = weights.alpha1 * terms["char"] + weights.alpha2 * terms["ssim"] \
        + weights.alpha3 * terms["edge"]
    return weights.gamma1 * bd + weights.gamma2 * terms["reblur"]


def total_loss(pred, gt, code, snapshot_image, weights: LossWeights = LossWeights()) -> LossReport:
    pred_t = as_stack_tensor(pred)
    terms = loss_terms(pred, gt, code, snapshot_image, eps=weights.epsilon)
    char, ssim, edge = (float(terms[k]) for k in ("char", "ssim", "edge"))
    reblur = float(terms["reblur"])
    bd = weights.alpha1 * char + weights.alpha2 * ssim + weights.alpha3 * edge
    return LossReport(
        char=char,
        ssim=ssim,
        edge=edge,
        bd=bd,
        reblur=reblur,
        total=weights.gamma1 * bd + weights.gamma2 * reblur,
        P=_pixels_per_frame(pred_t),
        N=pred_t.shape[-4],
    )


def _to_numpy(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return np.asarray(x)


def psnr(pred_frame, gt_frame) -> float:
    """10 log10(1 / MSE) for [0, 1] images; identical frames report 100 dB."""
    a, b = _to_numpy(pred_frame), _to_numpy(gt_frame)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(1.0 / mse))


def ssim_metric(pred_frame, gt_frame) -> float:
    """Mean SSIM of one frame pair, channel-last numpy or channel-first torch."""
    a, b = _to_numpy(pred_frame), _to_numpy(gt_frame)
    return float(ssim_index(a.astype(np.float64), b.astype(np.float64)))
