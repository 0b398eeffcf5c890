"""Implicit-neural-representation network that splits a coded snapshot into frames.

One trained network is a video INR conditioned on the snapshot: a temporal
branch embeds (frame index, shutter bit) pairs, a spatial branch embeds the
snapshot, and a shared encoder-decoder decodes one frame per requested
index. Extraction is self-recursive by default: the feature map of the
previous frame is fused into the spatial embedding before decoding the next
one (starting from the second frame), and the same module set is reused at
every step, so the parameter count does not grow with the code length.

The shutter bit enters the temporal branch through the phase of the
position encoding,

    pe(t, c) = [sin(b^k pi t + (1-c) pi), cos(b^k pi t + (1-c) pi)]_{k<l},

so frames captured with a closed shutter segment are phase-flipped relative
to open ones; this is what lets the decoder exploit the asymmetric code as
an ordering cue.

Selective extraction (decoding only some indices) skips the recursion chain
entirely, so it is only allowed for networks trained without recursion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
from torch import nn

from .codes import ExposureCode
from .forward import CodedSnapshot, FrameStack, normalized_times


class SelectiveModeError(RuntimeError):
    """Selective extraction requested from a recursion-trained network."""


@dataclass
class NetworkConfig:
    code: str = "11100101"
    pe_base: float = 1.25
    pe_levels: int = 80
    spatial_channels: int = 32      # C_s: spatial embedding width
    temporal_width: int = 128       # C_t: temporal embedding width
    temporal_hidden: int = 256
    mid_channels: int = 64
    bottleneck_channels: int = 128
    enc_blocks: int = 2
    bottleneck_blocks: int = 8   # default widths land at ~3.7M parameters
    dec_blocks: int = 2
    in_channels: int = 3
    use_recursion: bool = True
    use_time_mlp: bool = True

    def __post_init__(self):
        ExposureCode.parse(self.code)  # validates
        if self.pe_levels < 1:
            raise ValueError("pe_levels must be >= 1")
        for name in ("spatial_channels", "temporal_width", "temporal_hidden",
                     "mid_channels", "bottleneck_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def n_frames(self) -> int:
        return len(self.code)

    def to_dict(self) -> dict:
        return asdict(self)


def position_encode(t: float, c: int, b: float = 1.25, l: int = 80) -> np.ndarray:
    """Frequency position encoding of one (normalized index, shutter bit) pair.

    Returns the length-2l vector [sin(b^0 pi t + (1-c) pi), cos(...), ...,
    sin(b^(l-1) pi t + (1-c) pi), cos(...)] with interleaved sin/cos pairs.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"normalized frame index must be in [0, 1], got {t}")
    if c not in (0, 1):
        raise ValueError(f"shutter bit must be 0 or 1, got {c}")
    phase = np.power(b, np.arange(l, dtype=np.float64)) * math.pi * t + (1 - c) * math.pi
    out = np.empty(2 * l, dtype=np.float64)
    out[0::2] = np.sin(phase)
    out[1::2] = np.cos(phase)
    return out


def position_encoding_table(code: ExposureCode, b: float, l: int) -> torch.Tensor:
    """(N, 2l) float32 table, one row per frame of the code."""
    times = normalized_times(len(code))
    rows = [position_encode(float(t), bit, b=b, l=l) for t, bit in zip(times, code.bits)]
    return torch.from_numpy(np.stack(rows)).float()


class ResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        return x + self.conv2(self.act(self.conv1(x)))


class SpatialEncoder(nn.Module):
    """Snapshot -> spatial context embedding: one conv then residual blocks."""

    def __init__(self, in_channels: int, channels: int, n_blocks: int = 3):
        super().__init__()
        self.head = nn.Conv2d(in_channels, channels, 3, padding=1)
        self.blocks = nn.Sequential(*[ResBlock(channels) for _ in range(n_blocks)])

    def forward(self, x):
        check_spatial_dims(x.shape[-2], x.shape[-1])
        return self.blocks(self.head(x))


class TemporalMLP(nn.Module):
    """Position encoding -> temporal context embedding (two affine layers)."""

    def __init__(self, in_features: int, hidden: int, out_features: int):
        super().__init__()
        self.fc1 = nn.Linear(in_features, hidden)
        self.fc2 = nn.Linear(hidden, out_features)
        self.act = nn.ReLU(inplace=True)

    def forward(self, pe):
        if pe.shape[-1] != self.fc1.in_features:
            raise ValueError(
                f"position encoding width {pe.shape[-1]} != expected {self.fc1.in_features}"
            )
        return self.fc2(self.act(self.fc1(pe)))


class FeatureFusion(nn.Module):
    """Concatenate spatial embedding with the previous frame's feature map."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(2 * channels, channels, 3, padding=1)

    def forward(self, emb, prev_feature):
        if emb.shape != prev_feature.shape:
            raise ValueError(
                f"fusion shape mismatch: {tuple(emb.shape)} vs {tuple(prev_feature.shape)}"
            )
        return self.conv(torch.cat([emb, prev_feature], dim=1))


class OutBlock(nn.Module):
    """Decoder tail emitting the frame and the feature map fed to recursion."""

    def __init__(self, channels: int, out_channels: int):
        super().__init__()
        self.feat_conv = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.ReLU(inplace=True)
        self.frame_conv = nn.Conv2d(channels, out_channels, 3, padding=1)

    def forward(self, x):
        feature = self.act(self.feat_conv(x))
        return self.frame_conv(feature), feature


class FrameDecoder(nn.Module):
    """Two-level encoder-decoder fusing spatial and temporal embeddings.

    The temporal embedding is mapped by one affine layer to per-channel
    (scale, shift) applied at the bottleneck as x * (1 + scale) + shift, so
    a zeroed affine layer degenerates to the identity (no conditioning).
    """

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        cs, cm, cb = cfg.spatial_channels, cfg.mid_channels, cfg.bottleneck_channels
        self.down1 = nn.Conv2d(cs, cm, 3, stride=2, padding=1)
        self.enc1 = nn.Sequential(*[ResBlock(cm) for _ in range(cfg.enc_blocks)])
        self.down2 = nn.Conv2d(cm, cb, 3, stride=2, padding=1)
        self.enc2 = nn.Sequential(*[ResBlock(cb) for _ in range(cfg.enc_blocks)])
        self.modulation = nn.Linear(cfg.temporal_width, 2 * cb)
        self.bottleneck = nn.Sequential(*[ResBlock(cb) for _ in range(cfg.bottleneck_blocks)])
        self.up1 = nn.Conv2d(cb, cm, 3, padding=1)
        self.dec1 = nn.Sequential(*[ResBlock(cm) for _ in range(cfg.dec_blocks)])
        self.up2 = nn.Conv2d(cm, cs, 3, padding=1)
        self.dec2 = nn.Sequential(*[ResBlock(cs) for _ in range(cfg.dec_blocks)])
        self.out_block = OutBlock(cs, cfg.in_channels)

    def forward(self, emb, temb):
        e1 = self.enc1(self.down1(emb))
        e2 = self.enc2(self.down2(e1))
        scale, shift = self.modulation(temb).chunk(2, dim=-1)
        scale = scale[:, :, None, None]
        shift = shift[:, :, None, None]
        x = self.bottleneck(e2 * (1.0 + scale) + shift)
        x = nn.functional.interpolate(x, scale_factor=2, mode="nearest")
        x = self.dec1(self.up1(x) + e1)
        x = nn.functional.interpolate(x, scale_factor=2, mode="nearest")
        x = self.dec2(self.up2(x) + emb)
        return self.out_block(x)


def check_spatial_dims(h: int, w: int):
    if h % 4 or w % 4:
        raise ValueError(
            f"spatial dims must be divisible by 4 for the two-level decoder, "
            f"got {h}x{w}; pad to {math.ceil(h / 4) * 4}x{math.ceil(w / 4) * 4}"
        )


class BlurDecomposer(nn.Module):
    """Full snapshot-to-frames network (temporal + spatial branches + decoder)."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        self.code = ExposureCode.parse(cfg.code)
        self.encoder = SpatialEncoder(cfg.in_channels, cfg.spatial_channels)
        self.decoder = FrameDecoder(cfg)
        self.fusion = FeatureFusion(cfg.spatial_channels) if cfg.use_recursion else None
        if cfg.use_time_mlp:
            self.time_mlp = TemporalMLP(2 * cfg.pe_levels, cfg.temporal_hidden, cfg.temporal_width)
            self.register_buffer(
                "pe_table", position_encoding_table(self.code, cfg.pe_base, cfg.pe_levels)
            )
        else:
            # index-free learned constant standing in for the temporal branch
            self.time_mlp = None
            self.time_const = nn.Parameter(torch.zeros(cfg.temporal_width))

    @property
    def n_frames(self) -> int:
        return len(self.code)

    def temporal_embedding(self, index: int, batch: int) -> torch.Tensor:
        if self.time_mlp is None:
            return self.time_const[None, :].expand(batch, -1)
        return self.time_mlp(self.pe_table[index][None, :]).expand(batch, -1)

    def forward(self, snapshot: torch.Tensor, indices=None) -> torch.Tensor:
        """Decode frames from a snapshot batch (B, C, H, W) -> (B, K, C, H, W).

        indices=None decodes all N frames in temporal order, feeding each
        frame's feature map forward when recursion is enabled. An explicit
        index list decodes just those frames, each straight from the
        snapshot embedding (recursion-free networks only).
        """
        check_spatial_dims(snapshot.shape[-2], snapshot.shape[-1])
        emb = self.encoder(snapshot)
        batch = snapshot.shape[0]
        if indices is None:
            frames = []
            feature = None
            for i in range(self.n_frames):
                emb_i = emb
                if self.fusion is not None and feature is not None:
                    emb_i = self.fusion(emb, feature)
                temb = self.temporal_embedding(i, batch)
                frame, feature = self.decoder(emb_i, temb)
                frames.append(frame)
            return torch.stack(frames, dim=1)
        indices = self._validate_indices(indices)
        frames = []
        for i in indices:
            temb = self.temporal_embedding(i, batch)
            frame, _ = self.decoder(emb, temb)
            frames.append(frame)
        return torch.stack(frames, dim=1)

    def _validate_indices(self, indices) -> list[int]:
        if self.cfg.use_recursion:
            raise SelectiveModeError(
                "selective extraction needs a network trained without the "
                "self-recursive strategy (use_recursion=false)"
            )
        indices = sorted(set(int(i) for i in indices))
        if not indices:
            raise ValueError("indices must not be empty")
        for i in indices:
            if not 0 <= i < self.n_frames:
                raise IndexError(f"index out of range: {i} not in [0, {self.n_frames})")
        return indices

    @torch.no_grad()
    def decompose(self, snapshot, indices=None) -> FrameStack:
        """Inference entry point: numpy snapshot in, clamped FrameStack out."""
        if isinstance(snapshot, CodedSnapshot):
            if len(snapshot.code) != self.n_frames:
                raise ValueError(
                    f"snapshot code length {len(snapshot.code)} != network's {self.n_frames}"
                )
            if snapshot.code.bits != self.code.bits:
                raise ValueError(
                    f"snapshot code {snapshot.code.id_string} != network code {self.code.id_string}"
                )
            image = snapshot.image
        else:
            image = np.asarray(snapshot)
        dtype = next(self.parameters()).dtype
        x = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1)))[None].to(dtype)
        was_training = self.training
        self.eval()
        try:
            out = self(x, indices=indices)
        finally:
            self.train(was_training)
        out = out.clamp(0.0, 1.0)[0].permute(0, 2, 3, 1).cpu().numpy()
        times = normalized_times(self.n_frames)
        if indices is not None:
            kept = sorted(set(int(i) for i in indices))
            times = times[kept]
        return FrameStack(frames=out.astype(np.float32), frame_indices=times)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
