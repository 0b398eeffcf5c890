"""Training, evaluation, and sweep orchestration.

Reproducibility scheme: the model is built under torch.manual_seed(seed),
and every stochastic choice inside the loop (window starts, example order,
crops/flips, noise sigma, noise draw) comes from a counter-based stream
keyed on (seed, epoch) or (seed, epoch, example index). No torch RNG is
consumed during training itself, so a checkpoint written at an epoch
boundary resumes with a step-for-step identical trajectory.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np
import torch
import yaml

from .codes import ExposureCode, search_codes
from .data import (
    DatasetManifest,
    load_window,
    make_training_example,
    window_starts,
)
from .data import augment as augment_stack
from .forward import FrameStack, add_noise, synthesize_coded_blur
from .losses import LossWeights, combine_terms, loss_terms, psnr, ssim_metric
from .network import BlurDecomposer, NetworkConfig
from .optim import Adan

CHECKPOINT_FORMAT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; diagnostics were written before raising."""


@dataclass
class TrainConfig:
    code: str = "11100101"
    crop: int | None = 256
    batch_size: int = 8
    epochs: int = 500
    lr_init: float = 5e-4
    lr_final: float = 1e-6
    warmup_epochs: int = 2
    optimizer: str = "adan"
    betas: tuple = (0.98, 0.92, 0.99)
    weight_decay: float = 0.0
    grad_clip: float | None = None   # None: non-finite losses abort instead
    seed: int = 0
    use_coded_exposure: bool = True  # False: all-ones box code of same length
    use_recursion: bool = True
    use_time_mlp: bool = True
    loss: LossWeights = field(default_factory=LossWeights)
    sigma_range: tuple = (0.0, 0.01)
    augment: bool = True   # also switches window starts fixed-grid <-> random
    val_every: int = 10
    checkpoint_every: int = 50
    network: dict = field(default_factory=dict)  # width/PE overrides

    def __post_init__(self):
        ExposureCode.parse(self.code)
        if isinstance(self.loss, dict):
            self.loss = LossWeights(**self.loss)
        self.betas = tuple(float(b) for b in self.betas)
        self.sigma_range = tuple(float(s) for s in self.sigma_range)
        lo, hi = self.sigma_range
        if lo < 0 or hi < lo:
            raise ValueError(f"bad sigma_range {self.sigma_range}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr_init <= 0 or self.lr_final < 0:
            raise ValueError("learning rates must be positive")
        if self.lr_final > self.lr_init:
            raise ValueError(f"lr_final {self.lr_final} > lr_init {self.lr_init}")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("need 0 <= warmup_epochs < epochs")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("adan", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @property
    def window(self) -> int:
        return len(self.code)

    def effective_code(self) -> ExposureCode:
        """The code actually applied; all-ones when coded exposure is ablated."""
        if self.use_coded_exposure:
            return ExposureCode.parse(self.code)
        return ExposureCode.parse("1" * self.window)

    def to_network_config(self) -> NetworkConfig:
        overrides = dict(self.network)
        for key in ("code", "use_recursion", "use_time_mlp"):
            overrides.pop(key, None)  # engine-owned, keep one source of truth
        return NetworkConfig(
            code=self.effective_code().id_string,
            use_recursion=self.use_recursion,
            use_time_mlp=self.use_time_mlp,
            **overrides,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["sigma_range"] = list(self.sigma_range)
        return d


def train_config_from_dict(d: dict) -> TrainConfig:
    return TrainConfig(**d)


def load_train_config(path) -> TrainConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"config file {path} must hold a mapping")
    return train_config_from_dict(raw)


def save_train_config(cfg: TrainConfig, path):
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)


def lr_schedule(step: int, total_steps: int, warmup_steps: int,
                lr_init: float, lr_final: float) -> float:
    """Linear ramp 0 -> lr_init over warmup_steps, then cosine to lr_final.

    The cosine span covers steps [warmup_steps, total_steps - 1] inclusive,
    so the very first post-warmup step runs at exactly lr_init and the last
    step at exactly lr_final.
    """
    if not 0 <= step < total_steps:
        raise ValueError(f"need 0 <= step < total_steps, got {step}/{total_steps}")
    if not 0 <= warmup_steps < total_steps:
        raise ValueError(f"need 0 <= warmup_steps < total_steps, got {warmup_steps}")
    if lr_final > lr_init:
        raise ValueError(f"lr_final {lr_final} > lr_init {lr_init}")
    if step < warmup_steps:
        return lr_init * step / warmup_steps
    span = total_steps - 1 - warmup_steps
    if span <= 0:
        return lr_init
    u = (step - warmup_steps) / span
    return lr_final + (lr_init - lr_final) * 0.5 * (1.0 + math.cos(math.pi * u))


def derive_seeds(parts, n: int = 1) -> list[int]:
    """n independent integer seeds from a tuple of integer key parts."""
    ss = np.random.SeedSequence([int(p) for p in parts])
    return [int(s) for s in ss.generate_state(n, dtype=np.uint64)]


def build_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "adan":
        return Adan(params, lr=cfg.lr_init, betas=cfg.betas,
                    weight_decay=cfg.weight_decay)
    # plain adaptive-moment fallback; recorded in the checkpoint
    return torch.optim.Adam(params, lr=cfg.lr_init, betas=cfg.betas[:2],
                            weight_decay=cfg.weight_decay)


def center_crop(stack: FrameStack, height: int, width: int) -> FrameStack:
    _, h, w, _ = stack.frames.shape
    if height > h or width > w:
        raise ValueError(f"crop {height}x{width} larger than frame {h}x{w}")
    top = (h - height) // 2
    left = (w - width) // 2
    out = stack.frames[:, top : top + height, left : left + width, :]
    return FrameStack(frames=np.ascontiguousarray(out), frame_indices=stack.frame_indices)


def shrink_to_multiple(stack: FrameStack, multiple: int = 4) -> FrameStack:
    """Center-crop to the largest size divisible by `multiple` (decoder req)."""
    _, h, w, _ = stack.frames.shape
    h2, w2 = (h // multiple) * multiple, (w // multiple) * multiple
    if h2 < multiple or w2 < multiple:
        raise ValueError(f"frame {h}x{w} too small for multiple-of-{multiple} crop")
    if (h2, w2) == (h, w):
        return stack
    return center_crop(stack, h2, w2)


def _build_example(manifest, video, start, code, cfg: TrainConfig, epoch: int, idx: int):
    aug_seed, ex_seed = derive_seeds((cfg.seed, epoch, idx), 2)
    stack = load_window(manifest, video, start, cfg.window)
    if cfg.augment and cfg.crop is not None:
        stack = augment_stack(stack, cfg.crop, aug_seed)
    elif cfg.crop is not None:
        stack = center_crop(stack, cfg.crop, cfg.crop)
    else:
        stack = shrink_to_multiple(stack)
    return make_training_example(stack, code, cfg.sigma_range, ex_seed)


def _batch_tensors(examples):
    snap = np.stack([ex.snapshot.image.transpose(2, 0, 1) for ex in examples])
    gt = np.stack([ex.gt.frames.transpose(0, 3, 1, 2) for ex in examples])
    return torch.from_numpy(snap), torch.from_numpy(gt)


def make_checkpoint(model, optimizer, cfg: TrainConfig, epoch: int, global_step: int,
                    best: dict | None, history: dict) -> dict:
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "train_config": cfg.to_dict(),
        "network_config": model.cfg.to_dict(),
        "optimizer_name": cfg.optimizer,
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
        "global_step": global_step,
        "best": best,
        "history": history,
        "torch_rng_state": torch.get_rng_state(),
    }


def save_checkpoint(ckpt: dict, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(ckpt, path)


def load_checkpoint(path) -> dict:
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    version = ckpt.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {version!r}")
    return ckpt


def model_from_checkpoint(ckpt: dict) -> BlurDecomposer:
    model = BlurDecomposer(NetworkConfig(**ckpt["network_config"]))
    model.load_state_dict(ckpt["model_state"])
    model.eval()
    return model


def train(cfg: TrainConfig, manifest: DatasetManifest, out_dir,
          val_manifest: DatasetManifest | None = None,
          resume_from=None, stop_after: int | None = None,
          quiet: bool = False) -> dict:
    """Run the full loop and return the final checkpoint (also on disk).

    Writes under out_dir: train_log.jsonl (one row per epoch), ckpt_last.pt,
    ckpt_best.pt (by validation PSNR, evaluated every val_every epochs),
    ckpt_final.pt. Validation falls back to the training manifest when no
    held-out one is given. stop_after interrupts at that epoch boundary
    without touching the schedule, so a later resume_from continues the
    very same run.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    code = cfg.effective_code()

    torch.manual_seed(cfg.seed)
    model = BlurDecomposer(cfg.to_network_config())
    model.train()
    optimizer = build_optimizer(model.parameters(), cfg)

    start_epoch = 0
    global_step = 0
    best = None
    history = {"step_loss": [], "epochs": []}
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt["train_config"]["code"] != cfg.code:
            raise ValueError("resume checkpoint was trained with a different code")
        model.load_state_dict(ckpt["model_state"])
        if ckpt["optimizer_state"] is not None:
            optimizer.load_state_dict(ckpt["optimizer_state"])
        start_epoch = ckpt["epoch"]
        global_step = ckpt["global_step"]
        best = ckpt["best"]
        history = ckpt["history"]
        torch.set_rng_state(ckpt["torch_rng_state"])

    n_examples = len(window_starts(manifest, cfg.window))
    steps_per_epoch = math.ceil(n_examples / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    warmup_steps = steps_per_epoch * cfg.warmup_epochs

    end_epoch = cfg.epochs if stop_after is None else stop_after
    if not start_epoch <= end_epoch <= cfg.epochs:
        raise ValueError(f"stop_after must be in [{start_epoch}, {cfg.epochs}]")

    log_path = out_dir / "train_log.jsonl"
    log_fh = open(log_path, "a")
    epochs_done = start_epoch

    def _save(name, epoch):
        ckpt = make_checkpoint(model, optimizer, cfg, epoch, global_step, best, history)
        save_checkpoint(ckpt, out_dir / name)
        return ckpt

    try:
        for epoch in range(start_epoch, end_epoch):
            t0 = time.monotonic()
            win_seed, order_seed = derive_seeds((cfg.seed, epoch), 2)
            windows = window_starts(manifest, cfg.window, overlap=cfg.augment,
                                    seed=win_seed)
            order = np.arange(len(windows))
            if cfg.augment:
                order = np.random.default_rng(order_seed).permutation(len(windows))

            term_sums = {"char": 0.0, "ssim": 0.0, "edge": 0.0, "reblur": 0.0,
                         "total": 0.0}
            last_lr = 0.0
            for b0 in range(0, len(order), cfg.batch_size):
                idxs = order[b0 : b0 + cfg.batch_size]
                examples = [
                    _build_example(manifest, windows[i][0], windows[i][1], code,
                                   cfg, epoch, int(i))
                    for i in idxs
                ]
                snap_t, gt_t = _batch_tensors(examples)
                lr = lr_schedule(global_step, total_steps, warmup_steps,
                                 cfg.lr_init, cfg.lr_final)
                last_lr = lr
                for group in optimizer.param_groups:
                    group["lr"] = lr

                pred = model(snap_t)
                terms = loss_terms(pred, gt_t, code, snap_t, eps=cfg.loss.epsilon)
                loss = combine_terms(terms, cfg.loss)
                if not torch.isfinite(loss):
                    diag = _dump_divergence(out_dir, epoch, global_step, lr,
                                            terms, snap_t, gt_t)
                    raise TrainingDiverged(
                        f"non-finite loss at step {global_step}; diagnostics: {diag}"
                    )
                optimizer.zero_grad()
                loss.backward()
                if cfg.grad_clip is not None:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
                optimizer.step()
                global_step += 1

                loss_val = float(loss.detach())
                history["step_loss"].append(loss_val)
                for k in ("char", "ssim", "edge", "reblur"):
                    term_sums[k] += float(terms[k].detach())
                term_sums["total"] += loss_val

            row = {
                "type": "epoch",
                "epoch": epoch,
                "lr": last_lr,
                "steps": steps_per_epoch,
                "seconds": round(time.monotonic() - t0, 3),
            }
            for k, v in term_sums.items():
                row[k] = v / steps_per_epoch

            epochs_done = epoch + 1
            last_epoch = epoch == end_epoch - 1
            if cfg.val_every > 0 and ((epoch + 1) % cfg.val_every == 0 or last_epoch):
                report = evaluate(model, val_manifest or manifest)
                row["val_psnr"] = report["overall"]["psnr"]
                row["val_ssim"] = report["overall"]["ssim"]
                if best is None or row["val_psnr"] > best["psnr"]:
                    best = {"psnr": row["val_psnr"], "ssim": row["val_ssim"],
                            "epoch": epoch}
                    _save("ckpt_best.pt", epoch + 1)
                model.train()

            history["epochs"].append(row)
            log_fh.write(json.dumps(row) + "\n")
            log_fh.flush()
            if not quiet:
                val = f" val_psnr={row['val_psnr']:.2f}" if "val_psnr" in row else ""
                print(f"epoch {epoch:4d} lr={row['lr']:.2e} "
                      f"loss={row['total']:.6f}{val}", flush=True)

            if (epoch + 1) % cfg.checkpoint_every == 0 or last_epoch:
                _save("ckpt_last.pt", epoch + 1)
    finally:
        log_fh.close()

    final = _save("ckpt_final.pt", epochs_done)
    return final


def _dump_divergence(out_dir: Path, epoch, step, lr, terms, snap_t, gt_t) -> str:
    path = Path(out_dir) / f"divergence_step{step}.npz"
    np.savez_compressed(
        path,
        snapshot=snap_t.detach().numpy(),
        gt=gt_t.detach().numpy(),
        epoch=epoch,
        step=step,
        lr=lr,
        **{k: float(v.detach()) for k, v in terms.items()},
    )
    return str(path)


def _decompose_fn(model, code):
    """Normalize model-like things to snapshot -> FrameStack."""
    if isinstance(model, BlurDecomposer):
        return model.decompose, model.code
    if isinstance(model, dict) and "model_state" in model:
        net = model_from_checkpoint(model)
        return net.decompose, net.code
    if callable(model):
        if code is None:
            raise ValueError("a bare callable needs an explicit code=")
        return model, ExposureCode.parse(code) if isinstance(code, str) else code
    raise TypeError(f"cannot evaluate object of type {type(model).__name__}")


def evaluate(model, manifest: DatasetManifest, code=None, sigma: float = 0.0,
             seed: int = 0, extra_metrics: dict | None = None,
             out_path=None) -> dict:
    """Decompose every non-overlapping window and score against ground truth.

    `model` may be a BlurDecomposer, a loaded checkpoint dict, or any
    callable CodedSnapshot -> FrameStack (then `code` is required).
    Frames are center-cropped to multiple-of-4 dims before synthesis.
    Returns per-window rows plus per-video and overall PSNR/SSIM means.
    """
    decompose, code = _decompose_fn(model, code)
    window = len(code)
    extra_metrics = extra_metrics or {}

    rows = []
    for row_idx, (video, start) in enumerate(window_starts(manifest, window)):
        gt = shrink_to_multiple(load_window(manifest, video, start, window))
        snapshot = synthesize_coded_blur(gt, code)
        if sigma > 0:
            snapshot = add_noise(snapshot, sigma, seed=derive_seeds((seed, row_idx))[0])
        pred = decompose(snapshot)
        if pred.frames.shape != gt.frames.shape:
            raise ValueError(
                f"prediction shape {pred.frames.shape} != gt {gt.frames.shape}"
            )
        row = {
            "video_id": video.video_id,
            "start": start,
            "psnr": float(np.mean([psnr(pred.frames[i], gt.frames[i])
                                   for i in range(window)])),
            "ssim": float(np.mean([ssim_metric(pred.frames[i], gt.frames[i])
                                   for i in range(window)])),
        }
        for name, fn in extra_metrics.items():
            row[name] = float(fn(pred, gt))
        rows.append(row)

    metric_names = ["psnr", "ssim", *extra_metrics]
    per_video = {}
    for row in rows:
        per_video.setdefault(row["video_id"], []).append(row)
    per_video = {
        vid: {"n_windows": len(vrows),
              **{m: float(np.mean([r[m] for r in vrows])) for m in metric_names}}
        for vid, vrows in per_video.items()
    }
    overall = {"n_windows": len(rows),
               **{m: float(np.mean([r[m] for r in rows])) for m in metric_names}}
    report = {"code": code.id_string, "sigma": sigma, "rows": rows,
              "per_video": per_video, "overall": overall}
    if out_path is not None:
        _write_report(report, out_path)
    return report


def _write_report(report: dict, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(json.dumps({"type": "header", "code": report["code"],
                             "sigma": report["sigma"]}) + "\n")
        for row in report["rows"]:
            fh.write(json.dumps({"type": "window", **row}) + "\n")
        for vid, agg in report["per_video"].items():
            fh.write(json.dumps({"type": "video", "video_id": vid, **agg}) + "\n")
        fh.write(json.dumps({"type": "overall", **report["overall"]}) + "\n")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


BASE_DUTY = 5 / 8  # duty ratio of the reference 8-bit code


def code_for_cell(length: int, ones: int, seed: int = 0) -> ExposureCode:
    """Top-ranked asymmetric code, except all-ones which is the box code."""
    if ones == length:
        return ExposureCode.parse("1" * length)
    return search_codes(length, ones, top_k=1, seed=seed)[0][0]


def sweep(lengths: list, duty_ratios: list, base_config: TrainConfig,
          manifest: DatasetManifest, out_dir,
          val_manifest: DatasetManifest | None = None,
          extra_metrics: dict | None = None, quiet: bool = False) -> list[dict]:
    """Train/evaluate one cell per code length and per duty ratio.

    Length cells keep the reference duty (ones = round(length * 5/8));
    duty cells keep length 8. Each cell trains from base_config with only
    the code swapped. Infeasible cells produce an "error" row, not a crash.
    The table always carries an lpips column: filled by an entry named
    "lpips" in extra_metrics, null otherwise.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = [("length", n, round_half_up(n * BASE_DUTY)) for n in lengths]
    cells += [("duty", 8, round_half_up(8 * r)) for r in duty_ratios]

    table = []
    for axis, length, ones in cells:
        row = {"axis": axis, "length": length, "ones": ones, "code": None,
               "psnr": None, "ssim": None, "lpips": None, "error": None}
        try:
            code = code_for_cell(length, ones, seed=base_config.seed)
            row["code"] = code.id_string
            cfg = replace(base_config, code=code.id_string,
                          use_coded_exposure=True)
            cell_dir = out_dir / f"{axis}_{length}_{ones}"
            ckpt = train(cfg, manifest, cell_dir, val_manifest=val_manifest,
                         quiet=quiet)
            report = evaluate(model_from_checkpoint(ckpt),
                              val_manifest or manifest,
                              extra_metrics=extra_metrics)
            row["psnr"] = report["overall"]["psnr"]
            row["ssim"] = report["overall"]["ssim"]
            if extra_metrics and "lpips" in extra_metrics:
                row["lpips"] = report["overall"]["lpips"]
        except (ValueError, RuntimeError) as exc:
            row["error"] = str(exc)
        table.append(row)

    with open(out_dir / "sweep.jsonl", "w") as fh:
        for row in table:
            fh.write(json.dumps(row) + "\n")
    return table
