"""Tiny-overfit gate: memorize two short clips and report train-set PSNR/SSIM.

Runs the protocol twice when --with-box is given (same seed, all-ones code)
to show the coded-exposure margin.
"""

import argparse
import json
import time
from pathlib import Path

import torch

from blurdec.engine import TrainConfig, evaluate, model_from_checkpoint, train
from blurdec.synth import make_dataset

SMALL_NET = dict(spatial_channels=16, mid_channels=32, bottleneck_channels=64,
                 temporal_width=64, temporal_hidden=128, bottleneck_blocks=3)


def run(cfg: TrainConfig, manifest, out_dir):
    t0 = time.monotonic()
    ckpt = train(cfg, manifest, out_dir, quiet=False)
    report = evaluate(model_from_checkpoint(ckpt), manifest,
                      code=cfg.effective_code())
    return {
        "out": str(out_dir),
        "code": cfg.effective_code().id_string,
        "seconds": round(time.monotonic() - t0, 1),
        "psnr": round(report["overall"]["psnr"], 3),
        "ssim": round(report["overall"]["ssim"], 4),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--code", default="11100101")
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--frames", type=int, default=32)
    ap.add_argument("--size", type=int, default=48)
    ap.add_argument("--batch-size", type=int, default=2)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--with-box", action="store_true",
                    help="also train the all-ones ablation at the same seed")
    ap.add_argument("--full-size-net", action="store_true",
                    help="default widths instead of the small CPU profile")
    args = ap.parse_args()
    torch.set_num_threads(args.threads)

    out = Path(args.out)
    manifest = make_dataset(out / "data", n_clips=1, n_frames=args.frames,
                            height=args.size, width=args.size, seed=101,
                            with_reversals=True, n_sprites=4, speed=1.25)
    cfg = TrainConfig(
        code=args.code, crop=None, batch_size=args.batch_size,
        epochs=args.epochs, lr_init=args.lr, lr_final=1e-6, warmup_epochs=2,
        seed=args.seed, augment=False, sigma_range=(0.0, 0.0), val_every=50,
        checkpoint_every=100,
        network={} if args.full_size_net else dict(SMALL_NET),
    )
    rows = [run(cfg, manifest, out / "coded")]
    if args.with_box:
        from dataclasses import replace
        rows.append(run(replace(cfg, use_coded_exposure=False), manifest,
                        out / "box"))
    for row in rows:
        print(json.dumps(row))
    if len(rows) == 2:
        print(f"coded margin: {rows[0]['psnr'] - rows[1]['psnr']:+.2f} dB")


if __name__ == "__main__":
    main()
