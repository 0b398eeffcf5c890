"""Code length / duty ratio sweep on a synthetic dataset.

Prints the result table and leaves per-cell runs plus sweep.jsonl under --out.
"""

import argparse
from pathlib import Path

import torch

from blurdec.engine import TrainConfig, sweep
from blurdec.synth import make_dataset

SMALL_NET = dict(spatial_channels=16, mid_channels=32, bottleneck_channels=64,
                 temporal_width=64, temporal_hidden=128, bottleneck_blocks=3)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--lengths", default="4,8,12")
    ap.add_argument("--duties", default="5/8,8/8")
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--frames", type=int, default=48)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    torch.set_num_threads(args.threads)

    out = Path(args.out)
    manifest = make_dataset(out / "data", n_clips=1, n_frames=args.frames,
                            height=args.size, width=args.size, seed=101,
                            with_reversals=True, n_sprites=6, speed=1.5)
    base = TrainConfig(
        crop=None, batch_size=2, epochs=args.epochs, lr_init=args.lr,
        lr_final=1e-6, warmup_epochs=2, seed=args.seed, augment=False,
        sigma_range=(0.0, 0.0), val_every=0, checkpoint_every=10 ** 9,
        grad_clip=1.0, network=dict(SMALL_NET),
    )
    lengths = [int(t) for t in args.lengths.split(",") if t.strip()]
    duties = []
    for tok in args.duties.split(","):
        tok = tok.strip()
        if not tok:
            continue
        duties.append(int(tok.split("/")[0]) / int(tok.split("/")[1])
                      if "/" in tok else float(tok))
    table = sweep(lengths, duties, base, manifest, out, quiet=True)
    print("axis\tlength\tones\tcode\tpsnr\tssim")
    for row in table:
        if row["error"]:
            print(f"{row['axis']}\t{row['length']}\t{row['ones']}\t"
                  f"# {row['error']}")
        else:
            print(f"{row['axis']}\t{row['length']}\t{row['ones']}\t"
                  f"{row['code']}\t{row['psnr']:.3f}\t{row['ssim']:.4f}")


if __name__ == "__main__":
    main()
