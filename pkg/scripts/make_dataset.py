"""Generate a synthetic sprite dataset for training experiments.

Each clip is a smooth background with moving anti-aliased sprites; with
--reversals every clip also gets a time-reversed twin, which is the cheap
way to expose the direction ambiguity of symmetric shutter codes.
"""

import argparse

from blurdec.synth import make_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--root", required=True)
    ap.add_argument("--clips", type=int, default=2)
    ap.add_argument("--frames", type=int, default=192)
    ap.add_argument("--height", type=int, default=128)
    ap.add_argument("--width", type=int, default=128)
    ap.add_argument("--sprites", type=int, default=6)
    ap.add_argument("--speed", type=float, default=1.5)
    ap.add_argument("--split", default="train")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--no-reversals", action="store_true")
    args = ap.parse_args()

    manifest = make_dataset(
        args.root, n_clips=args.clips, n_frames=args.frames,
        height=args.height, width=args.width, seed=args.seed,
        split=args.split, with_reversals=not args.no_reversals,
        n_sprites=args.sprites, speed=args.speed,
    )
    total = sum(v.frame_count for v in manifest.videos)
    print(f"wrote {len(manifest.videos)} clips / {total} frames under {args.root}")


if __name__ == "__main__":
    main()
