"""Render the motion-direction ambiguity figure.

Left: symmetric code, opposite motions, pixelwise-identical snapshots.
Right: asymmetric code, same motions, visibly different snapshots.
"""

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from blurdec.codes import ExposureCode
from blurdec.forward import synthesize_coded_blur, toy_translation_scene


def snapshot_pair(code: ExposureCode, width: int, extent: int, shift: int):
    pair = []
    for direction in (1, -1):
        scene = toy_translation_scene(width=width, object_extent=extent,
                                      shift_per_bit=shift,
                                      direction=direction, n_frames=len(code))
        pair.append(synthesize_coded_blur(scene, code).image)
    return pair


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="ambiguity.png")
    ap.add_argument("--symmetric-code", default="11011")
    ap.add_argument("--asymmetric-code", default="11101")
    ap.add_argument("--width", type=int, default=64)
    ap.add_argument("--extent", type=int, default=8)
    ap.add_argument("--shift", type=int, default=2)
    args = ap.parse_args()

    codes = [ExposureCode.parse(args.symmetric_code),
             ExposureCode.parse(args.asymmetric_code)]
    fig, axes = plt.subplots(2, 2, figsize=(8, 4), constrained_layout=True)
    for col, code in enumerate(codes):
        fwd, rev = snapshot_pair(code, args.width, args.extent, args.shift)
        linf = float(np.abs(fwd - rev).max())
        for row, (img, label) in enumerate(((fwd, "forward"), (rev, "reverse"))):
            ax = axes[row][col]
            ax.imshow(img[:, :, 0], cmap="gray", vmin=0, vmax=1,
                      aspect="auto", interpolation="nearest")
            ax.set_ylabel(label) if col == 0 else None
            ax.set_xticks([]), ax.set_yticks([])
        axes[0][col].set_title(f"{code.id_string}  (Linf = {linf:.4f})")
    fig.savefig(args.out, dpi=150)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
