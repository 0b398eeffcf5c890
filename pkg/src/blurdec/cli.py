"""Command-line entry point.

Exit codes: 0 success, 1 usage error (bad flags, bad values, wrong mode),
2 runtime failure. All file outputs go under the explicit --out location;
BLURDEC_OUT_DIR provides the default when --out is omitted. Every
stochastic subcommand takes --seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .codes import ExposureCode, is_symmetric, search_codes
from .data import index_dataset, load_manifest, read_frame, save_manifest, write_frame
from .engine import (
    TrainConfig,
    evaluate,
    load_checkpoint,
    load_train_config,
    model_from_checkpoint,
    save_train_config,
    sweep,
    train,
)
from .forward import (
    CodedSnapshot,
    FrameStack,
    add_noise,
    synthesize_coded_blur,
    toy_translation_scene,
)
from .network import SelectiveModeError

OUT_ENV_VAR = "BLURDEC_OUT_DIR"


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _out_dir(args, required: bool = True) -> Path | None:
    out = args.out or os.environ.get(OUT_ENV_VAR)
    if out is None:
        if required:
            raise UsageError(f"--out is required (or set {OUT_ENV_VAR})")
        return None
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _add_out(p, required_note=""):
    p.add_argument("--out", default=None,
                   help=f"output directory{required_note}; "
                        f"default ${OUT_ENV_VAR}")


def _parse_code(text: str) -> ExposureCode:
    try:
        return ExposureCode.parse(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_code_search(args) -> int:
    try:
        results = search_codes(args.length, args.ones, top_k=args.top,
                               require_asymmetric=not args.allow_symmetric,
                               seed=args.seed, sample_size=args.sample_size)
    except ValueError as exc:  # includes EmptySearchError
        raise UsageError(str(exc)) from exc
    print(f"# rank\tcode\tmin_nondc\tvariance")
    rows = []
    for rank, (code, score) in enumerate(results):
        print(f"{rank}\t{code.id_string}\t{score.min_nondc:.9f}\t{score.variance:.9f}")
        rows.append({"rank": rank, "code": code.id_string,
                     "min_nondc": score.min_nondc, "variance": score.variance,
                     "symmetric": is_symmetric(code)})
    out = _out_dir(args, required=False)
    if out is not None:
        with open(out / "codes.jsonl", "w") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
    return 0


def _load_clip_window(frames_dir: Path, start: int, length: int) -> FrameStack:
    paths = sorted(Path(frames_dir).glob("*.png"))
    if len(paths) < start + length:
        raise UsageError(
            f"{frames_dir} holds {len(paths)} frames, need {start + length}"
        )
    frames = np.stack([read_frame(p) for p in paths[start : start + length]])
    return FrameStack(frames=frames)


def cmd_simulate(args) -> int:
    code = _parse_code(args.code)
    out = _out_dir(args)
    stack = _load_clip_window(args.frames, args.start, len(code))
    snapshot = synthesize_coded_blur(stack, code, divide_by=args.divide_by)
    if args.sigma > 0:
        snapshot = add_noise(snapshot, args.sigma, seed=args.seed)
    write_frame(out / "snapshot.png", snapshot.image)
    meta = {"code": code.id_string, "frames": str(args.frames),
            "start": args.start, "sigma": args.sigma, "seed": args.seed,
            "divide_by": args.divide_by}
    (out / "snapshot.json").write_text(json.dumps(meta) + "\n")
    print(f"wrote {out / 'snapshot.png'}")
    return 0


def cmd_ambiguity_demo(args) -> int:
    code = _parse_code(args.code)
    n = len(code)
    fwd = toy_translation_scene(width=args.width, object_extent=args.extent,
                                shift_per_bit=args.shift, direction=1, n_frames=n)
    rev = toy_translation_scene(width=args.width, object_extent=args.extent,
                                shift_per_bit=args.shift, direction=-1, n_frames=n)
    snap_f = synthesize_coded_blur(fwd, code)
    snap_r = synthesize_coded_blur(rev, code)
    linf = float(np.abs(snap_f.image - snap_r.image).max())
    identical = linf == 0.0
    if identical:
        print(f"code {code.id_string}: symmetric code: directions indistinguishable "
              f"(Linf = 0)")
    else:
        print(f"code {code.id_string}: asymmetric code: directions distinguishable "
              f"(Linf = {linf:.6f})")
    out = _out_dir(args, required=False)
    if out is not None:
        write_frame(out / "forward.png", snap_f.image)
        write_frame(out / "reverse.png", snap_r.image)
        (out / "ambiguity.json").write_text(json.dumps({
            "code": code.id_string, "symmetric": is_symmetric(code),
            "linf": linf, "identical": identical}) + "\n")
    return 0


def cmd_ingest(args) -> int:
    out = _out_dir(args)
    manifest = index_dataset(args.root, split=args.split,
                             min_frames=args.min_frames)
    path = out / "manifest.jsonl"
    save_manifest(manifest, path)
    total = sum(v.frame_count for v in manifest.videos)
    print(f"indexed {len(manifest.videos)} videos / {total} frames -> {path}")
    return 0


def cmd_train(args) -> int:
    out = _out_dir(args)
    cfg = load_train_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    manifest = load_manifest(args.manifest)
    val_manifest = load_manifest(args.val_manifest) if args.val_manifest else None
    save_train_config(cfg, out / "config.yaml")
    ckpt = train(cfg, manifest, out, val_manifest=val_manifest,
                 resume_from=args.resume, stop_after=args.stop_after,
                 quiet=args.quiet)
    best = ckpt["best"] or {}
    print(f"finished epoch {ckpt['epoch']} step {ckpt['global_step']}"
          + (f" best val_psnr {best.get('psnr'):.2f}" if best else ""))
    return 0


def _parse_indices(text: str, n: int) -> list[int]:
    if text == "mid":
        return [n // 2]
    try:
        return [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"bad --indices {text!r}: {exc}") from exc


def _decompose_common(args, indices_text: str | None) -> int:
    out = _out_dir(args)
    model = model_from_checkpoint(load_checkpoint(args.ckpt))
    image = read_frame(args.snapshot)
    snapshot = CodedSnapshot(image=image, code=model.code)
    indices = None
    if indices_text is not None:
        indices = _parse_indices(indices_text, model.n_frames)
    stack = model.decompose(snapshot, indices=indices)
    kept = indices if indices is not None else list(range(model.n_frames))
    kept = sorted(set(kept))
    for pos, idx in enumerate(kept):
        write_frame(out / f"frame_{idx:02d}.png", stack.frames[pos])
    (out / "decompose.json").write_text(json.dumps({
        "ckpt": str(args.ckpt), "snapshot": str(args.snapshot),
        "code": model.code.id_string, "indices": kept}) + "\n")
    print(f"wrote {len(kept)} frame(s) under {out}")
    return 0


def cmd_decompose(args) -> int:
    return _decompose_common(args, args.indices)


def cmd_deblur(args) -> int:
    # sugar for decompose --indices mid
    return _decompose_common(args, "mid")


def cmd_eval(args) -> int:
    out = _out_dir(args)
    model = model_from_checkpoint(load_checkpoint(args.ckpt))
    manifest = load_manifest(args.manifest)
    report = evaluate(model, manifest, sigma=args.sigma, seed=args.seed,
                      out_path=out / "report.jsonl")
    o = report["overall"]
    print(f"overall psnr {o['psnr']:.3f} dB ssim {o['ssim']:.4f} "
          f"over {o['n_windows']} windows")
    return 0


def _parse_duty(tok: str) -> float:
    if "/" in tok:
        num, den = tok.split("/", 1)
        return int(num) / int(den)
    return float(tok)


def cmd_sweep(args) -> int:
    out = _out_dir(args)
    cfg = load_train_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    manifest = load_manifest(args.manifest)
    val_manifest = load_manifest(args.val_manifest) if args.val_manifest else None
    try:
        lengths = [int(t) for t in args.lengths.split(",") if t.strip()]
        duties = [_parse_duty(t) for t in args.duties.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"bad sweep axis: {exc}") from exc
    table = sweep(lengths, duties, cfg, manifest, out,
                  val_manifest=val_manifest, quiet=args.quiet)
    print("# axis\tlength\tones\tcode\tpsnr\tssim\tlpips")
    for row in table:
        if row.get("error"):
            print(f"{row['axis']}\t{row['length']}\t{row['ones']}\t-\t-\t-\t-"
                  f"\t# {row['error']}")
        else:
            print(f"{row['axis']}\t{row['length']}\t{row['ones']}\t{row['code']}"
                  f"\t{row['psnr']:.3f}\t{row['ssim']:.4f}\t{row['lpips']}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="blurdec",
                     description="Coded-exposure blur decomposition toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("code-search", parents=[], help="rank shutter codes by DFT spectrum")
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--ones", type=int, required=True)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--allow-symmetric", action="store_true")
    p.add_argument("--sample-size", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    _add_out(p, " (optional)")
    p.set_defaults(func=cmd_code_search)

    p = sub.add_parser("simulate", help="synthesize a coded snapshot from frames")
    p.add_argument("--frames", required=True, help="directory of PNG frames")
    p.add_argument("--code", required=True)
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--divide-by", choices=("ones", "length"), default="ones")
    p.add_argument("--seed", type=int, default=0)
    _add_out(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ambiguity-demo",
                       help="show when opposite motions give identical snapshots")
    p.add_argument("--code", required=True)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--extent", type=int, default=8)
    p.add_argument("--shift", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    _add_out(p, " (optional)")
    p.set_defaults(func=cmd_ambiguity_demo)

    p = sub.add_parser("ingest", help="index a frame-folder dataset into a manifest")
    p.add_argument("--root", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--min-frames", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    _add_out(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a decomposition network")
    p.add_argument("--config", default=None, help="YAML mirroring TrainConfig")
    p.add_argument("--manifest", required=True)
    p.add_argument("--val-manifest", default=None)
    p.add_argument("--resume", default=None)
    p.add_argument("--stop-after", type=int, default=None,
                   help="stop at this epoch boundary (resume later)")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--seed", type=int, default=None, help="overrides config seed")
    _add_out(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decompose", help="extract frames from a snapshot")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--snapshot", required=True)
    p.add_argument("--indices", default=None,
                   help='comma-separated frame indices or "mid"; default all')
    p.add_argument("--seed", type=int, default=0)
    _add_out(p)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("deblur",
                       help="recover the mid-exposure sharp frame (decompose --indices mid)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--snapshot", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_out(p)
    p.set_defaults(func=cmd_deblur)

    p = sub.add_parser("eval", help="PSNR/SSIM over non-overlapping windows")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    _add_out(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="code length / duty ratio grid")
    p.add_argument("--config", default=None)
    p.add_argument("--manifest", required=True)
    p.add_argument("--val-manifest", default=None)
    p.add_argument("--lengths", default="4,8,12")
    p.add_argument("--duties", default="5/8,8/8")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    _add_out(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, IndexError, SelectiveModeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        return 0
    except Exception as exc:  # runtime failures: diagnose, never traceback
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
