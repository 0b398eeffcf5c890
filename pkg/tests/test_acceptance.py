"""End-to-end acceptance gates.

Each test prints one CRITERION n PASS/FAIL line (straight to the real
stdout so the lines survive pytest capture). The training criteria run
small models from scratch on CPU: everything is seeded and single-threaded,
so results are bit-reproducible. Full module takes roughly 10-15 minutes.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
import torch

from blurdec.codes import (
    ExposureCode,
    dft_magnitude_spectrum,
    is_symmetric,
    search_codes,
)
from blurdec.data import load_window, read_frame, window_starts, write_frame
from blurdec.engine import (
    TrainConfig,
    evaluate,
    load_checkpoint,
    model_from_checkpoint,
    sweep,
    train,
)
from blurdec.forward import CodedSnapshot, coded_average, synthesize_coded_blur, toy_translation_scene
from blurdec.losses import (
    LossWeights,
    charbonnier_loss,
    combine_terms,
    edge_loss,
    loss_terms,
    psnr,
    reblur_loss,
    ssim_loss,
)
from blurdec.network import BlurDecomposer, NetworkConfig
from blurdec.synth import make_dataset

# small-net profile used by every training criterion (CPU budget)
GATE_NET = dict(spatial_channels=16, mid_channels=32, bottleneck_channels=64,
                temporal_width=64, temporal_hidden=128, bottleneck_blocks=3)
LOSS_FLOOR = 8 * 1e-3 / (256 * 256 * 3)  # N * eps / P


# pytest captures at the fd level by default, so even sys.__stdout__ is
# swallowed; route the verdict lines around the capture manager instead.
_CAPMAN = None


@pytest.fixture(autouse=True)
def _hold_capman(request):
    global _CAPMAN
    _CAPMAN = request.config.pluginmanager.getplugin("capturemanager")
    yield


def _emit(line: str):
    if _CAPMAN is not None:
        with _CAPMAN.global_and_fixture_disabled():
            print(line, flush=True)
    else:
        print(line, flush=True)


@contextmanager
def criterion(n: int, desc: str):
    try:
        yield
    except BaseException:
        _emit(f"\nCRITERION {n} ({desc}): FAIL")
        raise
    _emit(f"\nCRITERION {n} ({desc}): PASS")


def gate_config(**kw):
    base = dict(code="11100101", crop=None, batch_size=2, epochs=200,
                lr_init=3e-3, lr_final=1e-6, warmup_epochs=2, seed=42,
                augment=False, sigma_range=(0.0, 0.0), val_every=50,
                checkpoint_every=10 ** 9, network=dict(GATE_NET))
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def gate_manifest(tmp_path_factory):
    # one short clip plus its time-reversed twin; full 48x48 frames
    return make_dataset(tmp_path_factory.mktemp("gate_data"), n_clips=1,
                        n_frames=32, height=48, width=48, seed=101,
                        with_reversals=True, n_sprites=4, speed=1.25)


@pytest.fixture(scope="module")
def gate_run(tmp_path_factory, gate_manifest):
    cfg = gate_config()
    out = tmp_path_factory.mktemp("gate_coded")
    ckpt = train(cfg, gate_manifest, out, quiet=True)
    report = evaluate(model_from_checkpoint(ckpt), gate_manifest)
    return out, ckpt, report


@pytest.fixture(scope="module")
def box_run(tmp_path_factory, gate_manifest):
    cfg = gate_config(use_coded_exposure=False)
    out = tmp_path_factory.mktemp("gate_box")
    ckpt = train(cfg, gate_manifest, out, quiet=True)
    report = evaluate(model_from_checkpoint(ckpt), gate_manifest,
                      code=cfg.effective_code())
    return out, ckpt, report


def oracle_min_nondc(code: ExposureCode) -> float:
    """Brute-force DFT magnitudes, O(N^2), no library transforms."""
    bits = code.bits
    n = len(bits)
    mags = []
    for k in range(1, n):
        re = sum(b * math.cos(-2 * math.pi * k * t / n) for t, b in enumerate(bits))
        im = sum(b * math.sin(-2 * math.pi * k * t / n) for t, b in enumerate(bits))
        mags.append(math.hypot(re, im))
    return min(mags)


def test_criterion_1_code_design():
    with criterion(1, "code-design fidelity"):
        t0 = time.monotonic()
        ranked = search_codes(5, 4, top_k=32, require_asymmetric=False)
        flags = {c.id_string: is_symmetric(c) for c, _ in ranked}
        assert flags["11011"] is True
        assert flags["11101"] is False
        asym_only = {c.id_string for c, _ in search_codes(5, 4, top_k=32)}
        assert "11101" in asym_only and "11011" not in asym_only

        box = ExposureCode.parse("11111111")
        assert dft_magnitude_spectrum(box).min_nondc == 0.0
        assert oracle_min_nondc(box) == pytest.approx(0.0, abs=1e-12)

        code = ExposureCode.parse("11100101")
        got = dft_magnitude_spectrum(code).min_nondc
        assert got == pytest.approx(oracle_min_nondc(code), abs=1e-9)
        assert got == pytest.approx(1.0, abs=1e-9)
        assert time.monotonic() - t0 < 1.0


def test_criterion_2_ambiguity():
    with criterion(2, "direction ambiguity"):
        t0 = time.monotonic()

        def snap(code_str, direction):
            code = ExposureCode.parse(code_str)
            scene = toy_translation_scene(width=64, object_extent=8,
                                          shift_per_bit=2, direction=direction,
                                          n_frames=len(code))
            return synthesize_coded_blur(scene, code).image

        np.testing.assert_array_equal(snap("11011", 1), snap("11011", -1))
        linf = float(np.abs(snap("11101", 1) - snap("11101", -1)).max())
        assert linf > 1 / 255
        assert time.monotonic() - t0 < 1.0


def test_criterion_3_loss_floors():
    with criterion(3, "loss floors"):
        code = ExposureCode.parse("11100101")
        rng = np.random.default_rng(3)
        gt = rng.random((8, 256, 256, 3), dtype=np.float64)
        pred = gt.copy()
        snapshot = coded_average(gt, code.bits)

        char = float(charbonnier_loss(pred, gt))
        edge = float(edge_loss(pred, gt))
        reblur = float(reblur_loss(pred, code, snapshot))
        sloss = float(ssim_loss(pred, gt))
        assert char == pytest.approx(LOSS_FLOOR, abs=1e-12)
        assert edge == pytest.approx(LOSS_FLOOR, abs=1e-12)
        assert reblur == pytest.approx(LOSS_FLOOR, abs=1e-12)
        assert abs(sloss) <= 1e-9


def test_criterion_4_gradient_check():
    with criterion(4, "gradient correctness"):
        t0 = time.monotonic()
        torch.manual_seed(7)
        code = ExposureCode.parse("1101")
        model = BlurDecomposer(NetworkConfig(code="1101")).double()
        gen = torch.Generator().manual_seed(11)
        x = torch.rand(1, 3, 16, 16, generator=gen, dtype=torch.float64)
        gt = torch.rand(1, 4, 3, 16, 16, generator=gen, dtype=torch.float64)
        snap = coded_average(gt, code.bits, frame_axis=1)
        weights = LossWeights()

        def total():
            return combine_terms(loss_terms(model(x), gt, code, snap), weights)

        loss = total()
        loss.backward()
        params = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
        rng = np.random.default_rng(13)
        picks = [(int(i), int(rng.integers(params[int(i)][1].numel())))
                 for i in rng.integers(len(params), size=20)]

        worst = 0.0
        for pi, flat in picks:
            name, p = params[pi]
            analytic = float(p.grad.reshape(-1)[flat])
            with torch.no_grad():
                orig = float(p.reshape(-1)[flat])
                h = 1e-6 * max(1.0, abs(orig))
                p.reshape(-1)[flat] = orig + h
                hi = float(total())
                p.reshape(-1)[flat] = orig - h
                lo = float(total())
                p.reshape(-1)[flat] = orig
            fd = (hi - lo) / (2 * h)
            rel = abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-8)
            worst = max(worst, rel)
        assert worst <= 1e-3, f"worst relative gradient error {worst:.2e}"
        assert time.monotonic() - t0 < 120.0


def test_criterion_5_tiny_overfit(gate_run):
    with criterion(5, "tiny-overfit reconstruction"):
        _, _, report = gate_run
        assert report["overall"]["psnr"] >= 30.0, report["overall"]
        assert report["overall"]["ssim"] >= 0.90, report["overall"]


def test_criterion_6_coded_beats_box(gate_run, box_run):
    with criterion(6, "coded vs conventional"):
        coded_psnr = gate_run[2]["overall"]["psnr"]
        box_psnr = box_run[2]["overall"]["psnr"]
        assert coded_psnr - box_psnr >= 1.0, (coded_psnr, box_psnr)


def test_criterion_7_sweep_direction(tmp_path_factory):
    with criterion(7, "duty/length sweep direction"):
        manifest = make_dataset(tmp_path_factory.mktemp("sweep_data"),
                                n_clips=1, n_frames=48, height=32, width=32,
                                seed=101, with_reversals=True, n_sprites=6,
                                speed=1.5)
        # clip keeps the short-code cells stable at this lr on the 32x32 data
        base = gate_config(epochs=100, val_every=0, grad_clip=1.0)
        table = sweep([4, 12], [5 / 8, 1.0], base, manifest,
                      tmp_path_factory.mktemp("sweep_out"), quiet=True)
        cells = {(r["axis"], r["length"], r["ones"]): r for r in table}
        assert all(r["error"] is None for r in table), table
        assert cells[("length", 4, 3)]["psnr"] > cells[("length", 12, 8)]["psnr"]
        assert cells[("duty", 8, 5)]["psnr"] > cells[("duty", 8, 8)]["psnr"]


@pytest.fixture(scope="module")
def selective_ckpt(tmp_path_factory, gate_manifest):
    cfg = gate_config(use_recursion=False, epochs=60, val_every=0)
    out = tmp_path_factory.mktemp("gate_sel")
    train(cfg, gate_manifest, out, quiet=True)
    return out / "ckpt_final.pt"


def test_criterion_8_selective_extraction(selective_ckpt, gate_manifest,
                                          tmp_path):
    with criterion(8, "selective extraction"):
        model = model_from_checkpoint(load_checkpoint(selective_ckpt))
        mid = model.n_frames // 2
        code = model.code

        full_scores, sel_scores = [], []
        snaps = []
        for video, start in window_starts(gate_manifest, len(code)):
            gt = load_window(gate_manifest, video, start, len(code))
            snap = synthesize_coded_blur(gt, code)
            snaps.append(snap)
            full = model.decompose(snap)
            sel = model.decompose(snap, indices=[mid])
            full_scores.append(psnr(full.frames[mid], gt.frames[mid]))
            sel_scores.append(psnr(sel.frames[0], gt.frames[mid]))
        gap = abs(float(np.mean(sel_scores)) - float(np.mean(full_scores)))
        assert gap <= 1.5, f"selective vs full mid-frame gap {gap:.3f} dB"

        # the CLI deblur path produces the same mid frame
        from blurdec.cli import main
        write_frame(tmp_path / "snap.png", snaps[0].image)
        assert main(["deblur", "--ckpt", str(selective_ckpt),
                     "--snapshot", str(tmp_path / "snap.png"),
                     "--out", str(tmp_path)]) == 0
        cli_mid = read_frame(tmp_path / f"frame_{mid:02d}.png")
        lib = model.decompose(
            CodedSnapshot(image=read_frame(tmp_path / "snap.png"), code=code),
            indices=[mid])
        np.testing.assert_array_equal(cli_mid, write_read(tmp_path, lib.frames[0]))

        def timed(fn, reps=5):
            times = []
            for _ in range(reps):
                t0 = time.perf_counter()
                fn()
                times.append(time.perf_counter() - t0)
            return float(np.median(times))

        snap = snaps[0]
        t_full = timed(lambda: model.decompose(snap))
        t_sel = timed(lambda: model.decompose(snap, indices=[mid]))
        assert t_sel < t_full / 4, f"selective {t_sel:.4f}s vs full {t_full:.4f}s"


def write_read(tmp_path, frame):
    path = tmp_path / "_roundtrip.png"
    write_frame(path, frame)
    return read_frame(path)


def test_criterion_9_determinism_roundtrip(tmp_path_factory):
    with criterion(9, "determinism and round-trip"):
        manifest = make_dataset(tmp_path_factory.mktemp("resume_data"),
                                n_clips=1, n_frames=32, height=24, width=24,
                                seed=101, with_reversals=True, n_sprites=4,
                                speed=1.25)
        cfg = gate_config(epochs=9, batch_size=4, val_every=0)
        base = tmp_path_factory.mktemp("resume_runs")

        full = train(cfg, manifest, base / "full", quiet=True)
        train(cfg, manifest, base / "part", quiet=True, stop_after=4)
        resumed = train(cfg, manifest, base / "resumed", quiet=True,
                        resume_from=base / "part" / "ckpt_final.pt")

        # 2 steps/epoch, stopped after epoch 4 -> exactly 10 replayed steps
        tail = full["history"]["step_loss"][8:]
        assert len(tail) == 10
        assert resumed["history"]["step_loss"][8:] == tail
        for k, v in full["model_state"].items():
            assert torch.equal(v, resumed["model_state"][k]), k

        # save/load/evaluate is bit-exact
        mem_report = evaluate(model_from_checkpoint(full), manifest, seed=0)
        loaded_a = evaluate(model_from_checkpoint(
            load_checkpoint(base / "full" / "ckpt_final.pt")), manifest, seed=0)
        loaded_b = evaluate(model_from_checkpoint(
            load_checkpoint(base / "full" / "ckpt_final.pt")), manifest, seed=0)
        assert loaded_a == mem_report
        assert loaded_a == loaded_b
