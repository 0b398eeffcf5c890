"""Network components: position encoding, embedding branches, decoder, modes."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from blurdec.codes import ExposureCode
from blurdec.forward import synthesize_coded_blur, toy_translation_scene
from blurdec.network import (
    BlurDecomposer,
    FeatureFusion,
    NetworkConfig,
    SelectiveModeError,
    SpatialEncoder,
    TemporalMLP,
    count_parameters,
    position_encode,
    position_encoding_table,
)

SMALL = dict(spatial_channels=8, temporal_width=16, temporal_hidden=24,
             mid_channels=12, bottleneck_channels=16, enc_blocks=1,
             bottleneck_blocks=1, dec_blocks=1, pe_levels=8)


def small_cfg(**kw):
    merged = {**SMALL, **kw}
    return NetworkConfig(**merged)


class TestPositionEncode:
    def test_open_shutter_zero_phase(self):
        pe = position_encode(0.0, 1, l=5)
        np.testing.assert_allclose(pe, [0, 1] * 5, atol=1e-12)

    def test_closed_shutter_pi_phase(self):
        pe = position_encode(0.0, 0, l=5)
        np.testing.assert_allclose(pe, [0, -1] * 5, atol=1e-12)

    def test_second_pair_at_t_one(self):
        pe = position_encode(1.0, 1, b=1.25, l=2)
        # pair k=1: (sin 1.25*pi, cos 1.25*pi)
        assert pe[2] == pytest.approx(math.sin(1.25 * math.pi), abs=1e-12)
        assert pe[3] == pytest.approx(math.cos(1.25 * math.pi), abs=1e-12)
        assert pe[2] == pytest.approx(-0.70711, abs=5e-6)
        assert pe[3] == pytest.approx(-0.70711, abs=5e-6)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.0, 1.0), st.integers(0, 1), st.floats(1.0, 2.0),
           st.integers(1, 80))
    def test_length_and_range(self, t, c, b, l):
        pe = position_encode(t, c, b=b, l=l)
        assert pe.shape == (2 * l,)
        assert np.all(pe >= -1.0) and np.all(pe <= 1.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            position_encode(1.5, 1)
        with pytest.raises(ValueError):
            position_encode(0.5, 2)

    def test_table_shape_and_rows(self):
        code = ExposureCode.parse("1101")
        table = position_encoding_table(code, b=1.25, l=6)
        assert table.shape == (4, 12)
        np.testing.assert_allclose(
            table[0].numpy(), position_encode(0.0, 1, b=1.25, l=6), atol=1e-6
        )
        np.testing.assert_allclose(
            table[2].numpy(), position_encode(2 / 3, 0, b=1.25, l=6), atol=1e-6
        )


class TestTemporalMLP:
    def test_output_width(self):
        mlp = TemporalMLP(16, 24, 10)
        out = mlp(torch.rand(16))
        assert out.shape == (10,)

    def test_width_mismatch(self):
        mlp = TemporalMLP(16, 24, 10)
        with pytest.raises(ValueError):
            mlp(torch.rand(12))

    def test_zero_weights_give_bias(self):
        mlp = TemporalMLP(8, 8, 4)
        with torch.no_grad():
            mlp.fc1.weight.zero_()
            mlp.fc1.bias.zero_()
            mlp.fc2.weight.zero_()
            mlp.fc2.bias.copy_(torch.tensor([1.0, -2.0, 3.0, 0.5]))
        out = mlp(torch.rand(8))
        assert torch.allclose(out, torch.tensor([1.0, -2.0, 3.0, 0.5]))

    def test_distinct_inputs_distinct_embeddings(self):
        torch.manual_seed(0)
        mlp = TemporalMLP(20, 32, 12).double()
        pes = [position_encode(t, c, l=10)
               for t in np.linspace(0, 1, 50) for c in (0, 1)]
        with torch.no_grad():
            outs = torch.stack([mlp(torch.from_numpy(p)) for p in pes])
        dists = torch.cdist(outs, outs)
        n = len(pes)
        off_diag = dists + torch.eye(n, dtype=dists.dtype) * 1e9
        assert float(off_diag.min()) > 0


class TestSpatialEncoder:
    def test_shape_contract(self):
        enc = SpatialEncoder(3, 8)
        out = enc(torch.rand(2, 3, 16, 20))
        assert out.shape == (2, 8, 16, 20)

    def test_indivisible_dims_rejected_with_hint(self):
        enc = SpatialEncoder(3, 8)
        with pytest.raises(ValueError, match="pad to 20x16"):
            enc(torch.rand(1, 3, 18, 16))

    def test_zeroed_residual_blocks_are_identity(self):
        enc = SpatialEncoder(3, 8)
        with torch.no_grad():
            for block in enc.blocks:
                block.conv2.weight.zero_()
                block.conv2.bias.zero_()
        x = torch.rand(1, 3, 16, 16)
        assert torch.allclose(enc(x), enc.head(x))

    def test_translation_covariance(self):
        torch.manual_seed(1)
        enc = SpatialEncoder(3, 8).double()
        wide = torch.rand(1, 3, 32, 52, dtype=torch.float64)
        a = enc(wide[:, :, :, 0:48])
        b = enc(wide[:, :, :, 4:52])
        m = 8  # margin swallowing boundary effects
        interior_a = a[:, :, m:-m, 4 + m : 48 - m]
        interior_b = b[:, :, m:-m, m : 44 - m]
        assert torch.allclose(interior_a, interior_b, atol=1e-5)


class TestDecoder:
    def model(self, **kw):
        torch.manual_seed(3)
        return BlurDecomposer(small_cfg(**kw))

    def test_full_forward_shape(self):
        m = self.model()
        out = m(torch.rand(2, 3, 16, 16))
        assert out.shape == (2, 8, 3, 16, 16)

    def test_zeroed_modulation_makes_frames_te_independent(self):
        m = self.model(use_recursion=False)
        with torch.no_grad():
            m.decoder.modulation.weight.zero_()
            m.decoder.modulation.bias.zero_()
        out = m(torch.rand(1, 3, 16, 16))
        for i in range(1, 8):
            assert torch.equal(out[:, 0], out[:, i])

    def test_te_sensitivity_at_init(self):
        m = self.model(use_recursion=False)
        torch.manual_seed(4)
        with torch.no_grad():
            emb = m.encoder(torch.rand(1, 3, 16, 16))
            for _ in range(10):
                temb_a = torch.randn(1, m.cfg.temporal_width)
                temb_b = torch.randn(1, m.cfg.temporal_width)
                frame_a, _ = m.decoder(emb, temb_a)
                frame_b, _ = m.decoder(emb, temb_b)
                assert float((frame_a - frame_b).norm()) > 0

    def test_feature_shape_matches_embedding(self):
        m = self.model()
        emb = m.encoder(torch.rand(1, 3, 16, 16))
        frame, feature = m.decoder(emb, torch.randn(1, m.cfg.temporal_width))
        assert frame.shape == (1, 3, 16, 16)
        assert feature.shape == emb.shape

    def test_temporal_index_discrimination(self):
        m = self.model(use_recursion=False)
        x = torch.rand(1, 3, 16, 16)
        with torch.no_grad():
            fa = m(x, indices=[1])
            fb = m(x, indices=[6])
        assert float((fa - fb).abs().mean()) > 0


class TestFusion:
    def test_shape(self):
        f = FeatureFusion(8)
        out = f(torch.rand(1, 8, 16, 16), torch.rand(1, 8, 16, 16))
        assert out.shape == (1, 8, 16, 16)

    def test_mismatch(self):
        f = FeatureFusion(8)
        with pytest.raises(ValueError):
            f(torch.rand(1, 8, 16, 16), torch.rand(1, 8, 8, 8))

    def test_passthrough_identity_initialization(self):
        f = FeatureFusion(4)
        with torch.no_grad():
            f.conv.weight.zero_()
            f.conv.bias.zero_()
            for i in range(4):  # identity tap on the first C_s channels
                f.conv.weight[i, i, 1, 1] = 1.0
        emb = torch.rand(1, 4, 12, 12)
        out = f(emb, torch.zeros_like(emb))
        assert torch.allclose(out, emb)

    def test_recursion_feeds_later_frames_only(self):
        torch.manual_seed(5)
        m = BlurDecomposer(small_cfg(use_recursion=True))
        x = torch.rand(1, 3, 16, 16)
        base = m(x)
        with torch.no_grad():
            m.fusion.conv.weight.zero_()
            m.fusion.conv.bias.zero_()
        cut = m(x)
        assert torch.equal(base[:, 0], cut[:, 0])
        assert not torch.equal(base[:, 1], cut[:, 1])


class TestParameterCount:
    def test_independent_of_code_length(self):
        a = BlurDecomposer(small_cfg(code="1101"))
        b = BlurDecomposer(small_cfg(code="11100101"))
        assert count_parameters(a) == count_parameters(b)

    def test_without_tem_constant_replaces_mlp(self):
        m = BlurDecomposer(small_cfg(use_time_mlp=False))
        assert m.time_mlp is None
        assert m.time_const.shape == (m.cfg.temporal_width,)
        out = m(torch.rand(1, 3, 16, 16))
        assert out.shape == (1, 8, 3, 16, 16)
        a = BlurDecomposer(small_cfg(code="1101", use_time_mlp=False))
        b = BlurDecomposer(small_cfg(code="11100101", use_time_mlp=False))
        assert count_parameters(a) == count_parameters(b)

    def test_default_widths_near_published_size(self):
        m = BlurDecomposer(NetworkConfig())
        assert abs(count_parameters(m) - 3.7e6) < 0.15e6


class TestDecompose:
    def snapshot(self, n=8, size=16):
        code = ExposureCode.parse("11100101"[:n])
        stack = toy_translation_scene(width=size, object_extent=3, shift_per_bit=1,
                                      direction=1, n_frames=n, height=size)
        frames = np.repeat(stack.frames, 3, axis=3).astype(np.float32)
        from blurdec.forward import FrameStack
        return synthesize_coded_blur(FrameStack(frames=frames), code)

    def test_full_mode(self):
        m = BlurDecomposer(small_cfg())
        snap = self.snapshot()
        out = m.decompose(snap)
        assert out.frames.shape == (8, 16, 16, 3)
        assert out.frames.min() >= 0.0 and out.frames.max() <= 1.0
        np.testing.assert_allclose(out.frame_indices, np.arange(8) / 7)

    def test_deterministic(self):
        m = BlurDecomposer(small_cfg())
        snap = self.snapshot()
        a = m.decompose(snap)
        b = m.decompose(snap)
        np.testing.assert_array_equal(a.frames, b.frames)

    def test_selective_single_frame(self):
        m = BlurDecomposer(small_cfg(use_recursion=False))
        out = m.decompose(self.snapshot(), indices=[3])
        assert out.frames.shape == (1, 16, 16, 3)
        assert out.frame_indices[0] == pytest.approx(3 / 7)

    def test_selective_equals_full_mode_frame(self):
        # recursion-free: a selectively decoded frame is the very same
        # computation as that frame of the full pass
        m = BlurDecomposer(small_cfg(use_recursion=False))
        snap = self.snapshot()
        full = m.decompose(snap)
        mid = m.decompose(snap, indices=[4])
        np.testing.assert_array_equal(mid.frames[0], full.frames[4])

    def test_selective_requires_nonrecursive(self):
        m = BlurDecomposer(small_cfg(use_recursion=True))
        with pytest.raises(SelectiveModeError):
            m.decompose(self.snapshot(), indices=[3])

    def test_index_out_of_range(self):
        m = BlurDecomposer(small_cfg(use_recursion=False))
        with pytest.raises(IndexError, match="index out of range"):
            m.decompose(self.snapshot(), indices=[9])

    def test_empty_indices(self):
        m = BlurDecomposer(small_cfg(use_recursion=False))
        with pytest.raises(ValueError):
            m.decompose(self.snapshot(), indices=[])

    def test_code_mismatch(self):
        m = BlurDecomposer(small_cfg(code="1101"))
        with pytest.raises(ValueError):
            m.decompose(self.snapshot(n=8))

    def test_state_dict_round_trip_bit_exact(self):
        m1 = BlurDecomposer(small_cfg())
        m2 = BlurDecomposer(small_cfg())
        m2.load_state_dict(m1.state_dict())
        snap = self.snapshot()
        np.testing.assert_array_equal(m1.decompose(snap).frames,
                                      m2.decompose(snap).frames)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            NetworkConfig(code="120")
        with pytest.raises(ValueError):
            NetworkConfig(pe_levels=0)
        with pytest.raises(ValueError):
            NetworkConfig(spatial_channels=0)

    def test_round_trip(self):
        cfg = small_cfg(code="1101", use_recursion=False)
        assert NetworkConfig(**cfg.to_dict()) == cfg
