import math

import numpy as np
import pytest

from mrrawnet.engine.autograd import Parameter, Tensor
from mrrawnet.errors import ConfigError
from mrrawnet.frontend import (
    MRFE,
    FeatureExtractor,
    MRFEConfig,
    ParamFbank,
    TCN,
    bandpass_kernels,
    derive_geometry,
    tcn_receptive_field,
)

from oracles import hamming


class TestGeometry:
    def test_four_extractors(self):
        geo = derive_geometry(50, 16, 4)
        assert [(g.kernel, g.last_kernel) for g in geo] == [(50, 16), (100, 8), (200, 4), (400, 2)]
        assert {g.frame_stride for g in geo} == {160}

    def test_single_extractor(self):
        geo = derive_geometry(50, 16, 1)
        assert [(g.kernel, g.last_kernel, g.frame_stride) for g in geo] == [(50, 16, 160)]

    def test_too_many_extractors(self):
        with pytest.raises(ConfigError):
            derive_geometry(50, 16, 5)

    def test_invariants(self):
        geo = derive_geometry(50, 16, 4)
        for a, b in zip(geo, geo[1:]):
            assert b.kernel == 2 * a.kernel and 2 * b.last_kernel == a.last_kernel
        for g in geo:
            assert g.kernel * g.last_kernel == 5 * 160
            assert g.fbank_stride * g.last_stride == 160
        # strides from the window/hop construction: 2K/5 and M/2
        assert [(g.fbank_stride, g.last_stride) for g in geo] == [(20, 8), (40, 4), (80, 2), (160, 1)]

    def test_non_integer_stride(self):
        with pytest.raises(ConfigError):
            derive_geometry(51, 16, 1)


class TestParamFbank:
    def test_zero_band_is_silent(self):
        low = Tensor(np.array([0.1, 0.2]))
        k = bandpass_kernels(low, low, Tensor(np.ones(2)), 31)
        np.testing.assert_array_equal(k.data, 0)

    def test_centre_tap(self):
        lo, hi, size = 0.05, 0.2, 51
        k = bandpass_kernels(Tensor(np.array([lo])), Tensor(np.array([hi])), Tensor(np.ones(1)), size)
        centre = (size - 1) // 2
        assert k.data[0, centre] == pytest.approx(2 * (hi - lo) * hamming(size)[centre], abs=1e-15)

    def test_tone_selects_its_band(self):
        fb = ParamFbank(16, 401, 1, log_compression=False)
        low, high = (c.data * 16000 for c in fb.cutoffs())
        target = 9
        freq = 0.5 * (low[target] + high[target])
        n = np.arange(8000)
        tone = np.sin(2 * np.pi * freq * n / 16000)[None, None, :]
        energy = (fb(Tensor(tone)).data[0, :, 500:-500] ** 2).mean(axis=1)
        assert energy.argmax() == target
        others = np.delete(energy, [target - 1, target, target + 1])
        assert energy[target] > 10 * others.max()

    def test_cutoffs_are_clamped(self):
        fb = ParamFbank(8, 51, 1)
        fb.low.data[:] = -0.9
        fb.band.data[:] = 5.0
        low, high = fb.cutoffs()
        assert np.all(low.data >= 50 / 16000) and np.all(high.data <= 0.5)

    def test_mel_initialisation_is_increasing(self):
        low, high = ParamFbank(32, 51, 1).cutoffs()
        assert np.all(np.diff(low.data) > 0) and np.all(high.data > low.data)
        assert high.data[-1] * 16000 <= 8000

    def test_output_shape_and_compression(self):
        fb = ParamFbank(12, 50, 20)
        x = Tensor(np.random.default_rng(0).normal(size=(2, 1, 1600)))
        y = fb(x)
        assert y.shape == (2, 12, 80)
        assert np.all(y.data >= 0)


class TestTCN:
    def test_zero_weights_is_identity(self):
        tcn = TCN(4, 6, 3, 2, rng=np.random.default_rng(0))
        for block in tcn.blocks:
            block.pw_out.weight.data[:] = 0
            block.pw_out.bias.data[:] = 0
        x = np.random.default_rng(1).normal(size=(2, 4, 17))
        np.testing.assert_array_equal(tcn(Tensor(x)).data, x)

    def test_receptive_field(self):
        assert tcn_receptive_field(5, 1) == 1 + 2 * 31
        assert tcn_receptive_field(5, 2) == 125
        assert len(TCN(4, 6, 5, 2, rng=np.random.default_rng(0)).blocks) == 10

    def test_receptive_field_from_dilations(self):
        # gLN mixes statistics over the whole sequence, so the span is read off
        # the convolutions: every k=3 depthwise conv adds 2 * dilation frames
        tcn = TCN(2, 3, 5, 2, rng=np.random.default_rng(2))
        span = 1 + sum((b.depthwise.weight.shape[2] - 1) * b.depthwise.dilation for b in tcn.blocks)
        assert [b.depthwise.dilation for b in tcn.blocks] == [1, 2, 4, 8, 16] * 2
        assert span == tcn_receptive_field(5, 2) == 125


class TestExtractors:
    def test_first_and_last_extractor_shapes(self):
        cfg = MRFEConfig()
        geo = cfg.geometry
        x = Tensor(np.random.default_rng(0).normal(size=(1, 1, 48000)))
        fe1 = FeatureExtractor(geo[0], cfg, rng=np.random.default_rng(0))
        y1, skip1 = fe1(x)
        assert y1.shape == (1, 64, 300) and skip1.shape == (1, 64, 1200)
        fe4 = FeatureExtractor(geo[3], cfg, rng=np.random.default_rng(0))
        assert geo[3].fbank_stride == 160 and geo[3].last_stride == 1
        assert fe4(x)[0].shape == (1, 64, 300)

    def test_skip_matches_next_extractor(self):
        cfg = MRFEConfig(n_extractors=3, fbank_filters=8, tcn_channels=4, tcn_hidden=6,
                         blocks_per_repeat=2, repeats=1)
        geo = cfg.geometry
        t_len = 16000
        for a, b in zip(geo, geo[1:]):
            assert (t_len // a.fbank_stride) // 2 == t_len // b.fbank_stride

    def test_zero_waveform_without_bias(self):
        cfg = MRFEConfig(n_extractors=2, fbank_filters=8, tcn_channels=4, tcn_hidden=6,
                         blocks_per_repeat=2, repeats=1, bias=False)
        mrfe = MRFE(cfg, rng=np.random.default_rng(0))
        y = mrfe(Tensor(np.zeros((1, 1, 3200))))
        np.testing.assert_array_equal(y.data, 0)

    def test_default_mrfe_shape(self):
        mrfe = MRFE(MRFEConfig(), rng=np.random.default_rng(0))
        y = mrfe(Tensor(np.random.default_rng(1).normal(size=(1, 1, 48000)) * 0.1))
        assert y.shape == (1, 256, 300)

    def test_single_extractor_is_its_output(self):
        cfg = MRFEConfig(n_extractors=1, fbank_filters=8, tcn_channels=4, tcn_hidden=6,
                         blocks_per_repeat=2, repeats=1)
        mrfe = MRFE(cfg, rng=np.random.default_rng(0))
        x = Tensor(np.random.default_rng(1).normal(size=(1, 1, 1600)))
        np.testing.assert_array_equal(mrfe(x).data, mrfe.extractors[0](x)[0].data)

    @pytest.mark.parametrize("seconds", [1, 2.5, 7, 10])
    def test_frames_per_duration(self, seconds):
        cfg = MRFEConfig(n_extractors=4, fbank_filters=4, tcn_channels=2, tcn_hidden=2,
                         blocks_per_repeat=1, repeats=1)
        mrfe = MRFE(cfg, rng=np.random.default_rng(0))
        t_len = int(seconds * 16000)
        assert mrfe(Tensor(np.zeros((1, 1, t_len)))).shape[2] == t_len // 160

    def test_rejects_length_off_the_frame_grid(self):
        cfg = MRFEConfig(n_extractors=2, fbank_filters=4, tcn_channels=2, tcn_hidden=2,
                         blocks_per_repeat=1, repeats=1)
        with pytest.raises(ValueError):
            MRFE(cfg, rng=np.random.default_rng(0))(Tensor(np.zeros((1, 1, 1601))))

    def test_repeatable(self):
        cfg = MRFEConfig(n_extractors=2, fbank_filters=8, tcn_channels=4, tcn_hidden=6,
                         blocks_per_repeat=2, repeats=1)
        mrfe = MRFE(cfg, rng=np.random.default_rng(0))
        x = Tensor(np.random.default_rng(1).normal(size=(2, 1, 3200)))
        assert np.array_equal(mrfe(x).data, mrfe(x).data)
