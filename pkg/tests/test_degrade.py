"""Degradation schedule anchors, stage statistics, and pipeline determinism."""

import numpy as np
import pytest

from gpdenoise import degrade
from gpdenoise.degrade import (
    BlurConfig,
    CompressionConfig,
    DegradationConfig,
    FlickerConfig,
    apply_blur,
    apply_chroma_drift,
    apply_compression,
    apply_flicker,
    apply_grain,
    apply_sensor_noise,
    ar1_sequence,
    config_at_severity,
    sample_exposure_gains,
    synthesize_degraded_clip,
)
from gpdenoise.media import VideoClip
from gpdenoise.evaluation import psnr


def make_clip(rng, t=3, h=32, w=32):
    return VideoClip(rng.uniform(0.1, 0.9, size=(t, 3, h, w)))


def all_off_config(seed=0):
    return DegradationConfig(
        exposure_range=(1.0, 1.0),
        shot_range=(0.0, 0.0),
        read_range=(0.0, 0.0),
        grain_range=(0.0, 0.0),
        flicker=FlickerConfig(prob=0.0),
        chroma_std=0.0,
        blur=BlurConfig(prob=0.0),
        compression=CompressionConfig(mode="none"),
        seed=seed,
    )


class TestSeveritySchedule:
    def test_anchor_1_0(self):
        cfg = config_at_severity(1.0)
        assert cfg.shot_range == (1.5e-3, 1.2e-2)
        assert cfg.read_range == (4e-4, 4e-3)
        assert cfg.grain_range == (8e-4, 8e-3)
        assert cfg.flicker.prob == 0.20
        assert cfg.flicker.rho_range == (0.85, 0.97)
        assert cfg.flicker.gain_std == 0.02
        assert cfg.flicker.offset_std == 0.003
        assert cfg.chroma_std == 0.002
        assert cfg.compression.crf == 28
        assert cfg.exposure_range == (0.95, 1.05)

    def test_anchor_2_0(self):
        cfg = config_at_severity(2.0)
        assert cfg.shot_range == (3e-3, 2.4e-2)
        assert cfg.read_range == (8e-4, 8e-3)
        assert cfg.grain_range == (1.6e-3, 1.6e-2)
        assert cfg.flicker.prob == 0.40
        assert cfg.flicker.gain_std == 0.04
        assert cfg.flicker.offset_std == 0.006
        assert cfg.chroma_std == 0.004
        assert cfg.compression.crf == 32
        assert cfg.exposure_range == (0.90, 1.10)

    def test_anchor_3_0(self):
        cfg = config_at_severity(3.0)
        assert cfg.shot_range == (4.5e-3, 3.6e-2)
        assert cfg.flicker.prob == 0.60
        assert cfg.flicker.gain_std == 0.06
        assert cfg.flicker.offset_std == 0.009
        assert cfg.compression.crf == 36
        assert cfg.exposure_range == (0.85, 1.15)

    def test_midpoint_interpolation(self):
        # Hand arithmetic: lo = 1.5e-3 + 0.5 * (3e-3 - 1.5e-3) = 2.25e-3
        cfg = config_at_severity(1.5)
        assert cfg.shot_range[0] == pytest.approx(2.25e-3)
        assert cfg.flicker.prob == pytest.approx(0.30)
        assert cfg.compression.crf == 30

    def test_monotone_scaling(self):
        sigmas = [1.0, 1.5, 2.0, 2.5, 3.0]
        configs = [config_at_severity(s) for s in sigmas]
        for a, b in zip(configs, configs[1:]):
            assert a.shot_range[0] <= b.shot_range[0]
            assert a.shot_range[1] <= b.shot_range[1]
            assert a.read_range[1] <= b.read_range[1]
            assert a.grain_range[1] <= b.grain_range[1]
            assert a.flicker.prob <= b.flicker.prob
            assert a.chroma_std <= b.chroma_std
            assert a.compression.crf <= b.compression.crf
            assert a.exposure_range[0] >= b.exposure_range[0]
            assert a.exposure_range[1] <= b.exposure_range[1]

    def test_out_of_range_severity_rejected(self):
        with pytest.raises(ValueError):
            config_at_severity(0.5)
        with pytest.raises(ValueError):
            config_at_severity(3.1)


class TestExposure:
    def test_degenerate_range(self):
        rng = np.random.default_rng(0)
        gains = sample_exposure_gains(8, (1.0, 1.0), rng)
        np.testing.assert_array_equal(gains, 1.0)

    def test_uniform_mean(self):
        rng = np.random.default_rng(1)
        gains = sample_exposure_gains(10_000, (0.95, 1.05), rng)
        assert abs(gains.mean() - 1.0) < 0.005

    def test_seeded_determinism(self):
        a = sample_exposure_gains(16, (0.9, 1.1), np.random.default_rng(99))
        b = sample_exposure_gains(16, (0.9, 1.1), np.random.default_rng(99))
        np.testing.assert_array_equal(a, b)


class TestSensorNoise:
    def test_zero_noise_is_identity(self):
        rng = np.random.default_rng(0)
        clip = make_clip(rng)
        out = apply_sensor_noise(clip, 0.0, 0.0, rng)
        np.testing.assert_array_equal(out.data, clip.data)

    def test_shot_noise_std(self):
        # constant 0.5 clip, shot 0.01: std = sqrt(0.005) ~ 0.0707
        clip = VideoClip(np.full((1, 1, 1024, 1024), 0.5))
        out = apply_sensor_noise(clip, 0.01, 0.0, np.random.default_rng(2), clamp=False)
        measured = (out.data - 0.5).std()
        expected = np.sqrt(0.005)
        assert abs(measured - expected) / expected < 0.02

    def test_read_noise_floor_on_black(self):
        clip = VideoClip(np.zeros((1, 1, 512, 512)))
        out = apply_sensor_noise(clip, 0.5, 0.002, np.random.default_rng(3), clamp=False)
        assert abs(out.data.std() - 0.002) / 0.002 < 0.02

    def test_negative_scale_rejected(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            apply_sensor_noise(make_clip(rng), -0.1, 0.0, rng)


class TestGrain:
    def test_zero_grain_identity(self):
        rng = np.random.default_rng(0)
        clip = make_clip(rng)
        out = apply_grain(clip, 0.0, rng)
        np.testing.assert_array_equal(out.data, clip.data)

    def test_post_convolution_std(self):
        clip = VideoClip(np.full((1, 1, 512, 512), 0.5))
        target = 0.01
        out = apply_grain(clip, target, np.random.default_rng(5), clamp=False)
        measured = (out.data - 0.5).std()
        assert abs(measured - target) / target < 0.05

    def test_neighbor_correlation_positive(self):
        clip = VideoClip(np.full((1, 1, 256, 256), 0.5))
        out = apply_grain(clip, 0.02, np.random.default_rng(6), clamp=False)
        noise = (out.data - 0.5)[0, 0]
        left, right = noise[:, :-1].ravel(), noise[:, 1:].ravel()
        r = np.corrcoef(left, right)[0, 1]
        assert r > 0.2

    def test_shared_across_channels(self):
        clip = VideoClip(np.full((2, 3, 64, 64), 0.5))
        out = apply_grain(clip, 0.01, np.random.default_rng(7), clamp=False)
        noise = out.data - 0.5
        np.testing.assert_array_equal(noise[:, 0], noise[:, 1])
        np.testing.assert_array_equal(noise[:, 0], noise[:, 2])


class TestFlicker:
    def test_probability_zero_is_identity(self):
        rng = np.random.default_rng(0)
        clip = make_clip(rng)
        out, record = apply_flicker(clip, FlickerConfig(prob=0.0), rng)
        np.testing.assert_array_equal(out.data, clip.data)
        assert not record["triggered"]

    def test_zero_stds_identity_when_triggered(self):
        rng = np.random.default_rng(1)
        clip = make_clip(rng)
        cfg = FlickerConfig(prob=1.0, gain_std=0.0, offset_std=0.0)
        out, record = apply_flicker(clip, cfg, rng)
        assert record["triggered"]
        np.testing.assert_allclose(out.data, clip.data, atol=1e-12)

    def test_ar1_stationary_std(self):
        # innovation scaled so stationary variance = innov^2 / (1 - rho^2)
        seq = ar1_sequence(100_000, 0.9, 0.04, np.random.default_rng(8))
        assert abs(seq.std() - 0.04) / 0.04 < 0.05


class TestChromaDrift:
    def test_zero_std_identity(self):
        rng = np.random.default_rng(0)
        clip = make_clip(rng)
        out, _ = apply_chroma_drift(clip, 0.0, rng)
        np.testing.assert_allclose(out.data, clip.data, atol=1e-5)

    def test_luminance_preserved(self):
        from gpdenoise.media import rgb_to_ycbcr_array

        rng = np.random.default_rng(1)
        clip = VideoClip(rng.uniform(0.3, 0.7, size=(4, 3, 16, 16)))
        out, _ = apply_chroma_drift(clip, 0.005, rng)
        y_in = rgb_to_ycbcr_array(clip.data)[:, 0]
        y_out = rgb_to_ycbcr_array(out.data)[:, 0]
        np.testing.assert_allclose(y_out, y_in, atol=1e-6)

    def test_offset_statistics(self):
        rng = np.random.default_rng(2)
        std = 0.002
        draws = [
            apply_chroma_drift(
                VideoClip(np.full((1, 3, 8, 8), 0.5)), std, rng
            )[1]["cb"][0]
            for _ in range(10_000)
        ]
        measured = np.std(draws)
        assert abs(measured - std) / std < 0.10


class TestBlur:
    def test_probability_zero_identity(self):
        rng = np.random.default_rng(0)
        clip = make_clip(rng)
        out, record = apply_blur(clip, BlurConfig(prob=0.0), rng)
        np.testing.assert_array_equal(out.data, clip.data)
        assert not record["triggered"]

    def test_tiny_sigma_is_identity(self):
        rng = np.random.default_rng(1)
        clip = make_clip(rng)
        out, record = apply_blur(clip, BlurConfig(prob=1.0, sigma_range=(0.0, 0.0)), rng)
        assert record["triggered"]
        np.testing.assert_allclose(out.data, clip.data, atol=1e-6)

    def test_constant_frame_unchanged(self):
        rng = np.random.default_rng(2)
        clip = VideoClip(np.full((2, 3, 32, 32), 0.42))
        out, _ = apply_blur(clip, BlurConfig(prob=1.0, sigma_range=(0.8, 0.8)), rng)
        np.testing.assert_allclose(out.data, 0.42, atol=1e-10)


class TestCompression:
    def test_none_is_identity(self):
        rng = np.random.default_rng(0)
        clip = make_clip(rng)
        out = apply_compression(clip, CompressionConfig(mode="none"))
        np.testing.assert_array_equal(out.data, clip.data)

    def test_proxy_zero_step_round_trips(self):
        rng = np.random.default_rng(1)
        clip = make_clip(rng, h=16, w=16)
        luma = clip.data[0, 0]
        rec = degrade._blockwise_dct_quantize(luma, 0.0)
        np.testing.assert_allclose(rec, luma, atol=1e-6)

    def test_higher_crf_lowers_psnr(self):
        rng = np.random.default_rng(2)
        deltas = []
        for _ in range(10):
            clip = make_clip(rng, t=1, h=64, w=64)
            mild = apply_compression(clip, CompressionConfig(mode="proxy", crf=28))
            harsh = apply_compression(clip, CompressionConfig(mode="proxy", crf=36))
            deltas.append(psnr(mild.data, clip.data) - psnr(harsh.data, clip.data))
        assert np.mean(deltas) > 0
        assert min(deltas) > 0

    def test_external_missing_binary_names_tool(self):
        rng = np.random.default_rng(3)
        cfg = CompressionConfig(
            mode="external",
            crf=30,
            codec_cmd="definitely-not-a-codec {input} {output} {crf}",
        )
        with pytest.raises(RuntimeError, match="definitely-not-a-codec"):
            apply_compression(make_clip(rng, h=16, w=16), cfg)

    def test_external_without_command_errors(self):
        rng = np.random.default_rng(4)
        with pytest.raises(RuntimeError, match="codec command"):
            apply_compression(
                make_clip(rng, h=16, w=16), CompressionConfig(mode="external")
            )


class TestPipeline:
    def test_all_off_is_exact_identity(self):
        rng = np.random.default_rng(0)
        clip = make_clip(rng)
        out, _ = synthesize_degraded_clip(clip, all_off_config())
        np.testing.assert_array_equal(out.data, clip.data)

    def test_fixed_seed_bit_identical(self):
        rng = np.random.default_rng(1)
        clip = make_clip(rng)
        cfg = config_at_severity(2.0, seed=1234)
        a, rec_a = synthesize_degraded_clip(clip, cfg)
        b, rec_b = synthesize_degraded_clip(clip, cfg)
        np.testing.assert_array_equal(a.data, b.data)
        assert rec_a == rec_b

    def test_record_contains_sampled_parameters(self):
        rng = np.random.default_rng(2)
        clip = make_clip(rng)
        _, record = synthesize_degraded_clip(clip, config_at_severity(1.0, seed=7))
        for key in ("exposure_gains", "shot_scale", "read_scale", "grain_std",
                    "flicker", "chroma_drift", "blur", "chroma_perturbation",
                    "compression"):
            assert key in record

    def test_severity_monotonically_hurts_psnr(self):
        rng = np.random.default_rng(3)
        clips = [make_clip(rng, t=3, h=64, w=64) for _ in range(10)]
        means = []
        for sigma in (1.0, 1.5, 2.0, 2.5, 3.0):
            values = []
            for i, clip in enumerate(clips):
                cfg = config_at_severity(sigma, seed=1000 + i)
                out, _ = synthesize_degraded_clip(clip, cfg)
                values.append(psnr(out.data, clip.data))
            means.append(np.mean(values))
        assert all(a > b for a, b in zip(means, means[1:])), means
