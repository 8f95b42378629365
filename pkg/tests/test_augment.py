import numpy as np
import pytest

from conftest import tone_clip
from respsound.audio_io import AudioClip, SilentClipError, serialize_wav
from respsound.augment import (DynRangeCompress, MixtureSpec, NoiseMix,
                               PitchShift, SubsampleWindows, TimeShift,
                               TimeStretch, apply_spec, balance_plan,
                               compress_dynamic_range, convolutive_mixture,
                               format_spec, mix_background, parse_plan,
                               pitch_shift, subsample_windows, time_shift,
                               time_stretch)
from respsound.dataset import Diagnosis, Manifest, ManifestEntry


def dominant_bin(x):
    return int(np.argmax(np.abs(np.fft.rfft(x))))


class TestTimeStretch:
    def test_rate_two_halves_length(self, rng):
        clip = AudioClip(rng.standard_normal(1000), 1000)
        assert len(time_stretch(clip, 2.0)) == 500

    def test_rate_half_doubles_length(self, rng):
        clip = AudioClip(rng.standard_normal(1000), 1000)
        assert len(time_stretch(clip, 0.5)) == 2000

    def test_identity_at_rate_one(self, rng):
        clip = AudioClip(rng.standard_normal(100), 1000)
        assert np.array_equal(time_stretch(clip, 1.0).samples, clip.samples)

    def test_pitch_moves_with_rate(self):
        # playing 2x faster halves the length, so the per-output-length
        # bin index stays put while the physical frequency doubles
        clip = tone_clip(100, sr=2000, duration_s=1.0)
        out = time_stretch(clip, 2.0)
        freq = dominant_bin(out.samples) * out.sample_rate / len(out)
        assert freq == pytest.approx(200, abs=2)

    def test_nonpositive_rate(self):
        with pytest.raises(ValueError):
            time_stretch(AudioClip(np.ones(10), 100), 0.0)


class TestPitchShift:
    def test_length_and_rate_preserved(self, rng):
        clip = AudioClip(rng.standard_normal(777), 2000)
        out = pitch_shift(clip, 3.5)
        assert len(out) == 777 and out.sample_rate == 2000

    def test_octave_up_doubles_bin(self):
        n, k0 = 2048, 16
        x = np.cos(2 * np.pi * k0 * np.arange(n) / n)
        out = pitch_shift(AudioClip(x, 2000), 12.0)
        assert dominant_bin(out.samples) == 2 * k0

    def test_octave_down_halves_bin(self):
        n, k0 = 2048, 16
        x = np.cos(2 * np.pi * k0 * np.arange(n) / n)
        out = pitch_shift(AudioClip(x, 2000), -12.0)
        assert dominant_bin(out.samples) == k0 // 2

    def test_zero_semitones_identity(self, rng):
        clip = AudioClip(rng.standard_normal(300), 2000)
        assert np.array_equal(pitch_shift(clip, 0.0).samples, clip.samples)


class TestMixBackground:
    @pytest.mark.parametrize("snr_db", [-5.0, 0.0, 10.0, 30.0])
    def test_achieves_requested_snr(self, snr_db, rng):
        sig = tone_clip(200, sr=2000, duration_s=1.0)
        noise = AudioClip(rng.standard_normal(2000), 2000)
        out = mix_background(sig, noise, snr_db)
        added = out.samples - sig.samples
        achieved = 10 * np.log10(np.mean(sig.samples ** 2)
                                 / np.mean(added ** 2))
        assert achieved == pytest.approx(snr_db, abs=1e-9)

    def test_short_noise_tiled(self, rng):
        sig = tone_clip(200, sr=2000, duration_s=1.0)
        noise = AudioClip(rng.standard_normal(150), 2000)
        assert len(mix_background(sig, noise, 10.0)) == len(sig)

    def test_noise_resampled_to_signal_rate(self, rng):
        sig = tone_clip(200, sr=2000, duration_s=0.5)
        noise = AudioClip(rng.standard_normal(8000), 8000)
        assert len(mix_background(sig, noise, 10.0)) == len(sig)

    def test_silent_signal_rejected(self, rng):
        with pytest.raises(SilentClipError):
            mix_background(AudioClip(np.zeros(100), 2000),
                           AudioClip(rng.standard_normal(100), 2000), 10.0)

    def test_silent_noise_rejected(self):
        with pytest.raises(ValueError, match="zero power"):
            mix_background(tone_clip(200), AudioClip(np.zeros(100), 2000), 10.0)


class TestCompressor:
    def test_below_threshold_untouched(self):
        x = np.array([0.01, -0.02, 0.05])  # all under -20 dBFS (0.1)
        out = compress_dynamic_range(AudioClip(x, 100), -20.0, 4.0)
        assert np.array_equal(out.samples, x)

    def test_hand_computed_reduction(self):
        # 0 dBFS sample, threshold -20 dB, ratio 4: out level -15 dB
        out = compress_dynamic_range(AudioClip([1.0, 0.0], 100), -20.0, 4.0)
        assert out.samples[0] == pytest.approx(10 ** (-15 / 20))
        assert out.samples[1] == 0.0

    def test_sign_preserved(self, rng):
        x = rng.uniform(-1, 1, 50)
        out = compress_dynamic_range(AudioClip(x, 100), -30.0, 8.0)
        assert (np.sign(out.samples) == np.sign(x)).all()

    def test_ratio_one_identity(self, rng):
        x = rng.uniform(-1, 1, 50)
        out = compress_dynamic_range(AudioClip(x, 100), -20.0, 1.0)
        assert np.allclose(out.samples, x, atol=1e-15)

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            compress_dynamic_range(AudioClip([0.5], 100), -20.0, 0.5)
        with pytest.raises(ValueError):
            compress_dynamic_range(AudioClip([0.5], 100), 5.0, 2.0)


class TestTimeShift:
    def test_zero_fill_forward(self):
        clip = AudioClip([1.0, 2.0, 3.0, 4.0], 4)
        out = time_shift(clip, 0.5)  # 2 samples
        assert out.samples.tolist() == [0.0, 0.0, 1.0, 2.0]

    def test_zero_fill_backward(self):
        clip = AudioClip([1.0, 2.0, 3.0, 4.0], 4)
        out = time_shift(clip, -0.25)
        assert out.samples.tolist() == [2.0, 3.0, 4.0, 0.0]

    def test_circular_rotation(self):
        clip = AudioClip([1.0, 2.0, 3.0, 4.0], 4)
        out = time_shift(clip, 0.25, circular=True)
        assert out.samples.tolist() == [4.0, 1.0, 2.0, 3.0]

    def test_shift_past_duration_rejected(self):
        with pytest.raises(ValueError, match="duration"):
            time_shift(AudioClip(np.ones(4), 4), 1.5)


class TestSubsampleWindows:
    def test_count_and_length(self):
        clip = AudioClip(np.arange(100.0), 100)
        wins = subsample_windows(clip, [0.0, 0.25, 0.5], 0.5)
        assert len(wins) == 3
        assert all(len(w) == 50 for w in wins)
        assert np.array_equal(wins[1].samples, np.arange(25.0, 75.0))

    def test_tail_window_padded(self):
        clip = AudioClip(np.ones(100), 100)
        (w,) = subsample_windows(clip, [0.8], 0.5)
        assert len(w) == 50
        assert not w.samples[20:].any()


def mixture_oracle(sources, taps, noise):
    """Triple-loop evaluation of x(n) = sum_k A_k s(n-k) + v(n)."""
    m_obs, s_src = taps[0].shape
    n = len(sources[0])
    x = noise.copy()
    for m in range(m_obs):
        for t in range(n):
            for k, a_k in enumerate(taps):
                if t - k < 0:
                    continue
                for s in range(s_src):
                    x[m, t] += a_k[m, s] * sources[s][t - k]
    return x


class TestConvolutiveMixture:
    def test_matches_triple_loop_oracle(self, rng):
        n, s_src, m_obs, k_taps = 64, 3, 2, 5
        sources = [rng.standard_normal(n) for _ in range(s_src)]
        taps = tuple(rng.standard_normal((m_obs, s_src)) for _ in range(k_taps))
        spec = MixtureSpec(taps, noise_std=0.1, seed=3)
        out = convolutive_mixture([AudioClip(s, 1000) for s in sources], spec)
        noise = np.random.default_rng(3).normal(0.0, 0.1, size=(m_obs, n))
        expected = mixture_oracle(sources, spec.taps, noise)
        got = np.stack([c.samples for c in out])
        assert np.max(np.abs(got - expected)) <= 1e-12

    def test_single_identity_tap_is_passthrough(self, rng):
        src = AudioClip(rng.standard_normal(50), 1000)
        (out,) = convolutive_mixture([src], MixtureSpec((np.eye(1),)))
        assert np.array_equal(out.samples, src.samples)

    def test_pure_delay_tap(self, rng):
        src = AudioClip(rng.standard_normal(50), 1000)
        spec = MixtureSpec((np.zeros((1, 1)), np.eye(1)))
        (out,) = convolutive_mixture([src], spec)
        assert not out.samples[0]
        assert np.array_equal(out.samples[1:], src.samples[:-1])

    def test_noise_is_seeded(self, rng):
        src = [AudioClip(rng.standard_normal(40), 1000)]
        spec = MixtureSpec((np.eye(1),), noise_std=0.5, seed=9)
        a = convolutive_mixture(src, spec)[0].samples
        b = convolutive_mixture(src, spec)[0].samples
        assert np.array_equal(a, b)

    def test_shape_validation(self, rng):
        with pytest.raises(ValueError, match="sources"):
            convolutive_mixture([AudioClip(np.ones(10), 1000)],
                                MixtureSpec((np.ones((2, 2)),)))
        with pytest.raises(ValueError):
            MixtureSpec(())
        with pytest.raises(ValueError):
            MixtureSpec((np.ones((1, 1)), np.ones((2, 1))))


class TestPlans:
    SPECS = [
        TimeStretch(1.1),
        PitchShift(-2.0),
        NoiseMix(12.0, "beds/hospital.wav"),
        DynRangeCompress(-18.0, 3.0),
        TimeShift(0.25, circular=True),
        SubsampleWindows((0.0, 0.5), 1.0),
    ]

    def test_format_parse_roundtrip(self):
        text = "\n".join(format_spec(s, file_path=f"c{i}.wav")
                         for i, s in enumerate(self.SPECS))
        plan = parse_plan(text)
        assert [t for t, _ in plan] == [f"c{i}.wav" for i in range(6)]
        assert [s for _, s in plan] == self.SPECS

    def test_comments_and_blanks_ignored(self):
        plan = parse_plan("# comment\n\ntransform=pitch_shift semitones=1\n")
        assert plan == [(None, PitchShift(1.0))]

    def test_bad_line_reports_number(self):
        with pytest.raises(ValueError, match="line 2"):
            parse_plan("transform=pitch_shift semitones=1\ntransform=warp\n")

    def test_apply_spec_dispatch(self, tmp_path, rng):
        clip = tone_clip(200, sr=2000, duration_s=1.0)
        noise_path = tmp_path / "bed.wav"
        noise_path.write_bytes(
            serialize_wav(AudioClip(rng.standard_normal(2000) * 0.1, 2000)))
        from respsound.audio_io import parse_wav
        loader = lambda p: parse_wav((tmp_path / p).read_bytes())
        for spec in [TimeStretch(1.2), PitchShift(2.0),
                     NoiseMix(15.0, "bed.wav"), DynRangeCompress(-20.0, 4.0),
                     TimeShift(0.1)]:
            outs = apply_spec(spec, clip, load_clip=loader)
            assert len(outs) == 1
        outs = apply_spec(SubsampleWindows((0.0, 0.5), 0.5), clip)
        assert len(outs) == 2

    def test_noise_mix_requires_loader(self):
        with pytest.raises(ValueError, match="loader"):
            apply_spec(NoiseMix(10.0, "x.wav"), tone_clip(200))


class TestBalancePlan:
    def manifest(self, counts):
        entries = []
        i = 0
        for dx, n in counts.items():
            for _ in range(n):
                i += 1
                entries.append(ManifestEntry(f"f{i}.wav", i, dx))
        return Manifest(tuple(entries))

    def test_fills_each_class_to_modal_count(self):
        m = self.manifest({Diagnosis.COPD: 6, Diagnosis.HEALTHY: 2,
                           Diagnosis.ASTHMA: 1})
        plan = balance_plan(m)
        added = {}
        for path, spec in plan:
            assert isinstance(spec, TimeShift) and spec.circular
            dx = next(e.diagnosis for e in m.entries if e.file_path == path)
            added[dx] = added.get(dx, 0) + 1
        assert added == {Diagnosis.HEALTHY: 4, Diagnosis.ASTHMA: 5}

    def test_balanced_manifest_needs_nothing(self):
        m = self.manifest({Diagnosis.COPD: 3, Diagnosis.HEALTHY: 3})
        assert balance_plan(m) == []

    def test_offsets_stay_inside_duration(self):
        m = self.manifest({Diagnosis.COPD: 40, Diagnosis.URTI: 1})
        for _, spec in balance_plan(m, duration_s=1.0):
            assert 0 < spec.offset_s < 1.0
