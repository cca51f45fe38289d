import numpy as np
import pytest

from enginediag import dsp
from enginediag.audio import CANONICAL_RATE, CLIP_SAMPLES
from enginediag.errors import EmptyFeatureList, SilentClip, UnknownFeatureKind
from enginediag.features import (
    FEATURE_KINDS,
    FeatureTensor,
    bandwidth_probe,
    extract,
    fft_feature,
    fuse_concat,
    load_tensor,
    mfcc_feature,
    save_tensor,
    spectrogram_feature,
    waveform_feature,
    wavelet_feature,
)

from conftest import brute_dft_mag, make_clip, noise_clip, tone_clip

EXPECTED_SHAPES = {
    "waveform": (1, 72_000),
    "fft": (1, 24_000),
    "mfcc": (130, 13),
    "spectrogram": (1025, 282),
    "wavelets": (1, 73_728),
}


def brickwall_lowpass(samples, cutoff_hz):
    spec = np.fft.rfft(np.asarray(samples, dtype=np.float64))
    freqs = np.fft.rfftfreq(len(samples), 1.0 / CANONICAL_RATE)
    spec[freqs > cutoff_hz] = 0.0
    return np.fft.irfft(spec, n=len(samples))


class TestShapes:
    @pytest.mark.parametrize("kind", list(EXPECTED_SHAPES))
    def test_canonical_shapes(self, kind):
        clip = noise_clip(seed=1)
        assert extract(clip, kind).shape == EXPECTED_SHAPES[kind]

    def test_fused_length(self):
        clip = noise_clip(seed=2)
        fused = extract(clip, "fused")
        assert fused.shape == (1, sum(np.prod(s) for s in EXPECTED_SHAPES.values()))
        assert fused.shape == (1, 460_468)

    def test_unknown_kind(self):
        with pytest.raises(UnknownFeatureKind):
            extract(noise_clip(), "melgram")

    def test_deterministic(self):
        clip = noise_clip(seed=3)
        for kind in FEATURE_KINDS[:-1]:
            a = extract(clip, kind).data
            b = extract(clip, kind).data
            np.testing.assert_array_equal(a, b)


class TestWaveform:
    def test_dc_passthrough(self):
        out = waveform_feature(make_clip(np.full(CLIP_SAMPLES, 0.5))).data[0]
        assert np.allclose(out[200:-200], 0.5, atol=1e-3)

    def test_tone_preserved_at_24k(self):
        out = waveform_feature(tone_clip(1000)).data[0]
        mags = brute_dft_mag(out[:4800], k_max=1200)  # 5 Hz bins at 24 kHz
        assert abs((np.argmax(mags[1:]) + 1) * 5 - 1000) <= 5


class TestFft:
    def test_zero_clip(self):
        out = fft_feature(make_clip(np.zeros(CLIP_SAMPLES))).data[0]
        assert np.all(out == 0.0)

    def test_440_tone_bin(self):
        out = fft_feature(tone_clip(440, amplitude=1.0)).data[0]
        assert np.argmax(out) == 439  # band (439, 440] Hz

    def test_matches_brute_dft(self):
        # Peak location agrees with a direct O(N^2) DFT of a 4,800-sample
        # truncation (10 Hz bins) for a handful of tones.
        rng = np.random.default_rng(5)
        for freq in rng.uniform(200, 9000, 5):
            clip = tone_clip(freq)
            feature_hz = np.argmax(fft_feature(clip).data[0]) + 1
            mags = brute_dft_mag(clip.samples[:4800], k_max=2401)
            oracle_hz = (np.argmax(mags[1:]) + 1) * 10
            assert abs(feature_hz - oracle_hz) <= 10

    def test_white_noise_flat(self):
        for seed in range(10):
            out = fft_feature(noise_clip(seed=seed)).data[0]
            assert out.max() < 5.0 * np.median(out)

    def test_l2_normalized(self):
        out = fft_feature(noise_clip(seed=11)).data[0]
        assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-9)


class TestMfcc:
    def test_zero_clip_constant_rows(self):
        out = mfcc_feature(make_clip(np.zeros(CLIP_SAMPLES))).data
        assert out.shape == (130, 13)
        # Time-invariant input: every frame identical (up to GEMM rounding).
        assert np.ptp(out, axis=0).max() < 1e-10

    def test_scaling_shifts_c0_only(self):
        # Amplitudes chosen so doubling never clips: scaling then acts
        # purely on the log energies.
        rng = np.random.default_rng(6)
        clip = make_clip(rng.uniform(-0.4, 0.4, CLIP_SAMPLES))
        doubled = make_clip(clip.samples * np.float32(2.0))
        a = mfcc_feature(clip).data
        b = mfcc_feature(doubled).data
        shift = b[:, 0] - a[:, 0]
        assert np.allclose(shift, shift[0], atol=1e-6)
        assert shift[0] > 0
        np.testing.assert_allclose(b[:, 1:], a[:, 1:], atol=1e-6)


class TestSpectrogram:
    def test_zero_clip(self):
        out = spectrogram_feature(make_clip(np.zeros(CLIP_SAMPLES))).data
        assert np.all(out == 0.0)

    def test_6khz_row(self):
        out = spectrogram_feature(tone_clip(6000)).data
        expected = round(6000 * 2048 / CANONICAL_RATE)
        for frame in (100, 141, 200):
            assert np.argmax(out[:, frame]) == expected
        # Windowed-frame oracle: direct DFT of one Hann-windowed segment.
        seg = tone_clip(6000).samples[:2048].astype(np.float64) * dsp.hann(2048)
        assert np.argmax(brute_dft_mag(seg, k_max=1025)) == expected

    def test_reversal_energy_invariant(self):
        clip = noise_clip(seed=7)
        fwd = spectrogram_feature(clip).data.sum()
        rev = spectrogram_feature(clip.samples[::-1]).data.sum()
        assert abs(fwd - rev) / fwd < 1e-6
        f_fwd = fft_feature(clip).data.sum()
        f_rev = fft_feature(clip.samples[::-1]).data.sum()
        assert abs(f_fwd - f_rev) / f_fwd < 1e-6


class TestWavelets:
    def test_zero_clip(self):
        out = wavelet_feature(make_clip(np.zeros(CLIP_SAMPLES))).data
        assert out.shape == (1, 73_728)
        assert np.all(out == 0.0)

    def test_band_length_bookkeeping(self):
        # 73,728 = 9 (approx) + 9 + 18 + ... + 36,864 (details, coarse->fine)
        lengths = [9] + [9 * 2 ** j for j in range(13)]
        assert sum(lengths) == 73_728
        out = wavelet_feature(noise_clip(seed=8)).data
        assert out.shape == (1, 73_728)

    def test_energy_preserved(self):
        clip = noise_clip(seed=9)
        wf = waveform_feature(clip).data[0]
        padded = np.pad(wf, (0, 73_728 - len(wf)))
        coeffs = wavelet_feature(clip).data[0]
        num = np.sum(coeffs ** 2, dtype=np.float64)
        den = np.sum(padded ** 2, dtype=np.float64)
        assert abs(num - den) / den < 1e-6

    def test_linearity(self):
        clip = noise_clip(seed=10, scale=0.2)
        scaled = make_clip(clip.samples * np.float32(2.0))
        a = wavelet_feature(scaled).data
        b = 2.0 * wavelet_feature(clip).data
        assert np.max(np.abs(a - b)) < 1e-9


class TestFuseConcat:
    def test_all_five(self):
        clip = noise_clip(seed=12)
        tensors = [extract(clip, kind) for kind in FEATURE_KINDS[:-1]]
        fused = fuse_concat(tensors)
        assert fused.kind == "fused"
        assert fused.size == 72_000 + 24_000 + 1_690 + 289_050 + 73_728

    def test_singleton(self):
        ft = fft_feature(noise_clip(seed=13))
        fused = fuse_concat([ft])
        assert fused.kind == "fused"
        np.testing.assert_array_equal(fused.data[0], ft.data[0])

    def test_zero_tensors(self):
        a = FeatureTensor(kind="waveform", data=np.zeros((1, 3)))
        b = FeatureTensor(kind="fft", data=np.zeros((1, 4)))
        fused = fuse_concat([a, b])
        assert fused.shape == (1, 7)
        assert np.all(fused.data == 0.0)

    def test_empty(self):
        with pytest.raises(EmptyFeatureList):
            fuse_concat([])


class TestBandwidthProbe:
    def test_white_noise_full_band(self):
        assert bandwidth_probe(noise_clip(seed=14)) >= 23_500

    def test_16k_lowpass(self):
        lp = brickwall_lowpass(noise_clip(seed=15).samples, 16_000)
        cutoff = bandwidth_probe(make_clip(np.clip(lp, -1, 1)))
        assert 15_000 <= cutoff <= 16_500

    def test_pure_tone(self):
        cutoff = bandwidth_probe(tone_clip(1000))
        assert 500 <= cutoff <= 1500

    def test_silent(self):
        with pytest.raises(SilentClip):
            bandwidth_probe(make_clip(np.zeros(CLIP_SAMPLES)))


class TestTensorExchange:
    def test_roundtrip(self, tmp_path):
        tensor = mfcc_feature(noise_clip(seed=16))
        path = tmp_path / "t.ftns"
        save_tensor(path, tensor)
        assert path.stat().st_size == 16 + 4 * tensor.size
        back = load_tensor(path)
        assert back.kind == tensor.kind
        assert back.shape == tensor.shape
        np.testing.assert_array_equal(
            back.data.astype(np.float32), tensor.data.astype(np.float32))

    def test_header_magic(self, tmp_path):
        path = tmp_path / "t.ftns"
        save_tensor(path, FeatureTensor(kind="fft", data=np.ones((1, 4))))
        raw = path.read_bytes()
        assert raw[:4] == b"FTNS"

    def test_rejects_wrong_magic(self, tmp_path):
        bad = tmp_path / "bad.ftns"
        bad.write_bytes(b"XXXX" + b"\x00" * 12)
        with pytest.raises(ValueError):
            load_tensor(bad)
