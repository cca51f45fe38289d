"""Shared signal-processing primitives.

Everything here is pure numpy and deterministic.  The resampler is the
single band-limited interpolator used for rate conversion, decimation,
and speed/pitch manipulation; its filter is pinned (64-tap windowed
sinc, Kaiser beta=8) so downstream feature values are reproducible.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

RESAMPLER_TAPS = 64
RESAMPLER_BETA = 8.0
_BLOCK = 1 << 15  # outputs per block; caps the gather matrix at ~16 MB


def _kernel(t: np.ndarray, cutoff: float) -> np.ndarray:
    """Windowed-sinc interpolation kernel at offsets t (in input samples)."""
    half = RESAMPLER_TAPS // 2
    inside = np.abs(t) <= half
    arg = np.zeros_like(t)
    arg[inside] = RESAMPLER_BETA * np.sqrt(1.0 - (t[inside] / half) ** 2)
    window = np.where(inside, np.i0(arg) / np.i0(RESAMPLER_BETA), 0.0)
    return cutoff * np.sinc(cutoff * t) * window


@lru_cache(maxsize=32)
def _phase_taps(up: int, down: int) -> np.ndarray:
    """Tap table per output phase for a rational down/up rate change."""
    half = RESAMPLER_TAPS // 2
    offsets = np.arange(-half + 1, half + 1, dtype=np.float64)
    fracs = np.arange(up, dtype=np.float64) / up
    cutoff = min(1.0, up / down)
    return _kernel(offsets[None, :] - fracs[:, None], cutoff)


def resample(x: np.ndarray, sr_in: int, sr_out: int) -> np.ndarray:
    """Band-limited rate conversion via polyphase windowed-sinc.

    Output sample n sits at the exact rational input position
    n * sr_in / sr_out, so phases repeat and the kernel is evaluated
    only once per phase.  Output length is round(len(x) * sr_out / sr_in).
    """
    x = np.asarray(x, dtype=np.float64)
    if sr_in == sr_out:
        return x.copy()
    if sr_in <= 0 or sr_out <= 0:
        raise ValueError("sample rates must be positive")
    g = math.gcd(sr_in, sr_out)
    up, down = sr_out // g, sr_in // g
    n_out = int(round(len(x) * sr_out / sr_in))
    half = RESAMPLER_TAPS // 2
    taps = _phase_taps(up, down)
    padded = np.pad(x, (half, half))
    offsets = np.arange(-half + 1, half + 1, dtype=np.int64) + half

    if up == 1:  # integer decimation: one phase, plain strided correlation
        y = np.correlate(padded, taps[0][::-1])[::down]
        return y[:n_out]

    out = np.empty(n_out, dtype=np.float64)
    for start in range(0, n_out, _BLOCK):
        n = np.arange(start, min(start + _BLOCK, n_out), dtype=np.int64)
        pos = n * down
        base = pos // up
        idx = base[:, None] + offsets[None, :]
        out[start:start + len(n)] = np.einsum(
            "ij,ij->i", padded[idx], taps[pos % up])
    return out


def resample_fft(x: np.ndarray, n_out: int) -> np.ndarray:
    """Fourier-domain resampling of x to exactly n_out samples.

    Treats the signal as periodic (brick-wall band limit); suited to the
    augmentation speed/pitch chain where the rate ratio is an arbitrary
    real and edge wraparound is immaterial.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n_out == n:
        return x.copy()
    if n_out <= 0:
        raise ValueError("n_out must be positive")
    spec = np.fft.rfft(x)
    out_spec = np.zeros(n_out // 2 + 1, dtype=np.complex128)
    keep = min(len(spec), len(out_spec))
    out_spec[:keep] = spec[:keep]
    return np.fft.irfft(out_spec, n=n_out) * (n_out / n)


def hann(n_fft: int) -> np.ndarray:
    """Symmetric Hann window (palindromic, so |FFT| is reversal-invariant)."""
    return np.hanning(n_fft)


def frame(x: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """Slice x into (n_frames, n_fft) with the given hop; no padding."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) < n_fft:
        raise ValueError(f"signal length {len(x)} < frame length {n_fft}")
    n_frames = (len(x) - n_fft) // hop + 1
    view = np.lib.stride_tricks.sliding_window_view(x, n_fft)[::hop]
    return view[:n_frames]


def stft(x: np.ndarray, n_fft: int, hop: int, window: np.ndarray) -> np.ndarray:
    """Complex STFT, shape (n_frames, 1 + n_fft//2); caller pads."""
    return np.fft.rfft(frame(x, n_fft, hop) * window[None, :], axis=1)


def istft(spec: np.ndarray, n_fft: int, hop: int, window: np.ndarray) -> np.ndarray:
    """Weighted overlap-add inverse of `stft` with the same window."""
    frames = np.fft.irfft(spec, n=n_fft, axis=1) * window[None, :]
    n_frames = frames.shape[0]
    length = (n_frames - 1) * hop + n_fft
    out = np.zeros(length, dtype=np.float64)
    norm = np.zeros(length, dtype=np.float64)
    w2 = window * window
    for t in range(n_frames):
        out[t * hop:t * hop + n_fft] += frames[t]
        norm[t * hop:t * hop + n_fft] += w2
    safe = norm > 1e-10
    out[safe] /= norm[safe]
    return out


def phase_vocoder(spec: np.ndarray, rate: float, n_fft: int, hop: int) -> np.ndarray:
    """Time-stretch an STFT by `rate` (rate < 1 slows, output gets longer).

    Magnitudes are linearly interpolated at fractional frame positions;
    phases advance by the expected per-hop increment plus the wrapped
    instantaneous deviation, which keeps partials coherent.
    """
    n_frames, n_bins = spec.shape
    steps = np.arange(0.0, n_frames, rate)
    expected = 2.0 * np.pi * hop * np.arange(n_bins) / n_fft
    padded = np.vstack([spec, np.zeros((1, n_bins), dtype=spec.dtype)])
    mag = np.abs(padded)
    phase = np.angle(padded)

    out = np.empty((len(steps), n_bins), dtype=np.complex128)
    acc = phase[0].copy()
    for m, t in enumerate(steps):
        i = int(t)
        frac = t - i
        amp = (1.0 - frac) * mag[i] + frac * mag[i + 1]
        out[m] = amp * np.exp(1j * acc)
        dphi = phase[i + 1] - phase[i] - expected
        dphi -= 2.0 * np.pi * np.round(dphi / (2.0 * np.pi))
        acc += expected + dphi
    return out


def time_stretch(x: np.ndarray, rate: float, n_fft: int = 2048, hop: int = 512) -> np.ndarray:
    """Phase-vocoder time stretch of a 1D signal (rate < 1 lengthens)."""
    x = np.asarray(x, dtype=np.float64)
    window = hann(n_fft)
    pad = n_fft  # headroom so edge frames exist at both ends
    spec = stft(np.pad(x, (pad, pad)), n_fft, hop, window)
    stretched = istft(phase_vocoder(spec, rate, n_fft, hop), n_fft, hop, window)
    # Remove the stretched copies of the symmetric padding.
    lead = int(round(pad / rate))
    target = int(round(len(x) / rate))
    out = stretched[lead:lead + target]
    if len(out) < target:
        out = np.pad(out, (0, target - len(out)))
    return out


def rms(x: np.ndarray) -> float:
    """Root mean square of a signal (0.0 for empty input)."""
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(x * x))) if x.size else 0.0
