"""The five feature extractors, fusion, and the bandwidth probe.

Canonical 3-second clips produce fixed shapes:

    waveform     1 x 72,000   (clip decimated to 24 kHz)
    fft          1 x 24,000   (1 Hz magnitude bins up to 24 kHz, L2-normalized)
    mfcc       130 x 13       (frames x coefficients, computed at 24 kHz)
    spectrogram 1025 x 282    (frequency rows x frames, 48 kHz, log(1+m))
    wavelets     1 x 73,728   (13-level DWT of the zero-padded 24 kHz waveform)

The 48 kHz clip is the shared upstream representation; the waveform,
FFT-bin target, MFCC, and wavelet features operate on its 24 kHz
derivative, while the spectrogram sees all 48 kHz.  Inputs longer or
shorter than one canonical clip are accepted (shapes then scale with
the input) so models with global pooling can run on arbitrary lengths.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import dsp
from .audio import CANONICAL_RATE
from .errors import EmptyFeatureList, SilentClip, UnknownFeatureKind

FEATURE_KINDS = ("waveform", "fft", "mfcc", "spectrogram", "wavelets", "fused")
_KIND_CODES = {kind: i + 1 for i, kind in enumerate(FEATURE_KINDS)}
_CODE_KINDS = {code: kind for kind, code in _KIND_CODES.items()}

WAVEFORM_RATE = 24_000

MFCC_N_FFT = 2048
MFCC_HOP = 558
MFCC_N_MELS = 40
MFCC_N_COEFF = 13
MFCC_FMAX = 12_000.0
MFCC_LOG_FLOOR = 1e-10

SPEC_N_FFT = 2048
SPEC_HOP = 512

WAVELET_LEVELS = 13

FFT_BANDS = 24_000
PROBE_BAND_HZ = 500
PROBE_THRESHOLD = 1e-4


@dataclass(frozen=True)
class FeatureTensor:
    """A (rows, cols) float array tagged with its extractor kind."""

    kind: str
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.kind not in FEATURE_KINDS:
            raise UnknownFeatureKind(self.kind)
        if self.data.ndim != 2:
            raise ValueError(f"feature data must be 2D, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("feature data must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size


def _samples(clip) -> np.ndarray:
    """Accept a Clip or a bare sample array."""
    samples = getattr(clip, "samples", clip)
    return np.asarray(samples, dtype=np.float64)


def waveform_feature(clip) -> FeatureTensor:
    """Raw-waveform feature: clip low-passed at 12 kHz and decimated 2:1."""
    y = dsp.resample(_samples(clip), CANONICAL_RATE, WAVEFORM_RATE)
    return FeatureTensor(kind="waveform", data=y[None, :])


def fft_feature(clip) -> FeatureTensor:
    """Magnitude spectrum aggregated into contiguous 1 Hz bands.

    A 3-second clip yields a DFT with 1/3 Hz resolution; band i covers
    (i, i+1] Hz and averages the three DFT magnitudes inside it.  The
    result is L2-normalized (skipped for an all-zero clip) so plain
    volume changes do not leak into the feature.
    """
    x = _samples(clip)
    mag = np.abs(np.fft.rfft(x))
    bins_per_hz = len(x) // CANONICAL_RATE  # 3 for a canonical clip
    n_bands = min(FFT_BANDS, (len(mag) - 1) // bins_per_hz)
    grouped = mag[1:1 + n_bands * bins_per_hz].reshape(n_bands, bins_per_hz)
    bands = grouped.mean(axis=1)
    norm = np.linalg.norm(bands)
    if norm > 0:
        bands = bands / norm
    return FeatureTensor(kind="fft", data=bands[None, :])


def _mel_filterbank(n_mels: int, n_fft: int, sr: int, fmax: float) -> np.ndarray:
    """Triangular mel filters (HTK scale), shape (n_mels, 1 + n_fft//2)."""
    def to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)

    def from_mel(m):
        return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)

    edges = from_mel(np.linspace(to_mel(0.0), to_mel(fmax), n_mels + 2))
    freqs = np.arange(1 + n_fft // 2) * (sr / n_fft)
    lower = edges[:-2][:, None]
    center = edges[1:-1][:, None]
    upper = edges[2:][:, None]
    up = (freqs[None, :] - lower) / np.maximum(center - lower, 1e-12)
    down = (upper - freqs[None, :]) / np.maximum(upper - center, 1e-12)
    return np.maximum(0.0, np.minimum(up, down))


def _dct_ii_ortho(n_in: int, n_out: int) -> np.ndarray:
    """Orthonormal DCT-II matrix truncated to the first n_out rows."""
    n = np.arange(n_in)
    k = np.arange(n_out)[:, None]
    basis = np.cos(np.pi * (2 * n[None, :] + 1) * k / (2 * n_in))
    basis *= np.sqrt(2.0 / n_in)
    basis[0] *= np.sqrt(0.5)
    return basis


_MEL_FB = _mel_filterbank(MFCC_N_MELS, MFCC_N_FFT, WAVEFORM_RATE, MFCC_FMAX)
_DCT = _dct_ii_ortho(MFCC_N_MELS, MFCC_N_COEFF)


def mfcc_feature(clip) -> FeatureTensor:
    """MFCCs of the 24 kHz waveform feature; rows are frames.

    Frame count is floor(72,000 / 558) + 1 = 130 via reflect center
    padding; 40 mel filters span 0-12 kHz, energies are floored at 1e-10
    before the log, and an orthonormal DCT-II keeps 13 coefficients.
    """
    y = waveform_feature(clip).data[0]
    padded = np.pad(y, MFCC_N_FFT // 2, mode="reflect")
    window = dsp.hann(MFCC_N_FFT)
    spec = dsp.stft(padded, MFCC_N_FFT, MFCC_HOP, window)
    power = np.abs(spec) ** 2
    energies = power @ _MEL_FB.T
    logs = np.log(np.maximum(energies, MFCC_LOG_FLOOR))
    coeffs = logs @ _DCT.T
    return FeatureTensor(kind="mfcc", data=coeffs)


def spectrogram_feature(clip) -> FeatureTensor:
    """Log-compressed magnitude STFT of the 48 kHz clip; rows are bins.

    Window 2048, hop 512, reflect padding sized so a canonical clip
    yields floor(144,000 / 512) + 1 = 282 frames on a hop-aligned grid
    (this keeps total energy invariant under time reversal).
    """
    x = _samples(clip)
    n_frames = len(x) // SPEC_HOP + 1
    pad_total = (n_frames - 1) * SPEC_HOP + SPEC_N_FFT - len(x)
    pad = pad_total // 2
    padded = np.pad(x, (pad, pad_total - pad), mode="reflect")
    window = dsp.hann(SPEC_N_FFT)
    mag = np.abs(dsp.stft(padded, SPEC_N_FFT, SPEC_HOP, window))
    return FeatureTensor(kind="spectrogram", data=np.log1p(mag).T)


_D4_LOW = np.array([1 + np.sqrt(3), 3 + np.sqrt(3), 3 - np.sqrt(3), 1 - np.sqrt(3)])
_D4_LOW /= 4.0 * np.sqrt(2.0)
_D4_HIGH = np.array([_D4_LOW[3], -_D4_LOW[2], _D4_LOW[1], -_D4_LOW[0]])


def _dwt_step(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One periodized Daubechies-4 analysis step; halves the length."""
    n = len(x)
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(4)[None, :]) % n
    gathered = x[idx]
    return gathered @ _D4_LOW, gathered @ _D4_HIGH


def wavelet_feature(clip) -> FeatureTensor:
    """13-level periodized DWT of the zero-padded 24 kHz waveform.

    72,000 is not divisible by 2^13, so the waveform is zero-padded to
    73,728 = 9 * 2^13 first.  Bands are concatenated coarsest-first:
    [approx_13, detail_13, detail_12, ..., detail_1].
    """
    y = waveform_feature(clip).data[0]
    block = 1 << WAVELET_LEVELS
    target = ((len(y) + block - 1) // block) * block
    approx = np.pad(y, (0, target - len(y)))
    details = []
    for _ in range(WAVELET_LEVELS):
        approx, detail = _dwt_step(approx)
        details.append(detail)
    bands = [approx] + details[::-1]
    return FeatureTensor(kind="wavelets", data=np.concatenate(bands)[None, :])


_EXTRACTORS = {
    "waveform": waveform_feature,
    "fft": fft_feature,
    "mfcc": mfcc_feature,
    "spectrogram": spectrogram_feature,
    "wavelets": wavelet_feature,
}


def extract(clip, kind: str) -> FeatureTensor:
    """Dispatch to one extractor by kind; 'fused' concatenates all five."""
    if kind == "fused":
        return fuse_concat([_EXTRACTORS[k](clip) for k in FEATURE_KINDS[:-1]])
    if kind not in _EXTRACTORS:
        raise UnknownFeatureKind(kind)
    return _EXTRACTORS[kind](clip)


def fuse_concat(features: list[FeatureTensor]) -> FeatureTensor:
    """Concatenate features into one long row vector (2D inputs flatten row-major)."""
    if not features:
        raise EmptyFeatureList("fuse_concat needs at least one feature")
    flat = np.concatenate([f.data.reshape(-1) for f in features])
    return FeatureTensor(kind="fused", data=flat[None, :])


def bandwidth_probe(clip) -> float:
    """Highest frequency band with meaningful content, in Hz.

    The magnitude spectrum is split into contiguous 500 Hz bands; the
    probe returns the upper edge of the highest band whose mean
    magnitude exceeds 1e-4 of the strongest band's mean.  Full-band
    material therefore reports >= 23,500 Hz.
    """
    x = _samples(clip)
    mag = np.abs(np.fft.rfft(x))
    if float(mag.max(initial=0.0)) == 0.0:
        raise SilentClip("bandwidth probe on an all-zero clip")
    nyquist = CANONICAL_RATE // 2
    n_bands = nyquist // PROBE_BAND_HZ
    bins_per_band = (len(mag) - 1) // n_bands
    grouped = mag[1:1 + n_bands * bins_per_band].reshape(n_bands, bins_per_band)
    means = grouped.mean(axis=1)
    active = np.nonzero(means > PROBE_THRESHOLD * means.max())[0]
    return float((active[-1] + 1) * PROBE_BAND_HZ)


def save_tensor(path, tensor: FeatureTensor) -> None:
    """Write the binary exchange format: 16-byte header + f32 LE data.

    Header: magic 'FTNS', kind code u16, rows u32, cols u32, reserved u16.
    """
    rows, cols = tensor.shape
    header = struct.pack("<4sHIIH", b"FTNS", _KIND_CODES[tensor.kind], rows, cols, 0)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(tensor.data.astype("<f4").tobytes())


def load_tensor(path) -> FeatureTensor:
    """Read a tensor written by save_tensor."""
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != b"FTNS":
            raise ValueError(f"{path}: not a feature tensor file")
        _, code, rows, cols, _ = struct.unpack("<4sHIIH", header)
        data = np.frombuffer(fh.read(4 * rows * cols), dtype="<f4")
    if data.size != rows * cols:
        raise ValueError(f"{path}: truncated tensor data")
    if code not in _CODE_KINDS:
        raise UnknownFeatureKind(f"kind code {code}")
    return FeatureTensor(kind=_CODE_KINDS[code], data=data.astype(np.float64).reshape(rows, cols))
