"""WAV decoding, canonical mono 48 kHz form, and 3-second chunking.

The canonical internal representation is mono float32 at 48 kHz; every
clip is exactly CLIP_SAMPLES samples.  Only uncompressed RIFF/WAVE input
is accepted (16-bit PCM or 32-bit float): lossy codecs destroy the
high-frequency content the models rely on.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import dsp
from .errors import (
    MalformedContainer,
    TooShort,
    UnsupportedChannelCount,
    UnsupportedEncoding,
    ZeroLengthAudio,
)

CANONICAL_RATE = 48_000
CLIP_SECONDS = 3
CLIP_SAMPLES = CANONICAL_RATE * CLIP_SECONDS  # 144,000

_FMT_PCM = 1
_FMT_FLOAT = 3
_FMT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class AudioBuffer:
    """Decoded audio: float32 samples in [-1, 1] plus the source rate.

    Mono audio is shape (n,), stereo is (n, 2) frame-major.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.ndim not in (1, 2):
            raise ValueError(f"samples must be 1D or 2D, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")

    @property
    def channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    @property
    def n_frames(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return self.n_frames / self.sample_rate


@dataclass(frozen=True)
class Clip:
    """One canonical 3-second mono segment of a recording.

    (source_id, chunk_index) identifies the clip within a corpus; all
    clips of one source share the source's split assignment.
    """

    samples: np.ndarray = field(repr=False)
    source_id: str
    chunk_index: int
    split: str | None = None

    def __post_init__(self) -> None:
        if self.samples.shape != (CLIP_SAMPLES,):
            raise ValueError(
                f"clip must hold exactly {CLIP_SAMPLES} samples, got {self.samples.shape}")
        if self.split not in (None, "train", "validation", "test"):
            raise ValueError(f"unknown split {self.split!r}")

    def with_split(self, split: str) -> "Clip":
        return replace(self, split=split)


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise MalformedContainer(f"truncated while reading {what}")
    return data


def load_wav(path) -> AudioBuffer:
    """Decode a RIFF/WAVE file into an AudioBuffer.

    Accepts 16-bit PCM and 32-bit IEEE float, 1 or 2 channels.  16-bit
    samples are scaled by 1/32768 so the integer range maps into [-1, 1].
    """
    with open(path, "rb") as fh:
        header = _read_exact(fh, 12, "RIFF header")
        if header[:4] != b"RIFF" or header[8:12] != b"WAVE":
            raise MalformedContainer(f"{path}: not a RIFF/WAVE file")

        fmt = None
        data = None
        while True:
            chunk_head = fh.read(8)
            if len(chunk_head) == 0:
                break
            if len(chunk_head) != 8:
                raise MalformedContainer(f"{path}: truncated chunk header")
            cid, size = struct.unpack("<4sI", chunk_head)
            if cid == b"fmt ":
                fmt = _read_exact(fh, size, "fmt chunk")
            elif cid == b"data":
                data = _read_exact(fh, size, "data chunk")
            else:
                fh.seek(size + (size & 1), 1)
                continue
            if size & 1:
                fh.seek(1, 1)

    if fmt is None or len(fmt) < 16:
        raise MalformedContainer(f"{path}: missing fmt chunk")
    if data is None:
        raise MalformedContainer(f"{path}: missing data chunk")

    tag, channels, sample_rate, _, _, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == _FMT_EXTENSIBLE and len(fmt) >= 26:
        tag = struct.unpack("<H", fmt[24:26])[0]

    if channels not in (1, 2):
        raise UnsupportedChannelCount(f"{path}: {channels} channels")
    if sample_rate <= 0:
        raise MalformedContainer(f"{path}: sample rate {sample_rate}")

    if tag == _FMT_PCM and bits == 16:
        raw = np.frombuffer(data, dtype="<i2")
        samples = raw.astype(np.float32) / 32768.0
    elif tag == _FMT_FLOAT and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float32)
    else:
        raise UnsupportedEncoding(
            f"{path}: format tag {tag} / {bits}-bit not supported (PCM16 or float32 only)")

    if samples.size == 0:
        raise ZeroLengthAudio(f"{path}: no samples")
    if samples.size % channels:
        raise MalformedContainer(f"{path}: sample count not divisible by channel count")

    if channels == 2:
        samples = samples.reshape(-1, 2)
    if not np.all(np.isfinite(samples)):
        raise MalformedContainer(f"{path}: non-finite sample values")
    return AudioBuffer(samples=np.clip(samples, -1.0, 1.0), sample_rate=sample_rate)


def write_wav(path, buffer: AudioBuffer, encoding: str = "float32") -> None:
    """Write an AudioBuffer as WAV ('float32' or 'pcm16')."""
    samples = np.atleast_2d(buffer.samples.T).T  # (n, channels)
    n, channels = samples.shape
    if encoding == "float32":
        payload = samples.astype("<f4").tobytes()
        tag, bits = _FMT_FLOAT, 32
    elif encoding == "pcm16":
        scaled = np.clip(np.round(samples * 32768.0), -32768, 32767)
        payload = scaled.astype("<i2").tobytes()
        tag, bits = _FMT_PCM, 16
    else:
        raise ValueError(f"unknown encoding {encoding!r}")

    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, buffer.sample_rate,
                      buffer.sample_rate * block, block, bits)
    with open(path, "wb") as fh:
        fh.write(b"RIFF")
        fh.write(struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(payload)))
        fh.write(b"WAVE")
        fh.write(b"fmt " + struct.pack("<I", len(fmt)) + fmt)
        fh.write(b"data" + struct.pack("<I", len(payload)) + payload)


def to_canonical(buffer: AudioBuffer) -> AudioBuffer:
    """Reduce to mono and resample to 48 kHz; idempotent.

    Stereo frames are averaged as (L+R)/2.  Rate conversion uses the
    pinned windowed-sinc interpolator; duration is preserved within one
    sample period.
    """
    if buffer.channels > 2:
        raise UnsupportedChannelCount(f"{buffer.channels} channels")
    samples = buffer.samples
    if buffer.channels == 2:
        samples = samples.mean(axis=1)
    if buffer.sample_rate != CANONICAL_RATE:
        samples = dsp.resample(samples, buffer.sample_rate, CANONICAL_RATE)
        samples = np.clip(samples, -1.0, 1.0)
    return AudioBuffer(samples=samples.astype(np.float32), sample_rate=CANONICAL_RATE)


def chunk(buffer: AudioBuffer, source_id: str = "", split: str | None = None) -> list[Clip]:
    """Split a canonical buffer into consecutive 3-second clips.

    The trailing remainder shorter than one clip is discarded; padding
    it with silence would skew the augmentation SNR arithmetic.
    """
    if buffer.channels != 1 or buffer.sample_rate != CANONICAL_RATE:
        raise ValueError("chunk expects a canonical (mono, 48 kHz) buffer")
    n_clips = buffer.n_frames // CLIP_SAMPLES
    if n_clips == 0:
        raise TooShort(
            f"{buffer.n_frames} samples < one clip ({CLIP_SAMPLES}); no clips produced")
    return [
        Clip(samples=buffer.samples[i * CLIP_SAMPLES:(i + 1) * CLIP_SAMPLES].copy(),
             source_id=source_id, chunk_index=i, split=split)
        for i in range(n_clips)
    ]


def load_clips(path, source_id: str = "", split: str | None = None) -> list[Clip]:
    """Decode, canonicalize, and chunk a WAV file in one step."""
    return chunk(to_canonical(load_wav(path)), source_id=source_id, split=split)
