"""Stochastic clip augmentation and augmented training-set construction.

Four augmentation types: volume (dB gain), pitch shift (semitones),
speed change (resampling factor), and additive white noise (RMS ratio).
Each is independently active with probability 0.5; active parameters are
drawn uniformly from their range and nudged away from the identity by a
small epsilon, and a draw that activates nothing is re-rolled to exactly
one type, so an augmented clip is never bit-identical to its source.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import dsp
from .audio import CLIP_SAMPLES, Clip
from .errors import SilentClip

VOLUME_RANGE = (-5.0, 5.0)       # dB
PITCH_RANGE = (-0.25, 0.25)      # semitones
SPEED_RANGE = (0.92, 1.08)       # playback factor
NOISE_RANGE = (0.05, 0.20)       # noise RMS / signal RMS
EPSILON_RANGE = (1e-6, 1e-5)

AUGMENT_ORDER = ("volume", "pitch", "speed", "noise")


@dataclass(frozen=True)
class AugmentationSpec:
    """One sampled augmentation recipe; `active_mask` follows AUGMENT_ORDER."""

    volume_gain: float
    pitch_shift: float
    speed_factor: float
    noise_ratio: float
    active_mask: tuple[bool, bool, bool, bool]
    seed: int

    def __post_init__(self) -> None:
        if not any(self.active_mask):
            raise ValueError("at least one augmentation must be active")


def _push_from_identity(value: float, identity: float, eps: float,
                        lo: float, hi: float) -> float:
    if value >= identity:
        value += eps
    else:
        value -= eps
    return float(min(max(value, lo), hi))


def draw_spec(rng_seed: int) -> AugmentationSpec:
    """Sample an AugmentationSpec from the seeded stream."""
    rng = np.random.default_rng(rng_seed)
    active = list(rng.random(4) < 0.5)
    if not any(active):
        active[int(rng.integers(4))] = True

    volume, pitch, speed = 0.0, 0.0, 1.0
    noise = NOISE_RANGE[0]
    if active[0]:
        volume = _push_from_identity(
            float(rng.uniform(*VOLUME_RANGE)), 0.0,
            float(rng.uniform(*EPSILON_RANGE)), *VOLUME_RANGE)
    if active[1]:
        pitch = _push_from_identity(
            float(rng.uniform(*PITCH_RANGE)), 0.0,
            float(rng.uniform(*EPSILON_RANGE)), *PITCH_RANGE)
    if active[2]:
        speed = _push_from_identity(
            float(rng.uniform(*SPEED_RANGE)), 1.0,
            float(rng.uniform(*EPSILON_RANGE)), *SPEED_RANGE)
    if active[3]:
        noise = float(rng.uniform(*NOISE_RANGE))

    return AugmentationSpec(
        volume_gain=volume, pitch_shift=pitch, speed_factor=speed,
        noise_ratio=noise, active_mask=tuple(active), seed=int(rng_seed))


def _with_samples(clip: Clip, samples: np.ndarray) -> Clip:
    return replace(clip, samples=np.clip(samples, -1.0, 1.0).astype(np.float32))


def change_volume(clip: Clip, gain: float) -> Clip:
    """Scale amplitude by 10^(gain/20) and hard-clip to [-1, 1]."""
    return _with_samples(clip, clip.samples.astype(np.float64) * 10.0 ** (gain / 20.0))


def pitch_shift(clip: Clip, semitones: float) -> Clip:
    """Scale spectral content by 2^(semitones/12), duration preserved.

    Phase-vocoder time stretch by 2^(-s/12) followed by resampling by
    2^(s/12); the Fourier resampler returns exactly the clip length.
    """
    if semitones == 0.0:
        return clip
    ratio = 2.0 ** (semitones / 12.0)
    stretched = dsp.time_stretch(clip.samples.astype(np.float64), 1.0 / ratio)
    return _with_samples(clip, dsp.resample_fft(stretched, CLIP_SAMPLES))


def change_speed(clip: Clip, factor: float) -> Clip:
    """Resample so playback runs `factor` times faster (pitch and tempo shift).

    A slowed clip (factor < 1) is trimmed back to the clip length; a
    sped-up clip is zero-padded at the tail.
    """
    if factor == 1.0:
        return clip
    n_out = int(round(CLIP_SAMPLES / factor))
    resampled = dsp.resample_fft(clip.samples.astype(np.float64), n_out)
    if len(resampled) >= CLIP_SAMPLES:
        resampled = resampled[:CLIP_SAMPLES]
    else:
        resampled = np.pad(resampled, (0, CLIP_SAMPLES - len(resampled)))
    return _with_samples(clip, resampled)


def add_noise(clip: Clip, ratio: float, rng=None) -> Clip:
    """Add white Gaussian noise with RMS = ratio * signal RMS."""
    signal_rms = dsp.rms(clip.samples)
    if signal_rms == 0.0:
        raise SilentClip("cannot scale noise against a silent clip")
    if rng is None or isinstance(rng, int):
        rng = np.random.default_rng(rng)
    noise = rng.standard_normal(len(clip.samples)) * (ratio * signal_rms)
    return _with_samples(clip, clip.samples.astype(np.float64) + noise)


def augment_clip(clip: Clip, spec: AugmentationSpec) -> Clip:
    """Apply the spec's active augmentations in volume->pitch->speed->noise order."""
    out = clip
    if spec.active_mask[0]:
        out = change_volume(out, spec.volume_gain)
    if spec.active_mask[1]:
        out = pitch_shift(out, spec.pitch_shift)
    if spec.active_mask[2]:
        out = change_speed(out, spec.speed_factor)
    if spec.active_mask[3]:
        out = add_noise(out, spec.noise_ratio, np.random.default_rng(spec.seed))
    return out


def derive_seed(seed: int, ordinal: int) -> int:
    """Stable per-output-clip seed, independent of generation order."""
    return int(np.random.SeedSequence((seed, ordinal)).generate_state(1, np.uint64)[0])


def build_train_set(validation_clips: list[Clip], k: int = 8,
                    seed: int = 0) -> list[tuple[Clip, tuple[str, int]]]:
    """Produce k augmented training clips per validation clip.

    Returns (augmented clip, source clip id) pairs; each output draws its
    own spec from a seed derived from the output ordinal, so results do
    not depend on scheduling.
    """
    out = []
    for i, clip in enumerate(validation_clips):
        for j in range(k):
            ordinal = i * k + j
            spec = draw_spec(derive_seed(seed, ordinal))
            augmented = augment_clip(clip, spec)
            augmented = replace(
                augmented, source_id=f"{clip.source_id}#aug{j}", split="train")
            out.append((augmented, (clip.source_id, clip.chunk_index)))
    return out
