"""Synthetic labeled engine audio for desk-scale experiments.

The signal model is deliberately simple plumbing, not physics: a
four-stroke firing-frequency impulse train plus a harmonic stack, with
label-conditional cues layered on top (diesel clatter band, turbo
whine, configuration-dependent cylinder patterns).  A misfire attenuates
one cylinder's combustion burst every engine cycle, which plants a
subharmonic spectral line at rpm/120 Hz whose position relative to the
firing frequency depends on the cylinder count - so attribute knowledge
genuinely helps misfire detection on this corpus.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np

from .audio import CANONICAL_RATE, AudioBuffer, write_wav
from .errors import InvalidSpec, IoFailure
from .labels import ASPIRATION, CONFIG, CYLINDERS, FUEL, STATUS

RPM_RANGE = (600.0, 3000.0)

_BURST_SECONDS = 0.05
_NOISE_FLOOR_DB = -40.0


@dataclass(frozen=True)
class EngineSpec:
    """Label combination plus operating point for one synthetic engine."""

    fuel: str
    config: str
    cylinders: int
    aspiration: str
    status: str
    rpm: float
    misfire_cylinder: int | None = None

    def __post_init__(self) -> None:
        if self.fuel not in FUEL or self.config not in CONFIG \
                or self.cylinders not in CYLINDERS \
                or self.aspiration not in ASPIRATION or self.status not in STATUS:
            raise InvalidSpec(f"label outside vocabulary: {self}")
        if not RPM_RANGE[0] <= self.rpm <= RPM_RANGE[1]:
            raise InvalidSpec(f"rpm {self.rpm} outside {RPM_RANGE}")
        # Two-cylinder flat/v engines are excluded: their bank or
        # opposition pattern repeats exactly once per engine cycle, which
        # would forge the misfire subharmonic on a healthy engine.
        if self.config == "flat" and (self.cylinders % 2 or self.cylinders < 4):
            raise InvalidSpec("flat configuration needs an even cylinder count >= 4")
        if self.config == "v" and self.cylinders < 4:
            raise InvalidSpec("v configuration needs at least 4 cylinders")
        if self.status == "misfire":
            if self.misfire_cylinder is None:
                raise InvalidSpec("misfire status needs misfire_cylinder")
            if not 0 <= self.misfire_cylinder < self.cylinders:
                raise InvalidSpec(
                    f"misfire_cylinder {self.misfire_cylinder} >= {self.cylinders}")
        elif self.misfire_cylinder is not None:
            raise InvalidSpec("misfire_cylinder given for a normal engine")

    @property
    def firing_frequency(self) -> float:
        """Combustion events per second for a four-stroke engine."""
        return self.rpm / 60.0 * self.cylinders / 2.0

    @property
    def misfire_frequency(self) -> float:
        """Engine-cycle rate: the subharmonic a misfire creates."""
        return self.rpm / 120.0


def _burst_template(sr: int) -> np.ndarray:
    """Deterministic combustion burst: low-frequency thump + damped body.

    The slow unipolar thump carries energy down to a few hertz, which is
    what makes a per-cylinder dropout visible as a subharmonic line.
    """
    t = np.arange(int(_BURST_SECONDS * sr)) / sr
    thump = 0.8 * np.exp(-t / 0.030)
    body = 0.5 * np.exp(-t / 0.008) * np.sin(2 * np.pi * 140.0 * t)
    # Half-millisecond attack: an instantaneous onset would put 1/f step
    # tails across the whole band and pollute the turbo whine region.
    attack = -np.expm1(-t / 0.0005)
    return (thump + body) * attack


def _band_noise(n: int, sr: int, f_lo: float, f_hi: float, rng) -> np.ndarray:
    """Unit-RMS white noise brick-walled to [f_lo, f_hi] Hz."""
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    spec[(freqs < f_lo) | (freqs > f_hi)] = 0.0
    noise = np.fft.irfft(spec, n=n)
    scale = np.sqrt(np.mean(noise * noise))
    return noise / scale if scale > 0 else noise


def synth_engine(spec: EngineSpec, duration: float = 3.0, seed: int = 0) -> AudioBuffer:
    """Render `duration` seconds of mono 48 kHz audio for one engine."""
    if duration < 3.0:
        raise InvalidSpec(f"duration {duration} < 3 s yields no clips")
    sr = CANONICAL_RATE
    n = int(round(duration * sr))
    rng = np.random.default_rng(seed)
    t = np.arange(n) / sr
    f_fire = spec.firing_frequency

    # Combustion bursts, one per firing event, cylinder pattern by config.
    burst = _burst_template(sr)
    pop = None
    if spec.status == "misfire":
        # Unburnt charge firing in the exhaust: a short mid-band pop at
        # the dead cylinder's slot.  Gives the misfire a timbre cue on
        # top of the subharmonic the attenuated thump creates.
        pop_t = np.arange(int(0.012 * sr)) / sr
        pop_noise = _band_noise(len(pop_t), sr, 300.0, 2500.0, rng)
        pop = 0.35 * pop_noise * np.exp(-pop_t / 0.004) * -np.expm1(-pop_t / 0.0003)
    signal = np.zeros(n + len(burst) + 8)
    clatter_env = np.zeros(n + len(burst) + 8)
    event = 0
    while True:
        # Sub-sample combustion-timing jitter: breaks the sample-rounding
        # lattice (which would otherwise add faint periodic low-frequency
        # lines) while keeping the phase-modulation pedestal of the
        # firing-order lines below the broadband noise floor.
        jitter = rng.uniform(-1.5, 1.5)
        pos = int(round(event / f_fire * sr + jitter))
        if pos >= n:
            break
        pos = max(pos, 0)
        cyl = event % spec.cylinders
        if spec.config == "v":
            # Banks alternate in the firing order (event parity, not
            # cylinder index): for odd cylinder counts an index-based
            # pattern would repeat once per engine cycle and forge a
            # line at the misfire subharmonic.
            amp = 1.0 if event % 2 == 0 else 0.8
        elif spec.config == "flat":
            amp = 1.0 if cyl % 2 == 0 else -1.0
        else:
            amp = 1.0
        if spec.status == "misfire" and cyl == spec.misfire_cylinder:
            amp *= 0.1
        signal[pos:pos + len(burst)] += amp * burst
        clatter_env[pos:pos + len(burst)] += abs(amp) * np.exp(
            -np.arange(len(burst)) / (0.006 * sr))
        event += 1
    signal = signal[:n]
    clatter_env = clatter_env[:n]

    # Harmonic stack at multiples of the firing frequency, 1/k rolloff.
    # The fundamental is kept dominant over the burst-train lines so the
    # firing frequency is the strongest low-frequency spectral peak.
    n_harm = max(1, min(24, int(3000.0 / f_fire)))
    k = np.arange(1, n_harm + 1)
    phases = rng.uniform(0, 2 * np.pi, n_harm)
    signal += 0.9 * np.sum(
        np.sin(2 * np.pi * np.outer(k * f_fire, t) + phases[:, None]) / k[:, None],
        axis=0)

    if spec.fuel == "diesel":
        # Filter after envelope gating: gating would otherwise smear the
        # clatter band edges into the turbo whine band above 9 kHz.
        gated = clatter_env * _band_noise(n, sr, 2000.0, 8000.0, rng)
        spec_g = np.fft.rfft(gated)
        freqs_g = np.fft.rfftfreq(n, 1.0 / sr)
        spec_g[(freqs_g < 2000.0) | (freqs_g > 8000.0)] = 0.0
        signal += 0.5 * np.fft.irfft(spec_g, n=n)

    if spec.aspiration == "turbo":
        sweep = 12000.0 + 3000.0 * np.sin(2 * np.pi * 0.31 * t + rng.uniform(0, 2 * np.pi))
        signal += 0.09 * np.sin(2 * np.pi * np.cumsum(sweep) / sr)

    floor = 10.0 ** (_NOISE_FLOOR_DB / 20.0) * np.sqrt(np.mean(signal * signal))
    signal += floor * rng.standard_normal(n)

    signal *= 0.7 / np.max(np.abs(signal))
    return AudioBuffer(samples=signal.astype(np.float32), sample_rate=sr)


def band_energy(samples: np.ndarray, f_lo: float, f_hi: float,
                sr: int = CANONICAL_RATE) -> float:
    """Mean squared magnitude of the spectrum inside [f_lo, f_hi] Hz."""
    spec = np.abs(np.fft.rfft(np.asarray(samples, dtype=np.float64)))
    freqs = np.fft.rfftfreq(len(samples), 1.0 / sr)
    band = (freqs >= f_lo) & (freqs <= f_hi)
    return float(np.mean(spec[band] ** 2))


def subharmonic_ratio(samples: np.ndarray, rpm: float,
                      sr: int = CANONICAL_RATE) -> float:
    """Strength of the misfire line at rpm/120 Hz vs. its neighborhood.

    Returns the mean magnitude within +/-3 Hz of the expected line over a
    robust local baseline: the larger of the two per-side medians of
    (f-12, f+12) Hz excluding the core.  The core mean (not max) keeps
    the statistic near 1 on line-free noise, and the per-side baseline
    absorbs the skirt of nearby firing-order lines.
    """
    x = np.asarray(samples, dtype=np.float64)
    window = np.hanning(len(x))
    mag = np.abs(np.fft.rfft(x * window))
    freqs = np.fft.rfftfreq(len(x), 1.0 / sr)
    f_sub = rpm / 120.0
    core = (freqs >= f_sub - 3.0) & (freqs <= f_sub + 3.0)
    lower = (freqs > f_sub - 12.0) & (freqs < f_sub - 3.0)
    upper = (freqs > f_sub + 3.0) & (freqs < f_sub + 12.0)
    side_medians = [float(np.median(mag[side]))
                    for side in (lower, upper) if side.any()]
    baseline = max(side_medians)
    return float(mag[core].mean() / max(baseline, 1e-30))


def all_label_combos() -> list[tuple[str, str, int, str, str]]:
    """Every structurally valid (fuel, config, cylinders, aspiration, status)."""
    combos = []
    for fuel, config, cyl, asp, status in product(FUEL, CONFIG, CYLINDERS,
                                                  ASPIRATION, STATUS):
        if config == "flat" and (cyl % 2 or cyl < 4):
            continue
        if config == "v" and cyl < 4:
            continue
        combos.append((fuel, config, cyl, asp, status))
    return combos


def balanced_counts(total: int) -> dict[tuple[str, str, int, str, str], int]:
    """Spread `total` samples round-robin over all valid label combos.

    Combos are visited in a fixed shuffled order so that small totals
    still mix every label dimension instead of exhausting the slowest
    product axis first.
    """
    combos = all_label_combos()
    order = np.random.default_rng(0).permutation(len(combos))
    counts = {}
    for i in range(total):
        combo = combos[order[i % len(combos)]]
        counts[combo] = counts.get(combo, 0) + 1
    return counts


def synth_corpus(counts, seed: int, out_dir,
                 duration: float = 3.0, base_rpm: float = 1500.0,
                 source_prefix: str = "synth") -> Path:
    """Write a WAV corpus plus JSONL manifest; returns the manifest path.

    `counts` maps (fuel, config, cylinders, aspiration, status) tuples to
    sample counts.  RPM is jittered uniformly within +/-10% of base_rpm
    per sample; everything is deterministic in `seed`.  Distinct
    `source_prefix` values keep source ids unique when corpora generated
    in batches are merged.
    """
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        rows = []
        index = 0
        for combo in sorted(counts, key=str):
            fuel, config, cyl, asp, status = combo
            for _ in range(int(counts[combo])):
                rpm = base_rpm * rng.uniform(0.9, 1.1)
                misfire_cyl = int(rng.integers(cyl)) if status == "misfire" else None
                spec = EngineSpec(fuel=fuel, config=config, cylinders=cyl,
                                  aspiration=asp, status=status, rpm=rpm,
                                  misfire_cylinder=misfire_cyl)
                source_id = f"{source_prefix}{index:05d}"
                path = out_dir / f"{source_id}.wav"
                sample_seed = int(rng.integers(2 ** 63))
                write_wav(path, synth_engine(spec, duration, sample_seed))
                rows.append({
                    "file": path.name, "source_id": source_id,
                    "fuel": fuel, "config": config, "cylinders": cyl,
                    "aspiration": asp, "status": status,
                })
                index += 1
        manifest = out_dir / "manifest.jsonl"
        with open(manifest, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
    except OSError as exc:
        raise IoFailure(f"corpus write failed: {exc}") from exc
    return manifest
