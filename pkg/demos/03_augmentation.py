"""Walk through the stochastic augmentation recipe.

Each of the four augmentation types fires independently with p = 0.5
(with a re-roll if none fire), parameters are drawn uniformly and nudged
away from the identity, so no augmented clip ever equals its source.
The training set is built exclusively from such augmented copies.
"""

import numpy as np

from enginediag import audio, augment, dsp, synth

buf = synth.synth_engine(
    synth.EngineSpec(fuel="gasoline", config="inline", cylinders=4,
                     aspiration="normal", status="normal", rpm=1500.0),
    duration=3.0, seed=3)
clip = audio.chunk(buf, source_id="demo")[0]


def dominant_hz(samples):
    mags = np.abs(np.fft.rfft(samples.astype(np.float64)))
    return np.argmax(mags) / 3.0


print("drawn specs (volume dB / pitch semitones / speed factor / noise ratio):")
for seed in range(6):
    spec = augment.draw_spec(seed)
    flags = "".join(name[0].upper() if on else "-"
                    for name, on in zip(augment.AUGMENT_ORDER, spec.active_mask))
    print(f"  seed {seed}: [{flags}]  "
          f"{spec.volume_gain:+.4f} dB  {spec.pitch_shift:+.4f} st  "
          f"x{spec.speed_factor:.4f}  {spec.noise_ratio:.3f}")

print("\nindividual operations on a 50 Hz-firing clip:")
louder = augment.change_volume(clip, 5.0)
print(f"  volume +5 dB:  rms {dsp.rms(clip.samples):.4f} -> "
      f"{dsp.rms(louder.samples):.4f}")

shifted = augment.pitch_shift(clip, 0.25)
print(f"  pitch +0.25 semitones: dominant {dominant_hz(clip.samples):.1f} Hz -> "
      f"{dominant_hz(shifted.samples):.1f} Hz")

faster = augment.change_speed(clip, 1.08)
print(f"  speed x1.08:   dominant {dominant_hz(clip.samples):.1f} Hz -> "
      f"{dominant_hz(faster.samples):.1f} Hz")

noisy = augment.add_noise(clip, 0.2, rng=0)
delta = noisy.samples.astype(np.float64) - clip.samples
print(f"  noise ratio 0.2: measured {dsp.rms(delta) / dsp.rms(clip.samples):.3f}")

pairs = augment.build_train_set([clip], k=8, seed=1)
print(f"\nbuild_train_set: {len(pairs)} augmented training clips from 1 source")
hashes = {p[0].samples.tobytes() for p in pairs}
print(f"all distinct from each other and the source: "
      f"{len(hashes) == len(pairs) and clip.samples.tobytes() not in hashes}")
