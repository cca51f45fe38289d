"""Extract all five feature types from one clip and inspect their shapes.

A canonical 3-second clip (144,000 samples at 48 kHz) produces fixed
dimensionalities; fusion flattens and concatenates everything into one
long vector.  The bandwidth probe at the end shows how frequency-
attenuated (e.g. transcoded) audio is detected.
"""

import numpy as np

from enginediag import audio, features, synth

buf = synth.synth_engine(
    synth.EngineSpec(fuel="diesel", config="v", cylinders=6,
                     aspiration="turbo", status="normal", rpm=1800.0),
    duration=3.0, seed=11)
clip = audio.chunk(buf, source_id="demo")[0]

print("feature shapes for one canonical clip:")
total = 0
for kind in ("waveform", "fft", "mfcc", "spectrogram", "wavelets"):
    tensor = features.extract(clip, kind)
    total += tensor.size
    print(f"  {kind:<12} {tensor.shape[0]:>5} x {tensor.shape[1]:<7} "
          f"({tensor.size:,} values)")

fused = features.extract(clip, "fused")
print(f"  {'fused':<12} {fused.shape[0]:>5} x {fused.shape[1]:<7} "
      f"(= {total:,} values concatenated)")

fft = features.fft_feature(clip).data[0]
print(f"\nstrongest 1 Hz band below 300 Hz: "
      f"({np.argmax(fft[:300])}, {np.argmax(fft[:300]) + 1}] Hz "
      f"(firing frequency is {1800 / 60 * 3:.0f} Hz)")

print(f"\nbandwidth probe on the raw clip: "
      f"{features.bandwidth_probe(clip):.0f} Hz")

# Simulate platform transcoding that discards everything above 16 kHz.
spectrum = np.fft.rfft(clip.samples.astype(np.float64))
freqs = np.fft.rfftfreq(len(clip.samples), 1 / audio.CANONICAL_RATE)
spectrum[freqs > 16_000] = 0.0
attenuated = np.fft.irfft(spectrum, n=len(clip.samples)).astype(np.float32)
cutoff = features.bandwidth_probe(attenuated)
print(f"after a 16 kHz brick-wall (transcoded audio): {cutoff:.0f} Hz")
