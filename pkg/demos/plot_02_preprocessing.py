"""
Filtering and segmentation
==========================

A zero-phase 0.5-100 Hz band-pass and a 50 Hz notch, then 2 s windows
with 50% overlap.
"""

import numpy as np

from eareeg.dataio import default_cohort, generate_synthetic_subject
from eareeg.preprocess import BANDPASS, NOTCH, apply_filter, preprocess_pipeline

fs = 1000.0
t = np.arange(20_000) / fs

# mains hum at 50 Hz is removed, a 10 Hz rhythm passes
for f in (10.0, 50.0, 200.0):
    x = np.sin(2 * np.pi * f * t)
    y = apply_filter(apply_filter(x, BANDPASS, fs), NOTCH, fs)
    gain = np.sqrt(np.mean(y[2000:-2000] ** 2) / np.mean(x[2000:-2000] ** 2))
    print(f"{f:6.1f} Hz  gain {gain:.4f}  ({20 * np.log10(gain + 1e-300):7.1f} dB)")

rec = generate_synthetic_subject(default_cohort(1)[0], duration_s=60.0, fs=fs)
segments = preprocess_pipeline(rec)
print(len(segments), "segments of shape", segments[0].channels.shape)
print("offsets:", [s.source_offset for s in segments[:4]], "...")
