"""
The 272-value feature vector
============================

Per channel: 20 low-frequency Welch PSD bins, 10 AR coefficients, the
three Hjorth parameters and the spectral entropy.
"""

import numpy as np

from eareeg.dataio import default_cohort, generate_synthetic_subject
from eareeg.features import extract_features, hjorth, welch_psd, yule_walker
from eareeg.preprocess import preprocess_pipeline

rec = generate_synthetic_subject(default_cohort(3)[2], duration_s=20.0, fs=1000.0)
seg = preprocess_pipeline(rec)[0]

x = seg.channels[0]
psd = welch_psd(x)
print(f"Welch grid: {psd.power.size} bins, {psd.freqs_hz[1]:.4f} Hz apart")
print("strongest of the first 20 bins at", psd.freqs_hz[np.argmax(psd.power[:20])], "Hz")

fit = yule_walker(x, 10)
print("AR(10):", np.round(fit.coeffs, 3))
print("Hjorth:", hjorth(x))

fv = extract_features(seg)
print("vector length", fv.values.size, "label", fv.soft_label)
# channel-major layout: 34 values per channel
np.set_printoptions(suppress=True, precision=3)
print("activity, mobility, complexity, entropy per channel:")
print(fv.values.reshape(8, 34)[:, -4:])
