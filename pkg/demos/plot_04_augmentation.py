"""
Growing the training set
========================

Noise and temporal shifts act on raw segments, MixUp on feature vectors.
Mixed vectors carry soft labels.
"""

import numpy as np

from eareeg.augment import AugmentConfig, augment_training_set, class_counts, mixup
from eareeg.dataio import default_cohort, generate_synthetic_subject
from eareeg.features import extract_features
from eareeg.preprocess import filter_recording, segment_recording

recs = [filter_recording(generate_synthetic_subject(spec, 21.0, 1000.0, recording_id=i))
        for i, spec in enumerate(default_cohort(3))]
parents = {r.recording_id: r for r in recs}
segments = [s for r in recs for s in segment_recording(r)]
print(len(segments), "training segments")

a, b = extract_features(segments[0], n_classes=3), extract_features(segments[-1], n_classes=3)
print("MixUp label at lambda 0.3:", mixup(a, b, lam=0.3).soft_label)

out = augment_training_set(segments, parents, AugmentConfig(rng_seed=1), n_classes=3)
print(len(out), "vectors after augmentation, by argmax class:", dict(class_counts(out)))
soft = sum(not f.is_hard for f in out)
print(soft, "of them have soft labels")
print("label rows sum to one:", np.allclose([f.soft_label.sum() for f in out], 1.0))
