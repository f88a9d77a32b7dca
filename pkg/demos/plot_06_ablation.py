"""
Architecture ablation
=====================

Several hidden-layer layouts trained on one shared split and scored on the
same test set. The reference column holds the accuracies reported on the
original recordings, for comparison only.
"""

import dataclasses

from eareeg import pipeline as pl
from eareeg.evaluation import run_ablation

cfg = pl.config_from_dict({
    "seed": 0,
    "synth": {"n_subjects": 4, "duration_s": 81.0},
    "model": {"max_epochs": 15},
})
cleaned = pl.clean_recordings(pl.synthesize(cfg), cfg)
data = pl.prepare_data(cleaned, cfg)
configs = [dataclasses.replace(cfg.model, hidden_dims=arch, n_classes=4)
           for arch in [(128, 64, 32), (256, 128, 64, 32)]]
table = run_ablation(data, configs)
print(table.render())
