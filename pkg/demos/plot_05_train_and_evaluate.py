"""
Training and scoring the classifier
===================================

A reduced version of the default run: fewer subjects, a shorter
recording and a capped number of epochs, so it finishes in under a minute.
"""

from eareeg import pipeline as pl

cfg = pl.config_from_dict({
    "seed": 0,
    "synth": {"n_subjects": 4, "duration_s": 121.0},
    "model": {"max_epochs": 25},
})
result = pl.run_pipeline(cfg, log=print)
print()
print(result.report.render())
print("best epoch", result.history.best_epoch, "split", result.data.split_id)
