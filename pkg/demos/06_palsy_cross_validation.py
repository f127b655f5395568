"""
Palsy grading under subject-exclusive cross-validation
======================================================

Synthetic subjects get one of four grades; the blobs on one side of the
face are dimmed in proportion to the grade. Subjects are split into
three folds so no subject appears in both training and test data.
"""

from pathlib import Path

from algrnet.config import load_config
from algrnet.data import subject_exclusive_folds
from algrnet.synth import synth_generate
from algrnet.training import cross_validate

cfg = load_config(Path(__file__).parent.parent / "configs" / "desk_palsy.ini")
samples = synth_generate(cfg.synth)
plan = subject_exclusive_folds(samples, cfg.data.folds, cfg.train.seed)
for k, subjects in enumerate(plan.subjects):
    print(f"fold {k}: {len(plan.folds[k])} samples from subjects {subjects}")

summary, results = cross_validate(cfg, samples, save=False, echo=False)
for k, r in enumerate(results):
    print(f"fold {k}: accuracy {r['report']['accuracy']:.3f}")
    print(r["text"])
print(f"mean accuracy {summary['accuracy']:.3f}, mean grade F1 {summary['avg_f1']:.3f}")
