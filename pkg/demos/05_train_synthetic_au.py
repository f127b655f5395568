"""
Training on synthetic AU data
=============================

Generates the 64-sample synthetic set and trains the desk-sized network
for 300 steps (about five minutes on one CPU core), then prints the
per-AU table. Set ABLATION to compare the reduced variants.
"""

import sys
from pathlib import Path

from algrnet.config import load_config
from algrnet.synth import synth_generate
from algrnet.training import train

ABLATION = sys.argv[1] if len(sys.argv) > 1 else ""

cfg = load_config(Path(__file__).parent.parent / "configs" / "desk_au.ini")
if ABLATION == "no-skip-bilstm":
    cfg.model.skip_bilstm = False
elif ABLATION == "no-fusion-refine":
    cfg.model.fusion_refine = False
elif ABLATION == "plain-bilstm":
    cfg.model.plain_bilstm = True
elif ABLATION == "fixed-scale":
    cfg.model.fixed_scale = 0.14

samples = synth_generate(cfg.synth)
result = train(cfg, samples, save=False, echo=False)
for h in result["history"][::10]:
    print(f"step {h['step']:4d}  loss {h['losses']['total']:.3f}  avg F1 {h['report']['avg_f1']:.3f}")
print(result["text"])
