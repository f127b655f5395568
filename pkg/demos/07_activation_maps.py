"""
Per-branch activation maps
==========================

After a short training run, the channel mean of each branch's fused
feature is upsampled to the input size and saved as an 8-bit image. The
script also reports whether each map's peak falls inside its region.
"""

from pathlib import Path

import torch

from algrnet.config import load_config
from algrnet.export import activation_maps, export_maps, peak_in_region
from algrnet.synth import synth_generate
from algrnet.training import make_dataset, train

cfg = load_config(Path(__file__).parent.parent / "configs" / "desk_au.ini")
samples = synth_generate(cfg.synth)
model = train(cfg, samples, save=False, echo=False)["model"]

dataset = make_dataset(cfg, samples)
paths = export_maps(model, dataset, "demo_out/maps", indices=[0, 1])
print(f"wrote {len(paths)} maps, e.g. {paths[0]}")

batch = next(iter(dataset.eval_batches(16)))
with torch.no_grad():
    attention = model(batch["image"]).attention
hits = peak_in_region(activation_maps(model, batch["image"]), attention)
print(f"map peaks inside their region support: {hits.sum()}/{hits.size}")
