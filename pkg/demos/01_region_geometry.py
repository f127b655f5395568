"""
Adaptive muscle regions on a synthetic face
===========================================

Region centers come from a rule table: each AU lists one or two landmark
formulas plus a scale. The attention map of a region is a truncated
Gaussian around its centers. This script draws both for one synthetic
face and writes an overlay image.
"""

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from algrnet import geometry
from algrnet.config import SynthConfig
from algrnet.synth import synth_generate

out = Path("demo_out")
out.mkdir(exist_ok=True)

# One synthetic face with its 49 landmarks (pixel units).
sample = synth_generate(SynthConfig(subjects=1, samples_per_subject=1, image_size=176))[0]
table = geometry.load_rule_table("bp4d")
print(table.to_text())

# Centers for every AU, then the union of all attention maps at image resolution.
centers = geometry.compute_centers(torch.as_tensor(sample.landmarks), table, size=(176, 176))
scales = torch.tensor(table.default_scales, dtype=torch.float64)
att = geometry.attention_maps(centers, scales, 176, 176)
for name, c, a in zip(table.names, centers.numpy(), att):
    print(f"{name:6s} centers {np.round(c, 1).tolist()}  support {int((a > 0).sum())} px")

union = att.max(0).values.numpy()
rgb = np.stack([sample.image] * 3, -1).astype(float)
rgb[..., 0] = np.clip(rgb[..., 0] + 150 * union, 0, 255)
Image.fromarray(rgb.astype(np.uint8)).save(out / "regions.png")
print("overlay written to", out / "regions.png")

# Palsy mode: 12 single-point centers, mirrored about the nose line.
palsy = geometry.load_rule_table("palsy")
pc = geometry.compute_centers(torch.as_tensor(sample.landmarks), palsy)[:, 0]
for name, (x, y) in zip(palsy.names, pc.numpy()):
    print(f"{name:12s} ({x:6.1f}, {y:6.1f})")
