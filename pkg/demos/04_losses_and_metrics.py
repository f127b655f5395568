"""
Losses and metrics
==================

The AU objective is weighted cross-entropy plus a Dice term, applied to
the per-branch and the integrated classifiers, plus the alignment loss.
Evaluation uses frame-level F1 and the mean landmark error.
"""

import numpy as np
import torch

from algrnet import losses, metrics
from algrnet.data import balance_weights

labels = torch.tensor([[1.0, 0, 1], [0, 0, 1], [1, 1, 1], [0, 0, 0]])
w = torch.as_tensor(balance_weights(labels.numpy()), dtype=torch.float32)
print("balance weights", w.tolist())

good = labels * 0.9 + 0.05
bad = torch.full_like(labels, 0.5)
for name, p in (("good", good), ("uninformative", bad)):
    rec = losses.loss_rec(labels, p, w).mean()
    dice = losses.loss_dice(labels, p, w).mean()
    print(f"{name:14s} rec {rec:.4f} dice {dice:.4f}")

lm = torch.randn(4, 49, 2)
align = losses.loss_align(lm + 0.5, lm, torch.full((4,), 10.0))
print("alignment loss for a 0.5 px shift at d_o = 10:", align.mean().item())

probs = np.array([[0.9, 0.2, 0.7], [0.4, 0.1, 0.8], [0.6, 0.7, 0.9], [0.3, 0.2, 0.1]])
per, avg = metrics.f1_frame(probs, labels.numpy())
print(metrics.format_table({"example": per}, ["AU1", "AU2", "AU4"], title="F1-frame"))
