"""Classifiers on top of the refined branch features."""

import torch
from torch import nn
import torch.nn.functional as F


class BranchClassifier(nn.Module):
    """Per-branch GAP -> FC -> sigmoid. Branch k only sees R[:, k]."""

    def __init__(self, num_branches, channels):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(num_branches, channels))
        self.bias = nn.Parameter(torch.zeros(num_branches))
        nn.init.uniform_(self.weight, -channels ** -0.5, channels ** -0.5)

    def forward(self, R):
        pooled = R.mean(dim=(-2, -1))                    # (B, n, C)
        return torch.sigmoid((pooled * self.weight).sum(-1) + self.bias)


class IntegratedClassifier(nn.Module):
    """Pooled features of all branches plus the alignment feature -> two FC layers.

    ``kind="au"`` gives independent sigmoids, ``kind="palsy"`` a softmax.
    """

    def __init__(self, num_branches, channels, align_dim, num_outputs, hidden=256, kind="au"):
        super().__init__()
        self.kind = kind
        self.fc1 = nn.Linear(num_branches * channels + align_dim, hidden)
        self.fc2 = nn.Linear(hidden, num_outputs)

    def logits(self, R, a):
        pooled = R.mean(dim=(-2, -1)).flatten(1)
        return self.fc2(F.relu(self.fc1(torch.cat([pooled, a], dim=1))))

    def forward(self, R, a):
        z = self.logits(R, a)
        return torch.sigmoid(z) if self.kind == "au" else torch.softmax(z, dim=-1)


def final_probs(local, integrated):
    return (local + integrated) / 2
