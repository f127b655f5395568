"""Gated local/global fusion and the per-branch refining network.

Every branch has its own parameters. Branch stacks (B, n, C, H, W) are
folded to (B, n*C, H, W) and processed with grouped convolutions, which is
the same as n independent convolutions.
"""

import torch
from torch import nn
import torch.nn.functional as F

from .errors import ConfigError, InputError

EPS = 1e-8


def l2_normalize(x, dim, eps=EPS):
    return x / (torch.linalg.vector_norm(x, dim=dim, keepdim=True) + eps)


class BranchConv(nn.Module):
    """n independent convolutions applied to a (B, n, C, H, W) stack."""

    def __init__(self, num_branches, cin, cout, kernel_size=1):
        super().__init__()
        self.n, self.cout = num_branches, cout
        self.conv = nn.Conv2d(num_branches * cin, num_branches * cout, kernel_size,
                              padding=kernel_size // 2, groups=num_branches)

    def forward(self, x):
        B, n, _, H, W = x.shape
        y = self.conv(x.reshape(B, n * x.shape[2], H, W))
        return y.view(B, n, self.cout, *y.shape[-2:])


class GlobalToBranches(nn.Module):
    """1x1 projection of the shared global feature with per-branch weights."""

    def __init__(self, num_branches, cin, cout):
        super().__init__()
        self.n, self.cout = num_branches, cout
        self.conv = nn.Conv2d(cin, num_branches * cout, 1)

    def forward(self, g):
        y = self.conv(g)
        return y.view(g.shape[0], self.n, self.cout, *g.shape[-2:])


class GatedFusion(nn.Module):
    """alpha = sigmoid(C'_g G + C'_l s); r = alpha*|C_g G| + (1-alpha)*|C_l s|,
    with |.| the channel-wise L2 normalization at each location."""

    def __init__(self, num_branches, local_channels, global_channels, out_channels=64):
        super().__init__()
        self.gate_global = GlobalToBranches(num_branches, global_channels, out_channels)
        self.gate_local = BranchConv(num_branches, local_channels, out_channels)
        self.proj_global = GlobalToBranches(num_branches, global_channels, out_channels)
        self.proj_local = BranchConv(num_branches, local_channels, out_channels)

    def forward(self, s, g, return_alpha=False):
        if s.shape[-2:] != g.shape[-2:] or s.shape[0] != g.shape[0]:
            raise InputError(
                f"branch features {tuple(s.shape)} and global feature "
                f"{tuple(g.shape)} are not spatially aligned")
        alpha = torch.sigmoid(self.gate_global(g) + self.gate_local(s))
        pg = l2_normalize(self.proj_global(g), dim=2)
        pl = l2_normalize(self.proj_local(s), dim=2)
        out = alpha * pg + (1 - alpha) * pl
        return (out, alpha) if return_alpha else out


def pad_to_multiple(x, multiple=8):
    """Zero-pad the last two dims (split evenly, extra on the far side)."""
    H, W = x.shape[-2:]
    ph, pw = (-H) % multiple, (-W) % multiple
    if not ph and not pw:
        return x
    lead = x.shape[:-3]
    y = F.pad(x.reshape(-1, *x.shape[-3:]), (pw // 2, pw - pw // 2, ph // 2, ph - ph // 2))
    return y.view(*lead, *y.shape[-3:])


class Refiner(nn.Module):
    """Three blocks of (3x3 conv, 3x3 conv, 2x2 max-pool), per branch."""

    def __init__(self, num_branches, in_channels, out_channels=64, blocks=3):
        super().__init__()
        self.factor = 2 ** blocks
        layers = []
        cin = in_channels
        for _ in range(blocks):
            layers.append(nn.ModuleList([BranchConv(num_branches, cin, out_channels, 3),
                                         BranchConv(num_branches, out_channels, out_channels, 3)]))
            cin = out_channels
        self.blocks = nn.ModuleList(layers)

    def forward(self, x):
        H, W = x.shape[-2:]
        if H % self.factor or W % self.factor:
            raise ConfigError(f"refiner input {H}x{W} is not divisible by {self.factor}")
        for c1, c2 in self.blocks:
            x = F.relu(c2(F.relu(c1(x))))
            B, n = x.shape[:2]
            x = F.max_pool2d(x.flatten(0, 1), 2)
            x = x.view(B, n, *x.shape[1:])
        return x
