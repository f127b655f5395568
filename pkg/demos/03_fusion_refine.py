"""
Gated local/global fusion and refinement
========================================

Each branch blends its relational feature with a shared global feature.
The blend weight alpha is a sigmoid of two 1x1 projections; both blended
terms are L2-normalised over channels at every pixel. A three-block
refiner then halves the map three times.
"""

import torch

from algrnet.fusion import GatedFusion, Refiner, pad_to_multiple

torch.manual_seed(0)
n, C, S = 4, 16, 44
s = torch.randn(1, n, C, S, S)
g = torch.randn(1, C, S, S)

fusion = GatedFusion(n, C, C, out_channels=16)
r_hat, alpha = fusion(s, g, return_alpha=True)
print("fused", tuple(r_hat.shape), "alpha range", float(alpha.min()), float(alpha.max()))
print("per-pixel norm of fused features <= 1:", bool((r_hat.norm(dim=2) <= 1 + 1e-6).all()))

# Saturate alpha to see the global term alone: unit norm everywhere.
with torch.no_grad():
    fusion.gate_global.conv.bias.fill_(40.0)
print("alpha -> 1 gives unit norm:", torch.allclose(fusion(s, g).norm(dim=2), torch.ones(1, n, S, S)))

padded = pad_to_multiple(r_hat, 8)
refined = Refiner(n, 16, 16)(padded)
print(f"{S}x{S} -> padded {tuple(padded.shape[-2:])} -> refined {tuple(refined.shape[-2:])}")
