"""Per-branch activation maps as 8-bit heatmap images."""

from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image


@torch.no_grad()
def activation_maps(model, images):
    """Channel mean of each branch's fused feature, upsampled to the input size.

    Models built without the fusion stage fall back to the relational
    output. Returns (B, n, input, input) float maps.
    """
    model.eval()
    out = model(images)
    feats = out.fused if out.fused is not None else out.relation
    maps = feats.mean(dim=2)
    size = images.shape[-1]
    B, n = maps.shape[:2]
    up = F.interpolate(maps.reshape(B * n, 1, *maps.shape[-2:]), size=(size, size),
                       mode="bilinear", align_corners=False)
    return up.view(B, n, size, size)


def to_uint8(heat):
    """Min-max normalise one map to 0..255; a flat map becomes all zeros."""
    heat = np.asarray(heat, dtype=np.float64)
    lo, hi = heat.min(), heat.max()
    if hi - lo <= 0:
        return np.zeros(heat.shape, dtype=np.uint8)
    return np.rint(255 * (heat - lo) / (hi - lo)).astype(np.uint8)


def export_maps(model, dataset, out_dir, indices=None, batch_size=8):
    """Write ``sample{i}_b{k}_{name}.png`` for every branch of every sample.

    Samples are center-cropped like evaluation. Returns the written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sub = dataset.subset(indices) if indices is not None else dataset
    ids = list(indices) if indices is not None else list(range(len(dataset)))
    names = model.table.names
    written, cursor = [], 0
    for batch in sub.eval_batches(batch_size):
        maps = activation_maps(model, batch["image"]).numpy()
        for heat in maps:
            sample = ids[cursor]
            cursor += 1
            for k, m in enumerate(heat):
                path = out / f"sample{sample:04d}_b{k:02d}_{names[k]}.png"
                Image.fromarray(to_uint8(m)).save(path)
                written.append(path)
    return written


def peak_in_region(maps, attention):
    """Boolean (B, n): does each map's maximum fall inside its region's support?

    ``maps`` are input-resolution maps, ``attention`` the (B, n, S, S) region maps.
    """
    maps = torch.as_tensor(maps)
    B, n, size, _ = maps.shape
    S = attention.shape[-1]
    flat = maps.reshape(B, n, -1).argmax(-1)
    ys, xs = (flat // size) * S // size, (flat % size) * S // size
    picked = attention[torch.arange(B)[:, None], torch.arange(n)[None, :], ys, xs]
    return (picked > 0).numpy()
