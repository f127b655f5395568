"""Synthetic face-like images with known landmarks, AU labels and palsy grades.

Each subject gets a landmark template (face size, position and small
per-point variation); frames add jitter. The canvas is a gray face
ellipse with dark dots at the landmarks. In AU mode each active unit adds
a bright truncated Gaussian blob at its rule-table centers; in palsy mode
every region gets a blob and the blobs on one half of the face are dimmed
according to the grade.
"""

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import geometry
from .config import SynthConfig
from .data import FaceSample, write_manifest

# 49-point layout on a unit face box: brows 0-9, nose 10-18, eyes 19-30,
# outer mouth 31-42, inner mouth 43-48. Mirror-symmetric about x = 0.5.
TEMPLATE = np.array([
    (0.20, 0.31), (0.26, 0.28), (0.32, 0.27), (0.38, 0.28), (0.44, 0.30),
    (0.56, 0.30), (0.62, 0.28), (0.68, 0.27), (0.74, 0.28), (0.80, 0.31),
    (0.50, 0.42), (0.50, 0.47), (0.50, 0.52), (0.50, 0.57),
    (0.43, 0.62), (0.465, 0.635), (0.50, 0.645), (0.535, 0.635), (0.57, 0.62),
    (0.25, 0.40), (0.30, 0.375), (0.36, 0.375), (0.41, 0.40), (0.36, 0.42), (0.30, 0.42),
    (0.59, 0.40), (0.64, 0.375), (0.70, 0.375), (0.75, 0.40), (0.70, 0.42), (0.64, 0.42),
    (0.36, 0.75), (0.40, 0.72), (0.45, 0.70), (0.50, 0.71), (0.55, 0.70), (0.60, 0.72),
    (0.64, 0.75), (0.60, 0.79), (0.55, 0.81), (0.50, 0.815), (0.45, 0.81), (0.40, 0.79),
    (0.40, 0.75), (0.50, 0.74), (0.60, 0.75), (0.55, 0.765), (0.50, 0.77), (0.45, 0.765),
])
MIDLINE = (10, 11, 12, 13, 16)

BLOB_SIGMA = 0.3   # blob sigma = BLOB_SIGMA * region scale * image size
GRADE_DIMMING = 0.25


def subject_landmarks(rng, size, symmetric=False):
    face = size * rng.uniform(0.62, 0.72)
    center = size / 2 + rng.uniform(-0.03, 0.03, 2) * size
    pts = TEMPLATE.copy()
    if not symmetric:
        pts = pts + rng.normal(0, 0.006, pts.shape)
    return center + (pts - 0.5) * face


def frame_landmarks(rng, base, size):
    shift = rng.normal(0, 0.01 * size, 2)
    return base + shift + rng.normal(0, 0.003 * size, base.shape)


def region_centers(landmarks, table):
    return geometry.compute_centers(torch.as_tensor(landmarks), table).numpy()


def _blob(H, W, centers, sigma):
    """Truncated Gaussian over the union of the given centers (max-combined)."""
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    out = np.zeros((H, W))
    for cx, cy in centers:
        d2 = (xs - cx) ** 2 + (ys - cy) ** 2
        g = np.exp(-d2 / (2 * sigma ** 2))
        g[d2 > (geometry.TRUNCATE_SIGMAS * sigma) ** 2] = 0
        out = np.maximum(out, g)
    return out


def blob_sigma(table, branch, size):
    return BLOB_SIGMA * table.rules[branch].scale * size


def render(landmarks, table, amplitudes, size, noise_seed, noise=4.0):
    """Draw one canvas. ``amplitudes[b]`` is the blob brightness of branch b."""
    H = W = size
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    img = np.full((H, W), 40.0)
    lo, hi = landmarks.min(0), landmarks.max(0)
    c = (lo + hi) / 2
    r = (hi - lo) / 2 * np.array([1.25, 1.35])
    img[((xs - c[0]) / r[0]) ** 2 + ((ys - c[1]) / r[1]) ** 2 <= 1] = 100.0
    dot = 0.012 * size
    for x, y in landmarks:
        img -= 40.0 * np.exp(-((xs - x) ** 2 + (ys - y) ** 2) / (2 * dot ** 2))
    centers = region_centers(landmarks, table)
    for b, amp in enumerate(amplitudes):
        if amp:
            img += amp * _blob(H, W, centers[b], blob_sigma(table, b, size))
    if noise:
        img += np.random.default_rng(noise_seed).normal(0, noise, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def branch_sides(landmarks, table):
    """-1 for branches whose centers lie left of the nose line, +1 right, 0 on it."""
    mid = landmarks[list(MIDLINE), 0].mean()
    cx = region_centers(landmarks, table)[:, :, 0].mean(axis=1)
    side = np.sign(np.round(cx - mid, 6))
    return side.astype(int)


def palsy_amplitudes(landmarks, table, level, grade, affected):
    """Blob brightness per branch: ``level`` everywhere, dimmed on the affected side."""
    amps = np.full(len(table), float(level))
    amps[branch_sides(landmarks, table) == affected] *= 1 - GRADE_DIMMING * grade
    return amps


def synth_generate(cfg: SynthConfig) -> list[FaceSample]:
    """Generate an in-memory dataset; images are uint8 arrays."""
    table = geometry.load_rule_table(cfg.rules)
    rng = np.random.default_rng(cfg.seed)
    n = len(table)
    samples = []
    grades = np.arange(cfg.subjects) % 4
    rng.shuffle(grades)
    for s in range(cfg.subjects):
        sid = f"S{s:03d}"
        base = subject_landmarks(rng, cfg.image_size)
        affected = rng.choice([-1, 1])
        grade = int(grades[s])
        for f in range(cfg.samples_per_subject):
            lm = frame_landmarks(rng, base, cfg.image_size)
            noise_seed = (cfg.seed, s, f)
            if cfg.mode == "au":
                labels = (rng.random(n) < cfg.au_rate).astype(np.int64)
                amps = cfg.blob_amplitude * labels
                img = render(lm, table, amps, cfg.image_size, noise_seed, cfg.noise)
                samples.append(FaceSample(img, sid, lm, labels=labels, mode="au"))
            else:
                hb = _hb_for_grade(grade, rng)
                level = cfg.blob_amplitude * rng.uniform(0.7, 1.0)
                amps = palsy_amplitudes(lm, table, level, grade, affected)
                img = render(lm, table, amps, cfg.image_size, noise_seed, cfg.noise)
                samples.append(FaceSample(img, sid, lm, hb=hb, mode="palsy"))
    return samples


def _hb_for_grade(grade, rng):
    choices = {0: [1], 1: [2], 2: [3, 4], 3: [5, 6]}[grade]
    return int(rng.choice(choices))


def write_dataset(samples, out_dir, label_names) -> Path:
    """Write 8-bit PNGs plus ``manifest.csv``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "images").mkdir(exist_ok=True)
    written = []
    for i, s in enumerate(samples):
        rel = f"images/{i:05d}.png"
        Image.fromarray(s.pixels()).save(out / rel)
        written.append(FaceSample(rel, s.subject_id, s.landmarks, s.labels, s.hb, s.mode))
    manifest = out / "manifest.csv"
    write_manifest(manifest, written, label_names)
    return manifest
