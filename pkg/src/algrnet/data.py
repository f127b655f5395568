"""Samples, manifests, fold planning, class balancing and augmentation."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from PIL import Image

from .errors import InputError, ManifestError, MissingFileError

GRADE_NAMES = ("normal", "low", "medium", "high")


@dataclass
class FaceSample:
    image: object                      # path (str) or HxW / HxWx3 uint8 array
    subject_id: str
    landmarks: np.ndarray              # (m, 2) pixel units
    labels: Optional[np.ndarray] = None  # (n,) in {0, 1}
    hb: Optional[int] = None
    mode: str = "au"

    def __post_init__(self):
        if not self.subject_id:
            raise InputError("subject_id must be nonempty")
        self.landmarks = np.asarray(self.landmarks, dtype=np.float64)
        if not np.isfinite(self.landmarks).all():
            raise InputError("landmarks must be finite")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if not np.isin(self.labels, (0, 1)).all():
                raise InputError("AU labels must be 0 or 1")
        if self.hb is not None:
            palsy_grade_from_hb(self.hb)

    @property
    def grade(self) -> int:
        return palsy_grade_from_hb(self.hb)

    def pixels(self, root=None) -> np.ndarray:
        if isinstance(self.image, np.ndarray):
            return self.image
        path = Path(self.image)
        if root is not None and not path.is_absolute():
            path = Path(root) / path
        if not path.exists():
            raise MissingFileError(f"image not found: {path}")
        return np.asarray(Image.open(path))


def palsy_grade_from_hb(hb: int) -> int:
    """House-Brackmann 1..6 -> grade index (0 normal, 1 low, 2 medium, 3 high)."""
    if isinstance(hb, bool) or int(hb) != hb or not 1 <= hb <= 6:
        raise InputError(f"House-Brackmann score must be an integer in 1..6, got {hb!r}")
    return {1: 0, 2: 1, 3: 2, 4: 2, 5: 3, 6: 3}[int(hb)]


# -- manifest ---------------------------------------------------------------

def write_manifest(path, samples: list[FaceSample], label_names: list[str]):
    path = Path(path)
    if not samples:
        path.write_text("")
        return
    m = samples[0].landmarks.shape[0]
    mode = samples[0].mode
    header = ["image", "subject"]
    header += [f"lm{i}_{c}" for i in range(m) for c in "xy"]
    header += list(label_names) if mode == "au" else ["hb"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for s in samples:
            if not isinstance(s.image, (str, Path)):
                raise InputError("write images to disk before writing a manifest")
            row = [str(s.image), s.subject_id]
            row += [repr(float(v)) for v in s.landmarks.reshape(-1)]
            row += [str(int(v)) for v in s.labels] if mode == "au" else [str(s.hb)]
            w.writerow(row)


def _read_landmark_file(path, line):
    if not Path(path).exists():
        raise MissingFileError(f"landmark file not found: {path}")
    try:
        return np.loadtxt(path, ndmin=2)
    except ValueError as exc:
        raise ManifestError(f"bad landmark file {path}: {exc}", line) from None


def load_manifest(path, check_images=True) -> list[FaceSample]:
    """Parse a manifest CSV.

    Columns: image, subject, then either lm{i}_x/lm{i}_y pairs or a single
    ``landmarks`` column naming a whitespace-separated (m, 2) text file,
    then either AU label columns or one ``hb`` column. Relative paths
    resolve against the manifest directory.
    """
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"manifest not found: {path}")
    root = path.parent
    text = path.read_text()
    if not text.strip():
        return []
    reader = csv.reader(text.splitlines())
    header = next(reader)
    if header[:2] != ["image", "subject"]:
        raise ManifestError("header must start with image,subject", 1)
    if "landmarks" in header:
        lm_cols = [header.index("landmarks")]
    else:
        lm_cols = [i for i, h in enumerate(header) if h.startswith("lm")]
        if not lm_cols or len(lm_cols) % 2:
            raise ManifestError("expected lm{i}_x,lm{i}_y column pairs", 1)
    rest = [i for i in range(2, len(header)) if i not in lm_cols]
    mode = "palsy" if [header[i] for i in rest] == ["hb"] else "au"
    samples = []
    for lineno, row in enumerate(reader, 2):
        if not row:
            continue
        if len(row) != len(header):
            raise ManifestError(f"expected {len(header)} fields, got {len(row)}", lineno)
        try:
            if len(lm_cols) == 1:
                lm_path = Path(row[lm_cols[0]])
                landmarks = _read_landmark_file(lm_path if lm_path.is_absolute() else root / lm_path,
                                                lineno)
            else:
                landmarks = np.array([float(row[i]) for i in lm_cols]).reshape(-1, 2)
            values = [row[i].strip() for i in rest]
            if any(v == "" for v in values):
                raise ManifestError("missing label value", lineno)
            if mode == "au":
                labels = np.array([int(v) for v in values])
                sample = FaceSample(row[0], row[1], landmarks, labels=labels, mode="au")
            else:
                sample = FaceSample(row[0], row[1], landmarks, hb=int(values[0]), mode="palsy")
        except ManifestError:
            raise
        except (ValueError, InputError) as exc:
            raise ManifestError(str(exc), lineno) from None
        if check_images:
            image = Path(sample.image)
            if not (image if image.is_absolute() else root / image).exists():
                raise MissingFileError(f"line {lineno}: image not found: {sample.image}")
        samples.append(sample)
    return samples


def manifest_label_names(path) -> list[str]:
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), [])
    return [h for h in header[2:] if not h.startswith("lm") and h not in ("landmarks", "hb")]


# -- folds ------------------------------------------------------------------

@dataclass
class FoldPlan:
    folds: list[list[int]]                 # sample indices per fold
    subjects: list[list[str]] = field(default_factory=list)
    seed: int = 0

    @property
    def k(self):
        return len(self.folds)

    def test_indices(self, fold: int) -> list[int]:
        return list(self.folds[fold])

    def train_indices(self, fold: int) -> list[int]:
        return sorted(i for j, f in enumerate(self.folds) if j != fold for i in f)

    def to_json(self) -> str:
        return json.dumps({"k": self.k, "seed": self.seed, "folds": self.folds,
                           "subjects": self.subjects}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "FoldPlan":
        d = json.loads(text)
        return cls([list(map(int, f)) for f in d["folds"]], d.get("subjects", []),
                   d.get("seed", 0))

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "FoldPlan":
        path = Path(path)
        if not path.exists():
            raise MissingFileError(f"fold plan not found: {path}")
        return cls.from_json(path.read_text())


def subject_exclusive_folds(subjects, k: int = 3, seed: int = 0) -> FoldPlan:
    """Assign whole subjects to k folds, greedily balancing sample counts.

    ``subjects`` is a sequence of subject ids (one per sample) or of
    FaceSample. Subjects are visited largest first (ties in seeded random
    order) and each goes to the currently smallest fold.
    """
    ids = [s.subject_id if isinstance(s, FaceSample) else str(s) for s in subjects]
    by_subject: dict[str, list[int]] = {}
    for i, sid in enumerate(ids):
        by_subject.setdefault(sid, []).append(i)
    if len(by_subject) < k:
        raise InputError(f"need at least {k} subjects for {k} folds, got {len(by_subject)}")
    rng = np.random.default_rng(seed)
    order = sorted(by_subject)
    order = [order[i] for i in rng.permutation(len(order))]
    order.sort(key=lambda s: -len(by_subject[s]))  # stable: keeps shuffled tie order
    folds = [[] for _ in range(k)]
    fold_subjects = [[] for _ in range(k)]
    for sid in order:
        j = min(range(k), key=lambda f: (len(folds[f]), f))
        folds[j].extend(by_subject[sid])
        fold_subjects[j].append(sid)
    return FoldPlan([sorted(f) for f in folds], [sorted(s) for s in fold_subjects], seed)


# -- class balance ----------------------------------------------------------

def balance_weights(labels) -> np.ndarray:
    """Inverse occurrence-rate weights normalised to mean 1.

    ``labels`` is (N, n) binary for AUs, or (N, K) one-hot for grades.
    Rates are clamped to at least 1/N.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim != 2 or labels.shape[0] == 0:
        raise InputError("labels must be a nonempty (N, n) matrix")
    N, n = labels.shape
    rates = labels.mean(axis=0)
    absent = rates == 0
    if absent.any():
        warnings.warn(f"classes {np.flatnonzero(absent).tolist()} never occur; "
                      "clamping their rate to 1/N", RuntimeWarning, stacklevel=2)
    inv = 1.0 / np.maximum(rates, 1.0 / N)
    return n * inv / inv.sum()


# -- augmentation -----------------------------------------------------------

def crop_and_flip(image, landmarks, crop, top, left, flip, flip_perm=None):
    """Crop ``crop`` x ``crop`` at (top, left) and optionally mirror horizontally."""
    H, W = image.shape[:2]
    if crop > H or crop > W:
        raise InputError(f"image {H}x{W} is smaller than crop {crop}")
    out = image[top:top + crop, left:left + crop]
    lm = landmarks - np.array([left, top], dtype=np.float64)
    if flip:
        if flip_perm is None:
            raise InputError("flipping needs a landmark permutation table")
        out = out[:, ::-1]
        lm = lm[flip_perm].copy()
        lm[:, 0] = (crop - 1) - lm[:, 0]
    return np.ascontiguousarray(out), lm


def augment(sample: FaceSample, rng, crop: int, flip_perm=None, allow_flip=True,
            image=None) -> FaceSample:
    """Random crop (landmarks translated) and random horizontal flip.

    Labels are carried over unchanged.
    """
    image = sample.pixels() if image is None else image
    H, W = image.shape[:2]
    if crop > H or crop > W:
        raise InputError(f"image {H}x{W} is smaller than crop {crop}")
    top = int(rng.integers(0, H - crop + 1))
    left = int(rng.integers(0, W - crop + 1))
    flip = bool(allow_flip and flip_perm is not None and rng.random() < 0.5)
    out, lm = crop_and_flip(image, sample.landmarks, crop, top, left, flip, flip_perm)
    return FaceSample(out, sample.subject_id, lm, sample.labels, sample.hb, sample.mode)


def center_crop(sample: FaceSample, crop: int, image=None) -> FaceSample:
    image = sample.pixels() if image is None else image
    H, W = image.shape[:2]
    out, lm = crop_and_flip(image, sample.landmarks, crop, (H - crop) // 2, (W - crop) // 2, False)
    return FaceSample(out, sample.subject_id, lm, sample.labels, sample.hb, sample.mode)


# -- tensors ----------------------------------------------------------------

STEM_STRIDE = 4


def to_tensor_image(image: np.ndarray, channels=3) -> torch.Tensor:
    x = torch.as_tensor(np.asarray(image, dtype=np.float32) / 255.0 - 0.5) * 4.0
    if x.dim() == 2:
        x = x.unsqueeze(0).expand(channels, -1, -1)
    else:
        x = x.permute(2, 0, 1)
    return x.contiguous()


def interocular(landmarks: np.ndarray, ocular=(19, 28)) -> float:
    return float(np.linalg.norm(landmarks[ocular[0]] - landmarks[ocular[1]]))


class FaceDataset:
    """Holds decoded images and produces deterministic batches.

    Training batches use a per-epoch permutation and augmentation drawn
    from ``seed + epoch``; evaluation batches use a center crop, in order.
    """

    def __init__(self, samples: list[FaceSample], crop: int, root=None, flip_perm=None,
                 ocular=(19, 28), flip=True):
        self.samples = samples
        self.crop = crop
        self.flip_perm = flip_perm
        self.flip = flip
        self.ocular = tuple(ocular)
        self.images = [s.pixels(root) for s in samples]

    def __len__(self):
        return len(self.samples)

    def subset(self, indices):
        sub = FaceDataset.__new__(FaceDataset)
        sub.__dict__.update(self.__dict__)
        sub.samples = [self.samples[i] for i in indices]
        sub.images = [self.images[i] for i in indices]
        return sub

    def _collate(self, items):
        images = torch.stack([to_tensor_image(s.image) for s in items])
        lm = torch.as_tensor(np.stack([s.landmarks for s in items]) / STEM_STRIDE,
                             dtype=torch.float32)
        d_o = torch.tensor([interocular(s.landmarks, self.ocular) / STEM_STRIDE for s in items],
                           dtype=torch.float32)
        batch = {"image": images, "landmarks": lm, "d_o": d_o}
        if items[0].mode == "au":
            batch["labels"] = torch.as_tensor(np.stack([s.labels for s in items]),
                                              dtype=torch.float32)
        else:
            batch["grade"] = torch.tensor([s.grade for s in items])
        return batch

    def train_batches(self, batch_size, epoch, seed):
        rng = np.random.default_rng([seed, epoch])
        order = rng.permutation(len(self))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            items = [augment(self.samples[i], rng, self.crop, self.flip_perm, self.flip,
                             image=self.images[i]) for i in idx]
            yield self._collate(items)

    def eval_batches(self, batch_size):
        for start in range(0, len(self), batch_size):
            items = [center_crop(self.samples[i], self.crop, image=self.images[i])
                     for i in range(start, min(start + batch_size, len(self)))]
            yield self._collate(items)
