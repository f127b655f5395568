"""Region centers and Gaussian attention maps driven by facial landmarks.

Region placement is described by a rule table (see ``resources/*.rules``):
each branch owns two centers, each center is a landmark or the midpoint of
several landmarks plus a fixed shift measured in a per-table distance unit
(e.g. inter-ocular distance). Learned offsets are added on top and the
result is clamped into the feature map.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, DegenerateRegionError, InputError

MODES = ("au", "palsy")
TRUNCATE_SIGMAS = 3.0

_BUILTIN = {"bp4d": "bp4d.rules", "disfa": "disfa.rules", "palsy": "palsy.rules"}


@dataclass(frozen=True)
class CenterFormula:
    indices: tuple[int, ...]
    dx: float = 0.0
    dy: float = 0.0

    def to_text(self) -> str:
        text = "~".join(str(i) for i in self.indices)
        if self.dx or self.dy:
            text += f" @ {self.dx:g},{self.dy:g}"
        return text


@dataclass(frozen=True)
class RegionRule:
    name: str
    scale: float
    centers: tuple[CenterFormula, CenterFormula]


@dataclass(frozen=True)
class RuleTable:
    mode: str
    unit: tuple[int, int]
    rules: tuple[RegionRule, ...]

    def __len__(self):
        return len(self.rules)

    @property
    def names(self) -> list[str]:
        return [r.name for r in self.rules]

    @property
    def default_scales(self) -> np.ndarray:
        return np.array([r.scale for r in self.rules])

    def max_index(self) -> int:
        idx = [i for r in self.rules for c in r.centers for i in c.indices]
        return max(idx + list(self.unit))

    def validate(self, num_landmarks: int) -> None:
        if self.max_index() >= num_landmarks:
            raise ConfigError(
                f"rule table references landmark {self.max_index()} "
                f"but only {num_landmarks} landmarks are configured")

    def matrices(self, num_landmarks: int) -> tuple[np.ndarray, np.ndarray]:
        """Linear form of the table: centers = A @ L + unit_dist * K.

        Returns A of shape (2n, m) and K of shape (2n, 2), rows ordered
        (branch0 center A, branch0 center B, branch1 center A, ...).
        """
        self.validate(num_landmarks)
        n = len(self.rules)
        A = np.zeros((2 * n, num_landmarks))
        K = np.zeros((2 * n, 2))
        for b, rule in enumerate(self.rules):
            for k, c in enumerate(rule.centers):
                row = 2 * b + k
                for i in c.indices:
                    A[row, i] += 1.0 / len(c.indices)
                K[row] = (c.dx, c.dy)
        return A, K

    def to_text(self) -> str:
        lines = [f"mode: {self.mode}", f"unit: {self.unit[0]} {self.unit[1]}"]
        for r in self.rules:
            a, b = r.centers
            parts = [r.name, f"{r.scale:g}", a.to_text()]
            if b != a:
                parts.append(b.to_text())
            lines.append(" | ".join(parts))
        return "\n".join(lines) + "\n"


_FORMULA = re.compile(
    r"^\s*(\d+(?:\s*~\s*\d+)*)\s*(?:@\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+))?\s*$")


def _parse_formula(text: str, lineno: int) -> CenterFormula:
    m = _FORMULA.match(text)
    if not m:
        raise ConfigError(f"rule line {lineno}: cannot parse center {text!r}")
    indices = tuple(int(t) for t in m.group(1).split("~"))
    dx = float(m.group(2)) if m.group(2) else 0.0
    dy = float(m.group(3)) if m.group(3) else 0.0
    return CenterFormula(indices, dx, dy)


def parse_rule_table(text: str) -> RuleTable:
    mode, unit, rules = None, None, []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("mode:"):
            mode = line.split(":", 1)[1].strip().lower()
            if mode not in MODES:
                raise ConfigError(f"rule line {lineno}: unknown mode {mode!r}")
            continue
        if line.startswith("unit:"):
            parts = line.split(":", 1)[1].split()
            if len(parts) != 2:
                raise ConfigError(f"rule line {lineno}: unit needs two landmark indices")
            unit = (int(parts[0]), int(parts[1]))
            continue
        fields = [f.strip() for f in line.split("|")]
        if len(fields) not in (3, 4):
            raise ConfigError(f"rule line {lineno}: expected 3 or 4 '|' fields")
        try:
            scale = float(fields[1])
        except ValueError:
            raise ConfigError(f"rule line {lineno}: bad scale {fields[1]!r}") from None
        if not scale > 0:
            raise ConfigError(f"rule line {lineno}: scale must be positive")
        a = _parse_formula(fields[2], lineno)
        b = _parse_formula(fields[3], lineno) if len(fields) == 4 else a
        rules.append(RegionRule(fields[0], scale, (a, b)))
    if mode is None or unit is None:
        raise ConfigError("rule table needs 'mode:' and 'unit:' lines")
    if not rules:
        raise ConfigError("rule table has no records")
    return RuleTable(mode, unit, tuple(rules))


def load_rule_table(name_or_path) -> RuleTable:
    """Load a bundled table ("bp4d", "disfa", "palsy") or a file path."""
    key = str(name_or_path)
    if key in _BUILTIN:
        text = resources.files("algrnet.resources").joinpath(_BUILTIN[key]).read_text()
    else:
        path = Path(key)
        if not path.exists():
            raise ConfigError(f"rule table not found: {key}")
        text = path.read_text()
    return parse_rule_table(text)


def load_flip_permutation(num_landmarks: int = 49, path=None) -> np.ndarray:
    if path is None:
        text = resources.files("algrnet.resources").joinpath("flip49.txt").read_text()
    else:
        text = Path(path).read_text()
    perm = np.arange(num_landmarks)
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].split()
        if not line:
            continue
        i, j = int(line[0]), int(line[1])
        if max(i, j) >= num_landmarks:
            raise ConfigError(f"flip table index {max(i, j)} out of range")
        perm[i], perm[j] = j, i
    return perm


def unit_distance(landmarks: torch.Tensor, unit: tuple[int, int]) -> torch.Tensor:
    """Euclidean distance between two landmarks, shape (...,)."""
    d = landmarks[..., unit[0], :] - landmarks[..., unit[1], :]
    return torch.linalg.vector_norm(d, dim=-1)


def compute_centers(landmarks, table: RuleTable, offsets=None, size=None):
    """Branch centers from landmarks.

    landmarks: (..., m, 2) tensor of (x, y) in feature-map units.
    offsets: optional (..., 2n, 2) tensor added to the rule positions.
    size: optional (H, W); centers are clamped into [0, W-1] x [0, H-1].
    Returns (..., n, 2, 2): branch, center-in-pair, (x, y).
    """
    landmarks = torch.as_tensor(landmarks)
    if not torch.is_floating_point(landmarks):
        landmarks = landmarks.double()
    if not torch.isfinite(landmarks).all():
        raise InputError("landmarks contain non-finite values")
    m = landmarks.shape[-2]
    A, K = table.matrices(m)
    A = torch.as_tensor(A, dtype=landmarks.dtype, device=landmarks.device)
    K = torch.as_tensor(K, dtype=landmarks.dtype, device=landmarks.device)
    unit = unit_distance(landmarks, table.unit)[..., None, None]
    centers = torch.matmul(A, landmarks) + unit * K
    if offsets is not None:
        offsets = torch.as_tensor(offsets, dtype=landmarks.dtype)
        if offsets.shape[-2:] != centers.shape[-2:]:
            raise InputError(
                f"expected offsets of shape (..., {centers.shape[-2]}, 2), "
                f"got {tuple(offsets.shape)}")
        centers = centers + offsets
    if size is not None:
        H, W = size
        x = centers[..., 0].clamp(0, W - 1)
        y = centers[..., 1].clamp(0, H - 1)
        centers = torch.stack([x, y], dim=-1)
    return centers.reshape(*centers.shape[:-2], len(table), 2, 2)


def attention_maps(centers, scales, H: int, W: int, sigma_ratio: float = 0.5):
    """Truncated Gaussian attention for every branch.

    centers: (..., n, 2, 2); scales: (..., n). Returns (..., n, H, W) with
    value 1 at each center and exactly 0 beyond 3 sigma of both centers.
    """
    sigma = sigma_ratio * scales * W
    if (sigma <= 0).any():
        raise DegenerateRegionError("attention sigma must be positive")
    dtype = centers.dtype
    ys = torch.arange(H, dtype=dtype, device=centers.device)
    xs = torch.arange(W, dtype=dtype, device=centers.device)
    cx = centers[..., 0][..., None, None]  # (..., n, 2, 1, 1)
    cy = centers[..., 1][..., None, None]
    d2 = (xs - cx) ** 2 + (ys[:, None] - cy) ** 2
    s2 = (sigma ** 2)[..., None, None, None]
    g = torch.exp(-d2 / (2 * s2))
    g = torch.where(d2 <= (TRUNCATE_SIGMAS ** 2) * s2, g, torch.zeros_like(g))
    return g.amax(dim=-3)


def extract_patch_features(feature_map, att):
    """Per-branch masked features.

    feature_map (C, H, W) with att (H, W) -> (C, H, W), or batched
    feature_map (B, C, H, W) with att (B, n, H, W) -> (B, n, C, H, W).
    """
    if feature_map.dim() == 3 and att.dim() == 2:
        if feature_map.shape[-2:] != att.shape:
            raise InputError(
                f"attention {tuple(att.shape)} does not match feature map "
                f"{tuple(feature_map.shape[-2:])}")
        return feature_map * att
    if feature_map.dim() != 4 or att.dim() != 4:
        raise InputError("expected (C,H,W)+(H,W) or (B,C,H,W)+(B,n,H,W)")
    if feature_map.shape[-2:] != att.shape[-2:] or feature_map.shape[0] != att.shape[0]:
        raise InputError(
            f"attention {tuple(att.shape)} does not match feature map "
            f"{tuple(feature_map.shape)}")
    return feature_map.unsqueeze(1) * att.unsqueeze(2)


@dataclass
class RegionSpec:
    branch_index: int
    centers: np.ndarray      # (2, 2) rule position + offset, clamped
    offset: np.ndarray       # (2, 2)
    scale: float
    mode: str


def region_specs(landmarks, table: RuleTable, offsets=None, scales=None, size=None):
    """Single-sample convenience wrapper returning one RegionSpec per branch."""
    lm = torch.as_tensor(np.asarray(landmarks, dtype=np.float64))
    n = len(table)
    off = np.zeros((2 * n, 2)) if offsets is None else np.asarray(offsets, dtype=np.float64)
    centers = compute_centers(lm, table, torch.as_tensor(off), size).numpy()
    scales = table.default_scales if scales is None else np.asarray(scales, dtype=np.float64)
    return [RegionSpec(b, centers[b], off[2 * b:2 * b + 2], float(scales[b]), table.mode)
            for b in range(n)]


def attention_map(spec: RegionSpec, H: int, W: int, sigma_ratio: float = 0.5) -> np.ndarray:
    if not spec.scale > 0 or not math.isfinite(spec.scale):
        raise DegenerateRegionError(f"branch {spec.branch_index}: scale must be positive")
    centers = torch.as_tensor(np.asarray(spec.centers, dtype=np.float64))[None]
    scales = torch.tensor([spec.scale], dtype=torch.float64)
    return attention_maps(centers, scales, H, W, sigma_ratio)[0].numpy()
