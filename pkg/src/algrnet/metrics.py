"""F1-frame scores, mean landmark error and plain-text result tables."""

import numpy as np

from .errors import InputError


def f1_frame(probs, labels, threshold=0.5):
    """Per-class F1 after binarizing ``probs`` at ``threshold``.

    Returns (per_class, average). Precision, recall or F1 with a zero
    denominator count as 0.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.shape != labels.shape or probs.ndim != 2:
        raise InputError(f"probs {probs.shape} and labels {labels.shape} must be equal 2-D shapes")
    pred = probs >= threshold
    true = labels.astype(bool)
    tp = (pred & true).sum(0).astype(np.float64)
    fp = (pred & ~true).sum(0).astype(np.float64)
    fn = (~pred & true).sum(0).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(precision + recall > 0,
                      2 * precision * recall / (precision + recall), 0.0)
    return f1, float(f1.mean())


def grade_f1(probs, grades, num_classes=4):
    """One-vs-rest F1 per grade from class probabilities (argmax decision)."""
    probs = np.asarray(probs)
    pred = np.eye(num_classes)[probs.argmax(1)]
    truth = np.eye(num_classes)[np.asarray(grades)]
    return f1_frame(pred, truth)


def accuracy(probs, grades):
    return float((np.asarray(probs).argmax(1) == np.asarray(grades)).mean())


def mean_landmark_error(pred, gt, d_o):
    """Mean over images and landmarks of ||pred - gt|| / d_o, in percent.

    pred, gt: (N, m, 2) or (m, 2); d_o: scalar or (N,).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InputError(f"landmark shapes differ: {pred.shape} vs {gt.shape}")
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]
    d_o = np.broadcast_to(np.asarray(d_o, dtype=np.float64), pred.shape[:1])
    if (d_o <= 0).any():
        raise InputError("inter-ocular distance must be positive")
    dist = np.linalg.norm(pred - gt, axis=-1) / d_o[:, None]
    return float(dist.mean() * 100)


def format_table(rows, class_names, title=""):
    """Render {method: per-class scores} as a fixed-width table in percent.

    ``rows`` maps a row name to a sequence of per-class values in [0, 1];
    an ``Avg.`` column is appended.
    """
    width = max(7, *(len(c) + 1 for c in class_names))
    name_w = max(8, *(len(r) + 1 for r in rows))
    head = "Method".ljust(name_w) + "".join(c.rjust(width) for c in class_names) + "Avg.".rjust(width)
    rule = "-" * len(head)
    lines = [title] if title else []
    lines += [rule, head, rule]
    for name, vals in rows.items():
        vals = list(vals)
        cells = "".join(f"{100 * v:{width}.1f}" for v in vals)
        lines.append(name.ljust(name_w) + cells + f"{100 * np.mean(vals):{width}.1f}")
    lines.append(rule)
    return "\n".join(lines)
