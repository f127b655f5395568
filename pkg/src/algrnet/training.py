"""Training, evaluation and the subject-exclusive cross-validation driver."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import torch

from . import geometry, losses, metrics
from .checkpoint import save_checkpoint
from .config import Config
from .data import FaceDataset, FoldPlan, balance_weights, load_manifest, subject_exclusive_folds
from .errors import ConfigError, NumericError
from .model import ALGRNet, NUM_GRADES
from .data import GRADE_NAMES


class RunLog:
    def __init__(self, path=None, echo=True):
        self.path = Path(path) if path else None
        self.echo = echo
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def __call__(self, line=""):
        if self.echo:
            print(line, flush=True)
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(line + "\n")


def set_determinism(seed):
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)


def make_dataset(cfg: Config, samples, root=None):
    flip_perm = None
    if cfg.data.flip:
        flip_perm = geometry.load_flip_permutation(cfg.model.num_landmarks,
                                                   cfg.data.flip_table or None)
    return FaceDataset(samples, cfg.model.input_size, root, flip_perm, cfg.data.ocular,
                       cfg.data.flip)


def split(cfg: Config, n_samples, plan: FoldPlan | None, samples):
    """(train, test) index lists; a single fold trains and tests on everything."""
    if cfg.data.folds == 1:
        everything = list(range(n_samples))
        return everything, everything, plan
    if plan is None:
        plan = subject_exclusive_folds(samples, cfg.data.folds, cfg.train.seed)
    if plan.k != cfg.data.folds:
        raise ConfigError(f"fold plan has {plan.k} folds, config expects {cfg.data.folds}")
    return plan.train_indices(cfg.data.fold), plan.test_indices(cfg.data.fold), plan


def class_weights(cfg: Config, dataset: FaceDataset):
    if cfg.model.mode == "au":
        mat = np.stack([s.labels for s in dataset.samples])
    else:
        mat = np.eye(NUM_GRADES)[[s.grade for s in dataset.samples]]
    return torch.as_tensor(balance_weights(mat), dtype=torch.float32)


def make_optimizer(t, params):
    if t.optimizer == "adam":
        return torch.optim.Adam(params, lr=t.lr, weight_decay=t.weight_decay)
    return torch.optim.SGD(params, lr=t.lr, momentum=t.momentum, nesterov=t.nesterov,
                           weight_decay=t.weight_decay)


def mean_shape(dataset: FaceDataset):
    """Average ground-truth landmarks of the center-cropped set, map units."""
    total, count = 0.0, 0
    for batch in dataset.eval_batches(64):
        total = total + batch["landmarks"].double().sum(0)
        count += batch["landmarks"].shape[0]
    return total / count


def compute_loss(cfg: Config, out, batch, weights):
    t = cfg.train
    if cfg.model.mode == "au":
        return losses.au_objective(out.local_probs, out.integrated_probs, batch["labels"], weights,
                                   out.landmarks, batch["landmarks"], batch["d_o"],
                                   t.lambda_align, t.tau, t.dice_denominator)
    return losses.palsy_objective(out.palsy_probs, batch["grade"], weights, out.landmarks,
                                  batch["landmarks"], batch["d_o"], t.lambda_align)


@torch.no_grad()
def predict(model, dataset: FaceDataset, batch_size=16):
    model.eval()
    probs, lms, gts, d_o, truth = [], [], [], [], []
    for batch in dataset.eval_batches(batch_size):
        out = model(batch["image"])
        probs.append(out.final_probs if model.cfg.mode == "au" else out.palsy_probs)
        lms.append(out.landmarks)
        gts.append(batch["landmarks"])
        d_o.append(batch["d_o"])
        truth.append(batch["labels"] if model.cfg.mode == "au" else batch["grade"])
    cat = lambda xs: torch.cat(xs).double().numpy()  # noqa: E731
    return {"probs": cat(probs), "landmarks": cat(lms), "gt_landmarks": cat(gts),
            "d_o": cat(d_o), "truth": torch.cat(truth).numpy()}


def evaluate(model, dataset: FaceDataset, class_names=None):
    """Metric report dict for a dataset (center crops, no augmentation)."""
    p = predict(model, dataset)
    report = {"n": len(dataset),
              "mean_error": metrics.mean_landmark_error(p["landmarks"], p["gt_landmarks"], p["d_o"])}
    if model.cfg.mode == "au":
        per, avg = metrics.f1_frame(p["probs"], p["truth"])
        report["classes"] = list(class_names or model.table.names)
    else:
        per, avg = metrics.grade_f1(p["probs"], p["truth"].astype(int), NUM_GRADES)
        report["classes"] = list(GRADE_NAMES)
        report["accuracy"] = metrics.accuracy(p["probs"], p["truth"])
    report["f1"] = [float(v) for v in per]
    report["avg_f1"] = avg
    return report


def format_report(report, title="ALGRNet"):
    text = metrics.format_table({title: report["f1"]}, report["classes"])
    extra = f"mean landmark error: {report['mean_error']:.2f}%"
    if "accuracy" in report:
        extra += f"   accuracy: {100 * report['accuracy']:.1f}%"
    return text + "\n" + extra


def _snapshot(out_dir, model, cfg, step, bundle, batch):
    path = Path(out_dir) / "nan_snapshot.ckpt"
    meta = {"step": step, "losses": {k: float(v) for k, v in vars(bundle).items()},
            "image_stats": [float(batch["image"].min()), float(batch["image"].max())]}
    try:
        save_checkpoint(path, model, cfg, meta)
    except Exception:  # snapshot is best effort; the numeric error is what matters
        pass
    return path


def train(cfg: Config, samples=None, plan: FoldPlan | None = None, root=None, echo=True,
          save=True):
    """Train one fold. Returns a dict with the final report and run paths."""
    cfg.validate()
    out_dir = Path(cfg.train.out_dir)
    log = RunLog(out_dir / "train.log" if save else None, echo)
    set_determinism(cfg.train.seed)
    if samples is None:
        if not cfg.data.manifest:
            raise ConfigError("no manifest configured")
        samples = load_manifest(cfg.data.manifest)
        root = Path(cfg.data.manifest).parent
    dataset = make_dataset(cfg, samples, root)
    train_idx, test_idx, plan = split(cfg, len(dataset), plan, samples)
    train_set, test_set = dataset.subset(train_idx), dataset.subset(test_idx)
    if save and plan is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        plan.save(out_dir / "folds.json")

    log("# config")
    for line in cfg.to_text().splitlines():
        log(line)
    log(f"# train samples {len(train_set)}  test samples {len(test_set)}  fold {cfg.data.fold}")

    t = cfg.train
    model = ALGRNet(cfg.model)
    if t.mean_shape_init:
        model.align.set_mean_shape(mean_shape(train_set))
    weights = class_weights(cfg, train_set)
    log(f"# class weights {np.round(weights.numpy(), 4).tolist()}")
    opt = make_optimizer(t, model.parameters())
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=t.decay_every, gamma=t.lr_decay)

    step, best, report = 0, -math.inf, None
    history = []
    for epoch in range(t.epochs):
        model.train()
        sums, count = {}, 0
        for batch in train_set.train_batches(t.batch_size, epoch, t.seed):
            out = model(batch["image"])
            bundle = compute_loss(cfg, out, batch, weights)
            if not torch.isfinite(bundle.total):
                path = _snapshot(out_dir, model, cfg, step, bundle, batch) if save else None
                raise NumericError(f"non-finite loss at step {step}; snapshot: {path}")
            opt.zero_grad()
            bundle.total.backward()
            if t.clip_grad:
                torch.nn.utils.clip_grad_norm_(model.parameters(), t.clip_grad)
            opt.step()
            step += 1
            for k, v in bundle.as_floats().items():
                sums[k] = sums.get(k, 0.0) + v
            count += 1
            if t.max_steps and step >= t.max_steps:
                break
        sched.step()
        report = evaluate(model, test_set)
        means = {k: v / max(count, 1) for k, v in sums.items()}
        history.append({"epoch": epoch, "step": step, "losses": means, "report": report})
        log(f"epoch {epoch:3d} step {step:5d} lr {opt.param_groups[0]['lr']:.5f} "
            + " ".join(f"{k} {v:.4f}" for k, v in means.items())
            + f" | val avg_f1 {report['avg_f1']:.4f} mean_err {report['mean_error']:.3f}")
        if save:
            meta = {"epoch": epoch, "step": step, "fold": cfg.data.fold, "report": report}
            save_checkpoint(out_dir / f"epoch_{epoch:03d}.ckpt", model, cfg, meta)
            save_checkpoint(out_dir / "last.ckpt", model, cfg, meta)
            if report["avg_f1"] > best:
                best = report["avg_f1"]
                save_checkpoint(out_dir / "best.ckpt", model, cfg, meta)
        if t.max_steps and step >= t.max_steps:
            break

    log("# final metrics")
    text = format_report(report)
    for line in text.splitlines():
        log(line)
    if save:
        (out_dir / "final_metrics.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    return {"report": report, "history": history, "model": model, "plan": plan,
            "steps": step, "text": text, "test_indices": test_idx}


def cross_validate(cfg: Config, samples=None, root=None, echo=True, save=True):
    """Train every fold of a subject-exclusive plan and average the fold scores."""
    if samples is None:
        samples = load_manifest(cfg.data.manifest)
        root = Path(cfg.data.manifest).parent
    plan = subject_exclusive_folds(samples, cfg.data.folds, cfg.train.seed)
    base_out = cfg.train.out_dir
    results = []
    for fold in range(cfg.data.folds):
        cfg.data.fold = fold
        cfg.train.out_dir = str(Path(base_out) / f"fold{fold}")
        results.append(train(cfg, samples, plan, root, echo, save))
    cfg.train.out_dir = base_out
    reports = [r["report"] for r in results]
    summary = {"folds": reports,
               "avg_f1": float(np.mean([r["avg_f1"] for r in reports])),
               "mean_error": float(np.mean([r["mean_error"] for r in reports]))}
    if "accuracy" in reports[0]:
        summary["accuracy"] = float(np.mean([r["accuracy"] for r in reports]))
    return summary, results
