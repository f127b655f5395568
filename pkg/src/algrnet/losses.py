"""Loss terms for joint alignment + AU detection / palsy grading.

All per-sample functions return one value per leading index; the
objectives average over the batch.
"""

from dataclasses import dataclass

import torch

from .errors import ConfigError, InputError

PROB_CLAMP = 1e-7


def _clamp(p):
    return p.clamp(PROB_CLAMP, 1 - PROB_CLAMP)


def loss_align(pred, gt, d_o):
    """sum_i ||pred_i - gt_i||^2 / (2 d_o^2); pred, gt (..., m, 2), d_o (...)."""
    d_o = torch.as_tensor(d_o, dtype=pred.dtype, device=pred.device)
    if (d_o <= 0).any():
        raise InputError("inter-ocular distance must be positive")
    if pred.shape != gt.shape:
        raise InputError(f"landmark shapes differ: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    sq = ((pred - gt) ** 2).sum(dim=(-2, -1))
    return sq / (2 * d_o ** 2)


def loss_rec(p, p_hat, w):
    """Weighted binary cross-entropy averaged over the n labels."""
    q = _clamp(p_hat)
    ll = p * torch.log(q) + (1 - p) * torch.log(1 - q)
    return -(w * ll).mean(dim=-1)


def loss_dice(p, p_hat, w, tau=1.0, denominator="sum_squares"):
    """Weighted per-label Dice loss.

    ``denominator="sum_squares"`` uses p^2 + p_hat^2 + tau;
    ``"product_squares"`` uses p^2 * p_hat^2 + tau.
    """
    if denominator == "sum_squares":
        den = p ** 2 + p_hat ** 2 + tau
    elif denominator == "product_squares":
        den = p ** 2 * p_hat ** 2 + tau
    else:
        raise ConfigError(f"unknown dice denominator {denominator!r}")
    return (w * (1 - (2 * p * p_hat + tau) / den)).mean(dim=-1)


def loss_palsy(q, q_hat, w):
    """-w_c log q_hat_c for the true class c; q is one-hot (..., K) or class ids (...)."""
    if q.dim() == q_hat.dim() - 1:
        q = torch.nn.functional.one_hot(q.long(), q_hat.shape[-1]).to(q_hat.dtype)
    return -(w * q * torch.log(_clamp(q_hat))).sum(dim=-1)


@dataclass
class LossBundle:
    align: torch.Tensor
    rec: torch.Tensor
    dice: torch.Tensor
    au: torch.Tensor
    int: torch.Tensor
    palsy: torch.Tensor
    total: torch.Tensor

    def as_floats(self):
        return {k: float(v.detach()) for k, v in vars(self).items()}


def loss_total_au(au, integrated, align, lam=0.5):
    return (au + integrated) + lam * align


def au_objective(local, integrated, labels, weights, pred_lm, gt_lm, d_o,
                 lam=0.5, tau=1.0, denominator="sum_squares"):
    rec = loss_rec(labels, local, weights).mean()
    dice = loss_dice(labels, local, weights, tau, denominator).mean()
    au = rec + dice
    integ = (loss_rec(labels, integrated, weights)
             + loss_dice(labels, integrated, weights, tau, denominator)).mean()
    align = loss_align(pred_lm, gt_lm, d_o).mean()
    zero = torch.zeros_like(au)
    return LossBundle(align, rec, dice, au, integ, zero, loss_total_au(au, integ, align, lam))


def palsy_objective(q_hat, grades, weights, pred_lm, gt_lm, d_o, lam=0.5):
    par = loss_palsy(grades, q_hat, weights).mean()
    align = loss_align(pred_lm, gt_lm, d_o).mean()
    zero = torch.zeros_like(par)
    return LossBundle(align, zero, zero, zero, zero, par, par + lam * align)
