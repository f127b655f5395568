import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

import fdcheck
from algrnet import losses
from algrnet.errors import ConfigError, InputError
from algrnet.heads import BranchClassifier, IntegratedClassifier, final_probs


def zero_(module):
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module


# ---- classifiers ----

def test_zero_weights_give_half_and_uniform():
    R = torch.randn(3, 5, 4, 2, 2)
    a = torch.randn(3, 7)
    assert torch.equal(zero_(BranchClassifier(5, 4))(R), torch.full((3, 5), 0.5))
    assert torch.equal(zero_(IntegratedClassifier(5, 4, 7, 5))(R, a), torch.full((3, 5), 0.5))
    q = zero_(IntegratedClassifier(5, 4, 7, 4, kind="palsy"))(R, a)
    assert torch.equal(q, torch.full((3, 4), 0.25))


def test_branch_probe_isolated():
    torch.manual_seed(0)
    head = BranchClassifier(4, 3).double()
    R = torch.randn(1, 4, 3, 2, 2, dtype=torch.float64, requires_grad=True)
    for k in range(4):
        (g,) = torch.autograd.grad(head(R)[0, k], R)
        for j in range(4):
            assert (g[0, j].abs().sum() == 0) == (j != k)


def test_integrated_depends_on_every_branch():
    torch.manual_seed(0)
    head = IntegratedClassifier(4, 3, 5, 4, hidden=32).double()
    R = torch.randn(1, 4, 3, 2, 2, dtype=torch.float64, requires_grad=True)
    a = torch.randn(1, 5, dtype=torch.float64)
    (g,) = torch.autograd.grad(head(R, a).sum(), R)
    assert all(g[0, j].abs().sum() > 0 for j in range(4))


@pytest.mark.parametrize("n", [12, 8])
def test_integrated_output_length(n):
    assert IntegratedClassifier(n, 3, 5, n)(torch.randn(2, n, 3, 2, 2), torch.randn(2, 5)).shape == (2, n)


def test_palsy_simplex_and_shift_invariance():
    torch.manual_seed(1)
    head = IntegratedClassifier(3, 2, 4, 4, kind="palsy").double()
    R = torch.randn(6, 3, 2, 2, 2, dtype=torch.float64)
    a = torch.randn(6, 4, dtype=torch.float64)
    q = head(R, a)
    assert torch.allclose(q.sum(-1), torch.ones(6, dtype=torch.float64), atol=1e-6)
    z = head.logits(R, a)
    assert torch.equal(torch.softmax(z + 3.0, -1).argmax(-1), q.argmax(-1))


def test_final_probs():
    assert final_probs(torch.tensor(0.4), torch.tensor(0.6)).item() == pytest.approx(0.5)
    assert final_probs(torch.tensor(1.0), torch.tensor(1.0)).item() == 1.0
    a, b = torch.rand(10, dtype=torch.float64), torch.rand(10, dtype=torch.float64)
    assert torch.equal(final_probs(a, b), (a + b) / 2)


# ---- losses: hand cases at 1e-9 ----

def t64(*v):
    return torch.tensor(v, dtype=torch.float64)


def test_align_hand_cases():
    lm = torch.randn(5, 2, dtype=torch.float64)
    assert losses.loss_align(lm, lm, 3.0).item() == 0
    assert losses.loss_align(t64(2.0, 0.0)[None], t64(0.0, 0.0)[None], 2.0).item() == pytest.approx(0.5, abs=1e-9)
    assert losses.loss_align(t64(3.0, 4.0)[None], t64(0.0, 0.0)[None], 5.0).item() == pytest.approx(0.5, abs=1e-9)
    with pytest.raises(InputError):
        losses.loss_align(lm, lm, 0.0)
    with pytest.raises(InputError):
        losses.loss_align(lm, lm[:4], 1.0)


def test_rec_hand_cases():
    assert losses.loss_rec(t64(1.0), t64(0.5), t64(1.0)).item() == pytest.approx(math.log(2), abs=1e-9)
    assert losses.loss_rec(t64(1, 0, 1), t64(1, 0, 1), t64(1, 1, 1)).item() <= 1e-6
    p, q, w = t64(1, 0, 1, 0), t64(0.3, 0.2, 0.9, 0.6), t64(0.5, 1.5, 1.0, 1.0)
    assert losses.loss_rec(p, q, 2 * w).item() == pytest.approx(2 * losses.loss_rec(p, q, w).item(), abs=1e-12)
    # independent arithmetic
    ref = -np.mean([0.5 * math.log(0.3), 1.5 * math.log(0.8), math.log(0.9), math.log(0.4)])
    assert losses.loss_rec(p, q, w).item() == pytest.approx(ref, abs=1e-9)


def test_dice_hand_cases():
    one = t64(1.0)
    assert losses.loss_dice(one, one, one).item() == 0
    assert losses.loss_dice(t64(0.0), t64(0.0), one).item() == 0
    assert losses.loss_dice(one, t64(0.0), one).item() == pytest.approx(0.5, abs=1e-9)
    # printed product form: p=1, p_hat=0.5 -> 1 - 2/1.25
    got = losses.loss_dice(one, t64(0.5), one, denominator="product_squares").item()
    assert got == pytest.approx(1 - 2 / 1.25, abs=1e-9)
    with pytest.raises(ConfigError):
        losses.loss_dice(one, one, one, denominator="nope")


def test_palsy_hand_cases():
    w = t64(1, 1, 1, 1)
    assert losses.loss_palsy(torch.tensor(2), t64(0, 0, 1, 0), w).item() <= 1e-6
    half = t64(0.5, 0.5, 0, 0)
    assert losses.loss_palsy(t64(1, 0, 0, 0), half, w).item() == pytest.approx(math.log(2), abs=1e-9)
    assert losses.loss_palsy(t64(1, 0, 0, 0), half, 2 * w).item() == pytest.approx(2 * math.log(2), abs=1e-9)
    assert losses.loss_palsy(torch.tensor(0), half, w).item() == pytest.approx(math.log(2), abs=1e-9)


def test_total_au():
    assert losses.loss_total_au(0.0, 0.0, 0.0) == 0
    assert losses.loss_total_au(1.0, 1.0, 2.0, 0.5) == pytest.approx(3.0)
    align = torch.tensor(2.0, requires_grad=True)
    losses.loss_total_au(torch.tensor(1.0), torch.tensor(1.0), align, 0.0).backward()
    assert align.grad.item() == 0


def test_objective_bundles():
    g = torch.Generator().manual_seed(0)
    labels = (torch.rand(4, 3, generator=g) > 0.5).double()
    local = torch.rand(4, 3, generator=g, dtype=torch.float64)
    integ = torch.rand(4, 3, generator=g, dtype=torch.float64)
    lm = torch.rand(4, 5, 2, generator=g, dtype=torch.float64)
    b = losses.au_objective(local, integ, labels, torch.ones(3, dtype=torch.float64), lm, lm + 0.1,
                            torch.full((4,), 2.0, dtype=torch.float64))
    assert b.au.item() == b.rec.item() + b.dice.item()
    assert b.total.item() == pytest.approx(b.au.item() + b.int.item() + 0.5 * b.align.item())
    q = torch.softmax(torch.randn(4, 4, generator=g, dtype=torch.float64), -1)
    pb = losses.palsy_objective(q, torch.tensor([0, 1, 2, 3]), torch.ones(4, dtype=torch.float64),
                                lm, lm, torch.ones(4, dtype=torch.float64))
    assert pb.total.item() == pytest.approx(pb.palsy.item())
    assert all(v >= 0 for v in pb.as_floats().values())


# ---- properties ----

probs = st.lists(st.floats(0, 1), min_size=1, max_size=6)


@settings(max_examples=100, deadline=None)
@given(probs, st.data())
def test_losses_nonnegative_and_finite(p_hat, data):
    n = len(p_hat)
    p = t64(*data.draw(st.lists(st.sampled_from([0.0, 1.0]), min_size=n, max_size=n)))
    q = t64(*p_hat)
    w = t64(*data.draw(st.lists(st.floats(0.01, 5), min_size=n, max_size=n)))
    for v in (losses.loss_rec(p, q, w), losses.loss_dice(p, q, w)):
        assert torch.isfinite(v) and v.item() >= -1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from([0.0, 1.0]), min_size=1, max_size=6), st.data())
def test_dice_zero_iff_exact(p, data):
    p = t64(*p)
    w = torch.ones_like(p)
    assert losses.loss_dice(p, p.clone(), w).item() <= 1e-12
    q = t64(*data.draw(st.lists(st.floats(0, 1), min_size=len(p), max_size=len(p))))
    if (q - p).abs().max() > 1e-3:
        assert losses.loss_dice(p, q, w).item() > 0


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_final_decision_monotone(a, b):
    mean = final_probs(t64(a), t64(b)).item()
    assert (mean >= 0.5) == ((a + b) / 2 >= 0.5)


# ---- gradients ----

def test_loss_gradients():
    g = torch.Generator().manual_seed(3)
    p = (torch.rand(3, 4, generator=g) > 0.5).double()
    w = torch.rand(4, generator=g, dtype=torch.float64) + 0.5
    q = torch.rand(3, 4, generator=g, dtype=torch.float64) * 0.8 + 0.1
    fdcheck.check(lambda: losses.loss_rec(p, q, w).sum(), [q])
    q = q.detach()
    fdcheck.check(lambda: losses.loss_dice(p, q, w).sum(), [q])
    q = q.detach()
    fdcheck.check(lambda: losses.loss_dice(p, q, w, denominator="product_squares").sum(), [q])
    pred = torch.randn(2, 5, 2, generator=g, dtype=torch.float64)
    gt = torch.randn(2, 5, 2, generator=g, dtype=torch.float64)
    fdcheck.check(lambda: losses.loss_align(pred, gt, t64(2.0, 3.0)).sum(), [pred])
    qh = torch.softmax(torch.randn(3, 4, generator=g, dtype=torch.float64), -1)
    fdcheck.check(lambda: losses.loss_palsy(torch.tensor([0, 2, 3]), qh, w).sum(), [qh])


def test_head_gradients():
    torch.manual_seed(0)
    R = torch.randn(2, 3, 4, 2, 2)
    a = torch.randn(2, 5)
    fdcheck.check_module(BranchClassifier(3, 4), [R])
    fdcheck.check_module(IntegratedClassifier(3, 4, 5, 3, hidden=8), [R, a])
    fdcheck.check_module(IntegratedClassifier(3, 4, 5, 4, hidden=8, kind="palsy"), [R, a])
