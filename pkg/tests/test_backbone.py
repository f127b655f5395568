import pytest
import torch

import fdcheck
from algrnet.backbone import (AlignNet, ConvTrunk, GlobalNet, MultiScaleBlock, OffsetHead,
                              ScaleHead, Stem, scale_logit)
from algrnet.errors import InputError


def zero_(module, bias_only=False):
    with torch.no_grad():
        for name, p in module.named_parameters():
            if not bias_only or name.endswith("bias"):
                p.zero_()
    return module


def test_stem_shapes_and_errors():
    stem = Stem(3, 8, 16, input_size=32)
    assert stem(torch.randn(2, 3, 32, 32)).shape == (2, 16, 8, 8)
    with pytest.raises(InputError):
        stem(torch.randn(1, 3, 30, 30))


@pytest.mark.slow
def test_stem_paper_size():
    with torch.no_grad():
        assert Stem()(torch.randn(1, 3, 176, 176)).shape == (1, 64, 44, 44)


def test_stem_zero_image_zero_bias():
    stem = zero_(Stem(3, 4, 4, input_size=16), bias_only=True)
    assert (stem(torch.zeros(1, 3, 16, 16)) == 0).all()


def test_stem_deterministic():
    torch.manual_seed(0)
    a = Stem(3, 4, 4, input_size=16)
    torch.manual_seed(0)
    b = Stem(3, 4, 4, input_size=16)
    x = torch.randn(1, 3, 16, 16)
    assert torch.equal(a(x), b(x))


def test_align_zero_weights_center_and_outputs():
    net = zero_(AlignNet(4, 8, num_landmarks=49, feature_dim=16))
    lm, a = net(torch.randn(2, 4, 8, 8))
    assert net.regress.out_features == 98
    assert torch.equal(lm, torch.full((2, 49, 2), 4.0))
    assert a.shape == (2, 16)


def test_align_mean_shape_init():
    net = zero_(AlignNet(4, 8, num_landmarks=3, feature_dim=16))
    shape = torch.tensor([[1.0, 2.0], [4.0, 4.0], [7.5, 0.5]])
    net.set_mean_shape(shape)
    lm, _ = net(torch.randn(1, 4, 8, 8))
    torch.testing.assert_close(lm[0], shape)


def test_align_sensitive_to_stem_channel():
    torch.manual_seed(0)
    net = AlignNet(4, 8, num_landmarks=5, feature_dim=16).double()
    f = torch.rand(1, 4, 8, 8, dtype=torch.float64, requires_grad=True)
    (g,) = torch.autograd.grad(net(f)[0].sum(), f)
    assert g[0, 2].abs().sum() > 0


def test_region_head_ranges_and_calibration():
    scale = ScaleHead(16, 12, hidden=8)
    zero_(scale.fc1)
    scale.reset_output()
    e = scale(torch.randn(5, 16))
    assert (e - 0.14).abs().max() <= 1e-6
    offs = OffsetHead(16, 12, map_size=44, hidden=8)
    assert (offs(torch.randn(5, 16)) == 0).all()
    torch.manual_seed(0)
    offs.double(), scale.double()
    for p in list(offs.parameters()) + list(scale.parameters()):
        torch.nn.init.normal_(p, std=0.5)
    a = torch.randn(200, 16, dtype=torch.float64)
    assert (offs(a).abs() <= 0.1 * 44).all()
    e = scale(a)
    assert ((e > 0) & (e < 0.3)).all()
    assert scale_logit(0.15, 0.3) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        scale_logit(0.3, 0.3)


def test_global_net():
    f = torch.randn(1, 4, 6, 6)
    torch.manual_seed(1)
    g = GlobalNet(4)
    assert g(f).shape == f.shape
    assert (zero_(GlobalNet(4), bias_only=True)(torch.zeros(1, 4, 6, 6)) == 0).all()
    torch.manual_seed(2)
    align = AlignNet(4, 6, 3, 8)
    assert not torch.equal(g(f), align.trunk(f))


def test_gradients():
    torch.manual_seed(0)
    fdcheck.check_module(Stem(2, 3, 3, input_size=8), [torch.randn(1, 2, 8, 8)])
    fdcheck.check_module(MultiScaleBlock(2, 2), [torch.randn(1, 2, 6, 6)])
    fdcheck.check_module(ConvTrunk(2), [torch.randn(1, 2, 6, 6)])
    fdcheck.check_module(AlignNet(2, 8, num_landmarks=3, feature_dim=6),
                         [torch.randn(1, 2, 8, 8)], reduce=lambda out: out[0])
    fdcheck.check_module(AlignNet(2, 8, num_landmarks=3, feature_dim=6),
                         [torch.randn(1, 2, 8, 8)], reduce=lambda out: out[1])
    head = OffsetHead(6, 2, map_size=8, hidden=5)
    torch.nn.init.normal_(head.fc2.weight)
    fdcheck.check_module(head, [torch.randn(2, 6)])
    head = ScaleHead(6, 2, hidden=5)
    torch.nn.init.normal_(head.fc2.weight)
    fdcheck.check_module(head, [torch.randn(2, 6)])
    fdcheck.check_module(GlobalNet(2), [torch.randn(1, 2, 5, 5)])
