"""Stem network, face-alignment head, adaptive region heads and global trunk."""

import math

import torch
from torch import nn
import torch.nn.functional as F

from .errors import InputError


def conv3x3(cin, cout, stride=1, dilation=1):
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=dilation, dilation=dilation)


class MultiScaleBlock(nn.Module):
    """Three parallel 3x3 convolutions (dilation 1, 2, 3), concatenated and
    projected back with a 1x1 convolution."""

    def __init__(self, cin, cout):
        super().__init__()
        self.branches = nn.ModuleList([conv3x3(cin, cout, dilation=d) for d in (1, 2, 3)])
        self.project = nn.Conv2d(3 * cout, cout, 1)

    def forward(self, x):
        y = torch.cat([F.relu(b(x)) for b in self.branches], dim=1)
        return F.relu(self.project(y))


class Stem(nn.Module):
    """Two stride-2 conv blocks followed by a multi-scale block; stride 4 overall."""

    stride = 4

    def __init__(self, in_channels=3, width=32, out_channels=64, input_size=176):
        super().__init__()
        self.input_size = input_size
        self.conv1 = conv3x3(in_channels, width, stride=2)
        self.conv2 = conv3x3(width, out_channels, stride=2)
        self.multi = MultiScaleBlock(out_channels, out_channels)

    def forward(self, image):
        if image.shape[-2:] != (self.input_size, self.input_size):
            raise InputError(
                f"expected {self.input_size}x{self.input_size} input, "
                f"got {tuple(image.shape[-2:])}")
        x = F.relu(self.conv1(image))
        x = F.relu(self.conv2(x))
        return self.multi(x)


class ConvTrunk(nn.Module):
    """Three 3x3 conv layers, shared shape of the alignment and global nets."""

    def __init__(self, channels):
        super().__init__()
        self.convs = nn.ModuleList([conv3x3(channels, channels) for _ in range(3)])

    def forward(self, x):
        for conv in self.convs:
            x = F.relu(conv(x))
        return x


class AlignNet(nn.Module):
    """Landmark regression: conv trunk, max-pool, FC to the alignment feature,
    then a linear layer to 2m normalized coordinates.

    Normalized outputs z in [-1, 1] map to feature-map units as
    x = W/2 * (1 + z), so a zero output sits at the map center.
    """

    def __init__(self, channels, map_size, num_landmarks=49, feature_dim=512):
        super().__init__()
        self.map_size = map_size
        self.num_landmarks = num_landmarks
        self.trunk = ConvTrunk(channels)
        pooled = map_size // 2
        self.fc = nn.Linear(channels * pooled * pooled, feature_dim)
        self.regress = nn.Linear(feature_dim, 2 * num_landmarks)

    @torch.no_grad()
    def set_mean_shape(self, landmarks):
        """Start the regressor at a mean shape given in feature-map units (m, 2)."""
        z = 2.0 * torch.as_tensor(landmarks, dtype=self.regress.bias.dtype) / self.map_size - 1.0
        self.regress.bias.copy_(z.reshape(-1))

    def forward(self, f):
        x = F.max_pool2d(self.trunk(f), 2)
        a = F.relu(self.fc(x.flatten(1)))
        z = self.regress(a).view(-1, self.num_landmarks, 2)
        landmarks = 0.5 * self.map_size * (1.0 + z)
        return landmarks, a


class OffsetHead(nn.Module):
    """Two FC layers -> 2n center offsets bounded by offset_max * W."""

    def __init__(self, feature_dim, num_regions, map_size, hidden=128, offset_max=0.1):
        super().__init__()
        self.num_regions = num_regions
        self.bound = offset_max * map_size
        self.fc1 = nn.Linear(feature_dim, hidden)
        self.fc2 = nn.Linear(hidden, 4 * num_regions)
        self.reset_output()

    def reset_output(self):
        nn.init.zeros_(self.fc2.weight)
        nn.init.zeros_(self.fc2.bias)

    def forward(self, a):
        z = self.fc2(F.relu(self.fc1(a)))
        return self.bound * torch.tanh(z).view(-1, 2 * self.num_regions, 2)


class ScaleHead(nn.Module):
    """Two FC layers -> n width ratios in (0, e_max), initialised at init_scale."""

    def __init__(self, feature_dim, num_regions, hidden=128, e_max=0.3, init_scale=0.14):
        super().__init__()
        self.e_max = e_max
        self.fc1 = nn.Linear(feature_dim, hidden)
        self.fc2 = nn.Linear(hidden, num_regions)
        self.init_scale = init_scale
        self.reset_output()

    def reset_output(self):
        nn.init.zeros_(self.fc2.weight)
        nn.init.constant_(self.fc2.bias, scale_logit(self.init_scale, self.e_max))

    def forward(self, a):
        return self.e_max * torch.sigmoid(self.fc2(F.relu(self.fc1(a))))


def scale_logit(scale, e_max):
    """Bias that makes e_max * sigmoid(bias) == scale."""
    if not 0 < scale < e_max:
        raise ValueError(f"scale {scale} must lie in (0, {e_max})")
    r = scale / e_max
    return math.log(r / (1 - r))


class GlobalNet(nn.Module):
    """Grid-based global face feature: same conv trunk as alignment, own weights,
    no pooling so G stays aligned with the branch features."""

    def __init__(self, channels):
        super().__init__()
        self.trunk = ConvTrunk(channels)

    def forward(self, f):
        return self.trunk(f)
