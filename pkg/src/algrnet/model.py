"""Full network: stem -> adaptive regions -> relational -> fusion/refine -> heads."""

from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn

from . import geometry
from .backbone import AlignNet, GlobalNet, OffsetHead, ScaleHead, Stem
from .config import ModelConfig
from .errors import ConfigError
from .fusion import GatedFusion, Refiner, pad_to_multiple
from .heads import BranchClassifier, IntegratedClassifier, final_probs
from .relational import NoRelation, PlainBiLSTM, SkipBiLSTM

NUM_GRADES = 4


@dataclass
class Output:
    landmarks: torch.Tensor            # (B, m, 2) feature-map units
    align_feature: torch.Tensor        # (B, D_a)
    offsets: torch.Tensor              # (B, 2n, 2)
    scales: torch.Tensor               # (B, n)
    centers: torch.Tensor              # (B, n, 2, 2)
    attention: torch.Tensor            # (B, n, H, W)
    relation: torch.Tensor             # (B, n, C, H, W) relational output s
    fused: Optional[torch.Tensor]      # (B, n, C_f, H, W), None without F&R
    local_probs: Optional[torch.Tensor] = None
    integrated_probs: Optional[torch.Tensor] = None
    final_probs: Optional[torch.Tensor] = None
    palsy_probs: Optional[torch.Tensor] = None


class ALGRNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.table = geometry.load_rule_table(cfg.rules)
        if self.table.mode != cfg.mode:
            raise ConfigError(f"rule table is for mode {self.table.mode!r}, model is {cfg.mode!r}")
        self.table.validate(cfg.num_landmarks)
        n, C, S = len(self.table), cfg.channels, cfg.map_size
        self.num_branches = n

        self.stem = Stem(cfg.in_channels, cfg.stem_width, C, cfg.input_size)
        self.align = AlignNet(C, S, cfg.num_landmarks, cfg.align_dim)
        self.adaptive = cfg.fixed_scale is None
        if self.adaptive:
            self.offset_head = OffsetHead(cfg.align_dim, n, S, cfg.region_hidden, cfg.offset_max)
            self.scale_head = ScaleHead(cfg.align_dim, n, cfg.region_hidden, cfg.e_max,
                                        cfg.init_scale)

        if not cfg.skip_bilstm:
            self.relational = NoRelation()
        elif cfg.plain_bilstm:
            self.relational = PlainBiLSTM(C, cfg.hidden, n)
        else:
            self.relational = SkipBiLSTM(C, cfg.hidden, n, cfg.cell_state_mode, cfg.gate_sharing)

        if cfg.fusion_refine:
            self.global_net = GlobalNet(C)
            self.fusion = GatedFusion(n, C, C, cfg.fused_channels)
            self.refiner = Refiner(n, cfg.fused_channels, cfg.refined_channels)
            head_channels = cfg.refined_channels
        else:
            head_channels = C

        if cfg.mode == "au":
            self.branch_head = BranchClassifier(n, head_channels)
            self.integrated_head = IntegratedClassifier(n, head_channels, cfg.align_dim, n,
                                                        cfg.head_hidden, kind="au")
        else:
            self.palsy_head = IntegratedClassifier(n, head_channels, cfg.align_dim, NUM_GRADES,
                                                   cfg.head_hidden, kind="palsy")
        self.reset_parameters()

    def reset_parameters(self):
        """He-normal init for every conv/linear layer (ReLU network), zero biases;
        the landmark regressor starts at zero (all landmarks at the map center)
        and the region heads keep their calibrated output layers."""
        for mod in self.modules():
            if isinstance(mod, (nn.Conv2d, nn.Linear)):
                nn.init.kaiming_normal_(mod.weight, nonlinearity="relu")
                if mod.bias is not None:
                    nn.init.zeros_(mod.bias)
        nn.init.zeros_(self.align.regress.weight)
        if self.adaptive:
            self.offset_head.reset_output()
            self.scale_head.reset_output()

    def regions(self, landmarks, a):
        B, n, S = landmarks.shape[0], self.num_branches, self.cfg.map_size
        if self.adaptive:
            offsets = self.offset_head(a)
            scales = self.scale_head(a)
        else:
            offsets = landmarks.new_zeros(B, 2 * n, 2)
            scales = landmarks.new_full((B, n), self.cfg.fixed_scale)
        centers = geometry.compute_centers(landmarks, self.table, offsets, size=(S, S))
        att = geometry.attention_maps(centers, scales, S, S, self.cfg.sigma_ratio)
        return offsets, scales, centers, att

    def forward(self, image):
        f = self.stem(image)
        landmarks, a = self.align(f)
        offsets, scales, centers, att = self.regions(landmarks, a)
        v = geometry.extract_patch_features(f, att)
        s = self.relational(v)
        if self.cfg.fusion_refine:
            fused = self.fusion(s, self.global_net(f))
            R = self.refiner(pad_to_multiple(fused, self.refiner.factor))
        else:
            fused, R = None, s
        out = Output(landmarks, a, offsets, scales, centers, att, s, fused)
        if self.cfg.mode == "au":
            out.local_probs = self.branch_head(R)
            out.integrated_probs = self.integrated_head(R, a)
            out.final_probs = final_probs(out.local_probs, out.integrated_probs)
        else:
            out.palsy_probs = self.palsy_head(R, a)
        return out
