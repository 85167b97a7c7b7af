"""TVNet: edge-guided high-resolution fusion, neighbour-connection decoding and
cascaded foreground-background attention on a five-level feature pyramid."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from .backbone import BackboneSpec, build_backbone, extract_pyramid


def resize_to(x: torch.Tensor, size) -> torch.Tensor:
    size = tuple(size)
    if tuple(x.shape[-2:]) == size:
        return x
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


def conv3x3(cin: int, cout: int, bias: bool = True) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, 3, padding=1, bias=bias)


class BasicConv(nn.Sequential):
    def __init__(self, cin: int, cout: int, kernel: int = 3):
        super().__init__(
            nn.Conv2d(cin, cout, kernel, padding=kernel // 2, bias=False),
            nn.BatchNorm2d(cout),
            nn.ReLU(inplace=True),
        )


# --- attention gates -------------------------------------------------------


class ChannelAttention(nn.Module):
    """Squeeze-excitation gate from average- and max-pooled descriptors."""

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.mlp = nn.Sequential(
            nn.Conv2d(channels, hidden, 1, bias=False),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, channels, 1, bias=False),
        )

    def forward(self, x):
        avg = self.mlp(F.adaptive_avg_pool2d(x, 1))
        mx = self.mlp(F.adaptive_max_pool2d(x, 1))
        return torch.sigmoid(avg + mx)


class SpatialAttention(nn.Module):
    def __init__(self, kernel: int = 7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel, padding=kernel // 2, bias=False)

    def forward(self, x):
        desc = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(desc))


# --- HRF -------------------------------------------------------------------


class EdgeHead(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = conv3x3(channels, 1)

    def forward(self, f2):
        return self.conv(f2)


class HRF(nn.Module):
    """High-resolution fusion of the level-2 feature into level i.

    ``f~ = f_i + G(cat(f_i, G(resize(f2))))``, gated by channel then spatial
    attention, then projected to ``out_channels`` by a 1x1 convolution.
    """

    def __init__(self, low_channels, channels, out_channels, reduction=16, spatial_kernel=7):
        super().__init__()
        self.low = conv3x3(low_channels, channels)
        self.fuse = conv3x3(2 * channels, channels)
        self.channel_gate = ChannelAttention(channels, reduction)
        self.spatial_gate = SpatialAttention(spatial_kernel)
        self.project = nn.Conv2d(channels, out_channels, 1)

    def gated(self, f2, fi):
        """Feature after both attention gates, before the 1x1 projection."""
        low = self.low(resize_to(f2, fi.shape[-2:]))
        fused = fi + self.fuse(torch.cat([fi, low], dim=1))
        fused = self.channel_gate(fused) * fused
        return self.spatial_gate(fused) * fused

    def forward(self, f2, fi):
        return self.project(self.gated(f2, fi))


# --- NCD -------------------------------------------------------------------


class NeighborConnectionDecoder(nn.Module):
    """Neighbour-connection decoder over three refined levels (shallow to deep).

    The map is decoded at the shallowest level's resolution and resized to
    ``out_size`` (the deepest level's by default).
    """

    def __init__(self, channels: int):
        super().__init__()
        c = channels
        self.up1 = BasicConv(c, c)
        self.up2 = BasicConv(c, c)
        self.up3 = BasicConv(c, c)
        self.up4 = BasicConv(c, c)
        self.up5 = BasicConv(2 * c, 2 * c)
        self.cat2 = BasicConv(2 * c, 2 * c)
        self.cat3 = BasicConv(3 * c, 3 * c)
        self.conv4 = BasicConv(3 * c, 3 * c)
        self.head = nn.Conv2d(3 * c, 1, 1)

    def forward(self, f3, f4, f5, out_size=None):
        if not f3.shape[1] == f4.shape[1] == f5.shape[1]:
            raise ValueError(
                f"decoder inputs need equal channels, got {f3.shape[1]}, {f4.shape[1]}, {f5.shape[1]}"
            )
        s4, s3 = f4.shape[-2:], f3.shape[-2:]
        x4 = self.up1(resize_to(f5, s4)) * f4
        x3 = self.up2(resize_to(x4, s3)) * self.up3(resize_to(f4, s3)) * f3
        x4 = self.cat2(torch.cat([x4, self.up4(resize_to(f5, s4))], dim=1))
        x3 = self.cat3(torch.cat([x3, self.up5(resize_to(x4, s3))], dim=1))
        out = self.head(self.conv4(x3))
        return resize_to(out, f5.shape[-2:] if out_size is None else out_size)


# --- FBA -------------------------------------------------------------------


class RegionSensitiveMaps(NamedTuple):
    strong: torch.Tensor
    weak: torch.Tensor
    background: torch.Tensor


def decompose_regions(logits: torch.Tensor) -> RegionSensitiveMaps:
    """Split a prediction into strong-foreground, weak-foreground and background maps.

    With ``d = 2 sigmoid(P) - 1``: strong = max(d, 0), weak = 1 - |d|,
    background = max(-d, 0). The three maps sum to one everywhere.
    """
    d = 2.0 * torch.sigmoid(logits) - 1.0
    return RegionSensitiveMaps(torch.relu(d), 1.0 - d.abs(), torch.relu(-d))


class FBABlock(nn.Module):
    """One foreground-background attention step."""

    def __init__(self, channels: int, bias: bool = False):
        super().__init__()
        self.region_convs = nn.ModuleList(conv3x3(channels, channels, bias=bias) for _ in range(3))
        self.predict = nn.Conv2d(channels, 1, 1)

    def forward(self, feat, prev_logits):
        size = feat.shape[-2:]
        out = feat
        for conv, region in zip(self.region_convs, decompose_regions(prev_logits)):
            out = out + conv(resize_to(region, size) * feat)
        return out, self.predict(out) + resize_to(prev_logits, size)


class FBA(nn.Module):
    def __init__(self, channels: int, cascades: int = 2, bias: bool = False):
        super().__init__()
        if not 1 <= cascades <= 4:
            raise ValueError(f"cascades must be in 1..4, got {cascades}")
        self.blocks = nn.ModuleList(FBABlock(channels, bias) for _ in range(cascades))

    def forward(self, feat, prev_logits):
        for block in self.blocks:
            feat, prev_logits = block(feat, prev_logits)
        return feat, prev_logits


# --- full network ----------------------------------------------------------


@dataclass
class ModelConfig:
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    channels: int = 32
    cascades: int = 2
    use_hrf: bool = True
    use_fba: bool = True
    reduction: int = 16
    spatial_kernel: int = 7
    fba_bias: bool = False

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["backbone"] = self.backbone.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["backbone"] = BackboneSpec.from_dict(d["backbone"])
        return cls(**d)


@dataclass
class PredictionSet:
    p6: torch.Tensor
    final_prob: torch.Tensor
    edge_logits: torch.Tensor | None = None
    p5: torch.Tensor | None = None
    p4: torch.Tensor | None = None
    p3: torch.Tensor | None = None

    def levels(self) -> dict[int, torch.Tensor]:
        """Supervised mask logits keyed by level, deepest first."""
        out = {6: self.p6, 5: self.p5, 4: self.p4, 3: self.p3}
        return {k: v for k, v in out.items() if v is not None}


class TVNet(nn.Module):
    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = cfg = config or ModelConfig()
        self.backbone = build_backbone(cfg.backbone)
        ch = self.backbone.channels
        if cfg.use_hrf:
            self.edge_head = EdgeHead(ch[1])
            self.hrf = nn.ModuleList(
                HRF(ch[1], ch[i], cfg.channels, cfg.reduction, cfg.spatial_kernel) for i in (2, 3, 4)
            )
        else:
            self.reduce = nn.ModuleList(nn.Conv2d(ch[i], cfg.channels, 1) for i in (2, 3, 4))
        self.ncd = NeighborConnectionDecoder(cfg.channels)
        if cfg.use_fba:
            # index 0 refines level 5, then 4, then 3
            self.fba = nn.ModuleList(FBA(cfg.channels, cfg.cascades, cfg.fba_bias) for _ in range(3))

    def forward(self, image: torch.Tensor) -> PredictionSet:
        pyr = extract_pyramid(image, self.backbone)
        edge = None
        if self.config.use_hrf:
            edge = self.edge_head(pyr[2])
            refined = [hrf(pyr[2], pyr[i]) for hrf, i in zip(self.hrf, (3, 4, 5))]
        else:
            refined = [conv(pyr[i]) for conv, i in zip(self.reduce, (3, 4, 5))]
        p6 = self.ncd(*refined)
        preds = {}
        last = p6
        if self.config.use_fba:
            for fba, level in zip(self.fba, (5, 4, 3)):
                _, last = fba(refined[level - 3], last)
                preds[f"p{level}"] = last
        final = torch.sigmoid(resize_to(last, image.shape[-2:]))
        return PredictionSet(p6=p6, final_prob=final, edge_logits=edge, **preds)


MODULE_GROUPS = ("backbone", "edge_head", "hrf", "reduce", "ncd", "fba")


def parameter_summary(model: TVNet) -> dict[str, int]:
    counts = {}
    for name in MODULE_GROUPS:
        mod = getattr(model, name, None)
        counts[name] = sum(p.numel() for p in mod.parameters()) if mod is not None else 0
    counts["total"] = sum(p.numel() for p in model.parameters())
    return counts


def format_summary(model: TVNet) -> str:
    lines = [f"{k:<10} {v:>12,d}" for k, v in parameter_summary(model).items()]
    return "\n".join(lines) + "\n"
