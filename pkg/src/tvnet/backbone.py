"""Five-level feature extractors honouring the stride-2^i pyramid contract."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import nn

MIN_SIZE = 64
STRIDE = 32


@dataclass
class BackboneSpec:
    """Which feature extractor to build.

    ``kind`` is ``"toy"`` (small 5-stage CNN) or ``"res2net50"``
    (Res2Net-50 26w x 4s, random init unless ``weights`` points at a state dict).
    """

    kind: str = "toy"
    widths: tuple[int, ...] = (8, 16, 32, 48, 64)
    weights: str | None = None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "widths": list(self.widths), "weights": self.weights}

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneSpec":
        return cls(kind=d["kind"], widths=tuple(d["widths"]), weights=d.get("weights"))


@dataclass
class FeaturePyramid:
    levels: list[torch.Tensor] = field(default_factory=list)

    def __getitem__(self, i: int) -> torch.Tensor:
        """1-based access, f1..f5."""
        return self.levels[i - 1]

    def __len__(self) -> int:
        return len(self.levels)


def conv_bn_relu(cin: int, cout: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride, 1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class ToyBackbone(nn.Module):
    def __init__(self, widths=(8, 16, 32, 48, 64)):
        super().__init__()
        if len(widths) != 5:
            raise ValueError(f"toy backbone needs 5 widths, got {widths}")
        self.channels = tuple(widths)
        stages = []
        cin = 3
        for w in widths:
            stages.append(nn.Sequential(conv_bn_relu(cin, w, stride=2), conv_bn_relu(w, w)))
            cin = w
        self.stages = nn.ModuleList(stages)

    def forward(self, x):
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class Bottle2neck(nn.Module):
    expansion = 4

    def __init__(self, inplanes, planes, stride=1, downsample=None, base_width=26, scale=4, stype="normal"):
        super().__init__()
        width = int(math.floor(planes * (base_width / 64.0)))
        self.conv1 = nn.Conv2d(inplanes, width * scale, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(width * scale)
        self.nums = 1 if scale == 1 else scale - 1
        if stype == "stage":
            self.pool = nn.AvgPool2d(3, stride=stride, padding=1)
        self.convs = nn.ModuleList(
            nn.Conv2d(width, width, 3, stride, 1, bias=False) for _ in range(self.nums)
        )
        self.bns = nn.ModuleList(nn.BatchNorm2d(width) for _ in range(self.nums))
        self.conv3 = nn.Conv2d(width * scale, planes * self.expansion, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(planes * self.expansion)
        self.relu = nn.ReLU(inplace=True)
        self.downsample = downsample
        self.stype = stype
        self.scale = scale
        self.width = width

    def forward(self, x):
        residual = x
        out = self.relu(self.bn1(self.conv1(x)))
        spx = torch.split(out, self.width, 1)
        for i in range(self.nums):
            sp = spx[i] if i == 0 or self.stype == "stage" else sp + spx[i]
            sp = self.relu(self.bns[i](self.convs[i](sp)))
            out = sp if i == 0 else torch.cat((out, sp), 1)
        if self.scale != 1 and self.stype == "normal":
            out = torch.cat((out, spx[self.nums]), 1)
        elif self.scale != 1 and self.stype == "stage":
            out = torch.cat((out, self.pool(spx[self.nums])), 1)
        out = self.bn3(self.conv3(out))
        if self.downsample is not None:
            residual = self.downsample(x)
        return self.relu(out + residual)


class Res2Net(nn.Module):
    """Res2Net with the stem output exposed as level 1 (stride 2)."""

    def __init__(self, layers=(3, 4, 6, 3), base_width=26, scale=4):
        super().__init__()
        self.inplanes = 64
        self.base_width = base_width
        self.scale = scale
        self.conv1 = nn.Conv2d(3, 64, 7, 2, 3, bias=False)
        self.bn1 = nn.BatchNorm2d(64)
        self.relu = nn.ReLU(inplace=True)
        self.maxpool = nn.MaxPool2d(3, 2, 1)
        self.layer1 = self._make_layer(64, layers[0])
        self.layer2 = self._make_layer(128, layers[1], stride=2)
        self.layer3 = self._make_layer(256, layers[2], stride=2)
        self.layer4 = self._make_layer(512, layers[3], stride=2)
        self.channels = (64, 256, 512, 1024, 2048)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")

    def _make_layer(self, planes, blocks, stride=1):
        downsample = None
        if stride != 1 or self.inplanes != planes * Bottle2neck.expansion:
            downsample = nn.Sequential(
                nn.Conv2d(self.inplanes, planes * Bottle2neck.expansion, 1, stride, bias=False),
                nn.BatchNorm2d(planes * Bottle2neck.expansion),
            )
        layers = [
            Bottle2neck(self.inplanes, planes, stride, downsample, self.base_width, self.scale, "stage")
        ]
        self.inplanes = planes * Bottle2neck.expansion
        for _ in range(1, blocks):
            layers.append(Bottle2neck(self.inplanes, planes, base_width=self.base_width, scale=self.scale))
        return nn.Sequential(*layers)

    def forward(self, x):
        f1 = self.relu(self.bn1(self.conv1(x)))
        f2 = self.layer1(self.maxpool(f1))
        f3 = self.layer2(f2)
        f4 = self.layer3(f3)
        f5 = self.layer4(f4)
        return [f1, f2, f3, f4, f5]


def build_backbone(spec: BackboneSpec) -> nn.Module:
    if spec.kind == "toy":
        net = ToyBackbone(spec.widths)
    elif spec.kind == "res2net50":
        net = Res2Net()
    else:
        raise ValueError(f"unknown backbone kind {spec.kind!r}")
    if spec.weights:
        state = torch.load(Path(spec.weights), map_location="cpu", weights_only=True)
        # classifier weights in published checkpoints are unused here
        state = {k: v for k, v in state.items() if not k.startswith("fc.")}
        net.load_state_dict(state)
    return net


def check_input_size(h: int, w: int) -> None:
    if h < MIN_SIZE or w < MIN_SIZE or h % STRIDE or w % STRIDE:
        raise ValueError(
            f"input {h}x{w} must be at least {MIN_SIZE} and divisible by {STRIDE}; pad or resize first"
        )


def extract_pyramid(image: torch.Tensor, backbone: nn.Module) -> FeaturePyramid:
    check_input_size(*image.shape[-2:])
    return FeaturePyramid(list(backbone(image)))
