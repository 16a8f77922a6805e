"""Frozen torchvision backbones with taps on the intermediate residual stages.

Level ``l`` is the output of ``layer{l}`` of a ResNet-style network, so levels
1..4 have strides 4/8/16/32.  The network runs in eval mode under no_grad;
nothing here is ever trained.
"""

import torch
from torchvision import models

BACKBONES = {
    "wideresnet50": models.wide_resnet50_2,
    "resnet18": models.resnet18,
    "resnet50": models.resnet50,
    "resnet101": models.resnet101,
}

_WEIGHT_ENUMS = {
    "wideresnet50": "Wide_ResNet50_2_Weights",
    "resnet18": "ResNet18_Weights",
    "resnet50": "ResNet50_Weights",
    "resnet101": "ResNet101_Weights",
}


class FeatureBackbone:
    """Runs images through a frozen classifier trunk and returns level maps."""

    def __init__(self, name: str, levels, pretrained: bool = True, seed: int = 0):
        if name not in BACKBONES:
            raise ValueError(f"unknown backbone {name!r}; choose from {sorted(BACKBONES)}")
        levels = tuple(sorted(int(l) for l in levels))
        if not levels or any(l < 1 or l > 4 for l in levels):
            raise ValueError(f"levels must be within 1..4, got {levels}")
        self.name = name
        self.levels = levels
        if pretrained:
            weights = getattr(models, _WEIGHT_ENUMS[name]).DEFAULT
        else:
            weights = None
            torch.manual_seed(seed)  # reproducible random trunk for offline tests
        self.net = BACKBONES[name](weights=weights)
        self.net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)

    @torch.no_grad()
    def extract(self, batch: torch.Tensor) -> dict:
        """(N, 3, H, W) float tensor -> {level: (N, H_l, W_l, C_l) float32 numpy}."""
        net = self.net
        x = net.conv1(batch)
        x = net.bn1(x)
        x = net.relu(x)
        x = net.maxpool(x)
        wanted = {}
        for level, stage in enumerate((net.layer1, net.layer2, net.layer3, net.layer4), start=1):
            x = stage(x)
            if level in self.levels:
                wanted[level] = x.permute(0, 2, 3, 1).contiguous().numpy().astype("float32")
            if level >= max(self.levels):
                break
        return wanted
