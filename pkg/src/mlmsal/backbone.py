"""VGG-16 encoder truncated after pool5.

Blocks 0-4 are the five convolution stages (2-2-3-3-3 layers, 3x3 stride 1
pad 1, ReLU); block 5 is the final 2x2 max-pool alone.  Every block reports
all of its post-ReLU activations so the mutual-learning and edge modules can
pick the layers they consume.
"""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from ._io import write_npz
from .errors import ConfigurationError, LoadError, ShapeError, ValidationError

CONVS_PER_BLOCK = (2, 2, 3, 3, 3)

TINY_WIDTHS = (8, 16, 32, 32, 32)
FULL_WIDTHS = (64, 128, 256, 512, 512)


@dataclass
class BackboneConfig:
    block_widths: tuple = TINY_WIDTHS
    input_size: int = 64
    init_policy: str = "random"  # "random" or "external-weights-file"
    weights_file: str | None = None
    convs_per_block: tuple = field(default=CONVS_PER_BLOCK, init=False)

    def __post_init__(self):
        self.block_widths = tuple(int(w) for w in self.block_widths)
        if len(self.block_widths) != 5:
            raise ConfigurationError(
                f"block_widths needs 5 entries, got {len(self.block_widths)}"
            )
        if any(w <= 0 for w in self.block_widths):
            raise ConfigurationError(f"block_widths must be positive: {self.block_widths}")
        if self.input_size <= 0 or self.input_size % 32:
            raise ConfigurationError(
                f"input_size must be a positive multiple of 32, got {self.input_size}"
            )
        if self.init_policy not in ("random", "external-weights-file"):
            raise ConfigurationError(f"unknown init_policy {self.init_policy!r}")
        if self.init_policy == "external-weights-file" and not self.weights_file:
            raise ConfigurationError("init_policy 'external-weights-file' needs weights_file")

    @classmethod
    def tiny(cls, **kw):
        return cls(block_widths=TINY_WIDTHS, input_size=64, **kw)

    @classmethod
    def full(cls, **kw):
        return cls(block_widths=FULL_WIDTHS, input_size=256, **kw)


@dataclass
class BlockFeatures:
    """Activations of one encoder block, each shaped (N, C, H, W)."""

    block_index: int
    layers: list
    spatial_scale: int

    @property
    def channels(self):
        return self.layers[0].shape[1]

    @property
    def size(self):
        return self.layers[0].shape[-1]


def init_conv_(conv, generator=None):
    """Fan-in scaled normal weights (He), zero bias."""
    fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
    std = (2.0 / fan_in) ** 0.5
    with torch.no_grad():
        conv.weight.normal_(0.0, std, generator=generator)
        if conv.bias is not None:
            conv.bias.zero_()


class Backbone(nn.Module):
    def __init__(self, config, generator=None):
        super().__init__()
        self.config = config
        self.blocks = nn.ModuleList()
        in_ch = 3
        for n_convs, width in zip(CONVS_PER_BLOCK, config.block_widths):
            convs = nn.ModuleList()
            for _ in range(n_convs):
                conv = nn.Conv2d(in_ch, width, 3, stride=1, padding=1)
                init_conv_(conv, generator)
                convs.append(conv)
                in_ch = width
            self.blocks.append(convs)
        if config.init_policy == "external-weights-file":
            self.load_weights(config.weights_file)

    def forward(self, image, upto=6):
        """Return ``BlockFeatures`` for blocks ``0 .. upto-1``."""
        size = self.config.input_size
        if image.dim() == 3:
            image = image.unsqueeze(0)
        if image.dim() != 4 or image.shape[1] != 3 or image.shape[-2:] != (size, size):
            raise ShapeError(f"expected (N, 3, {size}, {size}) input, got {tuple(image.shape)}")
        if not torch.isfinite(image).all():
            raise ValidationError("input image contains non-finite values")
        out = []
        x = image
        for i, convs in enumerate(self.blocks):
            if i >= upto:
                return out
            if i > 0:
                x = F.max_pool2d(x, 2, 2)
            layers = []
            for conv in convs:
                x = F.relu(conv(x))
                layers.append(x)
            out.append(BlockFeatures(i, layers, 2 ** i))
        if upto > 5:
            out.append(BlockFeatures(5, [F.max_pool2d(x, 2, 2)], 2 ** 5))
        return out

    def named_weight_arrays(self):
        arrays = {}
        for i, convs in enumerate(self.blocks):
            for j, conv in enumerate(convs):
                arrays[f"block{i}.conv{j}.weight"] = conv.weight.detach().cpu().numpy()
                arrays[f"block{i}.conv{j}.bias"] = conv.bias.detach().cpu().numpy()
        return arrays

    def save_weights(self, path):
        write_npz(path, self.named_weight_arrays())

    def load_weights(self, path):
        path = Path(path)
        try:
            archive = np.load(path)
        except (OSError, ValueError) as exc:
            raise LoadError(f"cannot read weights file {path}: {exc}") from exc
        with archive, torch.no_grad():
            for i, convs in enumerate(self.blocks):
                for j, conv in enumerate(convs):
                    for name, param in (("weight", conv.weight), ("bias", conv.bias)):
                        key = f"block{i}.conv{j}.{name}"
                        if key not in archive.files:
                            raise LoadError(f"{path}: missing array {key!r}")
                        arr = archive[key]
                        if tuple(arr.shape) != tuple(param.shape):
                            raise LoadError(
                                f"{path}: {key} has shape {arr.shape}, expected {tuple(param.shape)}"
                            )
                        param.copy_(torch.as_tensor(arr, dtype=param.dtype))


def build_backbone(config, generator=None):
    return Backbone(config, generator)


def backbone_forward(backbone, image):
    return backbone(image)
