"""Edge modules on blocks 0-2, edge-map fusion and residual injection."""
from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F

from .backbone import init_conv_
from .errors import ConfigurationError, ShapeError

# activations consumed per block: (v_i0, v_i1) for blocks 0-1, (v_i0, v_i1, v_i2) for block 2
EM_LAYERS = {0: (0, 1), 1: (0, 1), 2: (0, 1, 2)}


@dataclass
class EMOutput:
    edge_features: torch.Tensor
    edge_map: torch.Tensor | None


class EdgeModule(nn.Module):
    """One 3x3 projection per consumed layer, summed, then a 3x3 conv.

    ``inject`` is the zero-initialised 1x1 projection that maps edge features
    back onto the channel count of the MLM input.
    """

    def __init__(self, block_index, in_channels, edge_channels, mlm_in_channels, generator=None):
        super().__init__()
        if block_index not in EM_LAYERS:
            raise ConfigurationError(f"edge modules exist for blocks 0-2 only, got {block_index}")
        self.block_index = block_index
        self.layer_ids = EM_LAYERS[block_index]
        self.proj = nn.ModuleList(
            nn.Conv2d(in_channels, edge_channels, 3, padding=1) for _ in self.layer_ids
        )
        self.fuse = nn.Conv2d(edge_channels, edge_channels, 3, padding=1)
        self.head = nn.Conv2d(edge_channels, 1, 1)
        for conv in (*self.proj, self.fuse, self.head):
            init_conv_(conv, generator)
        self.inject = nn.Conv2d(edge_channels, mlm_in_channels, 1)
        nn.init.zeros_(self.inject.weight)
        nn.init.zeros_(self.inject.bias)

    def forward(self, block, with_map=True):
        if block.block_index != self.block_index:
            raise ConfigurationError(
                f"edge module {self.block_index} received block {block.block_index}"
            )
        x = sum(p(block.layers[j]) for p, j in zip(self.proj, self.layer_ids))
        feats = F.relu(self.fuse(F.relu(x)))
        edge_map = torch.sigmoid(self.head(feats)) if with_map else None
        return EMOutput(feats, edge_map)


class EdgeFusion(nn.Module):
    """Bilinear upsampling of the three edge features, concat, 1x1 conv, sigmoid."""

    def __init__(self, edge_channels, generator=None):
        super().__init__()
        self.conv = nn.Conv2d(3 * edge_channels, 1, 1)
        init_conv_(self.conv, generator)

    def forward(self, outputs, target_size):
        if len(outputs) != 3:
            raise ConfigurationError(f"edge fusion needs exactly 3 inputs, got {len(outputs)}")
        ups = [
            o.edge_features if o.edge_features.shape[-1] == target_size else F.interpolate(
                o.edge_features, size=(target_size, target_size),
                mode="bilinear", align_corners=False,
            )
            for o in outputs
        ]
        return torch.sigmoid(self.conv(torch.cat(ups, dim=1)))


def em_forward(module, block, with_map=True):
    if block.block_index > 2:
        raise ConfigurationError(f"no edge module on block {block.block_index}")
    return module(block, with_map=with_map)


def merge_edge_maps(fusion, outputs, target_size):
    return fusion(outputs, target_size)


def residual_inject(em_features, block_layer, projection):
    """``block_layer + projection(em_features)``; shapes must agree spatially."""
    if em_features.shape[-2:] != block_layer.shape[-2:]:
        raise ShapeError(
            f"edge features {tuple(em_features.shape[-2:])} vs block layer "
            f"{tuple(block_layer.shape[-2:])}"
        )
    return block_layer + projection(em_features)
