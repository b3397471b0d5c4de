"""U-shaped deeply supervised decoder D0-D4.

D0 fuses the (upsampled) MLM5 features with MLM4; D_i for i >= 1 fuses the
transposed-conv output of D_{i-1} with MLM_{4-i}.  Each block predicts a map
at its own resolution, so D4 is the full-resolution saliency output.
"""
from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F

from .backbone import init_conv_
from .errors import ShapeError


@dataclass
class DecoderOutput:
    predictions: list  # D0 .. D4, coarse to fine

    @property
    def final_map(self):
        return self.predictions[-1]


def _init_deconv_(deconv, generator=None):
    fan_in = deconv.in_channels * deconv.kernel_size[0] * deconv.kernel_size[1] // 4
    with torch.no_grad():
        deconv.weight.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=generator)
        deconv.bias.zero_()


class DecoderBlock(nn.Module):
    def __init__(self, in_ch, width, upsample, generator=None):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, width, 3, padding=1)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)
        self.head = nn.Conv2d(width, 1, 1)
        for conv in (self.conv1, self.conv2, self.head):
            init_conv_(conv, generator)
        self.up = None
        if upsample:
            self.up = nn.ConvTranspose2d(width, width, 2, stride=2)
            _init_deconv_(self.up, generator)

    def forward(self, skip, prev):
        x = torch.cat([prev, skip], dim=1)
        x = F.relu(self.conv1(x))
        x = F.relu(self.conv2(x))
        pred = torch.sigmoid(self.head(x))
        nxt = F.relu(self.up(x)) if self.up is not None else None
        return pred, nxt


class Decoder(nn.Module):
    def __init__(self, mlm_channels, width=None, generator=None):
        super().__init__()
        width = width or max(mlm_channels, 32)
        self.width = width
        self.seed_up = nn.ConvTranspose2d(mlm_channels, width, 2, stride=2)
        _init_deconv_(self.seed_up, generator)
        self.blocks = nn.ModuleList(
            DecoderBlock(width + mlm_channels, width, upsample=i < 4, generator=generator)
            for i in range(5)
        )

    def forward(self, mlm_outputs):
        if len(mlm_outputs) != 6:
            raise ShapeError(f"decoder needs 6 MLM outputs, got {len(mlm_outputs)}")
        sizes = [o.decoder_features.shape[-1] for o in mlm_outputs]
        if any(b >= a for a, b in zip(sizes, sizes[1:])):
            raise ShapeError(f"MLM feature sizes must strictly decrease, got {sizes}")
        prev = F.relu(self.seed_up(mlm_outputs[5].decoder_features))
        preds = []
        for i, block in enumerate(self.blocks):
            skip = mlm_outputs[4 - i].decoder_features
            if prev.shape[-2:] != skip.shape[-2:]:
                raise ShapeError(
                    f"D{i}: upsampled {tuple(prev.shape[-2:])} vs MLM{4 - i} {tuple(skip.shape[-2:])}"
                )
            pred, prev = block(skip, prev)
            preds.append(pred)
        return DecoderOutput(preds)


def decoder_forward(decoder, mlm_outputs):
    return decoder(mlm_outputs)
