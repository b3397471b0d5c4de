"""Mutual learning modules: K peer student branches on top of each block."""
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .backbone import init_conv_
from .errors import ConfigurationError, ShapeError

# which activation of each block feeds the students (block 5 only has one)
INPUT_LAYER = (1, 1, 2, 2, 2, 0)

DEFAULT_KERNELS = (3, 3, 3, 5, 5, 5)
DEFAULT_DILATIONS = (1, 1, 1, 2, 2, 4)


@dataclass
class MLMConfig:
    K: int = 3
    kernel_size_per_block: tuple = DEFAULT_KERNELS
    dilation_per_block: tuple = DEFAULT_DILATIONS
    hidden_channels: int = 32

    def __post_init__(self):
        self.kernel_size_per_block = tuple(int(k) for k in self.kernel_size_per_block)
        self.dilation_per_block = tuple(int(d) for d in self.dilation_per_block)
        if self.K < 1:
            raise ConfigurationError(f"K must be >= 1, got {self.K}")
        if self.hidden_channels < 1:
            raise ConfigurationError("hidden_channels must be positive")
        ks, ds = self.kernel_size_per_block, self.dilation_per_block
        if len(ks) != 6 or len(ds) != 6:
            raise ConfigurationError("kernel and dilation schedules need 6 entries")
        if any(k < 1 or k % 2 == 0 for k in ks):
            raise ConfigurationError(f"kernel sizes must be odd and positive: {ks}")
        if any(d < 1 for d in ds):
            raise ConfigurationError(f"dilations must be >= 1: {ds}")
        if any(b < a for a, b in zip(ks, ks[1:])) or any(b < a for a, b in zip(ds, ds[1:])):
            raise ConfigurationError("kernel/dilation schedules must be non-decreasing with depth")


@dataclass
class MLMOutput:
    student_features: list
    student_predictions: list
    decoder_features: torch.Tensor = field(repr=False)

    @property
    def K(self):
        return len(self.student_predictions)


class Student(nn.Module):
    """conv(k, dilation) -> ReLU -> conv3x3 -> ReLU -> conv3x3 -> ReLU, then a 1x1 head."""

    def __init__(self, in_ch, hidden, kernel, dilation, generator=None):
        super().__init__()
        pad = dilation * (kernel - 1) // 2
        self.conv1 = nn.Conv2d(in_ch, hidden, kernel, padding=pad, dilation=dilation)
        self.conv2 = nn.Conv2d(hidden, hidden, 3, padding=1)
        self.conv3 = nn.Conv2d(hidden, hidden, 3, padding=1)
        self.head = nn.Conv2d(hidden, 1, 1)
        for conv in (self.conv1, self.conv2, self.conv3, self.head):
            init_conv_(conv, generator)

    def forward(self, x):
        x = F.relu(self.conv1(x))
        x = F.relu(self.conv2(x))
        feats = F.relu(self.conv3(x))
        return feats, torch.sigmoid(self.head(feats))


class MutualLearningModule(nn.Module):
    def __init__(self, block_index, in_channels, config, decoder_branch=0, generator=None):
        super().__init__()
        if not 0 <= decoder_branch < config.K:
            raise ConfigurationError(f"decoder_branch {decoder_branch} outside 0..{config.K - 1}")
        self.block_index = block_index
        self.decoder_branch = decoder_branch
        k = config.kernel_size_per_block[block_index]
        d = config.dilation_per_block[block_index]
        self.students = nn.ModuleList(
            Student(in_channels, config.hidden_channels, k, d, generator)
            for _ in range(config.K)
        )

    def forward(self, block, injected=None):
        x = block.layers[INPUT_LAYER[block.block_index]]
        if injected is not None:
            if injected.shape != x.shape:
                raise ShapeError(
                    f"injected features {tuple(injected.shape)} do not match "
                    f"block {block.block_index} input {tuple(x.shape)}"
                )
            x = x + injected
        feats, preds = [], []
        for student in self.students:
            f, p = student(x)
            feats.append(f)
            preds.append(p)
        return MLMOutput(feats, preds, feats[self.decoder_branch])


def mlm_forward(module, block, injected=None):
    return module(block, injected)


def select_test_branch(output, policy="fixed", index=0, seed=None):
    """Pick the student prediction used at inference.

    ``policy="fixed"`` returns student ``index``; ``policy="seeded-random"``
    draws uniformly with ``numpy.random.default_rng(seed)``.  Returns
    ``(prediction, chosen_index)``.
    """
    K = output.K
    if policy == "fixed":
        if not 0 <= index < K:
            raise ConfigurationError(f"branch index {index} outside 0..{K - 1}")
        chosen = index
    elif policy == "seeded-random":
        if seed is None:
            raise ConfigurationError("seeded-random policy needs a seed")
        chosen = int(np.random.default_rng(seed).integers(K))
    else:
        raise ConfigurationError(f"unknown branch policy {policy!r}")
    return output.student_predictions[chosen], chosen
