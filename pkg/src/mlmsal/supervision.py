"""Ground-truth pipeline: foreground contours, resolution pyramids and the
assignment of mask (S) or contour (FC) targets to each prediction head."""
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import ConfigurationError, ValidationError


class GT(str, Enum):
    S = "S"
    FC = "FC"


ENCODER_HEADS = 6
DECODER_HEADS = 5

_VARIANTS = {
    # encoder kinds, decoder kinds (tuples: a head may carry several targets)
    "intertwined": (
        (GT.FC, GT.FC, GT.FC, GT.S, GT.S, GT.S),
        ((GT.S,), (GT.FC,), (GT.S,), (GT.FC,), (GT.S,)),
    ),
    "revised": (
        (GT.FC, GT.FC, GT.FC, GT.S, GT.S, GT.S),
        ((GT.S, GT.FC), (GT.S, GT.FC), (GT.S,), (GT.S,), (GT.S,)),
    ),
    "all-mask": (
        (GT.S,) * 6,
        ((GT.S,),) * 5,
    ),
}


@dataclass(frozen=True)
class SupervisionSchedule:
    variant: str = "intertwined"
    encoder_kinds: tuple = field(init=False)
    decoder_kinds: tuple = field(init=False)

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ConfigurationError(
                f"unknown schedule variant {self.variant!r}; choose from {sorted(_VARIANTS)}"
            )
        enc, dec = _VARIANTS[self.variant]
        object.__setattr__(self, "encoder_kinds", enc)
        object.__setattr__(self, "decoder_kinds", dec)


def head_targets(schedule, stage, index):
    """All ground-truth kinds supervising a head (the revised variant gives
    D0 and D1 both S and FC)."""
    if stage == "encoder":
        kinds = schedule.encoder_kinds
        if not 0 <= index < ENCODER_HEADS:
            raise ConfigurationError(f"encoder head index {index} outside 0..5")
        return (kinds[index],)
    if stage == "decoder":
        if not 0 <= index < DECODER_HEADS:
            raise ConfigurationError(f"decoder head index {index} outside 0..4")
        return schedule.decoder_kinds[index]
    raise ConfigurationError(f"unknown stage {stage!r}")


def assign_supervision(schedule, stage, index):
    """Primary ground-truth kind for head ``index`` of ``stage``."""
    return head_targets(schedule, stage, index)[0]


# --------------------------------------------------------------------------
# Foreground contour extraction
# --------------------------------------------------------------------------

def canny(image, sigma=1.0, low_ratio=0.1, high_ratio=0.3, backend=None):
    """Canny edges with thresholds given as fractions of the peak gradient."""
    img = np.asarray(image, dtype=np.float64)
    smooth = ndimage.gaussian_filter(img, sigma, mode="nearest")
    gy = ndimage.sobel(smooth, axis=0, mode="nearest")
    gx = ndimage.sobel(smooth, axis=1, mode="nearest")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak <= 1e-12:
        return np.zeros(img.shape, dtype=bool)
    thin = kernels.non_max_suppression(mag, gx, gy, backend=backend)
    return kernels.hysteresis(thin, low_ratio * peak, high_ratio * peak, backend=backend)


def extract_foreground_contour(s_gt, low=0.1, high=0.3, sigma=1.0, backend=None):
    """FC-gt: Canny on a binary saliency mask.  Returns a boolean map."""
    mask = np.asarray(s_gt)
    if mask.ndim != 2:
        raise ValidationError(f"mask must be 2-D, got shape {mask.shape}")
    vals = np.unique(mask)
    if not np.all(np.isin(vals, (0, 1))):
        raise ValidationError(f"mask is not binary; values include {vals[:5]}")
    return canny(mask.astype(np.float64), sigma, low, high, backend=backend)


def morphological_boundary(mask):
    """Foreground pixels with at least one background 8-neighbour."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, structure=np.ones((3, 3)), border_value=1)


# --------------------------------------------------------------------------
# Pyramids
# --------------------------------------------------------------------------

def _block_view(a, f):
    h, w = a.shape
    return a.reshape(h // f, f, w // f, f)


def downsample_mask(mask, size):
    """Area-average then re-binarise at 0.5."""
    h = mask.shape[0]
    if size == h:
        return (np.asarray(mask) >= 0.5).astype(np.float64)
    f = h // size
    return (_block_view(np.asarray(mask, dtype=np.float64), f).mean(axis=(1, 3)) >= 0.5).astype(
        np.float64
    )


def downsample_max(a, size):
    """Max-pool, which keeps 1-px curves alive at every level."""
    h = a.shape[0]
    a = np.asarray(a, dtype=np.float64)
    if size == h:
        return a.copy()
    return _block_view(a, h // size).max(axis=(1, 3))


def level_sizes(input_size, levels=6):
    return [input_size // 2 ** min(i, 5) for i in range(levels)]


@dataclass
class GroundTruthBundle:
    s_gt: np.ndarray | None = None
    fc_gt: np.ndarray | None = None
    e_gt: np.ndarray | None = None
    pyramids: dict = field(default_factory=dict)  # "S"/"FC"/"E" -> list of maps

    def level(self, kind, i):
        kind = kind.value if isinstance(kind, GT) else kind
        try:
            return self.pyramids[kind][i]
        except (KeyError, IndexError):
            raise ConfigurationError(f"missing pyramid level {i} for {kind}-gt") from None


def _check_scales(input_size, scales):
    if any(s <= 0 or input_size % s for s in scales):
        raise ConfigurationError(f"scales {scales} must divide input size {input_size}")
    if any(b > a for a, b in zip(scales, scales[1:])):
        raise ConfigurationError(f"scales must be non-increasing: {scales}")


def build_pyramids(bundle, scales):
    """Fill ``bundle.pyramids`` with one resized map per scale and signal."""
    ref = next(m for m in (bundle.s_gt, bundle.fc_gt, bundle.e_gt) if m is not None)
    size = ref.shape[0]
    if ref.shape[0] != ref.shape[1]:
        raise ConfigurationError(f"ground truth must be square, got {ref.shape}")
    _check_scales(size, scales)
    pyr = {}
    if bundle.s_gt is not None:
        pyr["S"] = [downsample_mask(bundle.s_gt, s) for s in scales]
    if bundle.fc_gt is not None:
        pyr["FC"] = [downsample_max(bundle.fc_gt, s) for s in scales]
    if bundle.e_gt is not None:
        pyr["E"] = [downsample_max(bundle.e_gt, s) for s in scales]
    bundle.pyramids = pyr
    return bundle


def saliency_bundle(mask, backend=None):
    mask = (np.asarray(mask) >= 0.5).astype(np.float64)
    fc = extract_foreground_contour(mask, backend=backend).astype(np.float64)
    bundle = GroundTruthBundle(s_gt=mask, fc_gt=fc)
    return build_pyramids(bundle, level_sizes(mask.shape[0]))


def edge_bundle(edge_map):
    e = np.clip(np.asarray(edge_map, dtype=np.float64), 0.0, 1.0)
    return build_pyramids(GroundTruthBundle(e_gt=e), level_sizes(e.shape[0]))
