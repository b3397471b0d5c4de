"""Training objective: BCE heads, pairwise L2 mimicry, encoder/decoder totals."""
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .errors import ConfigurationError, ShapeError
from .supervision import DECODER_HEADS, head_targets

EPS = 1e-7


@dataclass
class LossWeights:
    theta_s: float = 0.7
    theta_e: float = 0.2
    theta_m: float = 0.1
    r_s: tuple = (1.0,) * 6
    r_e: tuple = (1.0,) * 3
    r_mlm: tuple = (1.0,) * 6
    r_dec: tuple = (1.0,) * 5

    def __post_init__(self):
        for name, n in (("r_s", 6), ("r_e", 3), ("r_mlm", 6), ("r_dec", 5)):
            vals = tuple(float(v) for v in getattr(self, name))
            if len(vals) != n:
                raise ConfigurationError(f"{name} needs {n} entries, got {len(vals)}")
            setattr(self, name, vals)
        vals = [self.theta_s, self.theta_e, self.theta_m, *self.r_s, *self.r_e,
                *self.r_mlm, *self.r_dec]
        if any(v < 0 for v in vals):
            raise ConfigurationError("loss weights must be non-negative")

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class LossBreakdown:
    l_s: torch.Tensor
    l_e: torch.Tensor
    l_mimicry: torch.Tensor
    l_enc: torch.Tensor
    l_dec: torch.Tensor
    total: torch.Tensor = field(init=False)

    def __post_init__(self):
        self.total = self.l_enc + self.l_dec

    def as_floats(self):
        return {k: float(getattr(self, k).detach()) for k in ("l_s", "l_e", "l_mimicry", "l_enc", "l_dec", "total")}

    def is_finite(self):
        return all(np.isfinite(v) for v in self.as_floats().values())


def _as_tensor(x, like):
    if isinstance(x, torch.Tensor):
        return x.to(dtype=like.dtype)
    return torch.as_tensor(np.asarray(x), dtype=like.dtype)


def bce(pred, gt, eps=EPS):
    """Mean binary cross-entropy with the prediction clamped to [eps, 1-eps]."""
    gt = _as_tensor(gt, pred)
    p = pred
    if p.dim() > 2:
        if p.numel() != p.shape[-1] * p.shape[-2]:
            raise ShapeError(f"bce expects a single map, got {tuple(p.shape)}")
        p = p.reshape(p.shape[-2:])
    if p.shape != gt.shape:
        raise ShapeError(f"prediction {tuple(p.shape)} vs target {tuple(gt.shape)}")
    p = p.clamp(eps, 1.0 - eps)
    return -(gt * torch.log(p) + (1.0 - gt) * torch.log1p(-p)).mean()


def mimicry_loss(all_students, r_mlm):
    """Half the weighted sum over blocks of pairwise (n != m) mean squared
    differences between student predictions."""
    if len(r_mlm) != len(all_students):
        raise ShapeError(f"{len(all_students)} blocks but {len(r_mlm)} weights")
    total = None
    for r, preds in zip(r_mlm, all_students):
        shapes = {tuple(p.shape) for p in preds}
        if len(shapes) > 1:
            raise ShapeError(f"student predictions within a block differ in shape: {shapes}")
        for n, a in enumerate(preds):
            for m, b in enumerate(preds):
                if n == m:
                    continue
                term = 0.5 * r * ((a - b) ** 2).mean()
                total = term if total is None else total + term
    if total is None:
        ref = all_students[0][0] if all_students and all_students[0] else torch.zeros(())
        return torch.zeros((), dtype=ref.dtype)
    return total


def pairwise_l2(preds):
    """Mean over ordered student pairs of the per-pixel squared difference."""
    K = len(preds)
    if K < 2:
        return 0.0
    vals = [float(((a - b) ** 2).mean()) for n, a in enumerate(preds)
            for m, b in enumerate(preds) if n != m]
    return sum(vals) / len(vals)


def saliency_loss(mlm_preds, sal_gts, schedule, r_s):
    """Per block, mean over students of BCE against the scheduled S/FC level."""
    total = None
    for i, (r, preds) in enumerate(zip(r_s, mlm_preds)):
        kind = head_targets(schedule, "encoder", i)[0]
        target = sal_gts.level(kind, i)
        block = sum(bce(p, target) for p in preds) / len(preds)
        total = r * block if total is None else total + r * block
    return total


def edge_loss(em_preds, e_star, edge_gts, r_e):
    total = bce(e_star, edge_gts.level("E", 0))
    for i, (r, pred) in enumerate(zip(r_e, em_preds)):
        total = total + r * bce(pred, edge_gts.level("E", i))
    return total


def encoder_loss(mlm_preds, em_preds, e_star, sal_gts, edge_gts, schedule, weights):
    """Returns ``(l_enc, l_s, l_e, l_mimicry)``; edge terms are zero when
    ``em_preds`` is None."""
    l_s = saliency_loss(mlm_preds, sal_gts, schedule, weights.r_s)
    if em_preds is None:
        l_e = torch.zeros((), dtype=l_s.dtype)
    else:
        l_e = edge_loss(em_preds, e_star, edge_gts, weights.r_e)
    l_m = mimicry_loss(mlm_preds, weights.r_mlm)
    l_enc = weights.theta_s * l_s + weights.theta_e * l_e + weights.theta_m * l_m
    return l_enc, l_s, l_e, l_m


def decoder_loss(dec_preds, sal_gts, schedule, r_dec):
    if len(dec_preds) != DECODER_HEADS:
        raise ShapeError(f"decoder loss needs 5 predictions, got {len(dec_preds)}")
    total = None
    for i, (r, pred) in enumerate(zip(r_dec, dec_preds)):
        for kind in head_targets(schedule, "decoder", i):
            term = r * bce(pred, sal_gts.level(kind, DECODER_HEADS - 1 - i))
            total = term if total is None else total + term
    return total


def total_loss(sal_pass, edge_pass, sal_gts, edge_gts, schedule, weights):
    mlm_preds = sal_pass.student_predictions
    em_preds = e_star = None
    if edge_pass is not None:
        em_preds, e_star = edge_pass.edge_maps, edge_pass.e_star
    l_enc, l_s, l_e, l_m = encoder_loss(
        mlm_preds, em_preds, e_star, sal_gts, edge_gts, schedule, weights
    )
    l_dec = decoder_loss(sal_pass.decoder_output.predictions, sal_gts, schedule, weights.r_dec)
    return LossBreakdown(l_s, l_e, l_m, l_enc, l_dec)
