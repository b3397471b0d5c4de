"""Training harness: split-LR Adam, the two-image step, checkpoints, presets."""
import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from ._io import write_npz
from .data import paired_batches
from .errors import ConfigurationError, LoadError, TrainingDivergenceError
from .losses import LossWeights, pairwise_l2, total_loss
from .model import ModelConfig, SaliencyNetwork, from_mapping
from .supervision import SupervisionSchedule, edge_bundle, saliency_bundle

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
PRESETS = ("ALLSUP", "ALLSUP_MLM", "ALLSUP_ED_MLM")
LOG_COLUMNS = ("step", "l_s", "l_e", "l_mimicry", "l_dec", "total")


@dataclass
class TrainConfig:
    lr_encoder: float = 4e-4
    lr_decoder: float = 1e-4
    weight_decay: float = 0.005
    max_steps: int = 500
    seed: int = 0
    preset: str = "ALLSUP_ED_MLM"
    schedule: str = "intertwined"
    model: ModelConfig = field(default_factory=ModelConfig.tiny)
    weights: LossWeights = field(default_factory=LossWeights)
    checkpoint_every: int = 0
    branch_policy: str = "fixed"
    branch_index: int = 0

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if isinstance(self.weights, dict):
            self.weights = from_mapping(LossWeights, self.weights, "loss weights")
        if self.lr_encoder <= 0 or self.lr_decoder <= 0:
            raise ConfigurationError(
                f"learning rates must be positive (encoder={self.lr_encoder}, "
                f"decoder={self.lr_decoder})"
            )
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be non-negative")
        if self.max_steps < 0:
            raise ConfigurationError("max_steps must be non-negative")
        if self.preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {self.preset!r}; choose from {PRESETS}")
        SupervisionSchedule(self.schedule)  # validates the variant name
        self.model = apply_preset(self.model, self.preset)

    def to_dict(self):
        return {
            "lr_encoder": self.lr_encoder,
            "lr_decoder": self.lr_decoder,
            "weight_decay": self.weight_decay,
            "max_steps": self.max_steps,
            "seed": self.seed,
            "preset": self.preset,
            "schedule": self.schedule,
            "model": self.model.to_dict(),
            "weights": self.weights.to_dict(),
            "checkpoint_every": self.checkpoint_every,
            "branch_policy": self.branch_policy,
            "branch_index": self.branch_index,
        }

    @classmethod
    def from_dict(cls, d):
        return from_mapping(cls, dict(d), "training config")


def apply_preset(model_cfg, preset):
    """ALLSUP: one student, no edge modules; ALLSUP_MLM: three students;
    ALLSUP_ED_MLM: three students plus edge modules."""
    cfg = copy.deepcopy(model_cfg)
    if preset == "ALLSUP":
        cfg.mlm.K, cfg.use_edge_modules = 1, False
    elif preset == "ALLSUP_MLM":
        cfg.mlm.K, cfg.use_edge_modules = 3, False
    elif preset == "ALLSUP_ED_MLM":
        cfg.mlm.K, cfg.use_edge_modules = 3, True
    else:
        raise ConfigurationError(f"unknown preset {preset!r}")
    cfg.decoder_branch = min(cfg.decoder_branch, cfg.mlm.K - 1)
    return cfg


def make_optimizer(model, config):
    enc = model.encoder_parameters()
    dec = model.decoder_parameters()
    if not enc or not dec:
        raise ConfigurationError("both encoder and decoder parameter groups must be non-empty")
    if config.lr_encoder <= 0 or config.lr_decoder <= 0:
        raise ConfigurationError("learning rates must be positive")
    ids_enc, ids_dec = {id(p) for p in enc}, {id(p) for p in dec}
    if ids_enc & ids_dec or len(ids_enc | ids_dec) != len(list(model.parameters())):
        raise ConfigurationError("optimizer groups must partition the model parameters")
    # torch's Adam weight_decay is the loss-coupled L2 form
    return torch.optim.Adam(
        [
            {"params": enc, "lr": config.lr_encoder, "name": "encoder"},
            {"params": dec, "lr": config.lr_decoder, "name": "decoder"},
        ],
        weight_decay=config.weight_decay,
        foreach=False,
    )


class TrainState:
    def __init__(self, config, model=None, optimizer=None, step=0):
        self.config = config
        torch.manual_seed(config.seed)
        self.model = model if model is not None else SaliencyNetwork(config.model)
        self.optimizer = optimizer if optimizer is not None else make_optimizer(self.model, config)
        self.schedule = SupervisionSchedule(config.schedule)
        self.step = step
        self._gt_cache = {}

    def ground_truth(self, record):
        key = (record.kind, record.id)
        if key not in self._gt_cache:
            if record.kind == "saliency":
                self._gt_cache[key] = saliency_bundle(record.target)
            else:
                self._gt_cache[key] = edge_bundle(record.target)
        return self._gt_cache[key]


def compute_loss(state, sal_sample, edge_sample):
    """Forward both images and evaluate the combined objective."""
    model = state.model
    sal_pass = model.forward_saliency(sal_sample.image)
    edge_pass = None
    edge_gts = None
    if model.ems is not None:
        edge_pass = model.forward_edge(edge_sample.image)
        edge_gts = state.ground_truth(edge_sample)
    return total_loss(
        sal_pass, edge_pass, state.ground_truth(sal_sample), edge_gts,
        state.schedule, state.config.weights,
    )


def train_step(state, sal_sample, edge_sample):
    if sal_sample.kind != "saliency" or edge_sample.kind != "edge":
        raise ConfigurationError(
            f"train_step needs (saliency, edge) samples, got ({sal_sample.kind}, {edge_sample.kind})"
        )
    state.model.train()
    state.optimizer.zero_grad(set_to_none=True)
    breakdown = compute_loss(state, sal_sample, edge_sample)
    values = breakdown.as_floats()
    if not all(np.isfinite(v) for v in values.values()):
        raise TrainingDivergenceError(state.step, values)
    breakdown.total.backward()
    state.optimizer.step()
    state.step += 1
    return values


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

def save_checkpoint(state, path):
    arrays = {
        "meta/version": np.array(CHECKPOINT_VERSION),
        "meta/step": np.array(state.step),
        "meta/seed": np.array(state.config.seed),
        "meta/config": np.array(json.dumps(state.config.to_dict(), sort_keys=True)),
    }
    for name, p in state.model.named_parameters():
        arrays[f"param/{name}"] = p.detach().cpu().numpy()
        st = state.optimizer.state.get(p)
        if st:
            arrays[f"adam/{name}/exp_avg"] = st["exp_avg"].cpu().numpy()
            arrays[f"adam/{name}/exp_avg_sq"] = st["exp_avg_sq"].cpu().numpy()
            arrays[f"adam/{name}/step"] = st["step"].cpu().numpy()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_npz(path, arrays)
    return path


def load_checkpoint(path):
    """Rebuild a :class:`TrainState` (model, optimizer moments, step)."""
    path = Path(path)
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise LoadError(f"cannot read checkpoint {path}: {exc}") from exc
    with archive:
        try:
            version = int(archive["meta/version"])
            if version != CHECKPOINT_VERSION:
                raise LoadError(f"{path}: unsupported checkpoint version {version}")
            config = TrainConfig.from_dict(json.loads(str(archive["meta/config"])))
            state = TrainState(config, step=int(archive["meta/step"]))
            with torch.no_grad():
                for name, p in state.model.named_parameters():
                    arr = archive[f"param/{name}"]
                    if tuple(arr.shape) != tuple(p.shape):
                        raise LoadError(f"{path}: {name} shape {arr.shape} != {tuple(p.shape)}")
                    p.copy_(torch.from_numpy(arr))
                    if f"adam/{name}/exp_avg" in archive.files:
                        state.optimizer.state[p] = {
                            "step": torch.from_numpy(archive[f"adam/{name}/step"].copy()),
                            "exp_avg": torch.from_numpy(archive[f"adam/{name}/exp_avg"].copy()),
                            "exp_avg_sq": torch.from_numpy(archive[f"adam/{name}/exp_avg_sq"].copy()),
                        }
        except KeyError as exc:
            raise LoadError(f"{path}: missing array {exc}") from exc
        except ConfigurationError as exc:
            raise LoadError(f"{path}: incompatible configuration: {exc}") from exc
    return state


# --------------------------------------------------------------------------
# Loop
# --------------------------------------------------------------------------

def format_log_line(step, values):
    return ",".join([str(step)] + [repr(values[k]) for k in LOG_COLUMNS[1:]])


def fit(config, sal_records, edge_records, out_dir=None, resume_from=None, callback=None):
    """Run ``config.max_steps`` paired steps.  Returns ``(state, log_rows)``.

    With ``out_dir`` the loss log is appended to ``loss_log.csv`` and
    checkpoints are written every ``checkpoint_every`` steps plus at the end.
    ``callback(state, values)`` is invoked after each step.
    """
    if not sal_records or not edge_records:
        raise ConfigurationError("fit needs non-empty saliency and edge datasets")
    state = load_checkpoint(resume_from) if resume_from else TrainState(config)
    if resume_from:
        state.config = config if config is not None else state.config
    cfg = state.config
    out = Path(out_dir) if out_dir else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "loss_log.csv"
        fresh = state.step == 0 or not log_path.exists()
        log_fh = open(log_path, "w" if fresh else "a")
        if fresh:
            log_fh.write(",".join(LOG_COLUMNS) + "\n")
    rows = []
    try:
        stream = paired_batches(sal_records, edge_records, cfg.seed, start=state.step)
        while state.step < cfg.max_steps:
            sal, edge = next(stream)
            step = state.step
            values = train_step(state, sal, edge)
            rows.append((step, values))
            if log_fh is not None:
                log_fh.write(format_log_line(step, values) + "\n")
            if callback is not None:
                callback(state, values)
            if out is not None and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                save_checkpoint(state, out / f"checkpoint_{state.step:06d}.npz")
    finally:
        if log_fh is not None:
            log_fh.close()
    if out is not None:
        save_checkpoint(state, out / "checkpoint.npz")
    return state, rows


# --------------------------------------------------------------------------
# Inference
# --------------------------------------------------------------------------

def _branch_indices(K, policy, index, seed):
    if policy == "fixed":
        if not 0 <= index < K:
            raise ConfigurationError(f"branch index {index} outside 0..{K - 1}")
        return [index] * 6
    if policy == "seeded-random":
        rng = np.random.default_rng(seed)
        return [int(i) for i in rng.integers(K, size=6)]
    raise ConfigurationError(f"unknown branch policy {policy!r}")


@torch.no_grad()
def predict_maps(model, image, branch_policy="fixed", branch_index=0, seed=None):
    """Saliency (decoder D4) and E* for one (3, H, W) image at network size."""
    model.eval()
    saved = [m.decoder_branch for m in model.mlms]
    try:
        for m, b in zip(model.mlms, _branch_indices(model.config.mlm.K, branch_policy,
                                                    branch_index, seed)):
            m.decoder_branch = b
        sal = model.forward_saliency(image).decoder_output.final_map
        edge = model.forward_edge(image).e_star if model.ems is not None else None
    finally:
        for m, b in zip(model.mlms, saved):
            m.decoder_branch = b
    return sal, edge


def _resize_map(t, size):
    if t is None:
        return None
    if tuple(t.shape[-2:]) != tuple(size):
        t = F.interpolate(t, size=tuple(size), mode="bilinear", align_corners=False)
    return t[0, 0].clamp(0.0, 1.0).cpu().numpy().astype(np.float64)


def predict(checkpoint, image, branch_policy=None, branch_index=None, seed=None):
    """Predict on an arbitrary-size (3, H, W) image in [0, 1].

    ``checkpoint`` is a path or a :class:`TrainState`.  Maps are resized back
    to (H, W); ``edge`` is None when the model has no edge modules.
    """
    from .data import resize_image

    state = checkpoint if isinstance(checkpoint, TrainState) else load_checkpoint(checkpoint)
    cfg = state.config
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ConfigurationError(f"expected a (3, H, W) image, got {image.shape}")
    size = cfg.model.input_size
    net_in = resize_image(image, size)
    sal, edge = predict_maps(
        state.model, net_in,
        branch_policy or cfg.branch_policy,
        cfg.branch_index if branch_index is None else branch_index,
        cfg.seed if seed is None else seed,
    )
    orig = image.shape[1:]
    return {"saliency": _resize_map(sal, orig), "edge": _resize_map(edge, orig)}


@torch.no_grad()
def student_disagreement(model, records):
    """Per block, dataset mean of the pairwise L2 between student predictions."""
    model.eval()
    per_block = np.zeros(6)
    for rec in records:
        sp = model.forward_saliency(rec.image)
        per_block += [pairwise_l2(preds) for preds in sp.student_predictions]
    return per_block / max(len(records), 1)


@torch.no_grad()
def predict_dataset(model, records, **kw):
    return [predict_maps(model, r.image, **kw) for r in records]
