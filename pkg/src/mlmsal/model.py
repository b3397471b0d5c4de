"""Full network: backbone + 6 MLMs + 3 EMs + decoder, and its configuration."""
from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from .backbone import Backbone, BackboneConfig, FULL_WIDTHS, TINY_WIDTHS
from .decoder import Decoder
from .edge_module import EdgeFusion, EdgeModule
from .errors import ConfigurationError
from .mutual_learning import MLMConfig, MutualLearningModule

DTYPES = {"float32": torch.float32, "float64": torch.float64}


def from_mapping(cls, mapping, what):
    """Instantiate a config dataclass, naming any unknown key."""
    if not isinstance(mapping, dict):
        raise ConfigurationError(f"{what} must be a mapping, got {type(mapping).__name__}")
    fields = {k for k, f in cls.__dataclass_fields__.items() if f.init}
    unknown = set(mapping) - fields
    if unknown:
        raise ConfigurationError(f"unknown {what} key(s): {sorted(unknown)}")
    return cls(**mapping)


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig.tiny)
    mlm: MLMConfig = field(default_factory=MLMConfig)
    edge_channels: int = 16
    use_edge_modules: bool = True
    decoder_width: int | None = None
    decoder_branch: int = 0
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if isinstance(self.backbone, dict):
            self.backbone = from_mapping(BackboneConfig, self.backbone, "backbone config")
        if isinstance(self.mlm, dict):
            self.mlm = from_mapping(MLMConfig, self.mlm, "mlm config")
        if self.dtype not in DTYPES:
            raise ConfigurationError(f"dtype must be one of {sorted(DTYPES)}, got {self.dtype!r}")
        if self.edge_channels < 1:
            raise ConfigurationError("edge_channels must be positive")
        if not 0 <= self.decoder_branch < self.mlm.K:
            raise ConfigurationError(
                f"decoder_branch {self.decoder_branch} outside 0..{self.mlm.K - 1}"
            )

    @classmethod
    def tiny(cls, **kw):
        return cls(backbone=BackboneConfig(block_widths=TINY_WIDTHS, input_size=64),
                   mlm=MLMConfig(hidden_channels=32), edge_channels=16, **kw)

    @classmethod
    def full(cls, **kw):
        return cls(backbone=BackboneConfig(block_widths=FULL_WIDTHS, input_size=256),
                   mlm=MLMConfig(hidden_channels=128), edge_channels=64, **kw)

    @property
    def input_size(self):
        return self.backbone.input_size

    @property
    def torch_dtype(self):
        return DTYPES[self.dtype]

    def to_dict(self):
        d = asdict(self)
        d["backbone"].pop("convs_per_block", None)
        d["backbone"]["block_widths"] = list(d["backbone"]["block_widths"])
        d["mlm"]["kernel_size_per_block"] = list(d["mlm"]["kernel_size_per_block"])
        d["mlm"]["dilation_per_block"] = list(d["mlm"]["dilation_per_block"])
        return d

    @classmethod
    def from_dict(cls, d):
        return from_mapping(cls, dict(d), "model config")


@dataclass
class SaliencyPass:
    mlm_outputs: list
    decoder_output: object

    @property
    def student_predictions(self):
        return [o.student_predictions for o in self.mlm_outputs]


@dataclass
class EdgePass:
    em_outputs: list
    e_star: torch.Tensor

    @property
    def edge_maps(self):
        return [o.edge_map for o in self.em_outputs]


class SaliencyNetwork(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        gen = torch.Generator().manual_seed(config.seed)
        self.backbone = Backbone(config.backbone, gen)
        widths = config.backbone.block_widths
        in_ch = list(widths) + [widths[-1]]  # block 5 is pool5 of block 4
        self.mlms = nn.ModuleList(
            MutualLearningModule(i, in_ch[i], config.mlm, config.decoder_branch, gen)
            for i in range(6)
        )
        self.ems = None
        self.edge_fusion = None
        if config.use_edge_modules:
            self.ems = nn.ModuleList(
                EdgeModule(i, widths[i], config.edge_channels, widths[i], gen) for i in range(3)
            )
            self.edge_fusion = EdgeFusion(config.edge_channels, gen)
        self.decoder = Decoder(config.mlm.hidden_channels, config.decoder_width, gen)
        self.to(config.torch_dtype)

    @property
    def dtype(self):
        return self.config.torch_dtype

    def encoder_parameters(self):
        mods = [self.backbone, self.mlms]
        if self.ems is not None:
            mods += [self.ems, self.edge_fusion]
        return [p for m in mods for p in m.parameters()]

    def decoder_parameters(self):
        return list(self.decoder.parameters())

    def _prepare(self, image):
        image = torch.as_tensor(image, dtype=self.dtype)
        return image.unsqueeze(0) if image.dim() == 3 else image

    def forward_saliency(self, image):
        """Saliency-image pass; edge modules contribute features only."""
        blocks = self.backbone(self._prepare(image))
        mlm_outputs = []
        for i, block in enumerate(blocks):
            injected = None
            if self.ems is not None and i < 3:
                # the MLM adds this to its input layer, i.e. residual_inject
                em = self.ems[i](block, with_map=False)
                injected = self.ems[i].inject(em.edge_features)
            mlm_outputs.append(self.mlms[i](block, injected))
        return SaliencyPass(mlm_outputs, self.decoder(mlm_outputs))

    def forward_edge(self, image):
        """Edge-image pass through blocks 0-2 and their edge modules only."""
        if self.ems is None:
            raise ConfigurationError("edge modules are disabled in this configuration")
        blocks = self.backbone(self._prepare(image), upto=3)
        em_outputs = [self.ems[i](b, with_map=True) for i, b in enumerate(blocks)]
        e_star = self.edge_fusion(em_outputs, self.config.input_size)
        return EdgePass(em_outputs, e_star)

    def forward(self, image):
        return self.forward_saliency(image)
