"""Structured run configuration: nested dataclasses, YAML round-trip, validation.

Every tunable of the pipeline lives here so that a run is fully described by
one file plus a seed. ``Config.config_hash()`` fingerprints the resolved
configuration for checkpoints and metric reports.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml


class ConfigError(ValueError):
    """Raised when a config file or override fails validation."""


@dataclass
class DataConfig:
    root: str = "data/shapes"
    resolution: int = 32
    n_train: int = 2000
    n_test: int = 500
    n_frames: int = 15

    def validate(self):
        if self.resolution not in (32, 64):
            raise ConfigError(f"data.resolution must be 32 or 64, got {self.resolution}")
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("data.n_train and data.n_test must be >= 1")
        if self.n_frames < 2:
            raise ConfigError("data.n_frames must be >= 2")


@dataclass
class LatentConfig:
    dim_tr: int = 3
    dim_ti: int = 2
    dim_dyn: int = 1

    @property
    def dim_st(self) -> int:
        return self.dim_tr + self.dim_ti

    @property
    def total(self) -> int:
        return self.dim_st + self.dim_dyn

    def validate(self):
        for name in ("dim_tr", "dim_ti", "dim_dyn"):
            if getattr(self, name) < 1:
                raise ConfigError(f"latent.{name} must be >= 1")


@dataclass
class OdeConfig:
    method: str = "rk4"           # training default; evaluation uses dopri5
    rtol: float = 1e-7
    atol: float = 1e-9
    max_steps: int = 20           # rk4: total fixed steps; dopri5: step budget
    initial_step: float | None = None

    def validate(self):
        if self.method not in ("dopri5", "rk4"):
            raise ConfigError(f"ode.method must be dopri5 or rk4, got {self.method!r}")
        if self.rtol <= 0 or self.atol <= 0:
            raise ConfigError("ode.rtol and ode.atol must be > 0")
        if self.max_steps < 1:
            raise ConfigError("ode.max_steps must be >= 1")


@dataclass
class RepNetConfig:
    feature_dim: int = 256
    hidden_split: int = 128       # static slice of the 256-dim frame feature
    gru_hidden: int = 256
    ode_hidden: int = 64
    encoder_channels: tuple = (32, 32, 64, 128, 128)

    def validate(self):
        if not 1 <= self.hidden_split < self.feature_dim:
            raise ConfigError("repnet.hidden_split must be in [1, feature_dim)")
        if len(self.encoder_channels) < 1:
            raise ConfigError("repnet.encoder_channels must be non-empty")


@dataclass
class MfmodConfig:
    blocks: int = 5
    stats: str = "batch"          # batch | instance
    eps: float = 1e-5
    width: int = 512

    def validate(self):
        if self.stats not in ("batch", "instance"):
            raise ConfigError(f"mfmod.stats must be batch or instance, got {self.stats!r}")
        if self.blocks < 1 or self.width < 1:
            raise ConfigError("mfmod.blocks and mfmod.width must be >= 1")
        if self.eps <= 0:
            raise ConfigError("mfmod.eps must be > 0")


@dataclass
class GanConfig:
    # 3 scales need the coarsest pyramid level to survive the four stride-2
    # convs, i.e. resolution >= 64; the 32px desk default runs 2 scales
    loss: str = "lsgan"           # lsgan | hinge
    scales: int = 2
    disc_channels: tuple = (64, 128, 256, 512)

    def validate(self):
        if self.loss not in ("lsgan", "hinge"):
            raise ConfigError(f"gan.loss must be lsgan or hinge, got {self.loss!r}")
        if self.scales < 1:
            raise ConfigError("gan.scales must be >= 1")


@dataclass
class LossConfig:
    beta: float = 32.0
    lambda_l1: float = 1.0
    lambda_u: float = 0.5
    lambda_t: float = 1.0
    recon: str = "bernoulli"      # bernoulli | gaussian
    kl_static: str = "per_frame"  # per_frame | pooled
    perceptual: str = "random_conv"  # random_conv | vgg_adapter | identity
    unsup_encoder_grad: str = "stop"  # stop | flow

    def validate(self):
        for name in ("beta", "lambda_l1", "lambda_u", "lambda_t"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss.{name} must be >= 0")
        if self.recon not in ("bernoulli", "gaussian"):
            raise ConfigError(f"loss.recon must be bernoulli or gaussian, got {self.recon!r}")
        if self.kl_static not in ("per_frame", "pooled"):
            raise ConfigError("loss.kl_static must be per_frame or pooled")
        if self.perceptual not in ("random_conv", "vgg_adapter", "identity"):
            raise ConfigError(f"unknown loss.perceptual {self.perceptual!r}")
        if self.unsup_encoder_grad not in ("stop", "flow"):
            raise ConfigError("loss.unsup_encoder_grad must be stop or flow")


@dataclass
class TextConfig:
    text_encoder: str = "template"   # template | clip_adapter
    clip_model_path: str = ""
    embed_dim: int = 512

    def validate(self):
        if self.text_encoder not in ("template", "clip_adapter"):
            raise ConfigError(f"unknown text_encoder {self.text_encoder!r}")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    k_random: int = 3             # observations per clip = 1 + k_random
    lr_repnet: float = 1e-3
    lr_gan: float = 2e-4
    mapping_lr_scale: float = 0.01
    adam_betas_repnet: tuple = (0.9, 0.999)
    adam_betas_gan: tuple = (0.5, 0.999)
    warmup_iters: int | None = None  # None: 10% of first-epoch iterations
    checkpoint_every: int = 0        # 0: final checkpoint only
    log_every: int = 1

    def validate(self):
        if self.epochs < 1 or self.batch_size < 2:
            raise ConfigError("train.epochs >= 1 and train.batch_size >= 2 required")
        if self.k_random < 0:
            raise ConfigError("train.k_random must be >= 0")
        for name in ("lr_repnet", "lr_gan"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"train.{name} must be > 0")


@dataclass
class Config:
    data: DataConfig = field(default_factory=DataConfig)
    latent: LatentConfig = field(default_factory=LatentConfig)
    ode: OdeConfig = field(default_factory=OdeConfig)
    repnet: RepNetConfig = field(default_factory=RepNetConfig)
    mfmod: MfmodConfig = field(default_factory=MfmodConfig)
    gan: GanConfig = field(default_factory=GanConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    text: TextConfig = field(default_factory=TextConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def validate(self) -> "Config":
        for f in dataclasses.fields(self):
            section = getattr(self, f.name)
            if hasattr(section, "validate"):
                section.validate()
        depth = len(self.repnet.encoder_channels)
        if self.data.resolution % (2 ** depth) != 0:
            raise ConfigError(
                f"data.resolution {self.data.resolution} not divisible by "
                f"2^{depth} required by repnet.encoder_channels"
            )
        coarsest = self.data.resolution // (2 ** (self.gan.scales - 1))
        disc_depth = 2 ** len(self.gan.disc_channels)
        if coarsest < disc_depth or coarsest % disc_depth != 0:
            raise ConfigError(
                f"gan.scales={self.gan.scales} leaves a {coarsest}px coarsest scale, "
                f"incompatible with the {len(self.gan.disc_channels)}-layer "
                f"discriminator at resolution {self.data.resolution}; reduce gan.scales"
            )
        return self

    def to_dict(self) -> dict:
        return _as_plain(dataclasses.asdict(self))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def save(self, path):
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))

    @classmethod
    def from_dict(cls, raw: dict) -> "Config":
        cfg = cls()
        for key, value in (raw or {}).items():
            if not hasattr(cfg, key):
                raise ConfigError(f"unknown config section {key!r}")
            section = getattr(cfg, key)
            if dataclasses.is_dataclass(section):
                if not isinstance(value, dict):
                    raise ConfigError(f"section {key!r} must be a mapping")
                valid = {f.name for f in dataclasses.fields(section)}
                for k, v in value.items():
                    if k not in valid:
                        raise ConfigError(f"unknown config key {key}.{k}")
                    setattr(section, k, _coerce(getattr(section, k), v))
            else:
                setattr(cfg, key, _coerce(section, value))
        return cfg.validate()

    @classmethod
    def load(cls, path) -> "Config":
        raw = yaml.safe_load(Path(path).read_text())
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must contain a mapping")
        return cls.from_dict(raw)

    def apply_overrides(self, overrides: list[str]) -> "Config":
        """Apply ``section.key=value`` strings on top of the current config."""
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form key=value")
            dotted, text = item.split("=", 1)
            parts = dotted.strip().split(".")
            target = self
            for part in parts[:-1]:
                if not hasattr(target, part):
                    raise ConfigError(f"unknown config path {dotted!r}")
                target = getattr(target, part)
            leaf = parts[-1]
            if not hasattr(target, leaf):
                raise ConfigError(f"unknown config path {dotted!r}")
            setattr(target, leaf, _coerce(getattr(target, leaf), yaml.safe_load(text)))
        return self.validate()


def _coerce(current, value):
    """Coerce a YAML scalar/list to the type of the current field value."""
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a list, got {value!r}")
        return tuple(value)
    if isinstance(current, bool):
        return bool(value)
    if isinstance(current, int) and not isinstance(value, bool):
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"expected an integer, got {value!r}")
        if value is None:
            raise ConfigError("expected an integer, got null")
        return int(value)
    if isinstance(current, float):
        return float(value)
    if current is None and isinstance(value, (int, float)):
        return value
    return value


def _as_plain(obj):
    if isinstance(obj, dict):
        return {k: _as_plain(v) for k, v in obj.items()}
    if isinstance(obj, tuple):
        return [_as_plain(v) for v in obj]
    if isinstance(obj, list):
        return [_as_plain(v) for v in obj]
    return obj
