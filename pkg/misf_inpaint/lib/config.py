"""The resolved run configuration: defaults, config file, overrides, flags, env."""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import os
import pathlib
from collections.abc import Iterable, Mapping
from dataclasses import dataclass

from misf_inpaint.lib.errors import ConfigError, ContractError
from misf_inpaint.lib.filtering import Boundary, Normalize
from misf_inpaint.lib.kvfile import parse_bool, parse_file
from misf_inpaint.lib.losses import LossWeights
from misf_inpaint.lib.networks import PRESETS, ModelConfig, Variant
from misf_inpaint.lib.tensor import PRECISIONS
from misf_inpaint.lib.training import TrainConfig

SEED_ENV = "MISF_SEED"


@dataclass(frozen=True)
class RunConfig:
    """Every knob of a run, flat so it can be written back as ``key = value``."""

    variant: str = Variant.MISF.value
    preset: str = "misf-tiny"
    kernel_size: int = 3
    normalize: str = Normalize.SOFTMAX.value
    image_boundary: str = Boundary.REPLICATE.value
    feature_boundary: str = Boundary.ZERO.value
    filter_layer: int = 3
    precision: str = "float32"
    seed: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # 0 picks the preset's batch size
    batch_size: int = 0
    max_iters: int = 200
    checkpoint_every: int = 0
    log_every: int = 100
    eval_every: int = 100
    l1_weight: float = 1.0
    gan_weight: float = 0.1
    perc_weight: float = 0.1
    style_weight: float = 250.0
    masked_l1: bool = False
    manifest: str = ""
    fixtures: int = 16
    fx_weights: str = ""

    def __post_init__(self) -> None:
        checks = {
            "variant": self.variant in {v.value for v in Variant},
            "preset": self.preset in PRESETS,
            "normalize": self.normalize in {n.value for n in Normalize},
            "image_boundary": self.image_boundary in {b.value for b in Boundary},
            "feature_boundary": self.feature_boundary in {b.value for b in Boundary},
            "filter_layer": self.filter_layer in (1, 2, 3),
            "precision": self.precision in PRECISIONS,
            "kernel_size": self.kernel_size >= 1 and self.kernel_size % 2 == 1,
            "lr": self.lr > 0,
            "batch_size": self.batch_size >= 0,
            "max_iters": self.max_iters >= 0,
            "fixtures": 1 <= self.fixtures <= 32,
        }
        for key, ok in checks.items():
            if not ok:
                raise ConfigError(key, f"invalid value {getattr(self, key)!r}")
        try:
            self.loss_weights()
        except ContractError as err:
            raise ConfigError("weights", str(err)) from err

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, str], base: RunConfig | None = None) -> RunConfig:
        """Apply textual values on top of `base` (defaults when omitted)."""
        base = base or cls()
        updates: dict[str, object] = {}
        for key, raw in mapping.items():
            if key not in cls.keys():
                raise ConfigError(key, "unknown config key")
            default = getattr(base, key)
            try:
                if isinstance(default, bool):
                    updates[key] = parse_bool(key, raw)
                elif isinstance(default, int):
                    updates[key] = int(raw)
                elif isinstance(default, float):
                    updates[key] = float(raw)
                else:
                    updates[key] = raw
            except ValueError as err:
                raise ConfigError(key, f"cannot parse {raw!r}") from err
        return dataclasses.replace(base, **updates)

    @property
    def effective_batch_size(self) -> int:
        if self.batch_size:
            return self.batch_size
        return 16 if self.preset == "full-256" else 4

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            variant=Variant(self.variant),
            preset=PRESETS[self.preset],
            kernel_size=self.kernel_size,
            normalize=Normalize(self.normalize),
            image_boundary=Boundary(self.image_boundary),
            feature_boundary=Boundary(self.feature_boundary),
            filter_layer=self.filter_layer,
            seed=self.seed,
            precision=self.precision,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            self.l1_weight, self.gan_weight, self.perc_weight, self.style_weight
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            batch_size=self.effective_batch_size,
            max_iters=self.max_iters,
            seed=self.seed,
            checkpoint_every=self.checkpoint_every,
            log_every=self.log_every,
            eval_every=self.eval_every,
            precision=self.precision,
            masked_l1=self.masked_l1,
        )

    def lines(self) -> list[str]:
        return [f"{key} = {getattr(self, key)}" for key in sorted(self.keys())]

    def to_text(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def config_hash(self) -> str:
        digest = hashlib.sha256("\n".join(self.lines()).encode("utf-8"))
        return digest.hexdigest()[:12]


def parse_override(item: str) -> tuple[str, str]:
    key, sep, value = item.partition("=")
    if not sep:
        raise ConfigError(item, "overrides take the form key=value")
    return key.strip(), value.strip()


def resolve_run_config(
    path: str | pathlib.Path | None = None,
    overrides: Iterable[str] = (),
    flags: Mapping[str, object] | None = None,
    env: Mapping[str, str] | None = None,
) -> RunConfig:
    """defaults <- config file <- --set overrides <- explicit flags <- MISF_SEED."""
    config = RunConfig()
    if path is not None:
        parsed = parse_file(path)
        if parsed.sections:
            raise ConfigError(
                next(iter(parsed.sections)), "run configs do not take sections"
            )
        config = RunConfig.from_mapping(parsed.values, config)
    config = RunConfig.from_mapping(dict(parse_override(o) for o in overrides), config)
    if flags:
        textual = {k: str(v) for k, v in flags.items() if v is not None}
        config = RunConfig.from_mapping(textual, config)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        config = RunConfig.from_mapping({"seed": env[SEED_ENV]}, config)
    log_config(config)
    return config


def log_config(config: RunConfig) -> None:
    """Log the resolved config and its hash once at the start of a command."""
    logging.info("resolved config %s:\n%s", config.config_hash(), config.to_text())
