"""Run configuration: a nested JSON document validated against a fixed schema."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema

from .cfa import PHASES
from .demosaic import METHODS
from .losses import LossWeights
from .models import ACTIVATION_POSITIONS, LONG_SKIP, NetworkConfig

DEFAULT_MILESTONES = (80000, 120000, 150000, 180000)


class ConfigError(ValueError):
    """Raised for schema violations; ``path`` names the offending key."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def _int(minimum=None, maximum=None):
    s = {"type": "integer"}
    if minimum is not None:
        s["minimum"] = minimum
    if maximum is not None:
        s["maximum"] = maximum
    return s


def _num(minimum=None, exclusive_minimum=None):
    s = {"type": "number"}
    if minimum is not None:
        s["minimum"] = minimum
    if exclusive_minimum is not None:
        s["exclusiveMinimum"] = exclusive_minimum
    return s


def _obj(props: dict) -> dict:
    return {"type": "object", "additionalProperties": False, "properties": props}


SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "jdsr run configuration",
    **_obj({
        "seed": _int(0, 2**63 - 1),
        "network": _obj({
            "num_blocks": _int(1),
            "modules_per_block": _int(1),
            "channels": _int(1),
            "reduction": _int(1),
            "scale": {"enum": [2, 3, 4]},
            "pdnet_channels": _int(1),
            "use_pdnet": {"type": "boolean"},
            "long_skip": {"enum": list(LONG_SKIP)},
            "activation_position": {"enum": list(ACTIVATION_POSITIONS)},
            "disc_channels": _int(1),
            "disc_dense": _int(1),
            "disc_batch_norm": {"type": "boolean"},
        }),
        "loss": _obj({
            "lambda_adv": _num(0),
            "lambda_l1": _num(0),
            "gamma": _num(0),
            "perceptual_weight": _num(0),
            "clamp_eps": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
            "extractor": _obj({
                "kind": {"enum": ["random", "vgg19", "identity"]},
                "layer": _int(1),
                "weights": {"type": ["string", "null"]},
                "post_activation": {"type": "boolean"},
                "seed": _int(0),
            }),
        }),
        "trainer": _obj({
            "lr": _num(exclusive_minimum=0),
            "milestones": {"type": "array", "items": _int(1)},
            "divisor": _int(1),
            "factor": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            "batch_size": _int(1),
            "patch_size": {"type": "integer", "minimum": 4, "multipleOf": 4},
            "pretrain_steps": _int(0),
            "adversarial_steps": _int(0),
            "d_steps_per_g": _int(1),
            "grad_clip": {"type": ["number", "null"], "exclusiveMinimum": 0},
            "augment": {"type": "boolean"},
            "log_every": _int(1),
        }),
        "data": _obj({
            "train": {"type": "array", "items": {"type": "string"}},
            "phase": {"enum": list(PHASES)},
            "synthetic": {"oneOf": [
                {"type": "null"},
                _obj({
                    "size": _int(8),
                    "count": _int(1),
                    "kind": {"enum": ["smooth", "texture"]},
                }),
            ]},
        }),
        "demosaic": _obj({
            "init_method": {"enum": list(METHODS)},
            "iterations": _int(1),
        }),
        "metrics": _obj({
            "crop_border": {"type": "boolean"},
            "ssim_luminance": {"type": "boolean"},
        }),
    }),
}


@dataclass
class ExtractorConfig:
    kind: str = "random"
    layer: int = 4
    weights: Optional[str] = None
    post_activation: bool = False
    seed: int = 0


@dataclass
class LossConfig:
    lambda_adv: float = 5e-3
    lambda_l1: float = 1e-2
    gamma: float = 1.0
    perceptual_weight: float = 1.0
    clamp_eps: float = 1e-7
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)

    def weights(self) -> LossWeights:
        return LossWeights(adversarial=self.lambda_adv, l1=self.lambda_l1, gamma=self.gamma,
                           perceptual=self.perceptual_weight, clamp_eps=self.clamp_eps)


@dataclass
class TrainerConfig:
    lr: float = 1e-4
    milestones: list = field(default_factory=lambda: list(DEFAULT_MILESTONES))
    divisor: int = 1000
    factor: float = 0.5
    batch_size: int = 16
    patch_size: int = 48
    pretrain_steps: int = 200
    adversarial_steps: int = 0
    d_steps_per_g: int = 1
    grad_clip: Optional[float] = None
    augment: bool = True
    log_every: int = 1


@dataclass
class SyntheticData:
    size: int = 64
    count: int = 4
    kind: str = "texture"


@dataclass
class DataConfig:
    train: list = field(default_factory=list)
    phase: str = "RGGB"
    synthetic: Optional[SyntheticData] = None


@dataclass
class DemosaicConfig:
    init_method: str = "bilinear"
    iterations: int = 2


@dataclass
class MetricsConfig:
    crop_border: bool = False
    ssim_luminance: bool = False


@dataclass
class RunConfig:
    seed: int = 0
    network: NetworkConfig = field(default_factory=NetworkConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    demosaic: DemosaicConfig = field(default_factory=DemosaicConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        validate(doc)
        loss = dict(doc.get("loss", {}))
        ext = ExtractorConfig(**loss.pop("extractor", {}))
        data = dict(doc.get("data", {}))
        syn = data.pop("synthetic", None)
        try:
            cfg = cls(
                seed=doc.get("seed", 0),
                network=NetworkConfig(**doc.get("network", {})),
                loss=LossConfig(extractor=ext, **loss),
                trainer=TrainerConfig(**doc.get("trainer", {})),
                data=DataConfig(synthetic=None if syn is None else SyntheticData(**syn), **data),
                demosaic=DemosaicConfig(**doc.get("demosaic", {})),
                metrics=MetricsConfig(**doc.get("metrics", {})),
            )
            cfg.loss.weights()
        except ValueError as exc:  # cross-field checks in NetworkConfig / LossWeights
            raise ConfigError(str(exc)) from exc
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def validate(doc) -> None:
    """Check ``doc`` against :data:`SCHEMA` and the few rules a schema can't express."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(err.message, path)
    ms = doc.get("trainer", {}).get("milestones")
    if ms is not None and any(b <= a for a, b in zip(ms, ms[1:])):
        raise ConfigError("milestones must be strictly increasing", "trainer/milestones")
    ext = doc.get("loss", {}).get("extractor", {})
    if ext.get("kind") == "vgg19" and not ext.get("weights"):
        raise ConfigError("vgg19 extractor needs a weights path", "loss/extractor/weights")
