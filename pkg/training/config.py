"""
Training configuration.

TrainConfig is a dataclass read from / written to JSON documents.
Unknown keys are rejected so typos never silently fall back to defaults.
"""

from dataclasses import dataclass, field, fields

from common.errors import ValidationError
from common.hashing import hash_config
from models.noise import TRAIN_NOISE_LEVELS
from synthdata.coarse import DegradationConfig

STAGES = ("pretrain", "finetune")

# Fields that decide how far a run goes or where it runs, not what it computes.
RUN_LENGTH_FIELDS = ("steps", "eval_every", "checkpoint_every", "prefetch", "device")


@dataclass(frozen=True)
class LossWeights:
    recon: float = 1.0
    perceptual: float = 0.1
    gan: float = 0.05

    def __post_init__(self):
        for name, value in self.to_dict().items():
            if value < 0:
                raise ValidationError(f"loss_weights.{name} must be >= 0, got {value}")

    def to_dict(self) -> dict:
        return {"recon": self.recon, "perceptual": self.perceptual, "gan": self.gan}

    @classmethod
    def from_dict(cls, data: dict) -> "LossWeights":
        unknown = sorted(set(data) - {"recon", "perceptual", "gan"})
        if unknown:
            raise ValidationError(f"unknown loss_weights keys: {unknown}")
        return cls(**{k: float(v) for k, v in data.items()})


@dataclass
class TrainConfig:
    stage: str = "pretrain"
    steps: int = 20000
    batch_size: int = 4
    views: int = 2
    resolution: int = 64
    lr_generator: float = 1e-4
    lr_discriminator: float = 2e-4
    loss_weights: LossWeights = field(default_factory=LossWeights)
    noise_levels: tuple = TRAIN_NOISE_LEVELS
    degradation: DegradationConfig = field(default_factory=DegradationConfig)
    seed: int = 0
    eval_every: int = 1000
    eval_limit: int = 20
    checkpoint_every: int = 5000
    regime_mix: float = 0.0
    lora_rank: int = 4
    lora_alpha: float = 4.0
    base_steps: int = 2000
    lr_base: float = 1e-3
    codec_steps: int = 5000
    lr_codec: float = 1e-3
    embedder_steps: int = 3000
    device: str = "cpu"
    prefetch: int = 4

    def __post_init__(self):
        self.noise_levels = tuple(float(r) for r in self.noise_levels)
        self.validate()

    def validate(self):
        if self.stage not in STAGES:
            raise ValidationError(f"stage must be one of {STAGES}, got '{self.stage}'")
        if not 1 <= self.views <= 16:
            raise ValidationError(f"views must lie in [1, 16], got {self.views}")
        if self.steps < 0 or self.base_steps < 0 or self.codec_steps < 0 or self.embedder_steps < 0:
            raise ValidationError("step counts must be >= 0")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        for name in ("lr_generator", "lr_discriminator", "lr_base", "lr_codec"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be > 0, got {getattr(self, name)}")
        if not self.noise_levels:
            raise ValidationError("noise_levels must not be empty")
        bad = [r for r in self.noise_levels if r not in TRAIN_NOISE_LEVELS]
        if bad:
            raise ValidationError(f"noise levels {bad} are not in {list(TRAIN_NOISE_LEVELS)}")
        if not 0.0 <= self.regime_mix <= 1.0:
            raise ValidationError(f"regime_mix must lie in [0, 1], got {self.regime_mix}")
        if self.eval_every < 0 or self.checkpoint_every < 0:
            raise ValidationError("eval_every and checkpoint_every must be >= 0")

    def to_dict(self) -> dict:
        data = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, (LossWeights, DegradationConfig)):
                value = value.to_dict()
            elif isinstance(value, tuple):
                value = list(value)
            data[f.name] = value
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {unknown}")
        values = dict(data)
        if isinstance(values.get("loss_weights"), dict):
            values["loss_weights"] = LossWeights.from_dict(values["loss_weights"])
        if isinstance(values.get("degradation"), dict):
            values["degradation"] = DegradationConfig.from_dict(values["degradation"])
        try:
            return cls(**values)
        except TypeError as e:
            raise ValidationError(f"invalid config: {e}")

    def identity_hash(self) -> str:
        """Hash of everything that affects the computed weights."""
        data = self.to_dict()
        for name in RUN_LENGTH_FIELDS:
            data.pop(name)
        return hash_config(data)


def set_dotted(document: dict, key: str, value):
    """Set document['a']['b'] for key 'a.b', creating nested dicts."""
    parts = key.split(".")
    target = document
    for part in parts[:-1]:
        target = target.setdefault(part, {})
        if not isinstance(target, dict):
            raise ValidationError(f"cannot set '{key}': '{part}' is not a section")
    target[parts[-1]] = value


def merge_documents(base: dict, override: dict) -> dict:
    """Recursive dict merge; override wins."""
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_documents(merged[key], value)
        else:
            merged[key] = value
    return merged
