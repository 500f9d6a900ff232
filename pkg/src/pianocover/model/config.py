"""Model and training configuration, plus the analytic parameter count."""

from __future__ import annotations

from dataclasses import dataclass, asdict
from enum import Enum

from ..errors import ValidationError

VOCAB_SIZE = 232


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    num_heads: int = 4
    d_ff: int = 256
    num_encoder_layers: int = 2
    num_decoder_layers: int = 2
    vocab_size: int = VOCAB_SIZE
    n_mels: int = 128
    num_arrangers: int = 21
    relative_bias_buckets: int = 32
    relative_bias_max_distance: int = 128
    max_decode_len: int = 512

    def __post_init__(self):
        if self.d_model % self.num_heads != 0:
            raise ValidationError(
                f"d_model {self.d_model} not divisible by {self.num_heads} heads"
            )
        if self.vocab_size != VOCAB_SIZE:
            raise ValidationError(f"vocab_size must be {VOCAB_SIZE}")
        for name in (
            "d_model",
            "num_heads",
            "d_ff",
            "num_encoder_layers",
            "num_decoder_layers",
            "n_mels",
            "num_arrangers",
            "relative_bias_buckets",
            "relative_bias_max_distance",
            "max_decode_len",
        ):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")

    @property
    def d_head(self) -> int:
        return self.d_model // self.num_heads

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def desk_config(**overrides) -> ModelConfig:
    """Small preset that trains on one CPU core in minutes."""
    return ModelConfig(**overrides)


def paper_scale_config() -> ModelConfig:
    """Full-size preset matching the published architecture; used for
    parameter counting, not for desk training."""
    return ModelConfig(
        d_model=512,
        num_heads=8,
        d_ff=2048,
        num_encoder_layers=8,
        num_decoder_layers=8,
        n_mels=512,
        num_arrangers=21,
    )


class OptimizerKind(Enum):
    ADAFACTOR = "adafactor"
    ADAM = "adam"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 32
    learning_rate: float = 0.001
    optimizer: OptimizerKind = OptimizerKind.ADAFACTOR
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValidationError("epochs, batch_size and learning_rate must be positive")


def count_params(config: ModelConfig) -> int:
    """Exact learnable-parameter total for a configuration."""
    d = config.d_model
    ff = config.d_ff
    total = config.n_mels * d                      # input projection
    total += config.num_arrangers * d              # arranger embedding
    total += config.vocab_size * d                 # token embedding (tied head)
    total += 2 * config.relative_bias_buckets * config.num_heads
    per_encoder = 4 * d * d + 2 * d * ff + 2 * d   # attention, FFN, two norms
    total += config.num_encoder_layers * per_encoder + d
    per_decoder = 8 * d * d + 2 * d * ff + 3 * d   # self+cross attention, FFN, norms
    total += config.num_decoder_layers * per_decoder + d
    return total
