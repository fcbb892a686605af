"""Run configuration with published defaults.

A config file is one flat JSON object; unknown keys are rejected so a
typo cannot silently fall back to a default. Every report echoes the
config it was produced under.
"""

import json
from dataclasses import asdict, dataclass, field, fields

from .errors import ParseError, ValidationError

BATCH_HARD = "batch-hard"
SEMI_HARD = "semi-hard"
TRIPLET = "triplet"
SOFT_MARGIN = "soft-margin"


@dataclass
class RunConfig:
    margin: float = 0.2
    dropout: float = 0.1
    embed_dim: int = 128
    mc: int = 50
    p_classes: int = 18
    k_per_class: int = 4
    batch_size: int = 512
    triplet_cap: int = 400
    epochs: int = 500
    lr: float = 0.01
    decay_start: int = 250
    weight_decay: float = 0.0
    mask_l1: float = 0.0
    miner: str = SEMI_HARD
    loss: str = TRIPLET
    seed: int = 0
    # model plumbing not tied to any published number
    hidden_dim: int = 128
    frame_samples: int = 3
    sessions_per_draw: int = 3
    normalize: bool = True

    def __post_init__(self):
        if self.margin < 0:
            raise ValidationError("margin must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.embed_dim < 1 or self.hidden_dim < 1:
            raise ValidationError("embedding and hidden dims must be >= 1")
        if self.mc < 1:
            raise ValidationError("mc must be >= 1")
        if self.p_classes < 2 or self.k_per_class < 2:
            raise ValidationError("PK sampling needs P >= 2 and K >= 2")
        if self.batch_size < 1 or self.triplet_cap < 1:
            raise ValidationError("batch size and triplet cap must be >= 1")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if not 0 <= self.decay_start < self.epochs:
            raise ValidationError("decay_start must lie in [0, epochs)")
        if self.lr <= 0:
            raise ValidationError("lr must be positive")
        if self.weight_decay < 0 or self.mask_l1 < 0:
            raise ValidationError("penalty coefficients must be >= 0")
        if self.miner not in (BATCH_HARD, SEMI_HARD):
            raise ValidationError(f"miner must be {BATCH_HARD!r} or {SEMI_HARD!r}")
        if self.loss not in (TRIPLET, SOFT_MARGIN):
            raise ValidationError(f"loss must be {TRIPLET!r} or {SOFT_MARGIN!r}")
        if self.seed < 0:
            raise ValidationError("seed must be >= 0")
        if self.frame_samples < 1 or self.sessions_per_draw < 1:
            raise ValidationError("frame_samples and sessions_per_draw must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "RunConfig":
        d = self.to_dict()
        d.update(changes)
        return RunConfig(**d)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read a flat JSON config; overrides (e.g. CLI flags) win over the file."""
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(str(e), path=str(path), line=e.lineno) from None
    if not isinstance(doc, dict):
        raise ParseError("config must be a JSON object", path=str(path), line=1)
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
    if overrides:
        doc.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**doc)
