"""Training configuration and the ``key = value`` config file format."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .losses import LossWeights
from .network import NetConfig


@dataclass
class TrainConfig:
    c0: int = 16
    n_res: int = 2
    epochs: int = 300
    batch_size: int = 16
    crop_size: int = 256
    base_lr: float = 1e-4
    lr_schedule: str = "step"
    lr_step_epochs: int = 100
    lambda_l1: float = 1.0
    lambda_wssim: float = 1.0
    seed: int = 0
    init_seed: int = 0
    precision: str = "float32"
    attention_variant: str = "sigmoid"
    attention_enabled: bool = True
    fusion_enabled: bool = True
    val_fraction: float = 0.0
    dataset: str = "data"
    checkpoint: str = "checkpoint.wcam"
    checkpoint_every: int = 1
    log_interval: int = 1

    def __post_init__(self):
        if self.crop_size % 16:
            raise ValueError(f"crop_size must be a multiple of 16, got {self.crop_size}")
        if self.lambda_wssim > 0 and self.crop_size < 32:
            raise ValueError("crop_size must be at least 32 when the wavelet SSIM loss is on")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.attention_variant not in ("sigmoid", "literal"):
            raise ValueError("attention_variant must be sigmoid or literal")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        LossWeights(self.lambda_l1, self.lambda_wssim)

    def net_config(self) -> NetConfig:
        return NetConfig(
            c0=self.c0,
            n_res=self.n_res,
            attention=self.attention_variant if self.attention_enabled else "none",
            fusion=self.fusion_enabled,
            precision=self.precision,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_l1, self.lambda_wssim)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(types)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: _coerce(v, types[k]) for k, v in d.items()})


# Full-scale defaults are far beyond a laptop CPU; this preset overfits a toy set.
DESK_PRESET = dict(c0=8, n_res=1, epochs=200, batch_size=8, crop_size=32, lr_schedule="constant",
                   checkpoint_every=25)


def _coerce(value, typ: str):
    if not isinstance(value, str):
        return value
    if typ == "bool":
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if typ == "int":
        return int(value)
    if typ == "float":
        return float(value)
    return value.strip()


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def write_config_file(path, config: TrainConfig) -> None:
    lines = [f"{k} = {str(v).lower() if isinstance(v, bool) else v}"
             for k, v in config.to_dict().items()]
    Path(path).write_text("\n".join(lines) + "\n")
