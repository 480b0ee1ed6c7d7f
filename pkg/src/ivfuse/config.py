"""Training/evaluation configuration and its file + environment loading.

Config files are flat YAML key/value maps mirroring the TrainConfig fields.
Every field can be overridden through the environment with the ``IVFUSE_``
prefix (e.g. ``IVFUSE_EPOCHS=5``), which takes precedence over the file.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from .errors import ConfigError
from .losses import LossWeights

ENV_PREFIX = "IVFUSE_"

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 110
    lr_initial: float = 0.2
    lr_final: float = 0.05
    lr_hold_epochs: int = 100
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    alpha: float = 10.0
    beta: float = 1.0
    gamma: float = 2.0
    enable_content: bool = True
    enable_ssim: bool = True
    enable_global: bool = True
    mask_method: str = "quantile"
    mask_quantile: float = 0.75
    mask_dir: str | None = None
    seed: int = 0
    data_dir: str | None = None
    checkpoint_dir: str = "checkpoints"
    patch_size: int = 128
    patch_stride: int = 16
    device: str = "cpu"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be positive")
        if self.lr_hold_epochs < 0:
            raise ConfigError("lr_hold_epochs must be non-negative")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.mask_method not in ("quantile", "otsu", "external"):
            raise ConfigError(f"unknown mask_method {self.mask_method!r}")

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(alpha=self.alpha, beta=self.beta, gamma=self.gamma)


@dataclass
class TrialSpec:
    n_trials: int = 5
    pairs_per_trial: int = 10
    base_seed: int = 0

    def __post_init__(self):
        if self.n_trials < 1 or self.pairs_per_trial < 1:
            raise ConfigError("n_trials and pairs_per_trial must be >= 1")


def _coerce(name: str, raw, target_type) -> object:
    if raw is None:
        return None
    if target_type is bool:
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in _TRUE:
            return True
        if text in _FALSE:
            return False
        raise ConfigError(f"{name}: cannot parse {raw!r} as bool")
    try:
        return target_type(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {target_type.__name__}") from exc


_FIELD_TYPES = {
    "batch_size": int, "epochs": int, "lr_hold_epochs": int, "seed": int,
    "patch_size": int, "patch_stride": int,
    "lr_initial": float, "lr_final": float, "adam_beta1": float,
    "adam_beta2": float, "alpha": float, "beta": float, "gamma": float,
    "mask_quantile": float,
    "enable_content": bool, "enable_ssim": bool, "enable_global": bool,
    "mask_method": str, "mask_dir": str, "data_dir": str,
    "checkpoint_dir": str, "device": str,
}


def load_train_config(
    path: str | Path | None = None, env: dict | None = None
) -> TrainConfig:
    """Build a TrainConfig from an optional YAML file plus env overrides."""
    env = os.environ if env is None else env
    data: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                loaded = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config file {path}: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must be a key/value map")
        data.update(loaded)

    known = {f.name for f in fields(TrainConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    for name in known:
        env_key = ENV_PREFIX + name.upper()
        if env_key in env:
            data[name] = env[env_key]

    coerced = {
        name: _coerce(name, value, _FIELD_TYPES[name]) for name, value in data.items()
    }
    return TrainConfig(**coerced)
