"""Training configuration with layered overrides.

Every field lives under a section, giving it a dotted path (``alg.mode``,
``train.patience``). Values resolve with precedence::

    command-line flag  >  environment variable  >  config file  >  default

Environment variables use the prefix ``RTRRL_`` with the dots replaced by
double underscores, e.g. ``RTRRL_ALG__LR_RNN=1e-3``. Environment parameters
are free-form: ``env.length`` ends up in ``env_params["length"]``.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError

__all__ = ["ENV_PREFIX", "TrainConfig", "dotted_fields", "load_config", "parse_scalar"]

ENV_PREFIX = "RTRRL_"


def _f(default, section, **kw):
    return field(default=default, metadata={"section": section, **kw})


@dataclass
class TrainConfig:
    seed: int = _f(0, "")
    env: str = _f("memory_chain", "")
    env_params: dict = field(default_factory=dict, metadata={"section": "env", "free": True})

    # model
    cell: str = _f("ctrnn", "model")            # ctrnn | lru
    hidden: int = _f(32, "model")
    dt: float = _f(1.0, "model")
    train_tau: bool = _f(True, "model")
    tau_min: float = _f(1.0, "model")
    tau_max: float = _f(10.0, "model")
    head_init: float = _f(0.0, "model")
    lru_r_min: float = _f(0.5, "model")
    lru_r_max: float = _f(0.99, "model")
    lru_max_modulus: float = _f(0.9999, "model")
    backend: str = _f("auto", "model")          # auto | numpy | numba

    # algorithm
    mode: str = _f("rflo", "alg")               # rtrl | rflo | diag_rtrl
    feedback: str = _f("fa", "alg")             # fa | exact
    gamma: float = _f(0.99, "alg")
    lr_actor: float = _f(1e-4, "alg")
    lr_critic: float = _f(1e-4, "alg")
    lr_rnn: float = _f(1e-4, "alg")
    eta_actor: float = _f(1.0, "alg")
    eta_entropy: float = _f(1e-5, "alg")
    lambda_actor: float = _f(0.9, "alg")
    lambda_critic: float = _f(0.9, "alg")
    lambda_rnn: float = _f(0.9, "alg")
    optimizer: str = _f("adam", "alg")
    clip: float = _f(1.0, "alg")
    lr_decay: float = _f(0.0, "alg")
    action_epsilon: float = _f(0.0, "alg")
    update_period: int = _f(1, "alg")
    normalize_obs: bool = _f(False, "alg")
    reset_on_terminal: bool = _f(True, "alg")
    meta_rl: bool = _f(True, "alg")

    # run control
    max_steps: int = _f(50_000_000, "train")
    patience: int = _f(20, "train")
    epoch_steps: int = _f(100_000, "train")
    eval_steps: int = _f(10_000, "train")
    log_interval: int = _f(10_000, "train")
    target_reward: float | None = _f(None, "train")

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.cell not in ("ctrnn", "lru"):
            raise ConfigError(f"model.cell must be 'ctrnn' or 'lru', got {self.cell!r}")
        if self.mode not in ("rtrl", "rflo", "diag_rtrl"):
            raise ConfigError(f"alg.mode must be rtrl, rflo or diag_rtrl, got {self.mode!r}")
        if self.cell == "lru" and self.mode != "diag_rtrl":
            raise ConfigError(f"the LRU cell is trained with diag_rtrl, not {self.mode!r}")
        if self.cell == "ctrnn" and self.mode == "diag_rtrl":
            raise ConfigError("diag_rtrl requires model.cell = lru")
        if self.backend not in ("auto", "numpy", "numba"):
            raise ConfigError(f"model.backend must be auto, numpy or numba, got {self.backend!r}")
        if self.feedback not in ("fa", "exact"):
            raise ConfigError(f"alg.feedback must be 'fa' or 'exact', got {self.feedback!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"alg.optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("alg.gamma must lie in [0, 1)")
        for name in ("lambda_actor", "lambda_critic", "lambda_rnn", "action_epsilon"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"alg.{name} must lie in [0, 1]")
        if self.hidden < 1 or self.update_period < 1:
            raise ConfigError("model.hidden and alg.update_period must be positive")
        if self.epoch_steps < 1 or self.eval_steps < 1 or self.log_interval < 1:
            raise ConfigError("train.epoch_steps, train.eval_steps and train.log_interval must be positive")
        if not 1.0 <= self.tau_min <= self.tau_max:
            raise ConfigError("need 1 <= model.tau_min <= model.tau_max")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def dotted_fields() -> dict:
    """Map every dotted path to its field name (``"alg.mode" -> "mode"``)."""
    out = {}
    for f in dataclasses.fields(TrainConfig):
        if f.metadata.get("free"):
            continue
        section = f.metadata.get("section", "")
        out[f"{section}.{f.name}" if section else f.name] = f.name
    return out


_FIELD_TYPES = {f.name: f for f in dataclasses.fields(TrainConfig)}


def parse_scalar(text):
    """Parse a flag/env-var string with YAML scalar rules (``1e-4``, ``true``)."""
    if not isinstance(text, str):
        return text
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError:
        return text
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    return value


def _coerce(name, value):
    f = _FIELD_TYPES[name]
    default = f.default
    if value is None:
        return None
    kind = type(default) if default is not None and default is not dataclasses.MISSING else None
    if name == "target_reward":
        kind = float
    try:
        if kind is bool:
            if isinstance(value, str):
                value = parse_scalar(value)
            if not isinstance(value, bool):
                raise ValueError(value)
            return value
        if kind is int:
            v = float(value)
            if v != int(v):
                raise ValueError(value)
            return int(v)
        if kind is float:
            return float(value)
        if kind is str:
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"cannot interpret {value!r} for {name}") from None
    return value


def _flatten(tree: dict, prefix="") -> dict:
    flat = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and key != "env_params":
            flat.update(_flatten(v, key + "."))
        else:
            flat[key] = v
    return flat


def _apply(values: dict, flat: dict, origin: str):
    paths = dotted_fields()
    bare = {name: name for name in paths.values()}
    for key, value in flat.items():
        if key == "env" and isinstance(value, str):
            values["env"] = value
        elif key == "env.name":
            values["env"] = str(value)
        elif key.startswith("env."):
            values["env_params"][key[4:]] = parse_scalar(value)
        elif key == "env_params" and isinstance(value, dict):
            values["env_params"].update(value)
        elif key in paths:
            values[paths[key]] = _coerce(paths[key], parse_scalar(value))
        elif key in bare:
            values[key] = _coerce(key, parse_scalar(value))
        else:
            raise ConfigError(f"unknown configuration key {key!r} (from {origin})")


def load_config(path: str | os.PathLike | None = None, overrides: dict | None = None,
                environ: dict | None = None) -> TrainConfig:
    """Resolve a :class:`TrainConfig` from defaults, a YAML file, environment
    variables and explicit dotted-path overrides, in increasing precedence."""
    defaults = TrainConfig()
    values = {f.name: getattr(defaults, f.name) for f in dataclasses.fields(TrainConfig)}
    values["env_params"] = {}
    if path is not None:
        try:
            tree = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
        if not isinstance(tree, dict):
            raise ConfigError(f"config file {path} must contain a mapping")
        _apply(values, _flatten(tree), str(path))
    environ = os.environ if environ is None else environ
    env_flat = {
        k[len(ENV_PREFIX):].lower().replace("__", "."): v
        for k, v in environ.items() if k.startswith(ENV_PREFIX)
    }
    _apply(values, env_flat, "environment")
    if overrides:
        _apply(values, dict(overrides), "command line")
    return TrainConfig(**values)
