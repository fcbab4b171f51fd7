"""Run configuration: nested dataclasses, strict YAML loading with
line-numbered validation errors, and helpers that turn a config into the
objects the trainers consume.

Unknown keys are rejected (typo safety) and every run writes a resolved copy
of its full configuration into the output directory.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .dynamics import DynamicsParams, InitStateParams
from .observation import CameraParams, hexagon_layout
from .policy import AdamParams, MlpArch
from .reward import RewardParams
from .rollout import RolloutSettings

STATE_HIDDEN = (512, 512)
FEATURE_HIDDEN = (1024, 1024)
STATE_ITERS = 1000
FEATURE_ITERS = 2000


class ConfigError(Exception):
    """Invalid run configuration; message carries file/line context."""


@dataclass
class PpoParams:
    clip: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    epochs: int = 10
    minibatches: int = 8
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    lr: float = 3e-4
    log_std_init: float = 0.0
    kl_limit: float = 0.15
    normalize_adv: bool = True


@dataclass
class PretrainParams:
    dataset_size: int = 100_000
    epochs: int = 500
    batch_size: int = 1024
    lr: float = 1e-3
    holdout_frac: float = 0.1
    standardize: bool = True
    collect_envs: int = 100


@dataclass
class RunConfig:
    task: str = "state"            # "state" | "features"
    trainer: str = "bptt"          # "bptt" | "ppo"
    envs: int = 100
    horizon: int = 250
    iterations: int = 0            # 0 -> task default
    seed: int = 0
    hidden: tuple[int, ...] = ()   # () -> task default
    forward_model: str = "full"    # "simple" | "full"
    backward_model: str = "simple"  # "simple" | "full" (bptt only)
    shards: int = 1
    workers: int = 1
    run_pretrain: bool = False
    checkpoint_every: int = 0      # 0 -> final checkpoint only
    blowup_limit: float = 1e3
    reward_floor: float = -100.0
    feature_radius: float = 1.5
    out_root: str = ""
    dynamics: DynamicsParams = field(default_factory=DynamicsParams)
    init_state: InitStateParams = field(default_factory=InitStateParams)
    camera: CameraParams = field(default_factory=CameraParams)
    reward: RewardParams = field(default_factory=RewardParams)
    optim: AdamParams = field(default_factory=AdamParams)
    ppo: PpoParams = field(default_factory=PpoParams)
    pretrain: PretrainParams = field(default_factory=PretrainParams)

    def normalized(self) -> "RunConfig":
        """Copy with task-dependent defaults filled in and values validated."""
        cfg = dataclasses.replace(self)
        if cfg.task not in ("state", "features"):
            raise ConfigError(f"task must be 'state' or 'features', got {cfg.task!r}")
        if cfg.trainer not in ("bptt", "ppo"):
            raise ConfigError(f"trainer must be 'bptt' or 'ppo', got {cfg.trainer!r}")
        if cfg.forward_model not in ("simple", "full"):
            raise ConfigError(f"forward_model must be 'simple' or 'full'")
        if cfg.backward_model not in ("simple", "full"):
            raise ConfigError(f"backward_model must be 'simple' or 'full'")
        if cfg.backward_model == "full" and cfg.forward_model != "full":
            raise ConfigError("backward_model=full requires forward_model=full")
        if cfg.envs < 1 or cfg.horizon < 1:
            raise ConfigError("envs and horizon must be >= 1")
        if cfg.shards < 1 or cfg.workers < 1:
            raise ConfigError("shards and workers must be >= 1")
        if not cfg.iterations:
            cfg.iterations = STATE_ITERS if cfg.task == "state" else FEATURE_ITERS
        if not cfg.hidden:
            cfg.hidden = STATE_HIDDEN if cfg.task == "state" else FEATURE_HIDDEN
        if cfg.run_pretrain and cfg.task != "features":
            raise ConfigError("pretraining only applies to the features task")
        return cfg

    def obs_dim(self) -> int:
        return 15 if self.task == "state" else 82


def make_arch(cfg: RunConfig) -> MlpArch:
    return MlpArch(cfg.obs_dim(), tuple(cfg.hidden), 4, head="action")


def make_rollout_settings(cfg: RunConfig) -> RolloutSettings:
    layout = hexagon_layout(cfg.feature_radius) if cfg.task == "features" else None
    return RolloutSettings(task=cfg.task, model_mode=cfg.forward_model,
                           horizon=cfg.horizon, dyn=cfg.dynamics, rew=cfg.reward,
                           cam=cfg.camera if cfg.task == "features" else None,
                           layout=layout, blowup_limit=cfg.blowup_limit,
                           reward_floor=cfg.reward_floor)


def default_out_root() -> Path:
    return Path(os.environ.get("DIFFQUAD_RUNS", "runs"))


# -------------------------------------------------------------- YAML loading

def _key_lines(node, prefix: str = "") -> dict[str, int]:
    """Map dotted config paths to 1-based source lines."""
    out: dict[str, int] = {}
    if isinstance(node, yaml.MappingNode):
        for key_node, val_node in node.value:
            path = f"{prefix}.{key_node.value}" if prefix else str(key_node.value)
            out[path] = key_node.start_mark.line + 1
            out.update(_key_lines(val_node, path))
    return out


def _coerce(value, ftype, path: str, line: int):
    origin = typing.get_origin(ftype)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"line {line}: '{path}' expects a list")
        inner = typing.get_args(ftype)[0]
        return tuple(_coerce(v, inner, path, line) for v in value)
    if ftype is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"line {line}: '{path}' expects a number")
        return float(value)
    if ftype is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"line {line}: '{path}' expects an integer")
        return int(value)
    if ftype is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"line {line}: '{path}' expects a boolean")
        return value
    if ftype is str:
        if not isinstance(value, str):
            raise ConfigError(f"line {line}: '{path}' expects a string")
        return value
    raise ConfigError(f"line {line}: '{path}' has unsupported type")


def _apply_dict(dc_type, data: dict, lines: dict[str, int], prefix: str = ""):
    fields = {f.name: f for f in dataclasses.fields(dc_type)}
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else key
        line = lines.get(path, 0)
        if key not in fields:
            raise ConfigError(f"line {line}: unknown key '{path}'")
        f = fields[key]
        if f.name in _NESTED_TYPES.get(dc_type, {}):
            sub_type = _NESTED_TYPES[dc_type][f.name]
            if not isinstance(value, dict):
                raise ConfigError(f"line {line}: '{path}' expects a mapping")
            kwargs[key] = _apply_dict(sub_type, value, lines, path)
        else:
            ftype = _FIELD_TYPES[dc_type][f.name]
            kwargs[key] = _coerce(value, ftype, path, line)
    return dc_type(**kwargs)


def _resolve_types(dc_type) -> tuple[dict, dict]:
    hints = typing.get_type_hints(dc_type)
    nested, flat = {}, {}
    for f in dataclasses.fields(dc_type):
        t = hints[f.name]
        if dataclasses.is_dataclass(t):
            nested[f.name] = t
        else:
            flat[f.name] = t
    return nested, flat


_NESTED_TYPES: dict = {}
_FIELD_TYPES: dict = {}
for _dc in (RunConfig, DynamicsParams, InitStateParams, CameraParams,
            RewardParams, AdamParams, PpoParams, PretrainParams):
    _NESTED_TYPES[_dc], _FIELD_TYPES[_dc] = _resolve_types(_dc)


def load_config(path) -> RunConfig:
    """Strict load: unknown keys and type mismatches raise ConfigError with
    the offending source line."""
    text = Path(path).read_text()
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark else 0
        raise ConfigError(f"line {line}: invalid YAML: {exc}") from None
    if data is None:
        return RunConfig()
    if not isinstance(data, dict):
        raise ConfigError("line 1: config root must be a mapping")
    lines = _key_lines(node)
    return _apply_dict(RunConfig, data, lines)


def config_dict(cfg: RunConfig) -> dict:
    def convert(obj):
        if isinstance(obj, tuple):
            return [convert(v) for v in obj]
        if isinstance(obj, dict):
            return {k: convert(v) for k, v in obj.items()}
        if isinstance(obj, np.floating):
            return float(obj)
        return obj

    return convert(dataclasses.asdict(cfg))


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config_dict(cfg), sort_keys=False))


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(config_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
