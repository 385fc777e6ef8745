"""
AugRL Bench - Run configuration schema
Pydantic models for every configuration key, the flat dotted-key file loader,
method presets and the key listing printed by `--help`.

Config files are flat key/value text with dotted sections:

    preset = "drq"
    seed = 3
    train.total_steps = 30000
    loss.critic_mode = "generic"
    loss.alpha_tp = 0.1
    augment.mu = "shift"

Keys under `augment.` configure `loss.augment`.
"""

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union, get_args, get_origin

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config.settings import (
    BLUR_SIGMA_RANGE,
    DEFAULT_TRAINING,
    ENCODER_CHANNELS,
    FEATURE_DIM,
    FRAME_STACK,
    HIDDEN_DIM,
    NUISANCE_WIDTH,
    OVERLAY_BETA,
    RANDCONV_KERNEL_SIZE,
    REACHER_HORIZON,
    REACHER_SIZE,
    REACHER_STEP,
    SHIFT_MAX_PAD,
    TRANSFORM_KINDS,
    COMPLEXITY_PROBE_FRACTION,
)
from core.errors import ConfigError
from utils.logger import get_logger

logger = get_logger(__name__)

CriticMode = Literal["implicit", "explicit_sg", "explicit_y", "svea_asym", "generic"]
ActorMode = Literal["implicit", "explicit_kl", "kl_aug_target", "kl_avg_target", "generic"]
EXPLICIT_CRITIC_MODES = ("explicit_sg", "explicit_y")


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_default=True)


def _check_chain(name: str) -> str:
    kinds = [k.strip() for k in name.split("+")]
    unknown = [k for k in kinds if k not in TRANSFORM_KINDS]
    if unknown or not kinds:
        raise ValueError(f"unknown transform {name!r}; kinds are {TRANSFORM_KINDS}")
    return "+".join(kinds)


class AugmentConfig(StrictModel):
    nu: List[str] = Field(default_factory=lambda: ["shift"])
    nu_weights: Optional[List[float]] = None
    mu: str = "shift"
    target: Optional[str] = None
    tp: str = "shift"
    complex: str = "overlay"
    max_pad: int = Field(SHIFT_MAX_PAD, ge=0)
    overlay_beta: float = Field(OVERLAY_BETA, ge=0.0, le=1.0)
    randconv_kernel: int = Field(RANDCONV_KERNEL_SIZE, ge=1)
    blur_sigma_min: float = Field(BLUR_SIGMA_RANGE[0], ge=0.0)
    blur_sigma_max: float = Field(BLUR_SIGMA_RANGE[1], gt=0.0)
    region: Optional[List[int]] = None

    @field_validator("nu")
    @classmethod
    def _nu_chains(cls, value: List[str]) -> List[str]:
        if not value:
            raise ValueError("at least one transform is required")
        return [_check_chain(v) for v in value]

    @field_validator("mu", "tp", "complex")
    @classmethod
    def _single_chain(cls, value: str) -> str:
        return _check_chain(value)

    @field_validator("target")
    @classmethod
    def _target_chain(cls, value: Optional[str]) -> Optional[str]:
        return None if value is None else _check_chain(value)

    @field_validator("nu_weights")
    @classmethod
    def _weights(cls, value: Optional[List[float]]) -> Optional[List[float]]:
        if value is not None and any(w < 0 for w in value):
            raise ValueError("weights must be >= 0")
        return value

    @field_validator("region")
    @classmethod
    def _region(cls, value: Optional[List[int]]) -> Optional[List[int]]:
        if value is not None and len(value) != 4:
            raise ValueError("region is [row0, row1, col0, col1]")
        return value


class LossConfig(StrictModel):
    base_algo: Literal["sac", "ddpg"] = "sac"
    critic_mode: CriticMode = "implicit"
    actor_mode: ActorMode = "implicit"
    M: int = Field(2, ge=1)
    K: int = Field(2, ge=1)
    J: int = Field(1, ge=1)
    L: int = Field(1, ge=1)
    alpha: float = Field(DEFAULT_TRAINING["init_temperature"], ge=0.0)
    alpha_q: float = Field(1.0, ge=0.0)
    alpha_pi: float = Field(0.1, ge=0.0)
    alpha_tp: float = Field(0.0, ge=0.0)
    gamma: float = Field(DEFAULT_TRAINING["gamma"], gt=0.0, lt=1.0)
    kl_direction: Literal["forward", "reverse"] = "forward"
    svea_alpha: float = Field(0.5, ge=0.0)
    svea_beta: float = Field(0.5, ge=0.0)
    ddpg_target_noise: float = Field(0.2, ge=0.0)
    ddpg_noise_clip: float = Field(0.3, ge=0.0)
    augment: AugmentConfig = Field(default_factory=AugmentConfig)

    def target_chain_name(self) -> str:
        """Law of the target augmentation; explicit critics bootstrap from raw s'"""
        if self.augment.target is not None:
            return self.augment.target
        if self.critic_mode in EXPLICIT_CRITIC_MODES:
            return "none"
        return self.augment.mu


class NetworkConfig(StrictModel):
    feature_dim: int = Field(FEATURE_DIM, ge=1)
    channels: int = Field(ENCODER_CHANNELS, ge=1)
    hidden_dim: int = Field(HIDDEN_DIM, ge=1)
    twin_critics: bool = True
    shared_encoder: bool = True
    activation: Literal["relu", "tanh", "elu"] = "relu"
    dtype: Literal["float32", "float64"] = "float32"


class EnvConfig(StrictModel):
    name: Literal["sprite_reacher", "nuisance_channel"] = "sprite_reacher"
    size: int = Field(REACHER_SIZE, ge=12)
    frame_stack: int = Field(FRAME_STACK, ge=1)
    horizon: int = Field(REACHER_HORIZON, ge=1)
    step_size: float = Field(REACHER_STEP, gt=0.0)
    nuisance_width: int = Field(NUISANCE_WIDTH, ge=1)


class TrainingConfig(StrictModel):
    total_steps: int = Field(DEFAULT_TRAINING["total_steps"], ge=1)
    batch_size: int = Field(DEFAULT_TRAINING["batch_size"], ge=1)
    actor_update_freq: int = Field(DEFAULT_TRAINING["actor_update_freq"], ge=1)
    target_update_freq: int = Field(DEFAULT_TRAINING["target_update_freq"], ge=1)
    seed_steps: int = Field(DEFAULT_TRAINING["seed_steps"], ge=0)
    updates_per_step: int = Field(DEFAULT_TRAINING["updates_per_step"], ge=1)
    eval_interval: int = Field(DEFAULT_TRAINING["eval_interval"], ge=1)
    eval_episodes: int = Field(DEFAULT_TRAINING["eval_episodes"], ge=1)
    record_interval: int = Field(DEFAULT_TRAINING["record_interval"], ge=1)
    tau: float = Field(DEFAULT_TRAINING["tau"], gt=0.0, le=1.0)
    learning_rate: float = Field(DEFAULT_TRAINING["learning_rate"], gt=0.0)
    autotune_temperature: bool = False
    replay_capacity: int = Field(DEFAULT_TRAINING["replay_capacity"], ge=1)
    update_more: bool = False
    complexity_probe_fraction: float = Field(COMPLEXITY_PROBE_FRACTION, gt=0.0, lt=1.0)
    exploration_std_start: float = Field(1.0, ge=0.0)
    exploration_std_end: float = Field(0.1, ge=0.0)
    checkpoint_interval: int = Field(0, ge=0)
    threads: int = Field(1, ge=1)


class TrainConfig(StrictModel):
    seed: int = 1
    preset: Optional[str] = None
    train: TrainingConfig = Field(default_factory=TrainingConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    env: EnvConfig = Field(default_factory=EnvConfig)

    @model_validator(mode="after")
    def _consistency(self) -> "TrainConfig":
        if self.env.name == "nuisance_channel" and self.loss.augment.region is None:
            # transforms act on the nuisance strip to the right of the payload
            size = self.env.size
            self.loss.augment.region = [0, size, size, size + self.env.nuisance_width]
        return self


# ==================== PRESETS ====================

PRESETS: Dict[str, Dict[str, Any]] = {
    "rad": {"loss.critic_mode": "implicit", "loss.actor_mode": "implicit", "loss.M": 1, "loss.K": 1},
    "rad_plus": {"loss.critic_mode": "implicit", "loss.actor_mode": "implicit", "loss.M": 2, "loss.K": 1},
    "drq": {"loss.critic_mode": "implicit", "loss.actor_mode": "implicit", "loss.M": 2, "loss.K": 2},
    "drq_kl": {
        "loss.critic_mode": "implicit", "loss.actor_mode": "kl_aug_target",
        "loss.M": 2, "loss.K": 2, "loss.alpha_pi": 0.1,
    },
    "drq_kl_fixed": {
        "loss.critic_mode": "implicit", "loss.actor_mode": "explicit_kl",
        "loss.M": 2, "loss.K": 2, "loss.alpha_pi": 0.1,
    },
    "drac": {
        "loss.critic_mode": "explicit_sg", "loss.actor_mode": "explicit_kl",
        "loss.M": 1, "loss.K": 1, "loss.alpha_q": 0.1, "loss.alpha_pi": 0.1,
    },
    "svea": {
        "loss.critic_mode": "svea_asym", "loss.actor_mode": "implicit",
        "loss.M": 1, "loss.K": 1, "augment.complex": "overlay",
    },
    "ours": {
        "loss.critic_mode": "generic", "loss.actor_mode": "generic",
        "loss.M": 2, "loss.K": 2, "loss.alpha_pi": 0.1, "loss.alpha_tp": 0.1,
    },
}


# ==================== KEYS ====================

def _type_name(annotation) -> str:
    origin = get_origin(annotation)
    if origin is Literal:
        return "|".join(str(a) for a in get_args(annotation))
    if origin is Union:
        args = [a for a in get_args(annotation) if a is not type(None)]
        return f"{_type_name(args[0])} (optional)" if args else "none"
    if origin in (list, List):
        (inner,) = get_args(annotation) or (Any,)
        return f"list[{_type_name(inner)}]"
    return getattr(annotation, "__name__", str(annotation))


def _field_default(info) -> Any:
    if info.default_factory is not None:
        return info.default_factory()
    return info.default


def config_keys() -> List[Tuple[str, str, Any]]:
    """Every (dotted key, type, default) a config file may set"""
    keys: List[Tuple[str, str, Any]] = []

    def walk(model: type, prefix: str):
        for name, info in model.model_fields.items():
            annotation = info.annotation
            if isinstance(annotation, type) and issubclass(annotation, BaseModel):
                section = "augment" if annotation is AugmentConfig else f"{prefix}{name}"
                walk(annotation, f"{section}.")
            else:
                keys.append((f"{prefix}{name}", _type_name(annotation), _field_default(info)))

    walk(TrainConfig, "")
    return keys


def config_help() -> str:
    lines = ["configuration keys (key  type  default):"]
    for key, type_name, default in config_keys():
        lines.append(f"  {key:<34} {type_name:<52} {default!r}")
    lines.append(f"  presets: {', '.join(sorted(PRESETS))}")
    return "\n".join(lines)


# ==================== LOADING ====================

def flatten(data: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in data.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def _nest(flat: Dict[str, Any]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        parts = key.split(".")
        if parts[0] == "augment":
            parts = ["loss"] + parts
        node = nested
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return nested


def _offender(error: dict) -> str:
    loc = [str(p) for p in error.get("loc", ())]
    if loc[:2] == ["loss", "augment"]:
        loc = loc[1:]
    key = ".".join(loc) or "config"
    value = error.get("input")
    if isinstance(value, dict):
        return f"{key}: {error.get('msg')}"
    return f"{key}={value!r} ({error.get('msg')})"


def parse_config(values: Dict[str, Any]) -> TrainConfig:
    """Validate a (nested or flat) mapping of keys, applying any preset first"""
    flat = flatten(values)
    preset = flat.get("preset")
    merged: Dict[str, Any] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError("unknown preset", [f"preset={preset!r}"])
        merged.update(PRESETS[preset])
    merged.update(flat)

    known = {key for key, _, _ in config_keys()}
    unknown = sorted(k for k in merged if k not in known)
    if unknown:
        logger.error(f"Unknown configuration keys: {unknown}")
        raise ConfigError("unknown configuration keys", unknown)

    try:
        return TrainConfig.model_validate(_nest(merged))
    except ValidationError as e:
        offenders = [_offender(err) for err in e.errors()]
        logger.error(f"Invalid configuration: {offenders}")
        raise ConfigError("invalid configuration values", offenders)


def parse_config_text(text: str) -> TrainConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError("malformed configuration file", [str(e)])
    return parse_config(data)


def load_config(path: Union[str, Path]) -> Tuple[TrainConfig, bytes]:
    """Parse a config file; returns the validated config and the raw bytes"""
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ConfigError("configuration file is not UTF-8", [str(e)])
    return parse_config_text(text), raw
