"""Dataclass configs and the flat dotted-key config file format.

Config files are JSON objects with dotted keys, e.g.
``{"backbone.preset": "desk", "decoder.schedule": "GMP,GMP,GAP,GAP,GAP"}``.
Flat keys diff cleanly between ablation runs; the effective (defaults-merged)
config is echoed into every run directory and can itself be re-run.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError

GAP = "GAP"
GMP = "GMP"
DEFAULT_SCHEDULE = (GMP, GMP, GAP, GAP, GAP)

FUSION_IMPERCEPTIBLE_MODES = ("add", "cat", "cmda")
FUSION_RGB_MODES = ("add", "cat", "ga")


@dataclass(frozen=True)
class DctConfig:
    """Blockwise-DCT geometry: patch_size pixels per DCT tile, block_size
    cells per frequency group. Output channels are 3 * (patch/block)^2."""

    patch_size: int = 8
    block_size: int = 2

    def __post_init__(self):
        if self.patch_size < 1 or self.block_size < 1:
            raise ConfigError("patch_size and block_size must be positive")
        if self.patch_size % self.block_size != 0:
            raise ConfigError(
                f"patch_size {self.patch_size} not divisible by block_size {self.block_size}"
            )

    @property
    def output_channels(self) -> int:
        return 3 * (self.patch_size // self.block_size) ** 2


@dataclass(frozen=True)
class ModelConfig:
    backbone: str = "desk"
    dct: DctConfig = field(default_factory=DctConfig)
    schedule: tuple = DEFAULT_SCHEDULE
    fusion_imperceptible: str = "cmda"
    fusion_rgb: str = "ga"
    loss_bce: bool = True
    loss_ssim: bool = True
    loss_iou: bool = True
    seed: int = 0

    def __post_init__(self):
        if len(self.schedule) != 5 or any(m not in (GAP, GMP) for m in self.schedule):
            raise ConfigError(f"schedule must be 5 entries of GAP/GMP, got {self.schedule!r}")
        if self.fusion_imperceptible not in FUSION_IMPERCEPTIBLE_MODES:
            raise ConfigError(f"unknown imperceptible fusion mode {self.fusion_imperceptible!r}")
        if self.fusion_rgb not in FUSION_RGB_MODES:
            raise ConfigError(f"unknown rgb fusion mode {self.fusion_rgb!r}")
        if not (self.loss_bce or self.loss_ssim or self.loss_iou):
            raise ConfigError("at least one loss component must be enabled")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 5e-4
    batch_size: int = 16
    epochs: int = 100
    image_size: int = 256
    plateau_patience: int = 5
    flip_augment: bool = True


def desk_train_config() -> TrainConfig:
    """Desk-scale training defaults (small images, small batches, more epochs)."""
    return TrainConfig(batch_size=8, epochs=200, image_size=64)


def default_train_config(backbone: str) -> TrainConfig:
    return desk_train_config() if backbone == "desk" else TrainConfig()


# ---------------------------------------------------------------------------
# Pooling schedules
# ---------------------------------------------------------------------------

_SCHEDULE_RE = re.compile(r"^(\d)(GAP|GMP)(?:\+(\d)(GAP|GMP))?$")


def schedule_from_label(label: str) -> tuple:
    """Parse schedule labels like ``3GAP+2GMP``.

    The first count applies to the highest decoder stages (5 downward), the
    second to the remaining low stages. Returned tuple is indexed by stage
    1..5 (low to high).
    """
    m = _SCHEDULE_RE.match(label.strip())
    if not m:
        raise ConfigError(f"bad pooling schedule label {label!r}")
    hi_count, hi_mode = int(m.group(1)), m.group(2)
    if m.group(3) is None:
        if hi_count != 5:
            raise ConfigError(f"single-mode label must cover 5 stages: {label!r}")
        return (hi_mode,) * 5
    lo_count, lo_mode = int(m.group(3)), m.group(4)
    if hi_count + lo_count != 5:
        raise ConfigError(f"stage counts must sum to 5: {label!r}")
    return (lo_mode,) * lo_count + (hi_mode,) * hi_count


POOLING_SCHEDULE_LABELS = (
    "5GAP",
    "4GAP+1GMP",
    "3GAP+2GMP",
    "2GAP+3GMP",
    "1GAP+4GMP",
    "5GMP",
    "4GMP+1GAP",
    "3GMP+2GAP",
    "2GMP+3GAP",
    "1GMP+4GAP",
)

FUSION_VARIANTS = (
    ("add", "add"),
    ("cat", "cat"),
    ("add", "ga"),
    ("cat", "ga"),
    ("cmda", "add"),
    ("cmda", "cat"),
    ("cmda", "ga"),
)

LOSS_VARIANTS = (
    ("bce", (True, False, False)),
    ("bce+ssim", (True, True, False)),
    ("bce+iou", (True, False, True)),
    ("bce+iou+ssim", (True, True, True)),
)


# ---------------------------------------------------------------------------
# Flat dotted-key config files
# ---------------------------------------------------------------------------

_KNOWN_KEYS = {
    "backbone.preset": str,
    "dct.patch_size": int,
    "dct.block_size": int,
    "decoder.schedule": str,
    "fusion.imperceptible": str,
    "fusion.rgb": str,
    "loss.bce": bool,
    "loss.ssim": bool,
    "loss.iou": bool,
    "seed": int,
    "train.lr": float,
    "train.weight_decay": float,
    "train.batch_size": int,
    "train.epochs": int,
    "train.image_size": int,
    "train.plateau_patience": int,
    "train.flip_augment": bool,
}


def config_to_flat(model: ModelConfig, train: TrainConfig) -> dict:
    return {
        "backbone.preset": model.backbone,
        "dct.patch_size": model.dct.patch_size,
        "dct.block_size": model.dct.block_size,
        "decoder.schedule": ",".join(model.schedule),
        "fusion.imperceptible": model.fusion_imperceptible,
        "fusion.rgb": model.fusion_rgb,
        "loss.bce": model.loss_bce,
        "loss.ssim": model.loss_ssim,
        "loss.iou": model.loss_iou,
        "seed": model.seed,
        "train.lr": train.lr,
        "train.weight_decay": train.weight_decay,
        "train.batch_size": train.batch_size,
        "train.epochs": train.epochs,
        "train.image_size": train.image_size,
        "train.plateau_patience": train.plateau_patience,
        "train.flip_augment": train.flip_augment,
    }


def config_from_flat(flat: dict) -> tuple[ModelConfig, TrainConfig]:
    for key in flat:
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
    for key, typ in _KNOWN_KEYS.items():
        if key in flat and typ in (int, float, bool, str):
            val = flat[key]
            ok = isinstance(val, typ) or (typ is float and isinstance(val, int) and not isinstance(val, bool))
            if typ is int and isinstance(val, bool):
                ok = False
            if not ok:
                raise ConfigError(f"config key {key!r} expects {typ.__name__}, got {val!r}")

    backbone = flat.get("backbone.preset", "desk")
    train_defaults = default_train_config(backbone)
    schedule = DEFAULT_SCHEDULE
    if "decoder.schedule" in flat:
        schedule = tuple(s.strip() for s in flat["decoder.schedule"].split(","))
    model = ModelConfig(
        backbone=backbone,
        dct=DctConfig(
            patch_size=flat.get("dct.patch_size", 8),
            block_size=flat.get("dct.block_size", 2),
        ),
        schedule=schedule,
        fusion_imperceptible=flat.get("fusion.imperceptible", "cmda"),
        fusion_rgb=flat.get("fusion.rgb", "ga"),
        loss_bce=flat.get("loss.bce", True),
        loss_ssim=flat.get("loss.ssim", True),
        loss_iou=flat.get("loss.iou", True),
        seed=flat.get("seed", 0),
    )
    train = TrainConfig(
        lr=float(flat.get("train.lr", train_defaults.lr)),
        weight_decay=float(flat.get("train.weight_decay", train_defaults.weight_decay)),
        batch_size=flat.get("train.batch_size", train_defaults.batch_size),
        epochs=flat.get("train.epochs", train_defaults.epochs),
        image_size=flat.get("train.image_size", train_defaults.image_size),
        plateau_patience=flat.get("train.plateau_patience", train_defaults.plateau_patience),
        flip_augment=flat.get("train.flip_augment", train_defaults.flip_augment),
    )
    return model, train


def load_config_file(path) -> tuple[ModelConfig, TrainConfig]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        flat = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(flat, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return config_from_flat(flat)


def write_config_file(path, model: ModelConfig, train: TrainConfig) -> None:
    Path(path).write_text(json.dumps(config_to_flat(model, train), indent=2) + "\n")


def with_seed(model: ModelConfig, seed: int) -> ModelConfig:
    return replace(model, seed=seed)
