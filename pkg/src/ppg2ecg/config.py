"""Run configuration: a flat INI-style key-value file with four sections,
validated strictly (unknown keys are rejected) and hashed for audit.

The full resolved config is written beside every run's outputs; checkpoints
carry the model-section hash so architecturally incompatible loads fail fast.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field

from .errors import ConfigError, ParameterError
from .model import TrainSchedule
from .patches import StageConfig

CLASSIFIER_DEPTH = 4

DEFAULT_BINARY_LABELS = ("Normal", "Diabetes")
DEFAULT_CVD4_LABELS = ("CAD", "CHF", "MI", "HOTN")

_DEFAULTS = {
    "model": {
        "d_model": "64",
        "heads": "4",
        "patch_sizes": "32,64,128,256,512",
        "depths": "2,2,6,6,2",
        "stem_channels": "8",
        "stem_kernel": "7",
        "mlp_ratio": "4",
    },
    "train": {
        "lr": "0.0001",
        "epochs": "50",
        "batch_size": "8",
        "seed": "0",
        "weight_classes": "false",
    },
    "data": {
        "source": "synth",
        "subjects": "10",
        "duration_s": "30",
        "noise_std": "0.05",
        "heart_rate_bpm": "72",
        "classes": "0",
        "split": "0.8,0.1,0.1",
        "dir": "",
        "hz": "",
    },
    "task": {
        "kind": "reconstruct",
        "labels": "",
    },
}

_SECTION_ORDER = ("model", "train", "data", "task")


@dataclass(frozen=True)
class DataConfig:
    source: str = "synth"
    subjects: int = 10
    duration_s: float = 30.0
    noise_std: float = 0.05
    heart_rate_bpm: float = 72.0
    classes: int = 0
    split: tuple = (0.8, 0.1, 0.1)
    dir: str = ""
    hz: float | None = None


@dataclass(frozen=True)
class TaskConfig:
    kind: str = "reconstruct"
    labels: tuple = ()


@dataclass(frozen=True)
class RunConfig:
    model: StageConfig = field(default_factory=StageConfig)
    train: TrainSchedule = field(default_factory=TrainSchedule)
    data: DataConfig = field(default_factory=DataConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    weight_classes: bool = False


def _parse_int(section, key, raw):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected an integer, got {raw!r}") from None


def _parse_float(section, key, raw):
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected a number, got {raw!r}") from None


def _parse_tuple(section, key, raw, conv):
    try:
        return tuple(conv(part.strip()) for part in raw.split(",") if part.strip() != "")
    except ValueError:
        raise ConfigError(f"[{section}] {key}: could not parse list {raw!r}") from None


def _parse_bool(section, key, raw):
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"[{section}] {key}: expected a boolean, got {raw!r}")


def load_config(path) -> RunConfig:
    """Read, validate, and resolve a config file against the defaults."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    values = {s: dict(kv) for s, kv in _DEFAULTS.items()}
    for section in parser.sections():
        if section not in values:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser[section].items():
            if key not in values[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")
            values[section][key] = raw.strip()
    return _build(values)


def _build(values) -> RunConfig:
    m = values["model"]
    try:
        model = StageConfig(
            patch_sizes=_parse_tuple("model", "patch_sizes", m["patch_sizes"], int),
            depths=_parse_tuple("model", "depths", m["depths"], int),
            d_model=_parse_int("model", "d_model", m["d_model"]),
            heads=_parse_int("model", "heads", m["heads"]),
            stem_channels=_parse_int("model", "stem_channels", m["stem_channels"]),
            stem_kernel=_parse_int("model", "stem_kernel", m["stem_kernel"]),
            mlp_ratio=_parse_int("model", "mlp_ratio", m["mlp_ratio"]),
        )
    except ParameterError as exc:
        raise ConfigError(f"invalid model section: {exc}") from None
    t = values["train"]
    train = TrainSchedule(
        lr=_parse_float("train", "lr", t["lr"]),
        epochs=_parse_int("train", "epochs", t["epochs"]),
        batch_size=_parse_int("train", "batch_size", t["batch_size"]),
        seed=_parse_int("train", "seed", t["seed"]),
    )
    if train.lr < 0 or train.epochs < 0 or train.batch_size < 1:
        raise ConfigError("train section: lr/epochs must be non-negative, batch_size >= 1")
    d = values["data"]
    source = d["source"].strip().lower()
    if source not in ("synth", "csv"):
        raise ConfigError(f"[data] source must be 'synth' or 'csv', got {d['source']!r}")
    classes = _parse_int("data", "classes", d["classes"])
    if classes not in (0, 2, 4):
        raise ConfigError(f"[data] classes must be 0, 2 or 4, got {classes}")
    split = _parse_tuple("data", "split", d["split"], float)
    if len(split) != 3:
        raise ConfigError(f"[data] split needs three fractions, got {d['split']!r}")
    data = DataConfig(
        source=source,
        subjects=_parse_int("data", "subjects", d["subjects"]),
        duration_s=_parse_float("data", "duration_s", d["duration_s"]),
        noise_std=_parse_float("data", "noise_std", d["noise_std"]),
        heart_rate_bpm=_parse_float("data", "heart_rate_bpm", d["heart_rate_bpm"]),
        classes=classes,
        split=split,
        dir=d["dir"].strip(),
        hz=_parse_float("data", "hz", d["hz"]) if d["hz"].strip() else None,
    )
    k = values["task"]
    kind = k["kind"].strip().lower()
    if kind not in ("reconstruct", "classify", "ablation"):
        raise ConfigError(f"[task] kind must be reconstruct, classify or ablation, got {kind!r}")
    labels = _parse_tuple("task", "labels", k["labels"], str) if k["labels"].strip() else ()
    if not labels and classes == 2:
        labels = DEFAULT_BINARY_LABELS
    if not labels and classes == 4:
        labels = DEFAULT_CVD4_LABELS
    if classes and len(labels) != classes:
        raise ConfigError(f"[task] needs {classes} labels, got {labels}")
    task = TaskConfig(kind=kind, labels=labels)
    return RunConfig(
        model=model,
        train=train,
        data=data,
        task=task,
        weight_classes=_parse_bool("train", "weight_classes", t["weight_classes"]),
    )


# ---------------------------------------------------------------------------
# canonical serialization and hashing


def _canonical_sections(cfg: RunConfig) -> dict:
    return {
        "model": {
            "d_model": str(cfg.model.d_model),
            "heads": str(cfg.model.heads),
            "patch_sizes": ",".join(str(p) for p in cfg.model.patch_sizes),
            "depths": ",".join(str(d) for d in cfg.model.depths),
            "stem_channels": str(cfg.model.stem_channels),
            "stem_kernel": str(cfg.model.stem_kernel),
            "mlp_ratio": str(cfg.model.mlp_ratio),
            "shifted": str(cfg.model.shifted).lower(),
        },
        "train": {
            "lr": repr(cfg.train.lr),
            "epochs": str(cfg.train.epochs),
            "batch_size": str(cfg.train.batch_size),
            "seed": str(cfg.train.seed),
            "weight_classes": str(cfg.weight_classes).lower(),
        },
        "data": {
            "source": cfg.data.source,
            "subjects": str(cfg.data.subjects),
            "duration_s": repr(cfg.data.duration_s),
            "noise_std": repr(cfg.data.noise_std),
            "heart_rate_bpm": repr(cfg.data.heart_rate_bpm),
            "classes": str(cfg.data.classes),
            "split": ",".join(repr(f) for f in cfg.data.split),
            "dir": cfg.data.dir,
            "hz": "" if cfg.data.hz is None else repr(cfg.data.hz),
        },
        "task": {
            "kind": cfg.task.kind,
            "labels": ",".join(cfg.task.labels),
        },
    }


def resolved_text(cfg: RunConfig) -> str:
    sections = _canonical_sections(cfg)
    lines = []
    for section in _SECTION_ORDER:
        lines.append(f"[{section}]")
        for key in sorted(sections[section]):
            lines.append(f"{key} = {sections[section][key]}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(resolved_text(cfg).encode("utf-8")).hexdigest()


def model_hash(cfg: RunConfig) -> str:
    """Hash of the model section only; architecture compatibility key."""
    sections = _canonical_sections(cfg)
    text = "\n".join(f"{k} = {v}" for k, v in sorted(sections["model"].items()))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_resolved(out_dir, cfg: RunConfig):
    os.makedirs(out_dir, exist_ok=True)
    text = resolved_text(cfg)
    with open(os.path.join(out_dir, "config.resolved"), "w") as fh:
        fh.write(text)
        fh.write(f"\n# config_hash={config_hash(cfg)}\n")
