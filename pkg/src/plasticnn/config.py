"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored. Lists are comma separated.
Tasks are given as ``task.N = generator key=value ...``, for example::

    widths = 2,8,2
    activations = relu,softmax
    task.0 = gaussian_blobs samples=200 noise=0.8 classes=2
    task.1 = gaussian_blobs samples=200 noise=0.8 classes=2 offset=2

Unknown keys are errors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .engine import PlasticityPolicy, TrainSettings
from .errors import ConfigError, ConstructionError, PolicyError
from .harness import STRATEGIES, ArmConfig, TaskSpec
from .network import Activation, Loss
from .plasticity import CriterionKind, PruneCriterion

_TASK_KEYS = {"samples": ("samples", int), "noise": ("noise", float),
              "classes": ("n_classes", int), "rotation": ("rotation", float),
              "shift": ("shift", float), "offset": ("class_offset", int)}


@dataclass
class RunConfig:
    widths: list[int]
    activations: list[str]
    loss: str = "mean_squared_error"
    learning_rate: float = 0.1
    batch_size: int = 32
    epochs_per_round: int = 10
    max_rounds: int = 50
    seeds: list[int] = field(default_factory=lambda: [0])
    arms: list[str] = field(default_factory=lambda: ["static", "dropin"])
    tasks: list[TaskSpec] = field(default_factory=list)
    output: str = "results"
    checkpoint_interval: int = 0
    train_csv: Optional[str] = None
    val_csv: Optional[str] = None
    delta: float = 1e-3
    growth_k: Optional[int] = None
    init_scale: float = 0.1
    patience: int = 2
    dropout_p: float = 0.0
    dropout_in_growth: bool = False
    prune_criterion: str = "magnitude"
    prune_fraction: float = 0.25
    min_width: int = 1
    max_total_neurons: int = 64
    probe_batch: int = 64
    lrp_epsilon: float = 1e-6
    target_criterion: Optional[float] = None

    def policy(self) -> PlasticityPolicy:
        return PlasticityPolicy(
            delta=self.delta, growth_k=self.growth_k, init_scale=self.init_scale,
            patience=self.patience, dropout_p=self.dropout_p,
            prune=PruneCriterion(self.prune_criterion, self.prune_fraction, self.min_width),
            min_width=self.min_width, max_total_neurons=self.max_total_neurons,
            probe_batch=self.probe_batch, lrp_epsilon=self.lrp_epsilon,
            dropout_in_growth=self.dropout_in_growth, target_criterion=self.target_criterion)

    def settings(self) -> TrainSettings:
        return TrainSettings(self.learning_rate, self.batch_size, Loss.parse(self.loss),
                             self.max_rounds)

    def arm_configs(self) -> list[ArmConfig]:
        out = []
        for a in self.arms:
            name, _, strategy = a.partition(":")
            out.append(ArmConfig(name, strategy or name))
        return out


_REQUIRED = ("widths", "activations")
_FIELDS = {f.name for f in fields(RunConfig)} - {"tasks"}


def _int_list(s):
    return [int(x) for x in s.split(",") if x.strip()]


def _str_list(s):
    return [x.strip() for x in s.split(",") if x.strip()]


def _opt(conv):
    return lambda s: None if s.strip().lower() in ("none", "auto", "") else conv(s)


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _float(s):
    v = float(s)
    if not math.isfinite(v):
        raise ValueError(f"expected a finite number, got {s!r}")
    return v


_CONVERTERS = {
    "widths": _int_list, "activations": _str_list, "loss": str.strip,
    "learning_rate": _float, "batch_size": int, "epochs_per_round": int, "max_rounds": int,
    "seeds": _int_list, "arms": _str_list, "output": str.strip, "checkpoint_interval": int,
    "train_csv": _opt(str.strip), "val_csv": _opt(str.strip),
    "delta": _float, "growth_k": _opt(int), "init_scale": _float, "patience": int,
    "dropout_p": _float, "dropout_in_growth": _bool, "prune_criterion": str.strip,
    "prune_fraction": _float, "min_width": int, "max_total_neurons": int,
    "probe_batch": int, "lrp_epsilon": _float, "target_criterion": _opt(_float),
}


def _parse_task(value: str, key: str, line: int) -> TaskSpec:
    parts = value.split()
    if not parts:
        raise ConfigError("empty task description", key, line)
    kwargs = {}
    for tok in parts[1:]:
        name, eq, raw = tok.partition("=")
        if not eq or name not in _TASK_KEYS:
            raise ConfigError(f"unknown task parameter {tok!r}; expected one of {sorted(_TASK_KEYS)}",
                              key, line)
        attr, conv = _TASK_KEYS[name]
        try:
            kwargs[attr] = conv(raw)
        except ValueError:
            raise ConfigError(f"bad value for task parameter {name}: {raw!r}", key, line) from None
    try:
        return TaskSpec(parts[0], **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc), key, line) from None


def parse_config_text(text: str, base_dir: Optional[Path] = None) -> RunConfig:
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    tasks: dict[int, TaskSpec] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not eq or not key:
            raise ConfigError(f"expected key=value, got {raw.strip()!r}", line=lineno)
        if key in lines:
            raise ConfigError(f"duplicate key (first set on line {lines[key]})", key, lineno)
        lines[key] = lineno
        if key.startswith("task."):
            idx = key[5:]
            if not idx.isdigit():
                raise ConfigError("task keys must be task.<index>", key, lineno)
            tasks[int(idx)] = _parse_task(value, key, lineno)
            continue
        if key not in _FIELDS:
            raise ConfigError("unknown key", key, lineno)
        try:
            values[key] = _CONVERTERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"bad value {value!r}: {exc}", key, lineno) from None
    for key in _REQUIRED:
        if key not in values:
            raise ConfigError("missing required key", key)
    if tasks and sorted(tasks) != list(range(len(tasks))):
        raise ConfigError(f"task indices must be 0..{len(tasks) - 1}, got {sorted(tasks)}", "task")
    cfg = RunConfig(**values, tasks=[tasks[i] for i in sorted(tasks)])
    _validate(cfg, lines, base_dir)
    return cfg


def _fail(msg, key, lines):
    raise ConfigError(msg, key, lines.get(key))


def _validate(cfg: RunConfig, lines: dict, base_dir: Optional[Path]) -> None:
    if len(cfg.widths) < 2 or any(w < 1 for w in cfg.widths):
        _fail("need at least two positive widths", "widths", lines)
    if len(cfg.activations) != len(cfg.widths) - 1:
        _fail(f"need {len(cfg.widths) - 1} activations", "activations", lines)
    for a in cfg.activations:
        try:
            Activation(a)
        except ValueError:
            _fail(f"unknown activation {a!r}", "activations", lines)
    try:
        Loss.parse(cfg.loss)
    except ValueError:
        _fail(f"unknown loss {cfg.loss!r}", "loss", lines)
    try:
        CriterionKind(cfg.prune_criterion)
    except ValueError:
        _fail(f"unknown criterion {cfg.prune_criterion!r}", "prune_criterion", lines)
    ranges = [
        ("learning_rate", cfg.learning_rate > 0, "must be > 0"),
        ("batch_size", cfg.batch_size >= 1, "must be >= 1"),
        ("epochs_per_round", cfg.epochs_per_round >= 1, "must be >= 1"),
        ("max_rounds", cfg.max_rounds >= 1, "must be >= 1"),
        ("checkpoint_interval", cfg.checkpoint_interval >= 0, "must be >= 0"),
        ("delta", cfg.delta >= 0, "must be >= 0"),
        ("growth_k", cfg.growth_k is None or cfg.growth_k >= 1, "must be >= 1 or auto"),
        ("init_scale", cfg.init_scale >= 0, "must be >= 0"),
        ("patience", cfg.patience >= 1, "must be >= 1"),
        ("dropout_p", 0.0 <= cfg.dropout_p < 1.0, "must lie in [0, 1)"),
        ("prune_fraction", 0.0 < cfg.prune_fraction < 1.0, "must lie in (0, 1)"),
        ("min_width", cfg.min_width >= 1, "must be >= 1"),
        ("max_total_neurons", cfg.max_total_neurons >= sum(cfg.widths[1:-1]),
         "must be >= the initial hidden neuron count"),
        ("probe_batch", cfg.probe_batch >= 1, "must be >= 1"),
        ("lrp_epsilon", cfg.lrp_epsilon > 0, "must be > 0"),
        ("seeds", bool(cfg.seeds) and all(s >= 0 for s in cfg.seeds), "need non-negative seeds"),
        ("arms", bool(cfg.arms), "need at least one arm"),
    ]
    for key, ok, msg in ranges:
        if not ok:
            _fail(f"{msg}, got {getattr(cfg, key)!r}", key, lines)
    for a in cfg.arms:
        strategy = a.partition(":")[2] or a
        if strategy not in STRATEGIES:
            _fail(f"unknown strategy {strategy!r}", "arms", lines)
    if (cfg.train_csv is None) != (cfg.val_csv is None):
        _fail("train_csv and val_csv must be given together", "train_csv" if cfg.train_csv is None else "val_csv", lines)
    for key in ("train_csv", "val_csv"):
        p = getattr(cfg, key)
        if p is not None:
            path = Path(p) if base_dir is None or Path(p).is_absolute() else base_dir / p
            if not path.is_file():
                _fail(f"file not found: {path}", key, lines)
            setattr(cfg, key, str(path))
    try:
        cfg.policy()
        cfg.settings()
    except (PolicyError, ConstructionError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, path.parent)


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _fmt_task(t: TaskSpec) -> str:
    return (f"{t.generator} samples={t.samples} noise={t.noise!r} classes={t.n_classes} "
            f"rotation={t.rotation!r} shift={t.shift!r} offset={t.class_offset}")


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        if f.name == "tasks":
            continue
        lines.append(f"{f.name} = {_fmt(getattr(cfg, f.name))}")
    for i, t in enumerate(cfg.tasks):
        lines.append(f"task.{i} = {_fmt_task(t)}")
    return "\n".join(lines) + "\n"


def with_overrides(cfg: RunConfig, **kw) -> RunConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
