"""Task streams, multi-arm continual-learning runs and forgetting metrics.

Accuracy matrices are indexed ``A[j][i]``: test accuracy on task ``i``
measured right after training on task ``j`` (defined for ``i <= j``).
"""
from __future__ import annotations

import json
import math
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from . import rng
from .data import Dataset
from .engine import (LossHistory, PlasticityPolicy, TrainSettings, dropin_loop,
                     neuroplasticity_loop, prune_and_retrain, train_static)
from .errors import IncompleteMatrixError, NumericError, PolicyError
from .mutations import MutationLog
from .network import Activation, Network, accuracy, init_network
from .plasticity import grow_neurons

GENERATORS = ("xor", "two_moons", "gaussian_blobs", "rotated_blobs")
STRATEGIES = ("static", "dropin", "neuroplasticity", "prune_retrain")
GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))
BLOB_RADIUS = 3.0
_XOR_CORNERS = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])


@dataclass(frozen=True)
class TaskSpec:
    generator: str
    samples: int = 200
    noise: float = 0.5
    n_classes: int = 2
    rotation: float = 0.0  # degrees, about the origin
    shift: float = 0.0  # added to both coordinates
    class_offset: int = 0

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}; choose from {GENERATORS}")
        min_samples = 4 if self.generator == "xor" else 10
        if self.samples < min_samples:
            raise ValueError(f"{self.generator} needs at least {min_samples} samples, got {self.samples}")
        if not self.noise >= 0 or not math.isfinite(self.noise):
            raise ValueError(f"noise must be a finite non-negative number, got {self.noise}")
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.generator in ("xor", "two_moons") and self.n_classes != 2:
            raise ValueError(f"{self.generator} is a two-class generator")
        if self.class_offset < 0:
            raise ValueError(f"class_offset must be >= 0, got {self.class_offset}")
        if self.generator == "gaussian_blobs" and self.rotation != 0.0:
            raise ValueError("gaussian_blobs takes no rotation; use rotated_blobs")
        if not (math.isfinite(self.rotation) and math.isfinite(self.shift)):
            raise ValueError("rotation and shift must be finite")

    @property
    def classes(self) -> range:
        return range(self.class_offset, self.class_offset + self.n_classes)


def blob_center(label: int) -> np.ndarray:
    a = label * GOLDEN_ANGLE
    return BLOB_RADIUS * np.array([math.cos(a), math.sin(a)])


def generate_task(spec: TaskSpec, gen: np.random.Generator) -> Dataset:
    """Raw (unsplit, unstandardized) samples for one task."""
    n = spec.samples
    if spec.generator == "xor":
        X = _XOR_CORNERS[np.arange(n) % 4].copy()
        y = (X[:, 0] != X[:, 1]).astype(np.int64)
    elif spec.generator == "two_moons":
        y = np.arange(n) % 2
        t = gen.uniform(0.0, math.pi, size=n)
        X = np.where(y[:, None] == 0,
                     np.column_stack([np.cos(t), np.sin(t)]),
                     np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)]))
    else:
        y = np.arange(n) % spec.n_classes
        X = np.array([blob_center(spec.class_offset + c) for c in y])
    if spec.noise > 0:
        X = X + gen.normal(0.0, spec.noise, size=X.shape)
    if spec.rotation:
        th = math.radians(spec.rotation)
        R = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        X = X @ R.T
    X = X + spec.shift
    return Dataset(X, y + spec.class_offset)


@dataclass
class Task:
    spec: TaskSpec
    train: Dataset
    val: Dataset
    test: Dataset
    mean: np.ndarray
    std: np.ndarray


@dataclass
class TaskStream:
    tasks: list[Task]
    seed: int

    @property
    def n_classes(self) -> int:
        return max(max(t.spec.classes) for t in self.tasks) + 1

    def classes_through(self, j: int) -> int:
        return max(max(t.spec.classes) for t in self.tasks[:j + 1]) + 1


def _split_sizes(n: int, fractions) -> tuple[int, int]:
    n_train = max(1, int(round(fractions[0] * n)))
    n_val = max(1, int(round(fractions[1] * n)))
    if n_train + n_val >= n:
        n_train = max(1, n - 2)
        n_val = 1
    return n_train, n_val


def make_task_stream(specs: Sequence[TaskSpec], seed: int,
                     fractions=(0.6, 0.2, 0.2)) -> TaskStream:
    """Generate, split and standardize every task of the stream.

    Features are standardized with the train split's mean and standard
    deviation, per task.
    """
    if not specs:
        raise ValueError("a task stream needs at least one task")
    tasks = []
    for t, spec in enumerate(specs):
        gen = rng.stream(seed, rng.DATA, 0, t)
        raw = generate_task(spec, gen)
        order = gen.permutation(len(raw))
        n_train, n_val = _split_sizes(len(raw), fractions)
        tr, va, te = order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]
        mean = raw.X[tr].mean(axis=0)
        std = raw.X[tr].std(axis=0)
        std[std == 0] = 1.0
        scaled = Dataset((raw.X - mean) / std, raw.y)
        tasks.append(Task(spec, scaled.subset(tr), scaled.subset(va), scaled.subset(te), mean, std))
    return TaskStream(tasks, seed)


@dataclass(frozen=True)
class ArmConfig:
    name: str
    strategy: str

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")


@dataclass
class ArmResult:
    arm: ArmConfig
    seed: int
    matrix: list[list[float]] = field(default_factory=list)
    mutations: MutationLog = field(default_factory=MutationLog)
    history: LossHistory = field(default_factory=LossHistory)
    records: list[dict] = field(default_factory=list)
    network: Optional[Network] = None
    task_seconds: list[float] = field(default_factory=list)
    failed: bool = False
    error: Optional[str] = None

    @property
    def hidden_neurons(self) -> int:
        return self.network.hidden_neurons if self.network is not None else 0


@dataclass
class ExperimentLog:
    seed: int
    arms: dict[str, ArmResult]

    @property
    def records(self) -> list[dict]:
        return [r for res in self.arms.values() for r in res.records]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.records)


def make_record(arm, seed, task, epoch, split, metric, value) -> dict:
    return {"arm": arm, "seed": seed, "task": task, "epoch": epoch, "split": split,
            "metric": metric, "value": value}


def history_records(arm: str, seed: int, task: int, history: LossHistory,
                    loss_from: int = 0, val_from: int = 0,
                    val_metric: str = "accuracy") -> list[dict]:
    """Train-loss and validation records for history entries past the given offsets."""
    out = [make_record(arm, seed, task, k, "train", "loss", loss)
           for k, loss in enumerate(history.train_losses[loss_from:], start=loss_from + 1)]
    out += [make_record(arm, seed, task, e, "val", val_metric, v)
            for e, v in zip(history.val_epochs[val_from:], history.val_criteria[val_from:])]
    return out


def inference_scale(strategy: str, policy: PlasticityPolicy) -> float:
    if strategy == "static" or policy.dropout_in_growth and strategy in ("dropin", "neuroplasticity"):
        return 1.0 - policy.dropout_p
    return 1.0


def _run_arm(stream: TaskStream, arm: ArmConfig, policy: PlasticityPolicy, seed: int,
             widths: Sequence[int], activations: Sequence, settings: TrainSettings,
             epochs_per_round: int) -> ArmResult:
    res = ArmResult(arm, seed)
    net = init_network(widths, activations, seed)
    res.network = net
    scale = inference_scale(arm.strategy, policy)
    try:
        for t, task in enumerate(stream.tasks):
            start = time.perf_counter()
            first_epoch = res.history.epoch
            n_loss, n_val = len(res.history.train_losses), len(res.history.val_criteria)
            n_events = len(res.mutations)
            res.records.append(make_record(arm.name, seed, t, first_epoch, "task", "start_epoch",
                                       first_epoch))
            needed = stream.classes_through(t)
            if needed > net.output_width:
                if net.output_width < 2:
                    raise PolicyError("a single-unit output cannot grow into a multi-class head")
                grow_neurons(net, len(net.layers) - 1, needed - net.output_width,
                             policy.init_scale, rng.stream(seed, "growth-output", t),
                             res.mutations, epoch=first_epoch, trigger="new_data",
                             allow_output=True)
            common = dict(settings=settings, seed=seed, segment=t, history=res.history)
            if arm.strategy == "static":
                train_static(net, task.train, task.val, epochs_per_round,
                             dropout_p=policy.dropout_p, **common)
            elif arm.strategy == "dropin":
                dropin_loop(net, policy, task.train, task.val, epochs_per_round, res.mutations,
                            new_data=True, **common)
            elif arm.strategy == "neuroplasticity":
                neuroplasticity_loop(net, policy, task.train, task.val, epochs_per_round,
                                     res.mutations, new_data=True, **common)
            else:
                prune_and_retrain(net, policy, task.train, task.val, epochs_per_round,
                                  res.mutations, **common)
            h = res.history
            res.records += history_records(arm.name, seed, t, h, n_loss, n_val)
            row = []
            for i in range(t + 1):
                acc = accuracy(net, stream.tasks[i].test.X, stream.tasks[i].test.y, scale)
                row.append(acc)
                res.records.append(make_record(arm.name, seed, i, h.epoch, "test",
                                           f"accuracy_after_task_{t}", acc))
            res.matrix.append(row)
            events = res.mutations.events[n_events:]
            for kind in ("grow", "prune", "mask"):
                res.records.append(make_record(arm.name, seed, t, h.epoch, "arch", f"{kind}_events",
                                           sum(1 for e in events if e.kind == kind)))
            res.records.append(make_record(arm.name, seed, t, h.epoch, "arch", "hidden_neurons",
                                       net.hidden_neurons))
            res.task_seconds.append(time.perf_counter() - start)
    except (NumericError, FloatingPointError) as exc:
        res.failed = True
        res.error = str(exc)
        res.records.append(make_record(arm.name, seed, len(res.matrix), res.history.epoch,
                                   "status", "failed", 1))
    return res


def _arm_threads() -> int:
    try:
        return max(1, int(os.environ.get("PLASTICNN_THREADS", "1")))
    except ValueError:
        return 1


def run_experiment(stream: TaskStream, arms: Sequence[Union[ArmConfig, str]],
                   policy: PlasticityPolicy, seed: int, *, widths: Sequence[int],
                   activations: Sequence, settings: Optional[TrainSettings] = None,
                   epochs_per_round: int = 10) -> ExperimentLog:
    """Run every arm over the stream from the same initial network and data order."""
    if not arms:
        raise ValueError("at least one arm is required")
    arm_cfgs = [a if isinstance(a, ArmConfig) else ArmConfig(a, a) for a in arms]
    names = [a.name for a in arm_cfgs]
    if len(set(names)) != len(names):
        raise ValueError(f"arm names must be unique, got {names}")
    settings = settings or TrainSettings()
    if widths[0] != stream.tasks[0].train.n_features:
        raise PolicyError(f"input width {widths[0]} != task features {stream.tasks[0].train.n_features}")
    jobs = [(stream, a, policy, seed, widths, activations, settings, epochs_per_round)
            for a in arm_cfgs]
    threads = min(_arm_threads(), len(jobs))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda j: _run_arm(*j), jobs))
    else:
        results = [_run_arm(*j) for j in jobs]
    return ExperimentLog(seed, {r.arm.name: r for r in results})


@dataclass(frozen=True)
class ForgettingMetrics:
    average_final_accuracy: float
    backward_transfer: float
    forgetting: tuple[float, ...]


def check_matrix(A: Sequence[Sequence[float]]) -> None:
    if not A:
        raise IncompleteMatrixError("empty accuracy matrix")
    for j, row in enumerate(A):
        if len(row) != j + 1:
            raise IncompleteMatrixError(f"row {j} has {len(row)} entries, expected {j + 1}")
        for v in row:
            if v is None or not 0.0 <= v <= 1.0:
                raise IncompleteMatrixError(f"row {j} holds an invalid accuracy {v!r}")


def metrics_from_matrix(A: Sequence[Sequence[float]]) -> ForgettingMetrics:
    """Average final accuracy, backward transfer and per-task forgetting.

    Backward transfer over a single task is defined as 0.
    """
    check_matrix(A)
    last = len(A) - 1
    final = A[last]
    avg = sum(final) / len(final)
    bwt = sum(final[i] - A[i][i] for i in range(last)) / last if last else 0.0
    forgetting = tuple(max(A[j][i] for j in range(i, last + 1)) - final[i]
                       for i in range(last + 1))
    return ForgettingMetrics(avg, bwt, forgetting)


def forgetting_metrics(log: ExperimentLog) -> dict[str, ForgettingMetrics]:
    """Metrics for every arm that finished; failed arms are left out."""
    return {name: metrics_from_matrix(res.matrix)
            for name, res in log.arms.items() if not res.failed}


_AFTER = re.compile(r"accuracy_after_task_(\d+)$")


def matrices_from_records(records) -> dict[tuple[int, str], list[list[float]]]:
    """Rebuild accuracy matrices keyed by ``(seed, arm)`` from log records."""
    cells: dict[tuple[int, str], dict[tuple[int, int], float]] = {}
    for r in records:
        if r.get("split") != "test":
            continue
        m = _AFTER.match(r["metric"])
        if not m:
            continue
        cells.setdefault((r.get("seed", 0), r["arm"]), {})[(int(m.group(1)), int(r["task"]))] = r["value"]
    out = {}
    for key, c in cells.items():
        n = max(j for j, _ in c) + 1
        try:
            out[key] = [[c[(j, i)] for i in range(j + 1)] for j in range(n)]
        except KeyError as exc:
            raise IncompleteMatrixError(f"{key}: missing entry A{list(exc.args[0])}") from None
    return out


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


@dataclass
class ArmSummary:
    arm: str
    mean_accuracy: float
    std_accuracy: float
    mean_neurons: float
    delta: float
    delta_std: float
    seeds: int


def _std(values: Sequence[float]) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def compare_arms(metrics: Mapping[str, Sequence[ForgettingMetrics]],
                 neurons: Optional[Mapping[str, Sequence[int]]] = None,
                 baseline: Optional[str] = "static") -> list[ArmSummary]:
    """Rank arms by mean final accuracy, then by fewer hidden neurons.

    ``delta`` is the mean per-seed accuracy difference to ``baseline`` (the
    last-ranked arm when the baseline is absent); ``delta_std`` is the
    sample standard deviation of those paired differences.
    """
    neurons = neurons or {}
    accs = {a: [m.average_final_accuracy for m in ms] for a, ms in metrics.items()}
    mean_n = {a: float(np.mean(neurons[a])) if neurons.get(a) else 0.0 for a in metrics}
    order = sorted(accs, key=lambda a: (-float(np.mean(accs[a])), mean_n[a], a))
    base = baseline if baseline in accs else order[-1]
    out = []
    for a in order:
        n = min(len(accs[a]), len(accs[base]))
        diffs = [accs[a][k] - accs[base][k] for k in range(n)]
        out.append(ArmSummary(a, float(np.mean(accs[a])), _std(accs[a]), mean_n[a],
                              float(np.mean(diffs)) if diffs else 0.0, _std(diffs), len(accs[a])))
    return out


def format_report(summaries: Sequence[ArmSummary], baseline: str = "static") -> str:
    lines = [f"{'rank':<5}{'arm':<18}{'avg_final':>10}{'std':>8}{'neurons':>9}"
             f"{'delta':>9}{'d_std':>8}"]
    for k, s in enumerate(summaries, start=1):
        lines.append(f"{k:<5}{s.arm:<18}{s.mean_accuracy:>10.4f}{s.std_accuracy:>8.4f}"
                     f"{s.mean_neurons:>9.1f}{s.delta:>+9.4f}{s.delta_std:>8.4f}")
    return "\n".join(lines) + "\n"
