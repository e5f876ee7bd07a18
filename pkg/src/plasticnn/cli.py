"""Command-line entry point: ``plasticnn <subcommand> --config FILE [--out DIR]``.

Exit codes: 0 success, 1 configuration/input error, 2 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import kernels
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, parse_config, serialize_config
from .data import Dataset, load_dataset_csv, write_dataset_csv
from .engine import (dropin_loop, neuroplasticity_loop, prune_and_retrain, train_static,
                     validation_criterion)
from .errors import NumericError, PlasticNNError
from .harness import (TaskSpec, compare_arms, forgetting_metrics, format_report,
                      history_records, make_record, make_task_stream, run_experiment)
from .mutations import MutationLog
from .network import Loss, accuracy, init_network

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

SINGLE_RUN = {"train": "static", "dropin": "dropin", "plasticity": "neuroplasticity",
              "prune": "prune_retrain"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="plasticnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {"train": "static SGD training", "dropin": "training with neuron growth",
             "plasticity": "growth followed by relevance masking",
             "prune": "one-shot pruning with retraining"}
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True)
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="seed (overrides the first config seed)")
    p = sub.add_parser("eval", help="accuracy of a checkpoint on a CSV dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--dropout-p", type=float, default=0.0,
                   help="scale hidden activations by 1 - p (models trained with dropout)")
    p.add_argument("--loss", default="mean_squared_error",
                   help="loss used for regression data")
    p = sub.add_parser("bench", help="run all configured arms over the task stream")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides the config)")
    return parser


def _datasets(cfg: RunConfig, seed: int, out: Path) -> tuple[Dataset, Dataset]:
    if cfg.train_csv is not None:
        train, val = load_dataset_csv(cfg.train_csv), load_dataset_csv(cfg.val_csv)
    else:
        specs = cfg.tasks or [TaskSpec("gaussian_blobs")]
        task = make_task_stream(specs[:1], seed).tasks[0]
        train, val = task.train, task.val
        write_dataset_csv(task.test, out / "test.csv")
    write_dataset_csv(train, out / "train.csv")
    write_dataset_csv(val, out / "val.csv")
    return train, val


def _write_jsonl(records, path: Path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")


def run_single(command: str, cfg: RunConfig, out: Path, seed: int) -> int:
    strategy = SINGLE_RUN[command]
    out.mkdir(parents=True, exist_ok=True)
    train, val = _datasets(cfg, seed, out)
    net = init_network(cfg.widths, cfg.activations, seed)
    policy, settings = cfg.policy(), cfg.settings()
    log = MutationLog()
    rounds = [0]

    def checkpoint(net, history, log):
        rounds[0] += 1
        if cfg.checkpoint_interval and rounds[0] % cfg.checkpoint_interval == 0:
            save_checkpoint(net, log, out / f"checkpoint_round{rounds[0]:04d}.json")

    common = dict(settings=settings, seed=seed, on_round=checkpoint)
    if strategy == "static":
        net, history = train_static(net, train, val, cfg.epochs_per_round,
                                    dropout_p=policy.dropout_p, **common)
        scale = 1.0 - policy.dropout_p
    else:
        loop = {"dropin": dropin_loop, "neuroplasticity": neuroplasticity_loop,
                "prune_retrain": prune_and_retrain}[strategy]
        net, history, log = loop(net, policy, train, val, cfg.epochs_per_round, log, **common)
        grew_with_dropout = policy.dropout_in_growth and strategy != "prune_retrain"
        scale = 1.0 - policy.dropout_p if grew_with_dropout else 1.0

    metric = "accuracy" if val.classification else "neg_loss"
    records = history_records(command, seed, 0, history, val_metric=metric)
    final = validation_criterion(net, val, settings.loss, scale)
    records.append(make_record(command, seed, 0, history.epoch, "val", f"final_{metric}", final))
    records.append(make_record(command, seed, 0, history.epoch, "arch", "hidden_neurons",
                               net.hidden_neurons))
    _write_jsonl(records, out / "log.jsonl")
    (out / "mutations.jsonl").write_text(log.to_jsonl())
    save_checkpoint(net, log, out / "model.json")
    (out / "config.cfg").write_text(serialize_config(cfg))
    print(f"{command}: final validation {metric} {final!r} after {history.epoch} epochs "
          f"({history.stop_cause}); widths {net.widths}; {len(log)} mutation events; "
          f"kernels={kernels.BACKEND}")
    return EXIT_OK


def run_eval(args) -> int:
    net, _ = load_checkpoint(args.checkpoint)
    data = load_dataset_csv(args.data)
    scale = 1.0 - args.dropout_p
    if data.classification:
        value = accuracy(net, data.X, data.y, scale)
        print(f"accuracy {value!r}")
    else:
        value = validation_criterion(net, data, Loss.parse(args.loss), scale)
        print(f"neg_loss {value!r}")
    return EXIT_OK


def run_bench(cfg: RunConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    specs = cfg.tasks or [TaskSpec("gaussian_blobs")]
    arms = cfg.arm_configs()
    policy, settings = cfg.policy(), cfg.settings()
    logs = []
    for seed in cfg.seeds:
        stream = make_task_stream(specs, seed)
        logs.append(run_experiment(stream, arms, policy, seed, widths=cfg.widths,
                                   activations=cfg.activations, settings=settings,
                                   epochs_per_round=cfg.epochs_per_round))
    _write_jsonl([r for log in logs for r in log.records], out / "log.jsonl")
    mut_dir = out / "mutations"
    mut_dir.mkdir(exist_ok=True)
    per_arm, neurons = {}, {}
    with open(out / "matrix.csv", "w", newline="") as fm, \
            open(out / "metrics.csv", "w", newline="") as fx, \
            open(out / "timings.csv", "w", newline="") as ft:
        wm, wx, wt = csv.writer(fm), csv.writer(fx), csv.writer(ft)
        wm.writerow(["seed", "arm", "after_task", "task", "accuracy"])
        wx.writerow(["seed", "arm", "avg_final_accuracy", "backward_transfer", "hidden_neurons",
                     "forgetting"])
        wt.writerow(["seed", "arm", "task", "seconds"])
        for log in logs:
            metrics = forgetting_metrics(log)
            for name, res in log.arms.items():
                (mut_dir / f"{name}_seed{log.seed}.jsonl").write_text(res.mutations.to_jsonl())
                for j, row in enumerate(res.matrix):
                    for i, acc in enumerate(row):
                        wm.writerow([log.seed, name, j, i, repr(acc)])
                for t, sec in enumerate(res.task_seconds):
                    wt.writerow([log.seed, name, t, f"{sec:.6f}"])
                if name in metrics:
                    m = metrics[name]
                    wx.writerow([log.seed, name, repr(m.average_final_accuracy),
                                 repr(m.backward_transfer), res.hidden_neurons,
                                 ";".join(repr(f) for f in m.forgetting)])
                    per_arm.setdefault(name, []).append(m)
                    neurons.setdefault(name, []).append(res.hidden_neurons)
                else:
                    print(f"arm {name} seed {log.seed} failed: {res.error}", file=sys.stderr)
    (out / "config.cfg").write_text(serialize_config(cfg))
    if per_arm:
        report = format_report(compare_arms(per_arm, neurons))
        (out / "report.txt").write_text(report)
        print(report, end="")
    failed = any(res.failed for log in logs for res in log.arms.values())
    return EXIT_NUMERIC if failed else EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "eval":
            return run_eval(args)
        cfg = parse_config(args.config)
        out = Path(args.out or cfg.output)
        if args.command == "bench":
            return run_bench(cfg, out)
        seed = args.seed if args.seed is not None else cfg.seeds[0]
        return run_single(args.command, cfg, out, seed)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PlasticNNError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
