"""Acceptance suite: one test per criterion, each with its runtime budget.

Every test appends a one-line verdict to ``REPORT``; the conftest hook prints
them at the end of the session (they are also printed inline under ``-s``).
"""
import csv
import itertools
import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from plasticnn import rng
from plasticnn.checkpoint import load_checkpoint, save_checkpoint
from plasticnn.cli import main
from plasticnn.config import parse_config
from plasticnn.data import load_dataset_csv
from plasticnn.engine import PlasticityPolicy, audit_grow_events
from plasticnn.errors import LayerCollapseError
from plasticnn.harness import (STRATEGIES, make_task_stream, matrices_from_records,
                               metrics_from_matrix, read_jsonl, run_experiment)
from plasticnn.mutations import MutationLog
from plasticnn.network import Loss, Network, accuracy, backward, forward, init_network
from plasticnn.plasticity import (PruneCriterion, collect_activation_stats, grow_neurons,
                                  inference_forward_scaled, masked_forward, prune_candidates,
                                  prune_neurons, pruning_candidates, sample_dropout_mask)
from plasticnn.relevance import lrp_scores

from conftest import HIDDEN_ACTS, finite_difference_grads, scalar_forward

DOCS = Path(__file__).resolve().parents[1] / "docs"
REPORT: list[str] = []


def verdict(n, ok, detail, seconds, budget):
    timed = seconds < budget
    line = (f"criterion {n:>2}: {'PASS' if ok and timed else 'FAIL'}  {detail}  "
            f"[{seconds:.2f}s / {budget:g}s]")
    REPORT.append(line)
    print(line)
    assert ok, line
    assert timed, line


def rel_error(a, b, floor=1e-6):
    """Elementwise |a - b| / max(|a|, |b|, floor); the floor keeps
    vanishing gradients from turning rounding noise into huge ratios."""
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def test_criterion_01_gradient_correctness():
    t0 = time.perf_counter()
    gen = rng.stream(1, "acceptance")
    worst = 0.0
    outputs = HIDDEN_ACTS + ["softmax"]
    for n in range(20):
        depth = int(gen.integers(1, 5))
        widths = [int(gen.integers(1, 9)) for _ in range(depth + 1)]
        acts = [HIDDEN_ACTS[(n + i) % 4] for i in range(depth - 1)] + [outputs[n % 5]]
        if acts[-1] == "softmax":
            widths[-1] = max(2, widths[-1])
        loss = Loss.CROSS_ENTROPY if acts[-1] == "softmax" else Loss.MSE
        net = init_network(widths, acts, int(gen.integers(0, 2**31)))
        for layer in net.layers:
            layer.bias[:] = gen.normal(0, 0.3, size=layer.out_width)
        X = gen.normal(size=(3, widths[0]))
        if loss is Loss.CROSS_ENTROPY:
            T = np.eye(widths[-1])[gen.integers(0, widths[-1], size=3)]
        else:
            T = gen.normal(size=(3, widths[-1]))
        g = backward(net, forward(net, X), T, loss)
        fW, fb = finite_difference_grads(net, X, T, loss.value)
        for a, b in zip(g.weights + g.biases, fW + fb):
            worst = max(worst, float(rel_error(a, b).max()))
    verdict(1, worst < 1e-4, f"max relative error {worst:.2e} over 20 nets (< 1e-4)",
            time.perf_counter() - t0, 10)


def test_criterion_02_dropout_statistics():
    t0 = time.perf_counter()
    net = init_network([2, 10, 1], ["relu", "identity"], 0)
    parts, ok = [], True
    for p in (0.1, 0.5, 0.9):
        m = sample_dropout_mask(net, p, rng.stream(2, rng.DROPOUT, int(p * 10)), batch=10_000)
        keep = float(m.masks[0].mean())  # 10^5 draws
        se = math.sqrt(p * (1 - p) / 1e5)
        z = abs(keep - (1 - p)) / se
        ok &= z < 3
        parts.append(f"p={p}: {keep:.4f} ({z:.2f} se)")
    gen = rng.stream(2, rng.DROPOUT, 99)
    zero = sample_dropout_mask(net, 0.0, gen, batch=1000)
    one = sample_dropout_mask(net, 1.0, gen, batch=1000)
    exact = (np.all(zero.masks[0] == 1) and np.all(one.masks[0] == 0)
             and np.all(one.masks[-1] == 1) and np.all(zero.masks[-1] == 1))
    parts.append(f"boundaries exact={bool(exact)}")
    verdict(2, ok and exact, "; ".join(parts), time.perf_counter() - t0, 5)


def test_criterion_03_scaled_inference_fidelity():
    t0 = time.perf_counter()
    net = init_network([2, 4, 1], ["relu", "identity"], 3)
    gen = rng.stream(3, "acceptance")
    for layer in net.layers:
        layer.bias[:] = gen.normal(0, 0.3, size=layer.out_width)
    inputs = gen.normal(0, 1.5, size=(5, 2))
    dgen = rng.stream(3, rng.DROPOUT)
    worst = 0.0
    for x in inputs:
        total, chunk = 0.0, 100_000
        for _ in range(10):  # 10^6 masks
            m = sample_dropout_mask(net, 0.5, dgen, batch=chunk)
            total += masked_forward(net, np.tile(x, (chunk, 1)), m).output.sum()
        mc = total / 1e6
        want = inference_forward_scaled(net, x, 0.5)[0]
        worst = max(worst, abs(mc - want) / abs(want))
    verdict(3, worst < 0.01, f"max relative MC deviation {worst:.2e} over 5 inputs (< 1%)",
            time.perf_counter() - t0, 60)


def test_criterion_04_function_preserving_growth():
    t0 = time.perf_counter()
    gen = rng.stream(4, "acceptance")
    worst_grow = worst_prune = 0.0
    for _ in range(100):
        depth = int(gen.integers(2, 5))
        widths = [int(gen.integers(1, 9)) for _ in range(depth + 1)]
        acts = [HIDDEN_ACTS[int(gen.integers(0, 4))] for _ in range(depth)]
        net = init_network(widths, acts, int(gen.integers(0, 2**31)))
        for layer in net.layers:
            layer.bias[:] = gen.normal(0, 0.3, size=layer.out_width)
        X = gen.normal(size=(10, widths[0]))
        before = forward(net, X).output
        layer = int(gen.integers(0, depth - 1))
        k = int(gen.integers(1, 6))
        old = net.layers[layer].out_width
        grow_neurons(net, layer, k, 0.5, gen)
        worst_grow = max(worst_grow, float(np.abs(forward(net, X).output - before).max()))
        prune_neurons(net, layer, range(old, old + k))
        worst_prune = max(worst_prune, float(np.abs(forward(net, X).output - before).max()))
    ok = worst_grow < 1e-15 and worst_prune < 1e-15
    verdict(4, ok, f"max |delta| after grow {worst_grow:.1e}, after grow+prune {worst_prune:.1e} "
            f"(< 1e-15, 100 triples x 10 inputs)", time.perf_counter() - t0, 10)


def test_criterion_05_lrp_conservation():
    t0 = time.perf_counter()
    gen = rng.stream(5, "acceptance")
    worst = 0.0
    for _ in range(20):
        depth = int(gen.integers(1, 5))
        widths = [int(gen.integers(1, 9)) for _ in range(depth + 1)]
        # positive weights, sigmoid hidden units: every activation is strictly positive
        net = init_network(widths, ["sigmoid"] * (depth - 1) + ["identity"],
                           int(gen.integers(0, 2**31)))
        for layer in net.layers:
            layer.weights[:] = np.abs(layer.weights) + 0.05
            layer.bias[:] = gen.normal(0, 0.5, size=layer.out_width)
        X = np.abs(gen.normal(size=(8, widths[0]))) + 0.1
        rmap = lrp_scores(net, forward(net, X), 1e-6)
        r0 = rmap.output_relevance
        for r in rmap.layers + [rmap.input]:
            worst = max(worst, abs(float(r.sum()) - r0) / abs(r0))
    verdict(5, worst < 1e-3, f"max relative leakage {worst:.2e} over 20 nets (< 1e-3)",
            time.perf_counter() - t0, 10)


def _xor_runs(tmp_path):
    """dropin and static arms on XOR through the CLI, five seeds each."""
    cfg_path = DOCS / "xor.cfg"
    cfg = parse_config(cfg_path)
    train = load_dataset_csv(cfg.train_csv)
    out = {}
    for seed in cfg.seeds:
        for cmd in ("dropin", "train"):
            d = tmp_path / f"{cmd}{seed}"
            assert main([cmd, "--config", str(cfg_path), "--out", str(d),
                         "--seed", str(seed)]) == 0
            net, log = load_checkpoint(d / "model.json")
            out[(cmd, seed)] = (d, accuracy(net, train.X, train.y), log)
    return cfg, out


@pytest.fixture(scope="module")
def xor_results(tmp_path_factory):
    t0 = time.perf_counter()
    cfg, runs = _xor_runs(tmp_path_factory.mktemp("xor"))
    return cfg, runs, time.perf_counter() - t0


def _audit_dir(run_dir, delta):
    """Audit grow events against the persisted logs of a single CLI run."""
    records = read_jsonl(run_dir / "log.jsonl")
    losses = {r["epoch"]: r["value"] for r in records
              if r["split"] == "train" and r["metric"] == "loss"}
    log = MutationLog.from_jsonl((run_dir / "mutations.jsonl").read_text())
    return log, audit_grow_events(log.events, losses, [0], delta)


def test_criterion_06_trigger_audit(xor_results, bench_results):
    t0 = time.perf_counter()
    cfg, runs, _ = xor_results
    grows = bad = 0
    for seed in cfg.seeds:
        log, violations = _audit_dir(runs[("dropin", seed)][0], cfg.delta)
        grows += len(log.of_kind("grow"))
        bad += len(violations)
    # the continual runs mix new-data and convergence triggers across segments
    out, _, _ = bench_results
    records = read_jsonl(out / "log.jsonl")
    bcfg = parse_config(DOCS / "sample.cfg")
    for seed in bcfg.seeds:
        for arm in ("dropin", "neuroplasticity"):
            mine = [r for r in records if r["arm"] == arm and r["seed"] == seed]
            losses = {r["epoch"]: r["value"] for r in mine if r["split"] == "train"}
            starts = [r["value"] for r in mine if r["metric"] == "start_epoch"]
            log = MutationLog.from_jsonl((out / "mutations" / f"{arm}_seed{seed}.jsonl").read_text())
            grows += len(log.of_kind("grow"))
            bad += len(audit_grow_events(log.events, losses, starts, bcfg.delta))
    verdict(6, bad == 0 and grows > 0,
            f"{grows} grow events audited from persisted logs, {bad} without a fired trigger",
            time.perf_counter() - t0, 60)


def test_criterion_07_xor_capacity(xor_results):
    cfg, runs, seconds = xor_results
    dropin = [runs[("dropin", s)][1] for s in cfg.seeds]
    static = [runs[("train", s)][1] for s in cfg.seeds]
    solved = sum(a >= 0.99 for a in dropin)
    grew = all(len(runs[("dropin", s)][2].of_kind("grow")) >= 1 for s in cfg.seeds)
    ok = solved >= 4 and max(static) <= 0.80 and grew
    verdict(7, ok, f"dropin train acc {dropin} ({solved}/5 >= 0.99); static 2-1-1 {static} "
            f"(max {max(static)} <= 0.80)", seconds, 60)


@pytest.fixture(scope="module")
def bench_results(tmp_path_factory):
    base = tmp_path_factory.mktemp("bench")
    t0 = time.perf_counter()
    codes = [main(["bench", "--config", str(DOCS / "sample.cfg"), "--out", str(base / name)])
             for name in ("a", "b")]
    assert codes == [0, 0]
    return base / "a", base / "b", time.perf_counter() - t0


def test_criterion_08_continual_smoke(bench_results):
    out, twin, seconds = bench_results
    t0 = time.perf_counter()
    cfg = parse_config(DOCS / "sample.cfg")
    n_tasks = len(cfg.tasks)
    mats = matrices_from_records(read_jsonl(out / "log.jsonl"))
    arms = [a.name for a in cfg.arm_configs()]
    complete = all((s, a) in mats and [len(r) for r in mats[(s, a)]] == list(range(1, n_tasks + 1))
                   for s in cfg.seeds for a in arms)
    with open(out / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    worst = 0.0
    finals = {a: [] for a in arms}
    for r in rows:
        m = metrics_from_matrix(mats[(int(r["seed"]), r["arm"])])
        worst = max(worst, abs(m.average_final_accuracy - float(r["avg_final_accuracy"])),
                    abs(m.backward_transfer - float(r["backward_transfer"])))
        finals[r["arm"]].append(m.average_final_accuracy)
    deterministic = (out / "log.jsonl").read_bytes() == (twin / "log.jsonl").read_bytes()
    # fairness: with no hidden budget and no convergence trigger, the plastic arms must
    # follow the static arm's loss trajectory, so all arms share init and data order
    fair, compared = True, 0
    for seed in cfg.seeds:
        stream = make_task_stream(cfg.tasks, seed)
        probe = replace(cfg.policy(), delta=0.0, max_total_neurons=sum(cfg.widths[1:-1]))
        log = run_experiment(stream, list(STRATEGIES), probe, seed, widths=cfg.widths,
                             activations=cfg.activations, settings=cfg.settings(),
                             epochs_per_round=cfg.epochs_per_round)
        ref = log.arms["static"].history.train_losses
        last = len(cfg.widths) - 2
        for arm in ("dropin", "neuroplasticity", "prune_retrain"):
            res = log.arms[arm]
            # grows are impossible here; masks and prunes legitimately change training
            hidden = [e for e in res.mutations if e.layer != last]
            fair &= not any(e.kind == "grow" for e in hidden)
            cut = min((e.epoch for e in hidden), default=len(ref))
            compared += cut
            fair &= res.history.train_losses[:cut] == ref[:cut]
    d = np.array(finals["dropin"]) - np.array(finals["static"])
    margin = f"dropin - static avg final = {d.mean():+.4f} +/- {np.std(d, ddof=1):.4f} (sd, 5 seeds)"
    ok = complete and worst <= 1e-12 and deterministic and fair and len(rows) == len(arms) * 5
    verdict(8, ok, f"matrices complete={complete}; recompute err {worst:.1e}; "
            f"byte-identical rerun={deterministic}; fairness={fair} ({compared} epochs); {margin}",
            seconds + time.perf_counter() - t0, 120)


def _sort_oracle(scores, fraction, min_width):
    """Exhaustive: the size-k subset whose sorted scores are smallest, ties by index."""
    w = len(scores)
    k = max(0, min(math.floor(fraction * w + 1e-9), w - min_width))
    best = min(itertools.combinations(range(w), k),
               key=lambda S: (sorted(scores[i] for i in S), S))
    return list(best)


def _scalar_scores(net, kind, X, T, rmap, grads):
    out = []
    for li, layer in enumerate(net.layers[:-1]):
        if kind == "magnitude":
            out.append([math.sqrt(sum(float(w) ** 2 for w in row)) for row in layer.weights])
        elif kind == "activation":
            acts = [scalar_forward(_prefix(net, li + 1), x) for x in X]
            out.append([sum(abs(a[i]) for a in acts) / len(acts) for i in range(layer.out_width)])
        elif kind == "gradient":
            out.append([sum(abs(float(g)) for g in row) for row in grads.weights[li]])
        else:
            out.append([abs(float(r)) for r in rmap.layers[li]])
    return out


def _prefix(net, n):
    return Network(net.layers[:n], net.input_width, net.rng_seed)


def test_criterion_09_pruning_oracles():
    t0 = time.perf_counter()
    gen = rng.stream(9, "acceptance")
    checked = mismatches = guard = 0
    for _ in range(50):
        depth = int(gen.integers(2, 5))
        widths = [int(gen.integers(1, 9)) for _ in range(depth + 1)]
        acts = [HIDDEN_ACTS[int(gen.integers(0, 4))] for _ in range(depth)]
        net = init_network(widths, acts, int(gen.integers(0, 2**31)))
        for layer in net.layers:
            layer.bias[:] = gen.normal(0, 0.5, size=layer.out_width)
        X = gen.normal(size=(12, widths[0]))
        T = gen.normal(size=(12, widths[-1]))
        trace = forward(net, X)
        grads = backward(net, trace, T, Loss.MSE)
        rmap = lrp_scores(net, trace)
        stats = {"magnitude": None, "activation": collect_activation_stats(net, X),
                 "gradient": grads, "relevance": rmap}
        fraction = float(gen.uniform(0.05, 0.95))
        min_width = int(gen.integers(1, 4))
        for kind, s in stats.items():
            picks = pruning_candidates(net, s, PruneCriterion(kind, fraction, min_width))
            oracle = _scalar_scores(net, kind, X, T, rmap, grads)
            for li, sc in enumerate(oracle):
                checked += 1
                mismatches += picks[li] != _sort_oracle(sc, fraction, min_width)
                guard += net.layers[li].out_width - len(picks[li]) < min(min_width, net.layers[li].out_width)
            pruned = net.copy()
            prune_candidates(pruned, picks, min_width=min_width)
    collapse = 0
    for _ in range(10):
        net = init_network([3, int(gen.integers(1, 9)), 2], ["relu", "softmax"], 0)
        try:
            prune_neurons(net, 0, range(net.layers[0].out_width))
        except LayerCollapseError:
            collapse += 1
    ok = mismatches == 0 and guard == 0 and collapse == 10
    verdict(9, ok, f"{checked} layer selections, {mismatches} oracle mismatches, "
            f"{guard} min-width violations, collapse raised {collapse}/10",
            time.perf_counter() - t0, 10)


def test_criterion_10_determinism_persistence(tmp_path, bench_results):
    t0 = time.perf_counter()
    cfg_path = DOCS / "xor.cfg"
    same = True
    for cmd in ("dropin", "plasticity", "prune", "train"):
        dirs = [tmp_path / f"{cmd}_{k}" for k in range(2)]
        for d in dirs:
            assert main([cmd, "--config", str(cfg_path), "--out", str(d), "--seed", "1"]) == 0
        for name in ("log.jsonl", "mutations.jsonl", "model.json"):
            same &= (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()
    out, twin, _ = bench_results
    same &= (out / "log.jsonl").read_bytes() == (twin / "log.jsonl").read_bytes()
    gen = rng.stream(10, "acceptance")
    worst = 0.0
    for i in range(20):
        depth = int(gen.integers(1, 5))
        widths = [int(gen.integers(1, 9)) for _ in range(depth + 1)]
        net = init_network(widths, [HIDDEN_ACTS[int(gen.integers(0, 4))] for _ in range(depth)],
                           int(gen.integers(0, 2**31)))
        for layer in net.layers:
            layer.bias[:] = gen.normal(size=layer.out_width)
        log = MutationLog()
        if depth > 1:
            grow_neurons(net, 0, 2, 0.3, gen, log, epoch=1, trigger="convergence")
        save_checkpoint(net, log, tmp_path / f"ck{i}.json")
        back, blog = load_checkpoint(tmp_path / f"ck{i}.json")
        X = gen.normal(size=(10, widths[0]))
        worst = max(worst, float(np.abs(forward(back, X).output - forward(net, X).output).max()))
        same &= blog.events == log.events
    ok = same and worst <= 1e-15
    verdict(10, ok, f"byte-identical reruns={same}; checkpoint max |delta| {worst:.1e} (<= 1e-15)",
            time.perf_counter() - t0, 30)
