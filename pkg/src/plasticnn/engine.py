"""Training with structural plasticity.

A *round* is ``epochs_per_round`` epochs of mini-batch SGD followed by one
validation check. Growth triggers are evaluated at the start of each round:
new data fires on the first round of a segment, otherwise the convergence
test compares the last two epoch losses of the segment. At most one grow
event happens per round.

Epoch stamps in the mutation log and the loss history count completed
epochs across the whole run, so ``history.train_losses[e - 1]`` is the loss
after epoch ``e``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from . import rng
from .data import Dataset
from .errors import NotEnoughHistoryError, NumericError, PolicyError, StaleStateError
from .mutations import MutationEvent, MutationLog
from .network import (GradientSet, Loss, Network, accuracy, backward, check_loss_pairing,
                      forward, loss_eval, predict, sgd_step, targets_for)
from .plasticity import (CriterionKind, DropoutMask, PruneCriterion, collect_activation_stats,
                         default_growth_count, fixed_mask, grow_neurons, masked_forward,
                         prune_candidates, pruning_candidates, sample_dropout_mask)
from .relevance import (DEFAULT_EPSILON, RelevanceMap, layer_relevance, lrp_scores,
                        select_growth_layer, select_prunable_neurons)

CONTINUE = "continue"
STOP = "stop"

SHUFFLE_SLOT = 1  # data-stream slot for minibatch order; slot 0 is task generation


@dataclass
class TrainSettings:
    learning_rate: float = 0.1
    batch_size: int = 32
    loss: Loss = Loss.MSE
    max_rounds: int = 50

    def __post_init__(self):
        self.loss = Loss(self.loss)
        if not self.learning_rate > 0:
            raise PolicyError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise PolicyError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_rounds < 1:
            raise PolicyError(f"max_rounds must be >= 1, got {self.max_rounds}")


@dataclass
class PlasticityPolicy:
    delta: float = 1e-3
    growth_k: Optional[int] = None  # None: max(1, ceil(0.25 * layer width))
    init_scale: float = 0.1
    patience: int = 2
    dropout_p: float = 0.0
    prune: PruneCriterion = field(default_factory=PruneCriterion)
    min_width: int = 1
    max_total_neurons: int = 64  # hidden neurons only
    probe_batch: int = 64
    lrp_epsilon: float = DEFAULT_EPSILON
    dropout_in_growth: bool = False
    target_criterion: Optional[float] = None  # skip growth once validation reaches this

    def __post_init__(self):
        if self.delta < 0:
            raise PolicyError(f"delta must be >= 0, got {self.delta}")
        if self.growth_k is not None and self.growth_k < 1:
            raise PolicyError(f"growth_k must be >= 1, got {self.growth_k}")
        if self.init_scale < 0:
            raise PolicyError(f"init_scale must be >= 0, got {self.init_scale}")
        if self.patience < 1:
            raise PolicyError(f"patience must be >= 1, got {self.patience}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise PolicyError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if self.min_width < 1:
            raise PolicyError(f"min_width must be >= 1, got {self.min_width}")
        if self.max_total_neurons < 1:
            raise PolicyError(f"max_total_neurons must be >= 1, got {self.max_total_neurons}")
        if self.probe_batch < 1:
            raise PolicyError(f"probe_batch must be >= 1, got {self.probe_batch}")
        if not self.lrp_epsilon > 0:
            raise PolicyError(f"lrp_epsilon must be positive, got {self.lrp_epsilon}")

    def growth_count(self, width: int) -> int:
        return self.growth_k if self.growth_k is not None else default_growth_count(width)


@dataclass
class TriggerDecision:
    fired: bool
    cause: str = "none"  # convergence | new_data | none

    def __post_init__(self):
        if (self.cause == "none") == self.fired:
            raise ValueError("cause must be 'none' exactly when the trigger did not fire")


@dataclass
class RoundRecord:
    epoch: int
    cause: str
    grew_layer: Optional[int] = None
    masked: bool = False
    loss_before: Optional[float] = None
    loss_after: Optional[float] = None


@dataclass
class LossHistory:
    train_losses: list[float] = field(default_factory=list)
    val_criteria: list[float] = field(default_factory=list)
    val_epochs: list[int] = field(default_factory=list)
    rounds: list[RoundRecord] = field(default_factory=list)
    segment_starts: list[int] = field(default_factory=list)
    mask_relevance: list[tuple[int, RelevanceMap]] = field(default_factory=list)
    stop_cause: Optional[str] = None

    @property
    def epoch(self) -> int:
        return len(self.train_losses)

    def record_loss(self, value: float) -> None:
        if not np.isfinite(value):
            raise NumericError(f"training loss became {value} at epoch {self.epoch + 1}")
        self.train_losses.append(float(value))

    def record_val(self, value: float) -> None:
        if not np.isfinite(value):
            raise NumericError(f"validation criterion became {value}")
        self.val_criteria.append(float(value))
        self.val_epochs.append(self.epoch)

    def segment_val(self) -> list[float]:
        start = self.segment_starts[-1] if self.segment_starts else 0
        return [v for v, e in zip(self.val_criteria, self.val_epochs) if e > start]


def _losses(history) -> Sequence[float]:
    return history.train_losses if isinstance(history, LossHistory) else list(history)


def convergence_trigger(history: Union[LossHistory, Sequence[float]], delta: float,
                        since: int = 0) -> TriggerDecision:
    """Fire when the loss change between the last two epochs is below ``delta``.

    Only epochs after ``since`` count as history.
    """
    losses = _losses(history)[since:]
    if len(losses) < 2:
        raise NotEnoughHistoryError(f"need 2 recorded epochs, have {len(losses)}")
    if abs(losses[-1] - losses[-2]) < delta:
        return TriggerDecision(True, "convergence")
    return TriggerDecision(False)


def new_data_trigger(stream_position: int, last_consumed: int) -> TriggerDecision:
    """Fire while the stream holds segments beyond the last consumed one."""
    if stream_position > last_consumed:
        return TriggerDecision(True, "new_data")
    return TriggerDecision(False)


def validation_monitor(history: Union[LossHistory, Sequence[float]], patience: int) -> str:
    """``STOP`` when the last ``patience`` validation steps were all strict declines."""
    values = history.segment_val() if isinstance(history, LossHistory) else list(history)
    if patience < 1:
        raise ValueError(f"patience must be >= 1, got {patience}")
    if len(values) < patience + 1:
        return CONTINUE
    window = values[-(patience + 1):]
    if all(a > b for a, b in zip(window[:-1], window[1:])):
        return STOP
    return CONTINUE


def audit_grow_events(events: Sequence[MutationEvent], losses: Mapping[int, float],
                      segment_starts: Sequence[int], delta: float) -> list[MutationEvent]:
    """Grow events not backed by a fired trigger; empty means the run is sound.

    ``losses[e]`` is the training loss after epoch ``e`` (1-based) and
    ``segment_starts`` the epoch count at which each data segment began. A
    convergence event at epoch ``e`` needs ``|losses[e] - losses[e-1]| < delta``
    with both epochs inside its segment; a new-data event must sit exactly on
    a segment start.
    """
    starts = sorted(segment_starts)
    bad = []
    for ev in events:
        if ev.kind != "grow":
            continue
        e = ev.epoch
        if ev.trigger == "new_data":
            ok = e in starts
        elif ev.trigger == "convergence":
            seg = max((s for s in starts if s <= e), default=0)
            ok = (e - seg >= 2 and e in losses and e - 1 in losses
                  and abs(losses[e] - losses[e - 1]) < delta)
        else:
            ok = False
        if not ok:
            bad.append(ev)
    return bad


def resize_optimizer_state(state: GradientSet, event: MutationEvent) -> GradientSet:
    """Insert zero rows/columns for a grow event, delete them for a prune event."""
    l = event.layer
    if not 0 <= l < len(state.weights):
        raise StaleStateError(f"event layer {l} outside state with {len(state.weights)} layers")
    weights = [w.copy() for w in state.weights]
    biases = [b.copy() for b in state.biases]
    idx = list(event.indices)
    has_next = l + 1 < len(weights)
    if event.kind == "grow":
        old = weights[l].shape[0]
        if idx != list(range(old, old + len(idx))):
            raise StaleStateError(f"grow indices {idx} do not extend a state of width {old}")
        weights[l] = np.vstack([weights[l], np.zeros((len(idx), weights[l].shape[1]))])
        biases[l] = np.concatenate([biases[l], np.zeros(len(idx))])
        if has_next:
            nxt = weights[l + 1]
            if nxt.shape[1] != old:
                raise StaleStateError("next-layer state does not match the grown layer")
            weights[l + 1] = np.hstack([nxt, np.zeros((nxt.shape[0], len(idx)))])
    elif event.kind == "prune":
        width = weights[l].shape[0]
        if any(i >= width for i in idx) or (has_next and weights[l + 1].shape[1] != width):
            raise StaleStateError(f"prune indices {idx} do not fit a state of width {width}")
        weights[l] = np.delete(weights[l], idx, axis=0)
        biases[l] = np.delete(biases[l], idx)
        if has_next:
            weights[l + 1] = np.delete(weights[l + 1], idx, axis=1)
    return GradientSet(weights, biases)


def validation_criterion(net: Network, data: Dataset, loss: Loss, scale: float = 1.0) -> float:
    """Accuracy for classification data, negative loss for regression."""
    if data.classification:
        return accuracy(net, data.X, data.y, scale)
    return -loss_eval(predict(net, data.X, scale), targets_for(net, data.y, False), loss)


def dataset_loss(net: Network, data: Dataset, loss: Loss, scale: float = 1.0) -> float:
    return loss_eval(predict(net, data.X, scale), targets_for(net, data.y, data.classification), loss)


class _Session:
    """Mutable state shared by the round-based loops."""

    def __init__(self, net, policy, train_set, val_set, epochs_per_round, log, settings,
                 seed, segment, history, new_data, inference_scale=1.0, dropout_p=0.0,
                 on_round=None):
        if epochs_per_round < 1:
            raise PolicyError(f"epochs_per_round must be >= 1, got {epochs_per_round}")
        check_loss_pairing(net, settings.loss)
        self.net = net
        self.policy = policy or PlasticityPolicy()
        self.train = train_set
        self.val = val_set
        self.epochs_per_round = epochs_per_round
        self.log = log if log is not None else MutationLog()
        self.settings = settings or TrainSettings()
        self.seed = net.rng_seed if seed is None else seed
        self.history = history if history is not None else LossHistory()
        self.history.segment_starts.append(self.history.epoch)
        self.seg_start = self.history.epoch
        self.new_data = new_data
        self.scale = inference_scale
        self.dropout_p = dropout_p
        self.on_round = on_round
        self.shuffle = rng.stream(self.seed, rng.DATA, SHUFFLE_SLOT, segment)
        self.growth_gen = rng.stream(self.seed, rng.GROWTH, segment)
        self.dropout_gen = rng.stream(self.seed, rng.DROPOUT, segment)
        self.probe = train_set.X[:self.policy.probe_batch]

    # -- training -------------------------------------------------------
    def train_epoch(self, mask: Optional[DropoutMask] = None) -> None:
        net, data, st = self.net, self.train, self.settings
        T = targets_for(net, data.y, data.classification)
        order = self.shuffle.permutation(len(data))
        for start in range(0, len(order), st.batch_size):
            idx = order[start:start + st.batch_size]
            if self.dropout_p > 0:
                m = sample_dropout_mask(net, self.dropout_p, self.dropout_gen, batch=len(idx))
                trace = masked_forward(net, data.X[idx], m)
            elif mask is not None:
                trace = masked_forward(net, data.X[idx], mask)
            else:
                trace = forward(net, data.X[idx])
            sgd_step(net, backward(net, trace, T[idx], st.loss), st.learning_rate)
        self.history.record_loss(self.train_loss())

    def train_loss(self) -> float:
        return dataset_loss(self.net, self.train, self.settings.loss, self.scale)

    def train_round(self, mask: Optional[DropoutMask] = None) -> None:
        for _ in range(self.epochs_per_round):
            self.train_epoch(mask)
        self.history.record_val(
            validation_criterion(self.net, self.val, self.settings.loss, self.scale))
        if self.on_round is not None:
            self.on_round(self.net, self.history, self.log)

    # -- growth -----------------------------------------------------------
    def relevance(self) -> RelevanceMap:
        return lrp_scores(self.net, forward(self.net, self.probe), self.policy.lrp_epsilon)

    def growth_layer(self) -> Optional[int]:
        hidden = self.net.layers[:-1]
        if not hidden:
            return None
        choice = select_growth_layer(layer_relevance(self.relevance()))
        if choice is None:
            widths = [layer.out_width for layer in hidden]
            choice = int(np.argmax(widths))
        return choice

    def requirements_met(self) -> bool:
        target = self.policy.target_criterion
        vals = self.history.segment_val()
        return target is not None and bool(vals) and vals[-1] >= target

    def grow(self, cause: str, record: RoundRecord) -> bool:
        left = self.policy.max_total_neurons - self.net.hidden_neurons
        layer = self.growth_layer()
        if left <= 0 or layer is None:
            return False
        k = min(self.policy.growth_count(self.net.layers[layer].out_width), left)
        record.loss_before = self.train_loss()
        grow_neurons(self.net, layer, k, self.policy.init_scale, self.growth_gen, self.log,
                     epoch=self.history.epoch, trigger=cause)
        record.loss_after = self.train_loss()
        record.grew_layer = layer
        return True

    def decide(self, consumed: int) -> TriggerDecision:
        available = 1 if self.new_data else 0
        decision = new_data_trigger(available, consumed)
        if decision.fired:
            return decision
        try:
            return convergence_trigger(self.history, self.policy.delta, since=self.seg_start)
        except NotEnoughHistoryError:
            return TriggerDecision(False)

    def growth_phase(self, patience: int) -> int:
        """Run growth rounds; return how many rounds were used."""
        consumed = 0
        max_rounds = self.settings.max_rounds
        for r in range(max_rounds):
            decision = self.decide(consumed)
            if decision.cause == "new_data":
                consumed += 1
            record = RoundRecord(self.history.epoch, decision.cause)
            self.history.rounds.append(record)
            if decision.fired and not self.requirements_met():
                grew = self.grow(decision.cause, record)
                if not grew and decision.cause == "convergence":
                    self.history.stop_cause = "budget_exhausted"
                    return r
            self.train_round()
            if validation_monitor(self.history, patience) == STOP:
                self.history.stop_cause = "validation"
                return r + 1
        self.history.stop_cause = "max_rounds"
        return max_rounds


def _check_budget(net: Network, policy: PlasticityPolicy) -> None:
    if policy.max_total_neurons < net.hidden_neurons:
        raise PolicyError(
            f"max_total_neurons {policy.max_total_neurons} is below the initial "
            f"{net.hidden_neurons} hidden neurons")


def dropin_loop(net: Network, policy: PlasticityPolicy, train_set: Dataset, val_set: Dataset,
                epochs_per_round: int, log: Optional[MutationLog] = None, *,
                settings: Optional[TrainSettings] = None, seed: Optional[int] = None,
                segment: int = 0, new_data: bool = False,
                history: Optional[LossHistory] = None, on_round: Optional[Callable] = None):
    """Train, growing the most relevant hidden layer whenever a trigger fires.

    Stops on ``policy.patience`` consecutive validation declines, when the
    loss has converged but the neuron budget is spent, or after
    ``settings.max_rounds`` rounds. Returns ``(net, history, log)``; the
    network is used without masks at inference.
    """
    _check_budget(net, policy)
    p = policy.dropout_p if policy.dropout_in_growth else 0.0
    s = _Session(net, policy, train_set, val_set, epochs_per_round, log, settings, seed,
                 segment, history, new_data, inference_scale=1.0 - p, dropout_p=p,
                 on_round=on_round)
    s.growth_phase(policy.patience)
    return s.net, s.history, s.log


def neuroplasticity_loop(net: Network, policy: PlasticityPolicy, train_set: Dataset,
                         val_set: Dataset, epochs_per_round: int,
                         log: Optional[MutationLog] = None, *,
                         settings: Optional[TrainSettings] = None, seed: Optional[int] = None,
                         segment: int = 0, new_data: bool = False,
                         history: Optional[LossHistory] = None,
                         on_round: Optional[Callable] = None):
    """Growth as in :func:`dropin_loop`, then relevance-selected masking.

    The growth phase ends on a single validation decline. Remaining rounds
    train with a fixed mask over the least relevant hidden neurons; the mask
    is rebuilt whenever validation declines again. Inference is unmasked.
    """
    _check_budget(net, policy)
    p = policy.dropout_p if policy.dropout_in_growth else 0.0
    s = _Session(net, policy, train_set, val_set, epochs_per_round, log, settings, seed,
                 segment, history, new_data, inference_scale=1.0 - p, dropout_p=p,
                 on_round=on_round)
    used = s.growth_phase(patience=1)
    if s.history.stop_cause == "max_rounds":
        return s.net, s.history, s.log
    s.dropout_p = 0.0
    s.scale = 1.0
    mask = None
    for _ in range(s.settings.max_rounds - used):
        vals = s.history.segment_val()
        epoch = s.history.epoch
        if len(vals) >= 2 and vals[-1] < vals[-2]:
            rmap = s.relevance()
            picks = select_prunable_neurons(rmap, policy.prune.fraction, policy.min_width)
            for layer, idx in enumerate(picks):
                if idx:
                    s.log.record(epoch, "mask", layer, idx, "validation")
            mask = fixed_mask(net, picks) if any(picks) else None
            s.history.mask_relevance.append((epoch, rmap))
        s.history.rounds.append(RoundRecord(epoch, "none", masked=mask is not None))
        s.train_round(mask)
    return s.net, s.history, s.log


def train_static(net: Network, train_set: Dataset, val_set: Dataset, epochs_per_round: int, *,
                 settings: Optional[TrainSettings] = None, dropout_p: float = 0.0,
                 seed: Optional[int] = None, segment: int = 0,
                 history: Optional[LossHistory] = None, rounds: Optional[int] = None,
                 on_round: Optional[Callable] = None):
    """Plain SGD for ``rounds`` rounds (default ``settings.max_rounds``).

    With ``dropout_p > 0`` training samples Bernoulli masks per row and
    evaluation scales hidden activations by ``1 - dropout_p``.
    """
    s = _Session(net, PlasticityPolicy(dropout_p=dropout_p), train_set, val_set,
                 epochs_per_round, None, settings, seed, segment, history, False,
                 inference_scale=1.0 - dropout_p, dropout_p=dropout_p, on_round=on_round)
    for _ in range(s.settings.max_rounds if rounds is None else rounds):
        s.history.rounds.append(RoundRecord(s.history.epoch, "none"))
        s.train_round()
    s.history.stop_cause = "max_rounds"
    return s.net, s.history


def pruning_statistics(net: Network, probe: Dataset, kind: CriterionKind, loss: Loss,
                       epsilon: float = DEFAULT_EPSILON):
    kind = CriterionKind(kind)
    if kind is CriterionKind.MAGNITUDE:
        return None
    if kind is CriterionKind.ACTIVATION:
        return collect_activation_stats(net, probe.X)
    trace = forward(net, probe.X)
    if kind is CriterionKind.GRADIENT:
        return backward(net, trace, targets_for(net, probe.y, probe.classification), loss)
    return lrp_scores(net, trace, epsilon)


def prune_and_retrain(net: Network, policy: PlasticityPolicy, train_set: Dataset,
                      val_set: Dataset, epochs_per_round: int,
                      log: Optional[MutationLog] = None, *,
                      settings: Optional[TrainSettings] = None, seed: Optional[int] = None,
                      segment: int = 0, history: Optional[LossHistory] = None,
                      on_round: Optional[Callable] = None):
    """Train half the rounds, prune once by ``policy.prune``, retrain the rest."""
    s = _Session(net, policy, train_set, val_set, epochs_per_round, log, settings, seed,
                 segment, history, False, on_round=on_round)
    first = max(1, s.settings.max_rounds // 2)
    for r in range(s.settings.max_rounds):
        if r == first:
            probe = train_set.subset(slice(0, policy.probe_batch))
            stats = pruning_statistics(net, probe, policy.prune.kind, s.settings.loss,
                                       policy.lrp_epsilon)
            picks = pruning_candidates(net, stats, policy.prune)
            prune_candidates(net, picks, s.log, epoch=s.history.epoch, trigger="manual",
                             min_width=policy.prune.min_width)
        s.history.rounds.append(RoundRecord(s.history.epoch, "none"))
        s.train_round()
    s.history.stop_cause = "max_rounds"
    return s.net, s.history, s.log
