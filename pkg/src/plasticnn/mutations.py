"""Append-only record of structural events (grow, prune, mask)."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .errors import CheckpointError

KINDS = ("grow", "prune", "mask")
TRIGGERS = ("convergence", "new_data", "validation", "manual")


@dataclass(frozen=True)
class MutationEvent:
    epoch: int
    kind: str
    layer: int
    indices: tuple[int, ...]
    trigger: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown mutation kind {self.kind!r}")
        if self.trigger not in TRIGGERS:
            raise ValueError(f"unknown trigger {self.trigger!r}")
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))

    @property
    def count(self) -> int:
        return len(self.indices)

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "kind": self.kind, "layer": self.layer,
                "indices": list(self.indices), "count": self.count,
                "trigger": self.trigger}

    @classmethod
    def from_dict(cls, d: dict, where: str = "event") -> "MutationEvent":
        try:
            ev = cls(int(d["epoch"]), str(d["kind"]), int(d["layer"]),
                     tuple(d["indices"]), str(d["trigger"]))
        except KeyError as exc:
            raise CheckpointError(f"missing key {exc.args[0]!r}", field=where) from None
        except (TypeError, ValueError) as exc:
            raise CheckpointError(str(exc), field=where) from None
        if "count" in d and int(d["count"]) != ev.count:
            raise CheckpointError("count disagrees with indices", field=f"{where}.count")
        return ev


@dataclass
class MutationLog:
    events: list[MutationEvent] = field(default_factory=list)

    def append(self, event: MutationEvent) -> None:
        if self.events and event.epoch < self.events[-1].epoch:
            raise ValueError(
                f"event epoch {event.epoch} precedes last logged epoch {self.events[-1].epoch}")
        self.events.append(event)

    def record(self, epoch: int, kind: str, layer: int, indices: Iterable[int],
               trigger: str) -> MutationEvent:
        ev = MutationEvent(int(epoch), kind, int(layer), tuple(indices), trigger)
        self.append(ev)
        return ev

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def of_kind(self, kind: str) -> list[MutationEvent]:
        return [e for e in self.events if e.kind == kind]

    def replay_widths(self, initial_widths: list[int]) -> list[int]:
        """Apply grow/prune counts to per-layer output widths."""
        widths = list(initial_widths)
        for e in self.events:
            if e.kind == "grow":
                widths[e.layer] += e.count
            elif e.kind == "prune":
                widths[e.layer] -= e.count
        return widths

    def to_list(self) -> list[dict]:
        return [e.to_dict() for e in self.events]

    @classmethod
    def from_list(cls, items: list, where: str = "mutations") -> "MutationLog":
        log = cls()
        for i, d in enumerate(items):
            if not isinstance(d, dict):
                raise CheckpointError("expected an object", field=f"{where}[{i}]")
            ev = MutationEvent.from_dict(d, f"{where}[{i}]")
            try:
                log.append(ev)
            except ValueError as exc:
                raise CheckpointError(str(exc), field=f"{where}[{i}].epoch") from None
        return log

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_dict()) + "\n" for e in self.events)

    @classmethod
    def from_jsonl(cls, text: str) -> "MutationLog":
        log = cls()
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CheckpointError(exc.msg, line=lineno) from None
            ev = MutationEvent.from_dict(d, "event")
            try:
                log.append(ev)
            except ValueError as exc:
                raise CheckpointError(str(exc), line=lineno) from None
        return log


def last_event(log: MutationLog) -> Optional[MutationEvent]:
    return log.events[-1] if log.events else None
