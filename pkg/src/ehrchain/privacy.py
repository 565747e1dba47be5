"""Disease-count batching policies and the linkage attacker.

A hospital posts one record transaction per created record and, separately,
disease-count updates.  An observer of the chain sees the order of these
transactions but not the record plaintexts.  The batching policy decides
how much the order gives away:

``none``
    one single-disease update after every record: linkage is trivial.
``strict2``
    updates carry at least two distinct diseases; a batch with only one
    distinct disease pending is held back.
``decoupled(n, m)``
    after every ``n`` record transactions, ``m`` of the ``n`` diseases are
    posted as separate single-disease updates in shuffled order; the rest
    are dropped.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import BatchTooSmall
from .records import DISEASES as DEFAULT_DISEASES

Update = tuple[str, "str | None"]


@dataclass(frozen=True)
class BatchingPolicy:
    kind: str = "strict2"
    n_hashes: int = 0
    n_updates: int = 0

    def __post_init__(self):
        if self.kind not in ("strict2", "none", "decoupled"):
            raise ValueError(f"unknown batching policy {self.kind!r}")
        if self.kind == "decoupled" and not 0 < self.n_updates <= self.n_hashes:
            raise ValueError("decoupled(n, m) needs 0 < m <= n")

    @property
    def strict(self) -> bool:
        return self.kind == "strict2"

    @classmethod
    def parse(cls, text: str) -> "BatchingPolicy":
        text = text.strip()
        m = re.fullmatch(r"decoupled\(\s*(\d+)\s*,\s*(\d+)\s*\)", text)
        if m:
            return cls("decoupled", int(m.group(1)), int(m.group(2)))
        return cls(text)

    def __str__(self) -> str:
        if self.kind == "decoupled":
            return f"decoupled({self.n_hashes},{self.n_updates})"
        return self.kind


STRICT2 = BatchingPolicy("strict2")
NO_BATCHING = BatchingPolicy("none")


@dataclass
class DiseaseBatch:
    """Diseases a hospital has reported in records but not yet counted on chain."""

    policy: BatchingPolicy = STRICT2
    pending: list[Update] = field(default_factory=list)

    def add(self, disease: str, location: str | None = None) -> None:
        self.pending.append((disease, location))

    def plan(self, rng: random.Random, force: bool = False) -> list[list[Update]]:
        """Pop what may be posted now; each inner list becomes one transaction."""
        kind = self.policy.kind
        if kind == "none":
            out = [[u] for u in self.pending]
            self.pending = []
            return out
        if kind == "strict2":
            if len({d for d, _ in self.pending}) < 2:
                if force and self.pending:
                    raise BatchTooSmall("only one distinct disease pending")
                return []
            out = [list(self.pending)]
            self.pending = []
            return out
        n, m = self.policy.n_hashes, self.policy.n_updates
        out = []
        while len(self.pending) >= n:
            window, self.pending = self.pending[:n], self.pending[n:]
            kept = [window[i] for i in sorted(rng.sample(range(n), m))]
            rng.shuffle(kept)
            out += [[u] for u in kept]
        return out


# -- attacker ----------------------------------------------------------------


@dataclass(frozen=True)
class Window:
    """What the observer sees: a run of record transactions then the updates after it."""

    n_records: int
    labels: tuple[str, ...]


def observe_windows(events: Iterable[tuple[str, Sequence[str]]]) -> list[Window]:
    """Group an ordered event stream into windows.

    ``events`` yields ``("record", ())`` or ``("update", diseases)``.  A window
    is a maximal run of record events followed by the maximal run of update
    events after it.
    """
    windows = []
    n, labels, in_updates = 0, [], False
    for kind, diseases in events:
        if kind == "record":
            if in_updates:
                windows.append(Window(n, tuple(labels)))
                n, labels, in_updates = 0, [], False
            n += 1
        else:
            in_updates = True
            labels.extend(diseases)
    if n or labels:
        windows.append(Window(n, tuple(labels)))
    return windows


def guess_window(window: Window, rng: random.Random) -> list[str | None]:
    """Random matching of the window's labels onto its records."""
    slots: list[str | None] = list(window.labels[: window.n_records])
    slots += [None] * (window.n_records - len(slots))
    rng.shuffle(slots)
    return slots


def attack(windows: Sequence[Window], truth: Sequence[str], rng: random.Random) -> float:
    """Fraction of records whose disease the observer guesses correctly."""
    correct = 0
    pos = 0
    for w in windows:
        guesses = guess_window(w, rng)
        for g, actual in zip(guesses, truth[pos : pos + w.n_records]):
            correct += g == actual
        pos += w.n_records
    if pos != len(truth):
        raise ValueError("windows do not cover the record stream")
    return correct / len(truth) if truth else 0.0


def paired_workload(n: int, rng: random.Random, diseases: Sequence[str]) -> list[str]:
    """Diseases for ``n`` records, arriving as consecutive pairs of distinct diseases."""
    out: list[str] = []
    while len(out) < n:
        out += rng.sample(list(diseases), 2)
    return out[:n]


def simulate_schedule(policy: BatchingPolicy, diseases: Sequence[str], rng: random.Random):
    """Run a hospital's batch over ``diseases``; return the observed event stream."""
    batch = DiseaseBatch(policy)
    events: list[tuple[str, tuple[str, ...]]] = []
    for d in diseases:
        events.append(("record", ()))
        batch.add(d)
        for update in batch.plan(rng):
            events.append(("update", tuple(x for x, _ in update)))
    return events




def linkage_attack_estimate(
    trials: int,
    policy: BatchingPolicy | str,
    seed: int = 0,
    diseases: Sequence[str] = DEFAULT_DISEASES,
) -> float:
    """Empirical accuracy of the linkage observer over ``trials`` records."""
    if trials < 100:
        raise ValueError("need at least 100 trials")
    if isinstance(policy, str):
        policy = BatchingPolicy.parse(policy)
    rng = random.Random(seed)
    truth = paired_workload(trials, rng, diseases)
    events = simulate_schedule(policy, truth, rng)
    # Records still held when the run ends form a final window without labels.
    return attack(observe_windows(events), truth, rng)
