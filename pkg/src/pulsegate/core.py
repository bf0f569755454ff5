"""Shared domain types and time conventions.

All times are integer milliseconds since the Unix epoch.  Bins are half-open
``[lo, hi)`` intervals, so every timestamp belongs to exactly one bin.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_TEXT_BYTES = 560
REFRACTORY_MS = 300_000


class GroupKey(str, enum.Enum):
    ALL = "all"
    MOBILE = "mobile"
    NON_MOBILE = "non_mobile"
    ACTIVE = "active"
    INACTIVE = "inactive"
    SHORT = "short"
    LONG = "long"

    @classmethod
    def parse(cls, value: str | "GroupKey") -> "GroupKey":
        if isinstance(value, GroupKey):
            return value
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise ValueError(f"unknown group {value!r}") from None


GROUP_ORDER: tuple[GroupKey, ...] = tuple(GroupKey)


def sorted_groups(groups: Iterable[GroupKey | str]) -> list[GroupKey]:
    """Canonical ordering, so reductions over groups are order-independent."""
    keys = {GroupKey.parse(g) for g in groups}
    return [g for g in GROUP_ORDER if g in keys]


@dataclass(frozen=True, slots=True)
class Message:
    ts_ms: int
    user_id: str
    client: str
    text: str

    def __post_init__(self) -> None:
        if not isinstance(self.ts_ms, int) or isinstance(self.ts_ms, bool):
            raise TypeError("ts_ms must be an integer")
        if self.ts_ms < 0:
            raise ValueError("ts_ms must be >= 0")
        if not self.user_id:
            raise ValueError("user_id must be non-empty")
        if not self.text.strip():
            raise ValueError("text must be non-empty")
        if len(self.text.encode("utf-8")) > MAX_TEXT_BYTES:
            raise ValueError(f"text exceeds {MAX_TEXT_BYTES} bytes")

    def to_dict(self) -> dict:
        return {"ts_ms": self.ts_ms, "user_id": self.user_id,
                "client": self.client, "text": self.text}


@dataclass(frozen=True, slots=True)
class GroundTruthEvent:
    ts_ms: int
    kind: str = "touchdown"

    def to_dict(self) -> dict:
        return {"ts_ms": self.ts_ms, "kind": self.kind}


def check_event_spacing(events: Sequence[GroundTruthEvent],
                        min_gap_ms: int = REFRACTORY_MS) -> None:
    for a, b in zip(events, events[1:]):
        if b.ts_ms - a.ts_ms < min_gap_ms:
            raise ValueError(
                f"events at {a.ts_ms} and {b.ts_ms} are closer than {min_gap_ms} ms")


@dataclass(frozen=True)
class BinnedSeries:
    start_ms: int
    bin_width_ms: int = 1000
    counts: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        if self.bin_width_ms <= 0:
            raise ValueError("bin_width_ms must be > 0")
        counts = np.array(self.counts, dtype=float)
        if counts.ndim != 1:
            raise ValueError("counts must be one-dimensional")
        if np.any(counts < 0) or not np.all(np.isfinite(counts)):
            raise ValueError("counts must be finite and non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    def __len__(self) -> int:
        return len(self.counts)

    @property
    def end_ms(self) -> int:
        return self.start_ms + len(self.counts) * self.bin_width_ms

    def bin_index(self, ts_ms: int) -> int:
        return (ts_ms - self.start_ms) // self.bin_width_ms

    def bin_end_times(self) -> np.ndarray:
        """Upper boundary of each bin, in ms."""
        n = len(self.counts)
        return self.start_ms + self.bin_width_ms * np.arange(1, n + 1, dtype=np.int64)


@dataclass(frozen=True)
class EventTemplate:
    """Expected post rate at delays ``0..window_s-1`` seconds after an event."""

    group: GroupKey
    window_s: int
    values: np.ndarray
    n_events: int = 1

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or len(values) != self.window_s:
            raise ValueError("template length must equal window_s")
        if self.window_s < 1:
            raise ValueError("window_s must be >= 1")
        if np.any(values < 0):
            raise ValueError("template values must be non-negative")
        if self.n_events < 1:
            raise ValueError("n_events must be >= 1")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "group", GroupKey.parse(self.group))


class Rule(str, enum.Enum):
    SINGLE = "single"
    MAX = "max"
    MEAN = "mean"
    PRODUCT = "product"
    DELAY = "delay"
    TEMPERATURE = "temperature"


@dataclass(frozen=True, slots=True)
class Detection:
    ts_ms: int
    score: float
    rule: Rule | str
    kind: str = "touchdown"

    def to_dict(self) -> dict:
        rule = self.rule.value if isinstance(self.rule, Rule) else str(self.rule)
        return {"ts_ms": int(self.ts_ms), "score": float(self.score),
                "rule": rule, "kind": self.kind}


def bin_messages(msgs: Iterable[Message], start_ms: int, end_ms: int,
                 bin_width_ms: int = 1000) -> BinnedSeries:
    """Count messages per bin over ``[start_ms, end_ms)``."""
    if bin_width_ms <= 0:
        raise ValueError("invalid bin width: must be > 0")
    if end_ms < start_ms:
        raise ValueError("invalid range: end_ms < start_ms")
    n = -(-(end_ms - start_ms) // bin_width_ms)
    ts = np.fromiter((m.ts_ms for m in msgs), dtype=np.int64)
    return bin_timestamps(ts, start_ms, end_ms, bin_width_ms, n)


def bin_timestamps(ts: np.ndarray, start_ms: int, end_ms: int,
                   bin_width_ms: int = 1000, n_bins: int | None = None) -> BinnedSeries:
    if n_bins is None:
        n_bins = -(-(end_ms - start_ms) // bin_width_ms)
    ts = np.asarray(ts, dtype=np.int64)
    ts = ts[(ts >= start_ms) & (ts < end_ms)]
    idx = (ts - start_ms) // bin_width_ms
    counts = np.bincount(idx, minlength=n_bins).astype(float)
    return BinnedSeries(start_ms, bin_width_ms, counts)
