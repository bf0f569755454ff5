"""Event templates: mean post-rate response following labelled events."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import BinnedSeries, EventTemplate, GroundTruthEvent, GroupKey, sorted_groups

DEFAULT_GROUPS = (GroupKey.MOBILE, GroupKey.INACTIVE, GroupKey.SHORT)


class TemplateError(ValueError):
    pass


class Normalization(str, enum.Enum):
    RAW = "raw"
    UNIT_ENERGY = "unit_energy"


@dataclass(frozen=True)
class TemplateSet:
    window_s: int
    per_group: dict[GroupKey, EventTemplate]
    built_from: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.per_group:
            raise TemplateError("template set is empty")
        for g, t in self.per_group.items():
            if t.window_s != self.window_s:
                raise TemplateError(f"template {g.value} has window {t.window_s} != {self.window_s}")

    def __getitem__(self, group: GroupKey | str) -> EventTemplate:
        return self.per_group[GroupKey.parse(group)]

    @property
    def groups(self) -> list[GroupKey]:
        return sorted_groups(self.per_group)

    def to_json(self) -> dict:
        return {
            "window_s": self.window_s,
            "built_from": list(self.built_from),
            "groups": {g.value: {"values": [float(v) for v in self.per_group[g].values],
                                 "n_events": self.per_group[g].n_events}
                       for g in self.groups},
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "TemplateSet":
        w = int(obj["window_s"])
        per = {}
        for name, body in obj["groups"].items():
            g = GroupKey.parse(name)
            per[g] = EventTemplate(g, w, np.asarray(body["values"], float), int(body["n_events"]))
        return cls(w, per, list(obj.get("built_from", [])))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TemplateSet":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def event_segments(series: BinnedSeries, events: Sequence[GroundTruthEvent],
                   window_s: int) -> np.ndarray:
    """Stack the ``window_s`` bins following each event, shape (n_events, window_s)."""
    if window_s < 1:
        raise TemplateError("window_s must be >= 1")
    if not events:
        raise TemplateError("no events to build a template from")
    if series.bin_width_ms != 1000:
        raise TemplateError("templates require 1 s bins")
    rows = []
    for ev in events:
        i = series.bin_index(ev.ts_ms)
        if i < 0 or i + window_s > len(series):
            raise TemplateError(
                f"insufficient data: event at {ev.ts_ms} needs {window_s} bins after it")
        rows.append(series.counts[i:i + window_s])
    return np.vstack(rows)


def build_template(series: BinnedSeries, events: Sequence[GroundTruthEvent], window_s: int,
                   group: GroupKey = GroupKey.ALL, subtract_baseline_s: int = 0) -> EventTemplate:
    """Average the post-event response over ``events``.

    With ``subtract_baseline_s > 0`` the mean rate over that many seconds
    before each event is subtracted (clipped at zero) before averaging.
    """
    seg = event_segments(series, events, window_s)
    if subtract_baseline_s:
        base = []
        for ev in events:
            i = series.bin_index(ev.ts_ms)
            lo = max(0, i - subtract_baseline_s)
            base.append(series.counts[lo:i].mean() if i > lo else 0.0)
        seg = np.clip(seg - np.asarray(base)[:, None], 0.0, None)
    return EventTemplate(group, window_s, seg.mean(axis=0), n_events=len(events))


def build_template_multi(games: Iterable[tuple[BinnedSeries, Sequence[GroundTruthEvent]]],
                         window_s: int, group: GroupKey = GroupKey.ALL) -> EventTemplate:
    """Like :func:`build_template` but pooling events across several games."""
    segs = [event_segments(s, evs, window_s) for s, evs in games if evs]
    if not segs:
        raise TemplateError("no events to build a template from")
    seg = np.vstack(segs)
    return EventTemplate(group, window_s, seg.mean(axis=0), n_events=len(seg))


def build_template_set(group_streams: Mapping[GroupKey, BinnedSeries] | Sequence[Mapping[GroupKey, BinnedSeries]],
                       events: Sequence[GroundTruthEvent] | Sequence[Sequence[GroundTruthEvent]],
                       window_s: int, groups: Iterable[GroupKey | str] = DEFAULT_GROUPS,
                       built_from: Sequence[str] = ()) -> TemplateSet:
    """One template per requested group.

    Accepts a single game (a group->series mapping plus its events) or
    parallel sequences of games and event lists.
    """
    if isinstance(group_streams, Mapping):
        games = [group_streams]
        event_lists = [events]
    else:
        games, event_lists = list(group_streams), list(events)
    per = {}
    for g in sorted_groups(groups):
        try:
            per[g] = build_template_multi(((gs[g], ev) for gs, ev in zip(games, event_lists)),
                                          window_s, g)
        except TemplateError as exc:
            raise TemplateError(f"group {g.value}: {exc}") from exc
    return TemplateSet(window_s, per, list(built_from))


def normalize_template(t: EventTemplate, mode: Normalization | str = Normalization.RAW) -> EventTemplate:
    mode = Normalization(mode)
    if mode is Normalization.RAW:
        return t
    norm = float(np.sqrt(np.sum(t.values ** 2)))
    if norm <= 0:
        raise TemplateError("cannot normalize a zero template")
    return EventTemplate(t.group, t.window_s, t.values / norm, t.n_events)
