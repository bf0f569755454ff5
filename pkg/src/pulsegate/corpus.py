"""Loading labelled games and turning message streams into per-group series."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .core import BinnedSeries, GroundTruthEvent, GroupKey, Message, bin_timestamps
from .grouping import Classifier, Markers
from .ingest import KeywordFilter, RateCap, apply_rate_cap, filter_messages, parse_stream, read_ground_truth


def group_series(msgs: Sequence[Message], start_ms: int, end_ms: int,
                 markers: Markers | None = None, bin_width_ms: int = 1000) -> dict[GroupKey, BinnedSeries]:
    """Classify in stream order and bin every group sub-stream over ``[start_ms, end_ms)``."""
    clf = Classifier(markers or Markers.load())
    ts: dict[GroupKey, list[int]] = {g: [] for g in GroupKey}
    prev = None
    for m in msgs:
        if prev is not None and m.ts_ms < prev:
            raise ValueError("input not sorted by ts_ms")
        prev = m.ts_ms
        for g in clf.classify(m):
            ts[g].append(m.ts_ms)
    return {g: bin_timestamps(np.asarray(v, np.int64), start_ms, end_ms, bin_width_ms) for g, v in ts.items()}


@dataclass
class Game:
    game_id: str
    messages: list[Message]
    truth: list[GroundTruthEvent]
    start_ms: int
    end_ms: int
    markers: Markers = field(default_factory=Markers.load, repr=False)

    @cached_property
    def series(self) -> dict[GroupKey, BinnedSeries]:
        return group_series(self.messages, self.start_ms, self.end_ms, self.markers)


def prepare(msgs: Iterable[Message], keywords: KeywordFilter | None = None,
            cap: RateCap | None = None) -> list[Message]:
    """Sort, keyword-filter and rate-cap a raw message list."""
    out = sorted(msgs, key=lambda m: m.ts_ms)
    if keywords is not None:
        out = filter_messages(out, keywords)
    if cap is not None:
        out = apply_rate_cap(out, cap)
    return out


def load_manifest(corpus_dir: str | Path) -> dict:
    return json.loads((Path(corpus_dir) / "manifest.json").read_text(encoding="utf-8"))


def load_game(corpus_dir: str | Path, entry: Mapping, keywords: KeywordFilter | None = None,
              cap: RateCap | None = None, markers: Markers | None = None) -> Game:
    gdir = Path(corpus_dir) / entry["game_id"]
    msgs, _ = parse_stream(gdir / "stream.ndjson")
    truth = read_ground_truth(gdir / "truth.ndjson")
    start = int(entry["start_ms"])
    return Game(entry["game_id"], prepare(msgs, keywords, cap), truth, start,
                start + int(entry["duration_s"]) * 1000, markers or Markers.load())


def load_corpus(corpus_dir: str | Path, keywords: KeywordFilter | None = None,
                cap: RateCap | None = None, markers: Markers | None = None) -> list[Game]:
    manifest = load_manifest(corpus_dir)
    markers = markers or Markers.load()
    return [load_game(corpus_dir, e, keywords, cap, markers) for e in manifest["games"]]


class BinAssembler:
    """Turn a time-ordered message stream into closed per-group one-second bins.

    ``push`` returns the bins closed by the message; ``flush(end_ms)`` closes
    every bin up to ``end_ms``.  Bins are ``(bin_end_ms, {group: count})``.
    """

    def __init__(self, start_ms: int, groups: Iterable[GroupKey] = tuple(GroupKey),
                 markers: Markers | None = None, bin_width_ms: int = 1000, end_ms: int | None = None):
        self.start_ms = start_ms
        self.end_ms = end_ms
        self.width = bin_width_ms
        self.groups = tuple(groups)
        self.clf = Classifier(markers or Markers.load())
        self._cur = 0  # index of the open bin
        self._counts = dict.fromkeys(self.groups, 0.0)
        self._prev_ts: int | None = None

    def _close_until(self, idx: int) -> list[tuple[int, dict[GroupKey, float]]]:
        out = []
        while self._cur < idx:
            out.append((self.start_ms + (self._cur + 1) * self.width, self._counts))
            self._counts = dict.fromkeys(self.groups, 0.0)
            self._cur += 1
        return out

    def push(self, msg: Message) -> list[tuple[int, dict[GroupKey, float]]]:
        if self._prev_ts is not None and msg.ts_ms < self._prev_ts:
            raise ValueError("messages must arrive in time order")
        self._prev_ts = msg.ts_ms
        # classification state advances for every message, as in group_series
        keys = self.clf.classify(msg)
        if msg.ts_ms < self.start_ms or (self.end_ms is not None and msg.ts_ms >= self.end_ms):
            return []
        closed = self._close_until((msg.ts_ms - self.start_ms) // self.width)
        for g in keys:
            if g in self._counts:
                self._counts[g] += 1.0
        return closed

    def flush(self, end_ms: int | None = None) -> list[tuple[int, dict[GroupKey, float]]]:
        end_ms = self.end_ms if end_ms is None else end_ms
        n = -(-(end_ms - self.start_ms) // self.width)
        return self._close_until(n)
