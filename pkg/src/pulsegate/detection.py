"""Matched-filter detection, score fusion, refractory thresholding and the
variable-window temperature baseline."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .core import (BinnedSeries, Detection, EventTemplate, GroupKey, Rule,
                   sorted_groups)
from .templates import DEFAULT_GROUPS, Normalization, TemplateSet, normalize_template

DELAY_GROUPS = (GroupKey.INACTIVE, GroupKey.SHORT)


class AlignmentError(ValueError):
    pass


class GroupSetError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreTrace:
    """Detector output: bin-end timestamps (ms) and scores."""

    ts_ms: np.ndarray
    scores: np.ndarray

    def __post_init__(self) -> None:
        ts = np.asarray(self.ts_ms, dtype=np.int64)
        sc = np.asarray(self.scores, dtype=float)
        if ts.shape != sc.shape or ts.ndim != 1:
            raise AlignmentError("timestamps and scores must be 1-D and equal length")
        object.__setattr__(self, "ts_ms", ts)
        object.__setattr__(self, "scores", sc)

    def __len__(self) -> int:
        return len(self.scores)

    def __iter__(self) -> Iterator[tuple[int, float]]:
        return zip(self.ts_ms.tolist(), self.scores.tolist())

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]]) -> "ScoreTrace":
        pairs = list(pairs)
        if not pairs:
            return cls(np.zeros(0, np.int64), np.zeros(0))
        ts, sc = zip(*pairs)
        return cls(np.asarray(ts, np.int64), np.asarray(sc, float))

    def scaled(self, c: float) -> "ScoreTrace":
        return ScoreTrace(self.ts_ms, self.scores * c)


def _as_trace(x) -> ScoreTrace:
    return x if isinstance(x, ScoreTrace) else ScoreTrace.from_pairs(x)


@dataclass(frozen=True)
class MatchedFilter:
    template: EventTemplate
    normalization: Normalization = Normalization.RAW

    def __post_init__(self) -> None:
        if self.template.window_s < 1:
            raise ValueError("template window must be >= 1")
        object.__setattr__(self, "normalization", Normalization(self.normalization))
        object.__setattr__(self, "_v", normalize_template(self.template, self.normalization).values)

    @property
    def window_s(self) -> int:
        return self.template.window_s

    @property
    def impulse_response(self) -> np.ndarray:
        """H(t) = V(W - t): the time-reversed template (real valued, no conjugate)."""
        return self._v[::-1].copy()

    def correlate(self, counts: np.ndarray) -> np.ndarray:
        # correlation with V == convolution with the reversed template
        return np.correlate(counts, self._v, mode="valid")


def filter_output(x: BinnedSeries, f: MatchedFilter) -> ScoreTrace:
    """Slide the template over ``x``; the score at bin n covers bins n-W+1..n.

    Timestamps are the bin-end boundary of bin n.
    """
    if x.bin_width_ms != 1000:
        raise ValueError("filter_output expects 1 s bins")
    w = f.window_s
    if len(x) < w:
        raise ValueError(f"series shorter than window ({len(x)} < {w})")
    scores = f.correlate(np.asarray(x.counts, float))
    ts = x.bin_end_times()[w - 1:]
    return ScoreTrace(ts, scores)


@dataclass(frozen=True)
class FusionRule:
    kind: Rule = Rule.MEAN
    group: GroupKey | None = None  # only for Rule.SINGLE

    def __post_init__(self) -> None:
        kind = Rule(self.kind)
        if kind is Rule.TEMPERATURE:
            raise ValueError("temperature is not a fusion rule")
        object.__setattr__(self, "kind", kind)
        if kind is Rule.SINGLE:
            object.__setattr__(self, "group", GroupKey.parse(self.group or GroupKey.ALL))
        elif self.group is not None:
            raise ValueError("only the single rule takes a group")

    @classmethod
    def parse(cls, text: str) -> "FusionRule":
        """``mean``, ``max``, ``product``, ``delay``, ``single`` or ``single:<group>``."""
        name, _, group = text.partition(":")
        if Rule(name) is Rule.SINGLE:
            return cls(Rule.SINGLE, GroupKey.parse(group or "all"))
        return cls(Rule(name))

    def required_groups(self, configured: Iterable[GroupKey] = DEFAULT_GROUPS) -> list[GroupKey]:
        if self.kind is Rule.SINGLE:
            return [self.group]
        if self.kind is Rule.DELAY:
            return list(DELAY_GROUPS)
        return sorted_groups(configured)

    def __str__(self) -> str:
        if self.kind is Rule.SINGLE:
            return f"single:{self.group.value}"
        return self.kind.value


def _stack(scores: Mapping[GroupKey, ScoreTrace], groups: Sequence[GroupKey]) -> tuple[np.ndarray, list[np.ndarray]]:
    traces = [scores[g] for g in groups]
    ts = traces[0].ts_ms
    for t in traces[1:]:
        if len(t) != len(ts) or not np.array_equal(t.ts_ms, ts):
            raise AlignmentError("score sequences are not time-aligned")
    return ts, [t.scores for t in traces]


def fuse_arrays(arrays: Sequence[np.ndarray], kind: Rule) -> np.ndarray:
    """Pointwise reduction in the given (canonical) order."""
    if kind is Rule.MAX:
        out = arrays[0].copy()
        for a in arrays[1:]:
            np.maximum(out, a, out=out)
        return out
    if kind in (Rule.MEAN, Rule.DELAY):
        out = arrays[0].copy()
        for a in arrays[1:]:
            out += a
        return out / len(arrays)
    if kind is Rule.PRODUCT:
        out = arrays[0].copy()
        for a in arrays[1:]:
            out *= a
        return out
    if kind is Rule.SINGLE:
        return arrays[0].copy()
    raise ValueError(f"cannot fuse with {kind}")


def fuse(scores: Mapping[GroupKey | str, ScoreTrace | Sequence[tuple[int, float]]],
         rule: FusionRule, groups: Iterable[GroupKey | str] | None = None) -> ScoreTrace:
    """Combine per-group score traces.

    ``groups`` is the configured group set for max/mean/product; when
    omitted, the keys of ``scores`` are used.  The delay rule always uses
    inactive and short.
    """
    scores = {GroupKey.parse(g): _as_trace(s) for g, s in scores.items()}
    if rule.kind is Rule.SINGLE:
        if rule.group not in scores:
            raise GroupSetError(f"missing group {rule.group.value}")
        need = [rule.group]
    elif rule.kind is Rule.DELAY:
        need = list(DELAY_GROUPS)
        if not all(g in scores for g in need):
            raise GroupSetError("delay rule requires inactive and short scores")
    else:
        need = sorted_groups(groups) if groups is not None else sorted_groups(scores)
        if set(need) != set(scores):
            raise GroupSetError(f"expected exactly groups {[g.value for g in need]}, "
                                f"got {[g.value for g in sorted_groups(scores)]}")
        if not need:
            raise GroupSetError("no groups to fuse")
    ts, arrays = _stack(scores, need)
    return ScoreTrace(ts, fuse_arrays(arrays, rule.kind))


@dataclass(frozen=True)
class DetectorConfig:
    window_s: int = 30
    threshold: float = 8.0
    refractory_s: int = 300
    rule: FusionRule = field(default_factory=FusionRule)
    groups: tuple[GroupKey, ...] = DEFAULT_GROUPS
    normalization: Normalization = Normalization.RAW
    kind: str = "touchdown"

    def __post_init__(self) -> None:
        if self.window_s < 1:
            raise ValueError("window_s must be >= 1")
        if not self.threshold > 0:
            raise ValueError("threshold must be > 0")
        if self.refractory_s < 0:
            raise ValueError("refractory_s must be >= 0")
        object.__setattr__(self, "groups", tuple(sorted_groups(self.groups)))
        object.__setattr__(self, "normalization", Normalization(self.normalization))

    @property
    def filter_groups(self) -> list[GroupKey]:
        return self.rule.required_groups(self.groups)


def detect_indices(ts_ms: np.ndarray, scores: np.ndarray, threshold: float,
                   refractory_ms: int) -> np.ndarray:
    """Indices of detections: first supra-threshold instant, then the first
    supra-threshold instant at least ``refractory_ms`` after the previous
    detection, and so on."""
    supra = np.flatnonzero(scores >= threshold)
    if len(supra) == 0:
        return supra
    st = ts_ms[supra]
    picked = []
    j = 0
    while j < len(supra):
        picked.append(supra[j])
        j = max(j + 1, int(np.searchsorted(st, st[j] + refractory_ms, side="left")))
    return np.asarray(picked, dtype=np.int64)


def detect(fused: ScoreTrace | Sequence[tuple[int, float]], cfg: DetectorConfig) -> list[Detection]:
    fused = _as_trace(fused)
    if len(fused) > 1 and np.any(np.diff(fused.ts_ms) < 0):
        raise ValueError("fused scores must be time-sorted")
    idx = detect_indices(fused.ts_ms, fused.scores, cfg.threshold, cfg.refractory_s * 1000)
    return [Detection(int(fused.ts_ms[i]), float(fused.scores[i]), cfg.rule.kind, cfg.kind)
            for i in idx]


def score_groups(group_series: Mapping[GroupKey, BinnedSeries], templates: TemplateSet,
                 cfg: DetectorConfig) -> dict[GroupKey, ScoreTrace]:
    out = {}
    for g in cfg.filter_groups:
        f = MatchedFilter(templates[g], cfg.normalization)
        out[g] = filter_output(group_series[g], f)
    return out


def fused_scores(group_series: Mapping[GroupKey, BinnedSeries], templates: TemplateSet,
                 cfg: DetectorConfig) -> ScoreTrace:
    per = score_groups(group_series, templates, cfg)
    return fuse(per, cfg.rule, cfg.filter_groups)


def detect_offline(group_series: Mapping[GroupKey, BinnedSeries], templates: TemplateSet,
                   cfg: DetectorConfig) -> list[Detection]:
    """filter_output per group, fuse, then threshold with refractory."""
    if templates.window_s != cfg.window_s:
        raise ValueError("template window does not match detector window")
    return detect(fused_scores(group_series, templates, cfg), cfg)


class StreamingDetector:
    """Incremental form of :func:`detect_offline`, one bin at a time.

    Each group keeps a ring buffer of its last W counts; per-bin work is one
    length-W dot product per group.
    """

    def __init__(self, templates: TemplateSet, cfg: DetectorConfig):
        if templates.window_s != cfg.window_s:
            raise ValueError("template window does not match detector window")
        self.cfg = cfg
        self.groups = cfg.filter_groups
        self._filters = {g: MatchedFilter(templates[g], cfg.normalization) for g in self.groups}
        self._buf = {g: deque(maxlen=cfg.window_s) for g in self.groups}
        self._last_ts: int | None = None
        self._last_detection: int | None = None

    def push(self, bin_end_ms: int, counts: Mapping[GroupKey, float]) -> Detection | None:
        if self._last_ts is not None and bin_end_ms <= self._last_ts:
            raise AlignmentError("bins must arrive in time order")
        self._last_ts = bin_end_ms
        for g in self.groups:
            self._buf[g].append(float(counts.get(g, 0.0)))
        if len(self._buf[self.groups[0]]) < self.cfg.window_s:
            return None
        per = [self._filters[g].correlate(np.fromiter(self._buf[g], float, self.cfg.window_s))
               for g in self.groups]
        score = float(fuse_arrays(per, self.cfg.rule.kind)[0])
        if score < self.cfg.threshold:
            return None
        refractory = self.cfg.refractory_s * 1000
        if self._last_detection is not None and bin_end_ms - self._last_detection < refractory:
            return None
        self._last_detection = bin_end_ms
        return Detection(bin_end_ms, score, self.cfg.rule.kind, self.cfg.kind)


def detect_streaming(bins: Iterable[tuple[int, Mapping[GroupKey, float]]], templates: TemplateSet,
                     cfg: DetectorConfig) -> Iterator[Detection]:
    """Consume ``(bin_end_ms, {group: count})`` pairs and yield detections."""
    det = StreamingDetector(templates, cfg)
    for ts, counts in bins:
        d = det.push(ts, counts)
        if d is not None:
            yield d


@dataclass(frozen=True)
class TemperatureConfig:
    min_window_s: int = 10
    max_window_s: int = 60
    pct_increase_threshold: float = 1.0
    volume_threshold: float = 90.0
    refractory_s: int = 300
    kind: str = "touchdown"

    def __post_init__(self) -> None:
        if not 1 <= self.min_window_s <= self.max_window_s:
            raise ValueError("need 1 <= min_window_s <= max_window_s")


def temperature_scores(x: BinnedSeries, cfg: TemperatureConfig) -> ScoreTrace:
    """Per bin, the window volume at the smallest qualifying window (NaN if none).

    Window w qualifies at bin n when the previous w seconds had volume > 0,
    the relative increase over them is at least ``pct_increase_threshold``
    and the current volume is at least ``volume_threshold``.
    """
    counts = np.asarray(x.counts, float)
    n = len(counts)
    c = np.concatenate([[0.0], np.cumsum(counts)])
    out = np.full(n, np.nan)
    todo = np.ones(n, dtype=bool)
    for w in range(cfg.min_window_s, cfg.max_window_s + 1):
        if 2 * w > n:
            break
        end = np.arange(2 * w, n + 1)  # exclusive end index into c
        cur = c[end] - c[end - w]
        prev = c[end - w] - c[end - 2 * w]
        ok = (prev > 0) & (cur - prev >= cfg.pct_increase_threshold * prev) & (cur >= cfg.volume_threshold)
        rows = end - 1
        hit = ok & todo[rows]
        out[rows[hit]] = cur[hit]
        todo[rows[hit]] = False
    return ScoreTrace(x.bin_end_times(), out)


def temperature_detect(x: BinnedSeries, cfg: TemperatureConfig) -> list[Detection]:
    tr = temperature_scores(x, cfg)
    flagged = (~np.isnan(tr.scores)).astype(float)
    idx = detect_indices(tr.ts_ms, flagged, 0.5, cfg.refractory_s * 1000)
    return [Detection(int(tr.ts_ms[i]), float(tr.scores[i]), Rule.TEMPERATURE, cfg.kind) for i in idx]


def temperature_sweep_scores(x: BinnedSeries, cfg: TemperatureConfig) -> ScoreTrace:
    """Per bin, the largest window volume among windows passing the percentage test.

    Thresholding this trace at ``v`` flags exactly the bins where
    :func:`temperature_scores` with ``volume_threshold=v`` flags, so one
    trace serves a whole volume-threshold sweep.  NaN where no window passes.
    """
    counts = np.asarray(x.counts, float)
    n = len(counts)
    c = np.concatenate([[0.0], np.cumsum(counts)])
    out = np.full(n, -np.inf)
    for w in range(cfg.min_window_s, cfg.max_window_s + 1):
        if 2 * w > n:
            break
        end = np.arange(2 * w, n + 1)
        cur = c[end] - c[end - w]
        prev = c[end - w] - c[end - 2 * w]
        ok = (prev > 0) & (cur - prev >= cfg.pct_increase_threshold * prev)
        rows = (end - 1)[ok]
        out[rows] = np.maximum(out[rows], cur[ok])
    out[np.isneginf(out)] = np.nan
    return ScoreTrace(x.bin_end_times(), out)


class StreamingTemperature:
    """Incremental form of :func:`temperature_detect` over the all-stream counts."""

    def __init__(self, cfg: TemperatureConfig):
        self.cfg = cfg
        self._buf: deque[float] = deque(maxlen=2 * cfg.max_window_s)
        self._last_ts: int | None = None
        self._last_detection: int | None = None

    def push(self, bin_end_ms: int, count: float) -> Detection | None:
        if self._last_ts is not None and bin_end_ms <= self._last_ts:
            raise AlignmentError("bins must arrive in time order")
        self._last_ts = bin_end_ms
        self._buf.append(float(count))
        c = np.concatenate([[0.0], np.cumsum(np.fromiter(reversed(self._buf), float, len(self._buf)))])
        cfg = self.cfg
        score = None
        for w in range(cfg.min_window_s, min(cfg.max_window_s, len(self._buf) // 2) + 1):
            cur, prev = c[w], c[2 * w] - c[w]
            if prev > 0 and cur - prev >= cfg.pct_increase_threshold * prev and cur >= cfg.volume_threshold:
                score = float(cur)
                break
        if score is None:
            return None
        if self._last_detection is not None and bin_end_ms - self._last_detection < cfg.refractory_s * 1000:
            return None
        self._last_detection = bin_end_ms
        return Detection(bin_end_ms, score, Rule.TEMPERATURE, cfg.kind)
