"""Detection scoring against ground truth: matching, ROC, parameter sweeps and
leave-one-game-out cross-validation.

FPR throughout is ``fp / (tp + fp)``, the share of declared detections that
match no event.  Event detection has no countable negative population, so
this is a precision complement rather than a classical false-positive rate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .core import Detection, GroundTruthEvent, GroupKey, Rule
from .corpus import Game
from .detection import (DetectorConfig, FusionRule, ScoreTrace, TemperatureConfig,
                        detect_indices, fused_scores, temperature_sweep_scores)
from .templates import DEFAULT_GROUPS, TemplateError, TemplateSet, build_template_set


@dataclass(frozen=True)
class MatchPolicy:
    match_window_s: int = 180
    one_to_one: bool = True

    def __post_init__(self) -> None:
        if self.match_window_s < 1:
            raise ValueError("match_window_s must be >= 1")
        if not self.one_to_one:
            raise ValueError("only one-to-one matching is supported")


@dataclass(frozen=True)
class MatchResult:
    tp: int
    fp: int
    fn: int
    delays_s: tuple[float, ...]


def match_times(det_ts: Sequence[int], truth_ts: Sequence[int], window_ms: int) -> MatchResult:
    tp = 0
    delays = []
    used = [False] * len(truth_ts)
    first = 0  # events before this index are too old for any later detection
    for d in det_ts:
        while first < len(truth_ts) and (used[first] or d - truth_ts[first] > window_ms):
            first += 1
        for j in range(first, len(truth_ts)):
            e = truth_ts[j]
            if e > d:
                break
            if not used[j] and d - e <= window_ms:
                used[j] = True
                tp += 1
                delays.append((d - e) / 1000.0)
                break
    return MatchResult(tp, len(det_ts) - tp, len(truth_ts) - tp, tuple(delays))


def _sorted_check(ts: Sequence[int], what: str) -> None:
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise ValueError(f"{what} not sorted by time")


def match_detections(dets: Sequence[Detection], truth: Sequence[GroundTruthEvent],
                     policy: MatchPolicy = MatchPolicy()) -> MatchResult:
    """Greedy chronological matching: each detection takes the earliest unmatched
    event at most ``match_window_s`` before it."""
    d = [x.ts_ms for x in dets]
    t = [x.ts_ms for x in truth]
    _sorted_check(d, "detections")
    _sorted_check(t, "ground truth")
    return match_times(d, t, policy.match_window_s * 1000)


def _rate(num: int, den: int) -> float:
    return num / den if den else 0.0


@dataclass
class EvalReport:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    delays_s: list[float] = field(default_factory=list)
    per_game: dict[str, "EvalReport"] = field(default_factory=dict)

    @property
    def tpr(self) -> float:
        return _rate(self.tp, self.tp + self.fn)

    @property
    def fpr(self) -> float:
        return _rate(self.fp, self.tp + self.fp)

    @property
    def mean_delay(self) -> float:
        return float(np.mean(self.delays_s)) if self.delays_s else float("nan")

    def add(self, game_id: str | None, m: MatchResult) -> None:
        self.tp += m.tp
        self.fp += m.fp
        self.fn += m.fn
        self.delays_s.extend(m.delays_s)
        if game_id is not None:
            self.per_game[game_id] = EvalReport(m.tp, m.fp, m.fn, list(m.delays_s))

    def delay_stats(self) -> dict:
        d = np.asarray(self.delays_s, float)
        if not len(d):
            return {"n": 0}
        return {"n": int(len(d)), "mean": float(d.mean()), "median": float(np.median(d)),
                "max": float(d.max()), "min": float(d.min()),
                "share_within_40s": float(np.mean(d <= 40)), "share_within_90s": float(np.mean(d <= 90)),
                "share_within_120s": float(np.mean(d <= 120))}

    def to_json(self, with_games: bool = True) -> dict:
        out = {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tpr": self.tpr, "fpr": self.fpr,
               "delays_s": [round(x, 3) for x in self.delays_s], "delay_stats": self.delay_stats()}
        if with_games:
            out["per_game"] = {k: v.to_json(False) for k, v in sorted(self.per_game.items())}
        return out


# ---------------------------------------------------------------------------
# scored runs and ROC


@dataclass(frozen=True)
class ScoredRun:
    """A detector's score trace over one game plus that game's ground truth.

    Temperature traces hold NaN where no window qualified.
    """

    game_id: str
    trace: ScoreTrace
    truth_ts: tuple[int, ...]


def runs_for(games: Sequence[Game], scorer: Callable[[Game], ScoreTrace]) -> list[ScoredRun]:
    return [ScoredRun(g.game_id, scorer(g), tuple(e.ts_ms for e in g.truth)) for g in games]


def evaluate_runs(runs: Sequence[ScoredRun], threshold: float, policy: MatchPolicy = MatchPolicy(),
                  refractory_s: int = 300) -> EvalReport:
    rep = EvalReport()
    for run in runs:
        sc = np.nan_to_num(run.trace.scores, nan=-np.inf)
        idx = detect_indices(run.trace.ts_ms, sc, threshold, refractory_s * 1000)
        rep.add(run.game_id, match_times(run.trace.ts_ms[idx].tolist(), run.truth_ts,
                                         policy.match_window_s * 1000))
    return rep


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    tpr: float
    fpr: float
    tp: int
    fp: int
    fn: int
    mean_delay: float


def roc_curve(runs: Sequence[ScoredRun], thresholds: Sequence[float], policy: MatchPolicy = MatchPolicy(),
              refractory_s: int = 300) -> list[RocPoint]:
    pts = []
    for th in thresholds:
        r = evaluate_runs(runs, float(th), policy, refractory_s)
        pts.append(RocPoint(float(th), r.tpr, r.fpr, r.tp, r.fp, r.fn, r.mean_delay))
    return pts


def auc(points: Sequence[RocPoint]) -> float:
    """Area under the best-achievable TPR as a function of the FPR budget.

    The curve is the step function x -> max{tpr : fpr <= x} over the given
    points plus the empty detector (0, 0), integrated over x in [0, 1].
    FPR here is not monotone in the threshold, hence the envelope.
    """
    pts = sorted({(p.fpr, p.tpr) for p in points} | {(0.0, 0.0)})
    area, best = 0.0, 0.0
    for (x0, y0), (x1, _) in zip(pts, pts[1:] + [(1.0, 0.0)]):
        best = max(best, y0)
        area += best * (x1 - x0)
    return area


def auto_thresholds(runs: Sequence[ScoredRun], n: int = 200, lo_quantile: float = 0.5) -> np.ndarray:
    """Geometric threshold grid from a low quantile of the scores to their maximum."""
    sc = np.concatenate([r.trace.scores for r in runs]) if runs else np.zeros(0)
    sc = sc[np.isfinite(sc) & (sc > 0)]
    if not len(sc):
        return np.array([1.0])
    lo, hi = float(np.quantile(sc, lo_quantile)), float(sc.max())
    lo = max(lo, hi * 1e-6)
    if hi <= lo:
        return np.array([hi])
    return np.geomspace(lo, hi * 1.000001, n)


# ---------------------------------------------------------------------------
# detector families


@dataclass(frozen=True)
class DetectorSpec:
    """What to run: a fusion rule over matched filters, or the temperature baseline."""

    rule: FusionRule | None = field(default_factory=FusionRule)  # None: temperature
    groups: tuple[GroupKey, ...] = DEFAULT_GROUPS
    temperature: TemperatureConfig = field(default_factory=TemperatureConfig)
    refractory_s: int = 300

    @property
    def is_temperature(self) -> bool:
        return self.rule is None

    @property
    def name(self) -> str:
        return "temperature" if self.rule is None else str(self.rule)

    @classmethod
    def parse(cls, rule: str, groups: Iterable[GroupKey] = DEFAULT_GROUPS, **kw) -> "DetectorSpec":
        if rule == Rule.TEMPERATURE.value:
            return cls(rule=None, groups=tuple(groups), **kw)
        return cls(rule=FusionRule.parse(rule), groups=tuple(groups), **kw)

    def template_groups(self) -> list[GroupKey]:
        return self.rule.required_groups(self.groups)

    def build_templates(self, games: Sequence[Game], window_s: int) -> TemplateSet:
        return build_template_set([g.series for g in games], [g.truth for g in games], window_s,
                                  self.template_groups(), [g.game_id for g in games])

    def config(self, window_s: int, threshold: float = 1.0) -> DetectorConfig:
        return DetectorConfig(window_s, threshold, self.refractory_s, self.rule, self.groups)

    def scorer(self, train: Sequence[Game], window_s: int) -> Callable[[Game], ScoreTrace]:
        """Score function for one window, with templates fitted on ``train``."""
        if self.is_temperature:
            tc = TemperatureConfig(self.temperature.min_window_s, max(window_s, self.temperature.min_window_s),
                                   self.temperature.pct_increase_threshold, 0.0, self.refractory_s)
            return lambda g: temperature_sweep_scores(g.series[GroupKey.ALL], tc)
        ts = self.build_templates(train, window_s)
        cfg = self.config(window_s)
        return lambda g: fused_scores(g.series, ts, cfg)


# ---------------------------------------------------------------------------
# sweep


@dataclass(frozen=True)
class SweepGrid:
    window_values: tuple[int, ...]
    threshold_values: tuple[float, ...] | None = None  # None: automatic per window

    def __post_init__(self) -> None:
        w = tuple(int(x) for x in self.window_values)
        if not w or list(w) != sorted(w):
            raise ValueError("window_values must be non-empty and sorted ascending")
        object.__setattr__(self, "window_values", w)
        if self.threshold_values is not None:
            t = tuple(float(x) for x in self.threshold_values)
            if not t or list(t) != sorted(t):
                raise ValueError("threshold_values must be non-empty and sorted ascending")
            object.__setattr__(self, "threshold_values", t)


@dataclass(frozen=True)
class SweepRow:
    window_s: int
    threshold: float
    tpr: float
    fpr: float
    mean_delay: float
    tp: int
    fp: int
    fn: int
    error: str | None = None


def _selection_key(row: SweepRow) -> tuple:
    delay = row.mean_delay if not math.isnan(row.mean_delay) else math.inf
    return (-row.tpr, row.fpr, delay, row.window_s, row.threshold)


def pareto_front(rows: Sequence[SweepRow]) -> list[SweepRow]:
    """Rows not dominated on (tpr up, fpr down, mean delay down)."""
    ok = [r for r in rows if r.error is None and not math.isnan(r.mean_delay)]
    front = []
    for r in ok:
        dominated = any(o.tpr >= r.tpr and o.fpr <= r.fpr and o.mean_delay <= r.mean_delay
                        and (o.tpr, -o.fpr, -o.mean_delay) != (r.tpr, -r.fpr, -r.mean_delay)
                        for o in ok)
        if not dominated:
            front.append(r)
    return front


def _grid_rows(train: Sequence[Game], grid: SweepGrid, spec: DetectorSpec,
               policy: MatchPolicy, n_auto: int = 200) -> tuple[list[SweepRow], dict]:
    rows, scorers = [], {}
    for w in grid.window_values:
        try:
            scorer = spec.scorer(train, w)
            runs = runs_for(train, scorer)
        except (TemplateError, ValueError) as exc:
            rows.append(SweepRow(w, math.nan, math.nan, math.nan, math.nan, 0, 0, 0, error=str(exc)))
            continue
        scorers[w] = scorer
        ths = grid.threshold_values if grid.threshold_values is not None else auto_thresholds(runs, n_auto)
        for p in roc_curve(runs, ths, policy, spec.refractory_s):
            rows.append(SweepRow(w, p.threshold, p.tpr, p.fpr, p.mean_delay, p.tp, p.fp, p.fn))
    return rows, scorers


@dataclass
class SweepResult:
    rows: list[SweepRow]
    pareto: list[SweepRow]

    def best(self) -> SweepRow | None:
        ok = [r for r in self.rows if r.error is None]
        return min(ok, key=_selection_key) if ok else None


def sweep(games: Sequence[Game], grid: SweepGrid, spec: DetectorSpec = DetectorSpec(),
          policy: MatchPolicy = MatchPolicy()) -> SweepResult:
    """Evaluate every (window, threshold) pair with templates fitted on all games."""
    rows, _ = _grid_rows(games, grid, spec, policy)
    return SweepResult(rows, pareto_front(rows))


# ---------------------------------------------------------------------------
# leave-one-game-out


@dataclass
class Fold:
    game_id: str
    window_s: int
    threshold: float
    train_tpr: float
    train_fpr: float
    train_mean_delay: float
    test: EvalReport
    detections_ts: list[int] = field(default_factory=list)


@dataclass
class LoocvResult:
    report: EvalReport
    folds: list[Fold]

    def to_json(self) -> dict:
        return {"aggregate": self.report.to_json(),
                "folds": [{"game_id": f.game_id, "window_s": f.window_s, "threshold": f.threshold,
                           "train_tpr": f.train_tpr, "train_fpr": f.train_fpr,
                           "train_mean_delay": f.train_mean_delay,
                           "test": f.test.to_json(False), "detections_ts": f.detections_ts}
                          for f in self.folds]}


def loocv(games: Sequence[Game], grid: SweepGrid, spec: DetectorSpec = DetectorSpec(),
          policy: MatchPolicy = MatchPolicy()) -> LoocvResult:
    """Fit templates, window and threshold on all games but one; test on the held-out game.

    Parameters maximise training TPR, then minimise FPR, then mean delay.
    """
    if len(games) < 2:
        raise ValueError("insufficient games: LOOCV needs at least 2")
    agg = EvalReport()
    folds = []
    for k, test in enumerate(games):
        train = [g for j, g in enumerate(games) if j != k]
        rows, scorers = _grid_rows(train, grid, spec, policy)
        ok = [r for r in rows if r.error is None]
        if not ok:
            raise ValueError(f"fold {test.game_id}: no usable grid point")
        best = min(ok, key=_selection_key)
        run = runs_for([test], scorers[best.window_s])[0]
        sc = np.nan_to_num(run.trace.scores, nan=-np.inf)
        idx = detect_indices(run.trace.ts_ms, sc, best.threshold, spec.refractory_s * 1000)
        det_ts = run.trace.ts_ms[idx].tolist()
        m = match_times(det_ts, run.truth_ts, policy.match_window_s * 1000)
        agg.add(test.game_id, m)
        folds.append(Fold(test.game_id, best.window_s, best.threshold, best.tpr, best.fpr,
                          best.mean_delay, agg.per_game[test.game_id], det_ts))
    return LoocvResult(agg, folds)
