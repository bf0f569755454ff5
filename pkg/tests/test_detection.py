import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pulsegate.core import BinnedSeries, Detection, EventTemplate, GroupKey, Rule
from pulsegate.detection import (AlignmentError, DetectorConfig, FusionRule, GroupSetError,
                                 MatchedFilter, ScoreTrace, StreamingDetector, StreamingTemperature,
                                 TemperatureConfig, detect, detect_indices, detect_offline,
                                 detect_streaming, filter_output, fuse, temperature_detect,
                                 temperature_scores, temperature_sweep_scores)
from pulsegate.templates import TemplateSet, build_template_set

from oracles import direct_filter, refractory_walk

G = GroupKey


def mf(values):
    return MatchedFilter(EventTemplate(G.ALL, len(values), values))


def series(counts, start=0):
    return BinnedSeries(start, 1000, counts)


def trace(scores, start=1000):
    ts = start + 1000 * np.arange(len(scores))
    return ScoreTrace(ts, scores)


# matched filter


def test_filter_example():
    out = filter_output(series([0, 1, 2, 3, 0]), mf([1, 2, 3]))
    assert out.scores.tolist() == [8, 14, 8]
    assert out.ts_ms.tolist() == [3000, 4000, 5000]


def test_filter_zero_signal():
    assert not filter_output(series(np.zeros(20)), mf([1, 5, 2])).scores.any()


def test_filter_aligned_pulse_maximum():
    v = [1.0, 4.0, 2.0, 3.0]
    x = np.r_[np.zeros(6), v, np.zeros(6)]
    out = filter_output(series(x), mf(v)).scores
    assert out.max() == sum(t * t for t in v)
    assert int(np.argmax(out)) == 6  # window covering bins 6..9


def test_filter_short_series():
    with pytest.raises(ValueError, match="shorter than window"):
        filter_output(series([1, 2]), mf([1, 1, 1]))


def test_impulse_response_is_reversed_template():
    assert mf([1, 2, 3]).impulse_response.tolist() == [3, 2, 1]


def test_filter_equals_convolution_with_impulse_response():
    rng = np.random.default_rng(0)
    v, x = rng.random(7), rng.random(40)
    f = mf(v)
    conv = np.convolve(x, f.impulse_response, "valid")
    assert np.allclose(filter_output(series(x), f).scores, conv, rtol=1e-12)


def test_filter_random_reals_against_direct_sum():
    rng = np.random.default_rng(1)
    for _ in range(200):
        w = int(rng.integers(1, 12))
        x = rng.random(int(rng.integers(w, 60))) * 50
        v = rng.random(w) * 5
        got = filter_output(series(x), mf(v)).scores
        want = direct_filter(x.tolist(), v.tolist())
        assert np.allclose(got, want, rtol=1e-9, atol=0)


@given(st.lists(st.integers(0, 20), min_size=4, max_size=40),
       st.lists(st.integers(0, 20), min_size=4, max_size=40),
       st.lists(st.floats(0, 10), min_size=1, max_size=4),
       st.floats(-5, 5), st.floats(-5, 5))
def test_filter_linearity(x, y, v, a, b):
    n = min(len(x), len(y))
    x, y = np.asarray(x[:n], float), np.asarray(y[:n], float)
    f = mf(v)
    combo = a * x + b * y
    lhs = f.correlate(combo)
    rhs = a * f.correlate(x) + b * f.correlate(y)
    assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-9)


# fusion


def aligned(**vals):
    return {G.parse(k): trace([v]) for k, v in vals.items()}


def test_fusion_examples():
    s = aligned(mobile=4, inactive=6, short=8)
    assert fuse(s, FusionRule(Rule.MAX)).scores.tolist() == [8]
    assert fuse(s, FusionRule(Rule.MEAN)).scores.tolist() == [6]
    assert fuse(s, FusionRule(Rule.PRODUCT)).scores.tolist() == [192]


def test_delay_rule():
    s = aligned(inactive=10, short=4)
    assert fuse(s, FusionRule(Rule.DELAY)).scores.tolist() == [7]


def test_single_rule_identity():
    t = trace([1.5, 2.5, 0.0])
    out = fuse({G.MOBILE: t, G.SHORT: trace([9, 9, 9])}, FusionRule(Rule.SINGLE, G.MOBILE))
    assert out.scores.tolist() == t.scores.tolist()


def test_fuse_accepts_pairs():
    out = fuse({"mobile": [(1000, 2.0)], "short": [(1000, 4.0)]}, FusionRule(Rule.MEAN))
    assert out.scores.tolist() == [3.0]


def test_fuse_alignment_error():
    with pytest.raises(AlignmentError):
        fuse({G.MOBILE: trace([1, 2]), G.SHORT: trace([1, 2], start=2000)}, FusionRule(Rule.MEAN))


def test_fuse_group_set_errors():
    with pytest.raises(GroupSetError):
        fuse(aligned(mobile=1), FusionRule(Rule.MEAN), [G.MOBILE, G.SHORT])
    with pytest.raises(GroupSetError):
        fuse(aligned(mobile=1), FusionRule(Rule.DELAY))
    with pytest.raises(GroupSetError):
        fuse(aligned(mobile=1), FusionRule(Rule.SINGLE, G.ALL))


def test_rule_parsing():
    assert str(FusionRule.parse("single:short")) == "single:short"
    assert FusionRule.parse("single").group is G.ALL
    with pytest.raises(ValueError):
        FusionRule.parse("median")
    with pytest.raises(ValueError):
        FusionRule(Rule.MEAN, G.ALL)


score_lists = st.lists(st.floats(0, 1e3), min_size=1, max_size=10)


@given(st.lists(score_lists, min_size=3, max_size=3), st.permutations([0, 1, 2]))
def test_mean_permutation_invariant_and_bounds(rows, perm):
    n = min(map(len, rows))
    keys = [G.MOBILE, G.INACTIVE, G.SHORT]
    scores = {k: trace(r[:n]) for k, r in zip(keys, rows)}
    permuted = {keys[p]: scores[keys[i]] for i, p in enumerate(perm)}
    a = fuse(scores, FusionRule(Rule.MEAN)).scores
    b = fuse(permuted, FusionRule(Rule.MEAN)).scores
    assert np.allclose(a, b, rtol=1e-12, atol=0)
    stack = np.array([r[:n] for r in rows])
    mx = fuse(scores, FusionRule(Rule.MAX)).scores
    assert np.all(mx >= a - 1e-9) and np.all(a >= stack.min(axis=0) - 1e-9)
    assert np.allclose(mx, stack.max(axis=0))


def test_mean_bitwise_invariant_under_key_order():
    rng = np.random.default_rng(5)
    rows = rng.random((3, 50)) * 100
    keys = [G.MOBILE, G.INACTIVE, G.SHORT]
    for order in itertools.permutations(range(3)):
        scores = {keys[i]: trace(rows[i]) for i in order}
        out = fuse(scores, FusionRule(Rule.MEAN)).scores
        assert out.tobytes() == fuse({k: trace(r) for k, r in zip(keys, rows)},
                                     FusionRule(Rule.MEAN)).scores.tobytes()


# thresholding and refractory


def test_detect_single_crossing():
    cfg = DetectorConfig(threshold=8, refractory_s=300)
    dets = detect(trace([2, 9, 9, 2]), cfg)
    assert [d.ts_ms for d in dets] == [2000] and dets[0].score == 9


def _two_crossings(gap_s):
    s = np.zeros(gap_s + 10)
    s[5] = s[5 + gap_s] = 10
    return trace(s)


def test_crossings_within_refractory_merge():
    assert len(detect(_two_crossings(120), DetectorConfig(threshold=8))) == 1


def test_crossings_beyond_refractory_split():
    assert len(detect(_two_crossings(400), DetectorConfig(threshold=8))) == 2


def test_detect_rejects_unsorted():
    with pytest.raises(ValueError):
        detect(ScoreTrace([2000, 1000], [9, 9]), DetectorConfig(threshold=8))


@settings(max_examples=300)
@given(st.lists(st.floats(0, 20), max_size=80), st.integers(0, 30), st.floats(0.5, 19))
def test_detect_indices_matches_walk(scores, refr, th):
    ts = np.arange(len(scores), dtype=np.int64) * 10_000
    sc = np.asarray(scores)
    got = ts[detect_indices(ts, sc, th, refr * 10_000)].tolist()
    assert got == refractory_walk(ts.tolist(), scores, th, refr * 10_000)


def test_config_validation():
    with pytest.raises(ValueError):
        DetectorConfig(window_s=0)
    with pytest.raises(ValueError):
        DetectorConfig(threshold=0)
    with pytest.raises(ValueError):
        DetectorConfig(refractory_s=-1)


# scaling


def _toy_groups(seed=0, n=400):
    rng = np.random.default_rng(seed)
    base = rng.poisson(1.0, (3, n)).astype(float)
    for e in (100, 250):
        base[:, e:e + 20] += np.linspace(0, 6, 20)
    return {g: series(base[i]) for i, g in enumerate([G.MOBILE, G.INACTIVE, G.SHORT])}


@pytest.mark.parametrize("kind, power", [(Rule.MEAN, 1), (Rule.MAX, 1), (Rule.PRODUCT, 3)])
def test_template_scaling(kind, power):
    from pulsegate.core import GroundTruthEvent
    gs = _toy_groups()
    ts = build_template_set(gs, [GroundTruthEvent(100_000)], 20, [G.MOBILE, G.INACTIVE, G.SHORT])
    c = 2.5
    scaled = TemplateSet(20, {g: EventTemplate(g, 20, c * t.values) for g, t in ts.per_group.items()})
    cfg = DetectorConfig(20, 50.0, rule=FusionRule(kind))
    cfg_s = DetectorConfig(20, 50.0 * c ** power, rule=FusionRule(kind))
    from pulsegate.detection import fused_scores
    a = fused_scores(gs, ts, cfg).scores
    b = fused_scores(gs, scaled, cfg).scores
    assert np.allclose(b, a * c ** power, rtol=1e-12)
    assert [d.ts_ms for d in detect_offline(gs, ts, cfg)] == [d.ts_ms for d in detect_offline(gs, scaled, cfg_s)]


# streaming


def _bins(gs):
    keys = list(gs)
    n = len(gs[keys[0]])
    ends = gs[keys[0]].bin_end_times()
    return [(int(ends[i]), {g: gs[g].counts[i] for g in keys}) for i in range(n)]


@pytest.mark.parametrize("rule", ["mean", "max", "product", "delay", "single:mobile"])
def test_streaming_equals_offline_toy(rule):
    from pulsegate.core import GroundTruthEvent
    gs = _toy_groups(3)
    ts = build_template_set(gs, [GroundTruthEvent(100_000)], 20, [G.MOBILE, G.INACTIVE, G.SHORT])
    cfg = DetectorConfig(20, 20.0, refractory_s=60, rule=FusionRule.parse(rule))
    assert list(detect_streaming(_bins(gs), ts, cfg)) == detect_offline(gs, ts, cfg)


def test_streaming_rejects_out_of_order():
    ts = TemplateSet(2, {G.ALL: EventTemplate(G.ALL, 2, [1, 1])})
    det = StreamingDetector(ts, DetectorConfig(2, 1.0, rule=FusionRule(Rule.SINGLE, G.ALL)))
    det.push(2000, {G.ALL: 1})
    with pytest.raises(AlignmentError):
        det.push(2000, {G.ALL: 1})


def test_window_mismatch():
    ts = TemplateSet(2, {G.ALL: EventTemplate(G.ALL, 2, [1, 1])})
    with pytest.raises(ValueError):
        StreamingDetector(ts, DetectorConfig(3, 1.0, rule=FusionRule(Rule.SINGLE, G.ALL)))


# temperature baseline


def test_temperature_flat_series():
    assert temperature_detect(series(np.full(600, 3.0)), TemperatureConfig()) == []


def test_temperature_step():
    x = series(np.r_[np.ones(200), np.full(100, 10.0)])
    dets = temperature_detect(x, TemperatureConfig(10, 60, 2.0, 20.0))
    assert len(dets) == 1
    # hand walk: at the 3rd bin after the step, w=10 has cur 1*7+10*3=37, prev 10 -> +270%
    assert dets[0].ts_ms == 203_000 and dets[0].score == 37


def test_temperature_grows_window():
    # a slow ramp fails at short windows but passes once the window is long enough
    x = np.r_[np.full(120, 1.0), np.full(60, 2.5)]
    cfg = TemperatureConfig(5, 60, 1.0, 10.0)
    sc = temperature_scores(series(x), cfg)
    i = int(np.flatnonzero(~np.isnan(sc.scores))[0])
    assert not np.isnan(sc.scores[i])


def test_temperature_sweep_scores_equivalent():
    rng = np.random.default_rng(4)
    x = series(rng.poisson(2, 900) + np.r_[np.zeros(400), np.linspace(0, 20, 60), np.zeros(440)])
    base = TemperatureConfig(10, 40, 1.0, 0.0)
    sweep = temperature_sweep_scores(x, base).scores
    for v in (10, 40, 80, 150):
        flags = ~np.isnan(temperature_scores(x, TemperatureConfig(10, 40, 1.0, float(v))).scores)
        assert np.array_equal(flags, np.nan_to_num(sweep, nan=-1) >= v)


def test_streaming_temperature_equals_offline():
    rng = np.random.default_rng(8)
    x = series(rng.poisson(1.5, 3000) + np.r_[np.zeros(1000), np.full(50, 8.0), np.zeros(1950)])
    cfg = TemperatureConfig(10, 60, 1.0, 30.0, refractory_s=300)
    st_ = StreamingTemperature(cfg)
    got = [d for t, c in zip(x.bin_end_times(), x.counts) if (d := st_.push(int(t), c))]
    assert got == temperature_detect(x, cfg)
