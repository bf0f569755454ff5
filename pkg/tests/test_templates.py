import numpy as np
import pytest
from hypothesis import given, strategies as st

from pulsegate.core import BinnedSeries, EventTemplate, GroundTruthEvent, GroupKey
from pulsegate.templates import (Normalization, TemplateError, TemplateSet, build_template,
                                 build_template_set, normalize_template)

SMOOTH = np.ones(9) / 9


def test_single_event_template():
    s = BinnedSeries(0, 1000, [5, 0, 1, 3, 9])
    t = build_template(s, [GroundTruthEvent(1000)], 3)
    assert t.values.tolist() == [0, 1, 3]


def test_two_event_mean():
    s = BinnedSeries(0, 1000, [0, 2, 4, 2, 2, 2])
    t = build_template(s, [GroundTruthEvent(0), GroundTruthEvent(3000)], 3)
    assert t.values.tolist() == [1, 2, 3]
    assert t.n_events == 2


def test_insufficient_data():
    s = BinnedSeries(0, 1000, [1, 2, 3])
    with pytest.raises(TemplateError, match="insufficient data"):
        build_template(s, [GroundTruthEvent(2000)], 3)
    with pytest.raises(TemplateError):
        build_template(s, [], 2)


def test_singleton_set():
    s = {GroupKey.ALL: BinnedSeries(0, 1000, [1, 1, 1])}
    ts = build_template_set(s, [GroundTruthEvent(0)], 2, [GroupKey.ALL])
    assert ts.groups == [GroupKey.ALL]


def test_set_json_round_trip(tmp_path):
    s = {g: BinnedSeries(0, 1000, np.arange(6) + i) for i, g in enumerate(GroupKey)}
    ts = build_template_set(s, [GroundTruthEvent(1000)], 4, list(GroupKey), ["g1"])
    ts.save(tmp_path / "t.json")
    back = TemplateSet.load(tmp_path / "t.json")
    assert back.to_json() == ts.to_json()


def test_mixed_windows_rejected():
    with pytest.raises(TemplateError):
        TemplateSet(3, {GroupKey.ALL: EventTemplate(GroupKey.ALL, 2, [1, 1])})


def test_normalize_raw_identity():
    t = EventTemplate(GroupKey.ALL, 2, [3, 4])
    assert normalize_template(t, "raw") is t


def test_normalize_unit_energy():
    t = normalize_template(EventTemplate(GroupKey.ALL, 2, [3, 4]), Normalization.UNIT_ENERGY)
    assert np.allclose(t.values, [0.6, 0.8])
    with pytest.raises(TemplateError):
        normalize_template(EventTemplate(GroupKey.ALL, 2, [0, 0]), "unit_energy")


@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=50).filter(lambda v: sum(v) > 1e-3))
def test_normalize_idempotent(vals):
    t = EventTemplate(GroupKey.ALL, len(vals), vals)
    once = normalize_template(t, "unit_energy")
    twice = normalize_template(once, "unit_energy")
    assert np.allclose(once.values, twice.values, rtol=1e-12, atol=1e-15)


def _smoothed_peak(v):
    return float(np.max(np.convolve(v, SMOOTH, "same")))


def test_corpus_template_peak(games):
    # the smoothed mean response (the calibration measurement) peaks near 75 s
    t = build_template_set([g.series for g in games], [g.truth for g in games], 120, [GroupKey.ALL])
    peak = int(np.argmax(np.convolve(t[GroupKey.ALL].values, SMOOTH, "same"))) + 1
    assert abs(peak - 75) <= 10


def test_corpus_group_template_ratios(games):
    def tmpl(g):
        # background removed, so peaks compare event responses only
        per_game = [build_template(x.series[g], x.truth, 120, g, subtract_baseline_s=120).values for x in games]
        return np.mean(per_game, axis=0)
    assert abs(_smoothed_peak(tmpl(GroupKey.MOBILE)) / _smoothed_peak(tmpl(GroupKey.NON_MOBILE)) - 2) <= 0.4
    assert abs(_smoothed_peak(tmpl(GroupKey.SHORT)) / _smoothed_peak(tmpl(GroupKey.LONG)) - 2) <= 0.4
