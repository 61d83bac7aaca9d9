from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from iotdiag.thresholds import (
    FittedThreshold, ThresholdSpec, apply_batch, apply_threshold, fit_threshold, tukey_hinges,
)

NINE = [2, 4, 6, 8, 10, 12, 14, 16, 18]


def test_zscore_nine_point():
    # population variance: sum of squared deviations (2*(64+36+16+4)) over n
    std = math.sqrt(240 / 9)
    t = fit_threshold(NINE, ThresholdSpec("zscore", k=3))
    assert t.lower_cut == pytest.approx(10 - 3 * std, abs=1e-12)
    assert t.upper_cut == pytest.approx(10 + 3 * std, abs=1e-12)


def test_zscore_mean_std_example():
    s = [0.05, 0.15]  # mean 0.10, population std 0.05
    t = fit_threshold(s, ThresholdSpec("zscore", k=3))
    assert (t.lower_cut, t.upper_cut) == pytest.approx((-0.05, 0.25))


def test_iqr_nine_point():
    assert tukey_hinges(NINE) == (6.0, 14.0)
    t = fit_threshold(NINE, ThresholdSpec("iqr", mult=1.5))
    assert (t.lower_cut, t.upper_cut) == (-6.0, 26.0)


def test_percentile_nine_point():
    # 5th percentile, linear interpolation: 2 + 0.05*8*(4-2)
    t = fit_threshold(NINE, ThresholdSpec("percentile", p=95))
    assert t.lower_cut == pytest.approx(2.8, abs=1e-12)
    assert math.isinf(t.upper_cut)


def test_fixed():
    t = fit_threshold([], ThresholdSpec("fixed", cut=-0.4))
    assert t.lower_cut == -0.4 and math.isinf(t.upper_cut)
    assert apply_threshold(t, -0.41) and not apply_threshold(t, -0.4)


def test_one_sided_zscore():
    t = fit_threshold(NINE, ThresholdSpec("zscore", two_sided=False))
    assert math.isinf(t.upper_cut)
    assert not apply_threshold(t, 1e9)


def test_cuts_are_strict():
    t = fit_threshold(NINE, ThresholdSpec("iqr"))
    assert not apply_threshold(t, -6.0)
    assert not apply_threshold(t, 26.0)
    assert apply_threshold(t, -6.000001) and apply_threshold(t, 26.000001)


def test_degenerate_zscore_flags_any_deviation():
    t = fit_threshold([0.1] * 10)
    assert t.stats["degenerate"]
    assert not apply_threshold(t, 0.1)
    assert apply_threshold(t, 0.1001)


def test_too_few_scores():
    with pytest.raises(ValueError):
        fit_threshold([1.0], ThresholdSpec("zscore"))
    with pytest.raises(ValueError):
        fit_threshold([1, 2, 3], ThresholdSpec("iqr"))


def test_bad_threshold_settings():
    with pytest.raises(ValueError):
        ThresholdSpec("median")
    with pytest.raises(ValueError):
        ThresholdSpec(p=100)


def test_round_trip_dict():
    t = fit_threshold(NINE, ThresholdSpec("percentile"))
    assert FittedThreshold.from_dict(t.to_dict()) == t


def test_hinges_even_count():
    assert tukey_hinges([1, 2, 3, 4]) == (1.5, 3.5)


@given(st.lists(st.floats(-1, 1), min_size=2, max_size=40), st.floats(-100, 100))
def test_zscore_translation_equivariant(scores, shift):
    a = fit_threshold(scores)
    b = fit_threshold([x + shift for x in scores])
    assert b.lower_cut == pytest.approx(a.lower_cut + shift, abs=1e-9)
    assert b.upper_cut == pytest.approx(a.upper_cut + shift, abs=1e-9)


@given(st.lists(st.floats(-1, 1), min_size=4, max_size=40))
def test_batch_matches_scalar(scores):
    for method in ("zscore", "iqr", "percentile"):
        t = fit_threshold(scores, ThresholdSpec(method))
        probe = np.linspace(-2, 2, 17)
        assert apply_batch(t, probe).tolist() == [apply_threshold(t, s) for s in probe]
