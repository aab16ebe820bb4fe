from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from scdetect.model import (
    COUNT_MAX,
    ZERO_SAMPLE,
    CountOverflowError,
    EventWindowSample,
    ProcessMonitorState,
    ScoreConfig,
    Thresholds,
    WindowConfig,
    accumulate,
    validate_thresholds,
)

counts = st.integers(min_value=0, max_value=2**40)
samples = st.builds(EventWindowSample, counts, counts, counts, counts, counts, counts, counts)
rationals = st.fractions(min_value=-2, max_value=3, max_denominator=10**6)


def test_validate_accepts_typical_thresholds():
    assert validate_thresholds(Thresholds.of(0.6, 0.4, 0.2, 0.5, 0.05))


def test_validate_rejects_equal_phi4_phi5():
    result = validate_thresholds(Thresholds.of(0.6, 0.4, 0.2, 0.5, 0.5))
    assert not result
    assert result.violation == "phi5 < phi4"


def test_validate_accepts_zero_phi1():
    assert validate_thresholds(Thresholds.of(0, 0.4, 0.2, 0.5, 0.05))


@pytest.mark.parametrize(
    "values, violation",
    [
        ((Fraction(-1, 10), 0, 0, 1, 0), "phi1 in [0, 1]"),
        ((0, Fraction(11, 10), 0, 1, 0), "phi2 in [0, 1]"),
        ((0, 0, 2, 1, 0), "phi3 in [0, 1]"),
        ((0, 0, 0, -1, -2), "phi4 >= 0"),
        ((0, 0, 0, 1, -1), "phi5 >= 0"),
    ],
)
def test_validate_names_first_violation(values, violation):
    assert validate_thresholds(Thresholds.of(*values)).violation == violation


@given(rationals, rationals, rationals, rationals, rationals)
def test_validate_matches_interval_definition(p1, p2, p3, p4, p5):
    expected = all(0 <= p <= 1 for p in (p1, p2, p3)) and p4 >= 0 and p5 >= 0 and p5 < p4
    assert bool(validate_thresholds(Thresholds(p1, p2, p3, p4, p5))) == expected


def test_thresholds_of_float_is_exact_decimal():
    assert Thresholds.of(0.1, 0, 0, 1, 0).phi1 == Fraction(1, 10)


def test_accumulate_identity_and_sum():
    a = EventWindowSample(1, 2, 3, 4, 5, 6, 100)
    assert accumulate(a, ZERO_SAMPLE) == a
    b = EventWindowSample(10, 20, 30, 40, 50, 60, 900)
    assert accumulate(a, b) == (11, 22, 33, 44, 55, 66, 1000)


@given(samples, samples, samples)
def test_accumulate_commutative_associative(a, b, c):
    assert accumulate(a, b) == accumulate(b, a)
    assert accumulate(accumulate(a, b), c) == accumulate(a, accumulate(b, c))


def test_accumulate_reports_overflow():
    big = EventWindowSample(COUNT_MAX, 0, 0, 0, 0, 0, 1)
    with pytest.raises(CountOverflowError):
        accumulate(big, EventWindowSample(1, 0, 0, 0, 0, 0, 1))


def test_checked_rejects_bad_counts():
    with pytest.raises(ValueError):
        EventWindowSample.checked(-1, 0, 0, 0, 0, 0, 1)
    with pytest.raises(CountOverflowError):
        EventWindowSample.checked(COUNT_MAX + 1, 0, 0, 0, 0, 0, 1)
    with pytest.raises(TypeError):
        EventWindowSample.checked(1.5, 0, 0, 0, 0, 0, 1)


def test_rates_are_exact():
    s = EventWindowSample(3, 0, 0, 0, 0, 0, 9)
    assert s.rates()[0] == Fraction(1, 3)
    with pytest.raises(ValueError):
        ZERO_SAMPLE.rates()


def test_score_config_warns_when_alpha_below_beta():
    with pytest.warns(UserWarning):
        ScoreConfig(alpha=1, beta=2)


@pytest.mark.parametrize("kw", [{"alpha": 0}, {"beta": 0}, {"gamma": 0}])
def test_score_config_rejects_non_positive(kw):
    with pytest.raises(ValueError):
        ScoreConfig(**kw)


@pytest.mark.parametrize(
    "kw",
    [
        {"w_min": 3 * 2**19},
        {"w_min": 2**22, "w_max": 2**21},
        {"grow_trigger": Fraction(1, 2), "shrink_trigger": Fraction(1, 2)},
        {"early_eval_fraction": 0},
    ],
)
def test_window_config_validation(kw):
    with pytest.raises(ValueError):
        WindowConfig(**kw)


def test_fresh_state_starts_at_w_min():
    state = ProcessMonitorState.fresh(7, WindowConfig())
    assert (state.window_width, state.window_elapsed, state.score, state.suspected) == (2**20, 0, 0, False)
    assert state.prev_window_rates is None
