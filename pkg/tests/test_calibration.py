import statistics
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scdetect.calibration import (
    CalibrationCorpus,
    CalibrationError,
    RunSummary,
    calibrate_thresholds,
    calibrate_window_bounds,
    calibrate_with_audit,
    read_thresholds,
    summarize_run,
    variation_coefficient,
    window_samples,
    write_thresholds,
)
from scdetect.model import EventWindowSample, Thresholds, validate_thresholds

F = Fraction


def run(run_id, l2=F(1, 2), llc=F(1, 2), wb=F(1, 2), tlb=F(1, 10)):
    return RunSummary(run_id, F(l2), F(llc), F(wb), F(tlb))


def test_summarize_skips_inconclusive_and_means_defined_ratios():
    windows = [
        EventWindowSample(100, 50, 10, 1, 10, 5, 1),
        EventWindowSample(0, 9, 9, 9, 9, 9, 1),
        EventWindowSample(100, 100, 30, 4, 0, 15, 1),
    ]
    s = summarize_run("r", windows)
    assert (s.r_l2_l1, s.r_llc_l1, s.r_wb_lines, s.r_tlb_l1) == (F(3, 4), F(1, 5), F(1, 10), F(1, 10))


def test_summarize_rejects_run_without_ratios():
    with pytest.raises(CalibrationError):
        summarize_run("r", [EventWindowSample(0, 1, 1, 1, 1, 1, 1)])


def test_phi1_midpoint():
    c = CalibrationCorpus((run("d", l2=F(9, 10)),), (run("i", tlb=F(4, 5)),), (run("b", l2=F(3, 10)),))
    assert calibrate_thresholds(c).phi1 == F(3, 5)


def test_phi4_phi5_midpoints():
    c = CalibrationCorpus(
        (run("d", tlb=F(1, 50)),), (run("i", tlb=F(4, 5)),), (run("b", tlb=F(1, 25)),)
    )
    t = calibrate_thresholds(c)
    assert (t.phi4, t.phi5) == (F(21, 50), F(3, 100))
    assert validate_thresholds(t)


def test_symmetric_corpus_hits_constraint():
    m = run("x", F(1, 3), F(1, 3), F(1, 3), F(1, 3))
    c = CalibrationCorpus((m,), (m,), (m,))
    with pytest.raises(CalibrationError, match="phi5 < phi4"):
        calibrate_thresholds(c)


@pytest.mark.parametrize("empty", ["direct_attack_runs", "indirect_attack_runs", "benign_runs"])
def test_empty_category(empty):
    fields = {"direct_attack_runs": (run("d"),), "indirect_attack_runs": (run("i", tlb=1),), "benign_runs": (run("b"),)}
    fields[empty] = ()
    with pytest.raises(CalibrationError, match=empty):
        calibrate_thresholds(CalibrationCorpus(**fields))


def test_clamps_fraction_thresholds():
    c = CalibrationCorpus((run("d", l2=3),), (run("i", tlb=2),), (run("b", l2=2),))
    assert calibrate_thresholds(c).phi1 == 1


ratio = st.fractions(min_value=0, max_value=1, max_denominator=1000)
summaries = st.builds(RunSummary, st.text("abc", min_size=1, max_size=3), ratio, ratio, ratio, ratio)


@given(st.lists(summaries, min_size=1, max_size=5), st.lists(summaries, min_size=1, max_size=5),
       st.lists(summaries, min_size=1, max_size=5))
def test_midpoint_and_order_independence(direct, indirect, benign):
    c = CalibrationCorpus(tuple(direct), tuple(indirect), tuple(benign))
    shuffled = CalibrationCorpus(tuple(reversed(direct)), tuple(reversed(indirect)), tuple(reversed(benign)))
    try:
        t, audit = calibrate_with_audit(c)
    except CalibrationError:
        with pytest.raises(CalibrationError):
            calibrate_with_audit(shuffled)
        return
    assert calibrate_with_audit(shuffled)[0] == t
    for _phi, _cat, a, b, value in audit.rows:
        assert min(a, b) <= value <= max(a, b)
        assert value == (a + b) / 2


def test_window_samples_drops_partial_tail():
    ds = [EventWindowSample(1, 0, 0, 0, 0, 0, 3 * 2**19)] * 3
    windows = window_samples(ds, 2**20)
    assert len(windows) == 4 and sum(w.l1_miss for w in windows) <= 3


def reference_cv(windows):
    worst = 0.0
    for i in range(6):
        rates = [w[i] / w.elapsed_cycles for w in windows]
        mean = statistics.fmean(rates)
        if mean > 0:
            worst = max(worst, statistics.pstdev(rates) / mean)
    return worst


@settings(max_examples=50)
@given(st.lists(st.lists(st.integers(0, 10**6), min_size=6, max_size=6), min_size=2, max_size=20))
def test_variation_coefficient_matches_reference(rows):
    windows = [EventWindowSample(*r, 2**20) for r in rows]
    assert variation_coefficient(windows) == pytest.approx(reference_cv(windows), rel=1e-9, abs=1e-12)


def test_window_bounds_default_without_probes():
    assert calibrate_window_bounds([]) == (2**20, 2**24)


def test_constant_probe_qualifies_smallest_width():
    probe = [EventWindowSample(500, 100, 10, 20, 40, 5, 2**20)] * 64
    assert calibrate_window_bounds([probe]) == (2**20, 2**24)


def test_noisy_probe_stable_only_from_2_22():
    pattern = [1000, 1000, 3000, 3000]
    probe = [EventWindowSample(pattern[i % 4], 100, 10, 20, 40, 5, 2**20) for i in range(64)]
    for width, stable in ((2**20, False), (2**21, False), (2**22, True)):
        assert (reference_cv(window_samples(probe, width)) < 0.25) is stable
    assert calibrate_window_bounds([probe]) == (2**22, 2**24)


def test_unstable_probe_falls_back_with_warning(caplog):
    probe = [EventWindowSample(1 if i < 63 else 10**9, 0, 0, 0, 0, 0, 2**20) for i in range(64)]
    assert calibrate_window_bounds([probe]) == (2**20, 2**24)
    assert "no stable observation window" in caplog.text


def test_thresholds_file_round_trip(tmp_path):
    t = Thresholds(F(1, 3), F(2, 7), F(0), F(5, 4), F(1, 10**12 + 1))
    path = tmp_path / "t.txt"
    write_thresholds(t, path)
    assert path.read_text().splitlines()[0] == "phi1=1/3"
    assert read_thresholds(path) == t


@pytest.mark.parametrize(
    "text, match",
    [
        ("phi1=1/2\nphi2=x\n", ":2:"),
        ("phi1=1/2\n", "missing phi2"),
        ("phi1=1/2\nphi2=1/2\nphi3=1/2\nphi4=1/2\nphi5=1/2\n", "phi5 < phi4"),
        ("phi1=1/0\n", ":1:"),
    ],
)
def test_read_thresholds_errors(tmp_path, text, match):
    path = tmp_path / "t.txt"
    path.write_text(text)
    with pytest.raises(ValueError, match=match):
        read_thresholds(path)
