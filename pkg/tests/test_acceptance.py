"""Acceptance criteria, one test each, tagged with ``criterion`` markers.

The terminal summary prints one PASS/FAIL line per criterion.
"""
import math
import random
import time
from fractions import Fraction

import gmpy2
import numpy as np
import pytest
from gmpy2 import mpq

from scdetect.calibration import CalibrationCorpus, calibrate_with_audit, summarize_run
from scdetect.experiments import (
    SECRET_BYTES,
    ExperimentConfig,
    calibrate,
    evaluate_confusion,
    run_leakage,
)
from scdetect.metrics import Verdict, evaluate_predicates
from scdetect.mitigation import MachineTopology, MitigationPolicy
from scdetect.model import EventWindowSample, ProcessMonitorState, ScoreConfig, Thresholds, WindowConfig
from scdetect.scoring import ScoreEventKind, update_score
from scdetect.simkernel import EventKind, Scenario, run_simulation
from scdetect.window import advance
from scdetect.workloads import (
    EVAL_BENIGN,
    EVAL_DIRECT,
    EVAL_INDIRECT,
    NOISE_PRESETS,
    NoiseModel,
    Delta,
    Exit,
    Fork,
    Trace,
    build_corpus,
    gen_attack,
    gen_benign,
    get_profile,
    read_trace,
    write_trace,
)


# -- 1 -----------------------------------------------------------------------


def oracle_predicates(s, phi):
    """Predicates by exact rational division with gmpy2; ``phi`` holds mpq thresholds."""
    l1, l2, llc, wb, lines, tlb = s[:6]
    if l1 == 0:
        return (False,) * 7 + (True,)
    p1 = mpq(l2, l1) > phi[0]
    p2 = mpq(llc, l1) > phi[1]
    r_tlb = mpq(tlb, l1)
    p4 = r_tlb > phi[3]
    p5 = r_tlb < phi[4]
    if lines == 0:
        # P3 is undefined; the window only stands if S does not need it
        if p1 and p2 and p5 and not p4:
            return (False,) * 7 + (True,)
        p3 = False
    else:
        p3 = mpq(wb, lines) < phi[2]
    s1 = p1 and p2 and p3 and p5
    return (p1, p2, p3, p4, p5, s1, s1 or p4, False)


def random_thresholds(rng):
    d = [int(x) for x in rng.integers(1, 64, 5)]
    phi4 = Fraction(int(rng.integers(1, 128)), d[3])
    phi5 = phi4 * Fraction(int(rng.integers(0, d[4])), d[4])
    return Thresholds(
        Fraction(int(rng.integers(0, d[0] + 1)), d[0]),
        Fraction(int(rng.integers(0, d[1] + 1)), d[1]),
        Fraction(int(rng.integers(0, d[2] + 1)), d[2]),
        phi4,
        phi5,
    )


@pytest.mark.criterion(1, "predicate evaluation agrees with a rational-division oracle")
def test_predicate_oracle_equivalence():
    rng = np.random.default_rng(20240601)
    start = time.perf_counter()
    pool = [random_thresholds(rng) for _ in range(1000)]
    exact = [tuple(mpq(f.numerator, f.denominator) for f in t.as_tuple()) for t in pool]
    n = 10**6
    # small counts make exact ties common; large ones exercise big products
    small = rng.integers(0, 16, size=(n // 2, 6))
    large = rng.integers(0, 2**62, size=(n - n // 2, 6), dtype=np.int64)
    rows = small.tolist() + large.tolist()
    picks = rng.integers(0, len(pool), n).tolist()

    mismatches = 0
    for counts, i in zip(rows, picks):
        s = EventWindowSample(*counts, 1)
        # PredicateVector is a named tuple in (p1..p5, s1, s, inconclusive) order
        if evaluate_predicates(s, pool[i]) != oracle_predicates(s, exact[i]):
            mismatches += 1
    elapsed = time.perf_counter() - start
    assert mismatches == 0
    assert elapsed < 10, f"{elapsed:.1f}s"

    # ratios exactly equal to a threshold never satisfy a strict predicate
    t = Thresholds.of(Fraction(1, 2), Fraction(1, 4), Fraction(1, 3), Fraction(1, 5), Fraction(1, 10))
    equal = evaluate_predicates(EventWindowSample(20, 10, 5, 3, 9, 4, 1), t)
    assert not (equal.p1 or equal.p2 or equal.p3 or equal.p4)
    assert not evaluate_predicates(EventWindowSample(10, 9, 9, 0, 9, 1, 1), t).p5
    assert not evaluate_predicates(EventWindowSample(10, 5, 9, 0, 9, 1, 1), t).s1
    assert evaluate_predicates(EventWindowSample(0, 5, 5, 5, 5, 5, 1), t).inconclusive


# -- 2 -----------------------------------------------------------------------


@pytest.mark.criterion(2, "suspicion is raised after exactly ceil(gamma/alpha) suspicious windows")
def test_scoring_latency_law():
    for gamma in range(1, 101):
        for alpha in range(1, 6):
            for beta in range(1, alpha + 1):
                cfg = ScoreConfig(alpha, beta, gamma)
                state = ProcessMonitorState.fresh(1, WindowConfig())
                raised_at = None
                for window in range(1, gamma + 2):
                    state, event = update_score(state, Verdict.SUSPICIOUS, cfg)
                    if event.kind is ScoreEventKind.SUSPICION_RAISED:
                        raised_at = window
                        break
                assert raised_at == -(-gamma // alpha), (gamma, alpha, beta)
    # gamma = 1: suspected after a single violation
    state, event = update_score(ProcessMonitorState.fresh(1, WindowConfig()), Verdict.SUSPICIOUS, ScoreConfig(1, 1, 1))
    assert event.kind is ScoreEventKind.SUSPICION_RAISED and state.suspected


# -- 3 -----------------------------------------------------------------------


def synthetic_run(rng, run_id, ratios):
    """Windows with exact prescribed ratios; returns the samples and the per-ratio run means."""
    samples = []
    for _ in range(int(rng.integers(1, 6))):
        l1 = int(rng.integers(1, 1000)) * 1000
        lines = int(rng.integers(1, 1000)) * 1000
        jitter = [Fraction(int(rng.integers(90, 111)), 100) for _ in ratios]
        r = [base * j for base, j in zip(ratios, jitter)]
        samples.append((r, l1, lines))
    windows = []
    means = [Fraction(0)] * 4
    for r, l1, lines in samples:
        # scale so every count is an integer and the ratio is exact
        den = math.lcm(*(x.denominator for x in r))
        l1, lines = l1 * den, lines * den
        windows.append(EventWindowSample(l1, int(r[0] * l1), int(r[1] * l1), int(r[2] * lines), lines, int(r[3] * l1), 2**20))
        means = [m + x for m, x in zip(means, r)]
    return windows, [m / len(samples) for m in means]


@pytest.mark.criterion(3, "every threshold is the exact midpoint of attack and benign means")
def test_calibration_midpoint():
    rng = np.random.default_rng(3)
    profiles = {
        "direct": (Fraction(4, 5), Fraction(3, 5), Fraction(1, 10), Fraction(1, 100)),
        "indirect": (Fraction(1, 5), Fraction(1, 10), Fraction(1, 2), Fraction(2, 3)),
        "benign": (Fraction(1, 5), Fraction(1, 20), Fraction(3, 5), Fraction(1, 20)),
    }
    for trial in range(20):
        runs = {}
        means = {}
        for cat, ratios in profiles.items():
            summaries, run_means = [], []
            for i in range(int(rng.integers(1, 5))):
                windows, m = synthetic_run(rng, f"{cat}{i}", ratios)
                summary = summarize_run(f"{cat}{i}", windows)
                assert [summary.r_l2_l1, summary.r_llc_l1, summary.r_wb_lines, summary.r_tlb_l1] == m
                summaries.append(summary)
                run_means.append(m)
            runs[cat] = summaries
            means[cat] = [sum(col, Fraction(0)) / len(run_means) for col in zip(*run_means)]
        corpus = CalibrationCorpus(tuple(runs["direct"]), tuple(runs["indirect"]), tuple(runs["benign"]))
        t, audit = calibrate_with_audit(corpus)
        a, b, i = means["direct"], means["benign"], means["indirect"]
        assert t.phi1 == (a[0] + b[0]) / 2
        assert t.phi2 == (a[1] + b[1]) / 2
        assert t.phi3 == (a[2] + b[2]) / 2
        assert t.phi4 == (i[3] + b[3]) / 2
        assert t.phi5 == (a[3] + b[3]) / 2
        shuffled = CalibrationCorpus(*(tuple(reversed(getattr(corpus, f))) for f in
                                       ("direct_attack_runs", "indirect_attack_runs", "benign_runs")))
        assert calibrate_with_audit(shuffled) == (t, audit)

    cfg = ExperimentConfig(seed=0)
    assert calibrate(cfg, 0) == calibrate(cfg, 0)


# -- 4 -----------------------------------------------------------------------


@pytest.mark.criterion(4, "confusion analogue: no false negatives, false positives fall to zero")
def test_confusion_analogue():
    start = time.perf_counter()
    cfg = ExperimentConfig(seed=0)
    assert (cfg.n_benign, cfg.n_direct, cfg.n_indirect, cfg.gammas) == (60, 20, 20, (1, 10, 50, 100))
    thresholds = calibrate(cfg, 0).thresholds
    traces = build_corpus(cfg.corpus_spec(), 0)
    matrix = evaluate_confusion(cfg, thresholds, traces)
    elapsed = time.perf_counter() - start
    fp = [matrix.false_positives(g) for g in cfg.gammas]
    fn = [matrix.false_negatives(g) for g in cfg.gammas]
    print(f"FP={fp} FN={fn} in {elapsed:.1f}s")
    assert fn == [0, 0, 0, 0]
    assert fp == sorted(fp, reverse=True)
    assert fp[-1] == 0
    assert elapsed < 60, f"{elapsed:.1f}s"


# -- 5 -----------------------------------------------------------------------


@pytest.mark.criterion(5, "leaked bytes grow with gamma and reach the whole secret when off")
def test_leakage_analogue():
    cfg = ExperimentConfig(seed=0)
    thresholds = calibrate(cfg, 0).thresholds
    rows = run_leakage(cfg, thresholds, 0)
    for delay in cfg.leak_delays_us:
        by_gamma = {r.gamma: r.extracted for r in rows if r.delay_us == delay}
        finite = [by_gamma[g] for g in sorted(g for g in by_gamma if g is not None)]
        assert finite == sorted(finite), (delay, by_gamma)
        assert by_gamma[1] < by_gamma[100], (delay, by_gamma)
        assert by_gamma[None] == SECRET_BYTES
    assert all(0 <= r.extracted <= SECRET_BYTES for r in rows)


# -- 6 -----------------------------------------------------------------------

PHI = Thresholds.of(0.5, 0.4, 0.2, 0.5, 0.05)
ATTACK = EventWindowSample(10000, 8000, 6000, 500, 5000, 100, 2**20)
BENIGN = EventWindowSample(10000, 1000, 100, 500, 1000, 100, 2**20)


@pytest.mark.criterion(6, "a suspected parent forks a child that is suspected at birth")
def test_fork_propagation():
    records = (
        *[Delta(1, ATTACK)] * 3, Fork(1, 2), Exit(2),
        Fork(1, 3), *[Delta(3, BENIGN)] * 4, Exit(3),
        *[Delta(1, BENIGN)] * 2, Exit(1),
    )
    sc = Scenario((Trace("p", "direct_attack", records),), PHI, ScoreConfig(1, 1, 2),
                  WindowConfig(w_min=2**20, w_max=2**20))
    report = run_simulation(sc)
    parent = report.process(0, 1)
    assert parent.suspected_at is not None
    forks = [e for e in report.events if e.kind is EventKind.FORK]
    assert [e.get("inherited") for e in forks] == [1, 1]
    bare = report.process(0, 2)
    assert bare.suspected and bare.inherited and bare.windows_observed == 0
    assert bare.suspected_at == forks[0].timestamp
    busy = report.process(0, 3)
    assert busy.inherited and busy.suspected_at == forks[1].timestamp
    first = report.events_for(busy.pid, [EventKind.WINDOW_BOUNDARY])[0]
    assert busy.suspected_at < first.timestamp


# -- 7 -----------------------------------------------------------------------


def reference_windows(deltas, cfg):
    """Independent window cutter on gmpy2 rationals."""
    half = mpq(1, 2)
    eps = mpq(1, 10**9)
    shrink = mpq(cfg.shrink_trigger.numerator, cfg.shrink_trigger.denominator)
    grow = mpq(cfg.grow_trigger.numerator, cfg.grow_trigger.denominator)
    width = cfg.w_min
    prev_rates = None
    fill = 0
    pending = [0] * 6
    out = []
    for d in deltas:
        total = d.elapsed_cycles
        taken = [0] * 6
        pos = 0
        while total - pos >= width - fill:
            upto = pos + width - fill
            cum = [int(gmpy2.floor(mpq(c * upto, total) + half)) for c in d[:6]]
            counts = [p + c - t for p, c, t in zip(pending, cum, taken)]
            out.append((tuple(counts), width))
            rates = [mpq(c, width) for c in counts]
            if prev_rates is not None:
                f = max(abs(c - p) / max(p, eps) for p, c in zip(prev_rates, rates))
                if f > shrink:
                    width = max(width // 2, cfg.w_min)
                elif f < grow:
                    width = min(width * 2, cfg.w_max)
            prev_rates = rates
            taken, pending, fill, pos = cum, [0] * 6, 0, upto
        pending = [p + c - t for p, c, t in zip(pending, d[:6], taken)]
        fill += total - pos
    return out, pending, fill


@pytest.mark.criterion(7, "adaptive windows stay in bounds, step by powers of two and conserve counts")
def test_window_safety_fuzz():
    rng = random.Random(7)
    for n in range(10**5):
        w_min = 2 ** rng.randint(4, 7)
        cfg = WindowConfig(w_min=w_min, w_max=w_min * 2 ** rng.randint(0, 3))
        level = [rng.randint(0, 50) for _ in range(6)]
        deltas = []
        for _ in range(rng.randint(1, 5)):
            swing = rng.choice((1, 1, 2, 3))  # bursts drive shrinking, calm stretches growth
            cycles = rng.randint(1, 2 * cfg.w_max)
            deltas.append(EventWindowSample(*(lv * swing * cycles // 8 + rng.randint(0, 3) for lv in level), cycles))

        state = ProcessMonitorState.fresh(1, cfg)
        widths = [state.window_width]
        got = []
        for d in deltas:
            state, bounds = advance(state, d, cfg)
            got.extend((tuple(b.sample[:6]), b.width_used) for b in bounds)
            widths.extend(b.width_used for b in bounds)
            widths.append(state.window_width)
        assert all(cfg.w_min <= w <= cfg.w_max for w in widths)
        assert all(b in (a, 2 * a, a // 2) for a, b in zip(widths, widths[1:]))
        expected, residual, fill = reference_windows(deltas, cfg)
        assert got == expected, n
        assert tuple(state.accum[:6]) == tuple(residual) and state.accum.elapsed_cycles == fill
        total = [sum(d[i] for d in deltas) for i in range(6)]
        assert [sum(c[i] for c, _ in got) + state.accum[i] for i in range(6)] == total


# -- 8 -----------------------------------------------------------------------


def timeline(report, trace_index):
    """Per-thread boundary samples and regular verdicts, keyed by tid."""
    out = {}
    for p in report.processes:
        if p.trace_index != trace_index:
            continue
        seq = []
        for e in report.events_for(p.pid, [EventKind.WINDOW_BOUNDARY, EventKind.VERDICT_COMPUTED]):
            if e.kind is EventKind.WINDOW_BOUNDARY:
                seq.append(("boundary", e.get("sample"), e.get("width")))
            elif not e.get("early"):
                seq.append(("verdict", e.get("verdict"), e.get("predicates")))
        out[p.tid] = seq
    return out


@pytest.mark.criterion(8, "without mitigations each process sees the same windows as when run alone")
def test_isolation_property(calibrated):
    rng = random.Random(8)
    names = EVAL_BENIGN + EVAL_DIRECT + EVAL_INDIRECT
    for trial in range(20):
        traces = []
        for i in range(rng.randint(2, 5)):
            profile = get_profile(rng.choice(names))
            horizon = 2 ** rng.randint(25, 28)
            make = gen_attack if profile.attack_kind is not None else gen_benign
            traces.append(make(profile, rng.randrange(10**6), horizon, NOISE_PRESETS["i7-6700HQ"], name=f"t{i}"))
        score = ScoreConfig(1, 1, rng.choice((1, 3, 10)))
        cores = rng.randint(1, 4)
        topo = MachineTopology.uniform(cores)
        policy = MitigationPolicy.named("none")
        together = run_simulation(Scenario(tuple(traces), calibrated, score, topology=topo, policy=policy))
        for i, t in enumerate(traces):
            alone = run_simulation(Scenario((t,), calibrated, score, topology=topo, policy=policy))
            assert timeline(together, i) == timeline(alone, 0), (trial, i)
            assert [p.cycles_run for p in together.processes if p.trace_index == i] == [
                p.cycles_run for p in alone.processes
            ]


# -- 9 -----------------------------------------------------------------------


@pytest.mark.criterion(9, "no suspected process means an all-zero overhead ledger")
def test_zero_suspect_zero_overhead(calibrated):
    rng = random.Random(9)
    never = Thresholds.of(1, 1, 0, 10**6, 0)  # no window can satisfy S1 or P4
    for trial in range(20):
        names = rng.sample(EVAL_BENIGN + EVAL_DIRECT + EVAL_INDIRECT, rng.randint(1, 4))
        traces = []
        for i, name in enumerate(names):
            profile = get_profile(name)
            make = gen_attack if profile.attack_kind is not None else gen_benign
            traces.append(make(profile, rng.randrange(10**6), 2**26, NOISE_PRESETS["i7-6700HQ"], name=f"t{i}"))
        policy = MitigationPolicy.named(rng.choice(("te", "sc", "te+sc")))
        detector_off = rng.random() < 0.5
        sc = Scenario(
            tuple(traces),
            calibrated if detector_off else never,
            ScoreConfig(1, 1, None if detector_off else 1),
            topology=MachineTopology.uniform(*rng.choice(((1, 1), (2, 1), (2, 2), (4, 2)))),
            policy=policy,
        )
        report = run_simulation(sc)
        assert not any(p.ever_suspected for p in report.processes)
        assert report.ledger.is_zero()
        assert all(cost == 0 for _, _, cost in report.ledger.rows())
        assert not [e for e in report.events if e.kind is EventKind.MITIGATION_APPLIED]


# -- 10 ----------------------------------------------------------------------


@pytest.mark.criterion(10, "written traces read back identically")
def test_trace_round_trip(tmp_path):
    rng = random.Random(10)
    names = EVAL_BENIGN + EVAL_DIRECT + EVAL_INDIRECT
    forked = 0
    for n in range(100):
        # every fourth trace comes from the fork-heavy profile
        profile = get_profile("fork_heavy" if n % 4 == 0 else rng.choice(names))
        noise = rng.choice((NoiseModel(), NOISE_PRESETS["i7-6700HQ"]))
        make = gen_attack if profile.attack_kind is not None else gen_benign
        low = 25 if profile.name == "fork_heavy" else 22
        t = make(profile, rng.randrange(10**6), 2 ** rng.randint(low, 28), noise, name=f"r{n}")
        path = tmp_path / f"r{n}.scdtrace"
        write_trace(t, path)
        assert read_trace(path) == t
        forked += any(isinstance(r, Fork) for r in t.records)
        assert isinstance(t.records[-1], Exit)
    assert forked >= 25
