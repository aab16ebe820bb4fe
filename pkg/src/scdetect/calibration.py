"""Threshold and window-bound calibration from labeled runs."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .metrics import compute_ratios
from .model import EventWindowSample, ProcessMonitorState, Thresholds, WindowConfig, validate_thresholds
from .window import advance

log = logging.getLogger(__name__)

DEFAULT_W_MIN = 2**20
DEFAULT_W_MAX = 2**24
STABILITY_BOUND = 0.25


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class RunSummary:
    """Mean of each ratio over one run's windows where that ratio is defined."""

    run_id: str
    r_l2_l1: Fraction
    r_llc_l1: Fraction
    r_wb_lines: Fraction
    r_tlb_l1: Fraction


@dataclass(frozen=True)
class CalibrationCorpus:
    direct_attack_runs: tuple[RunSummary, ...]
    indirect_attack_runs: tuple[RunSummary, ...]
    benign_runs: tuple[RunSummary, ...]


@dataclass(frozen=True)
class CalibrationAudit:
    """Per-threshold attack mean (A), benign mean (B) and midpoint."""

    rows: tuple[tuple[str, str, Fraction, Fraction, Fraction], ...]


def summarize_run(run_id: str, samples: Iterable[EventWindowSample]) -> RunSummary:
    sums = [Fraction(0)] * 4
    counts = [0] * 4
    for s in samples:
        if s.l1_miss == 0:
            continue  # inconclusive window
        for i, r in enumerate(compute_ratios(s).as_tuple()):
            if r is not None:
                sums[i] += r
                counts[i] += 1
    if not all(counts):
        raise CalibrationError(f"run {run_id} has no window defining every ratio")
    return RunSummary(run_id, *(s / n for s, n in zip(sums, counts)))


def window_samples(deltas: Iterable[EventWindowSample], width: int) -> list[EventWindowSample]:
    """Cut a delta stream into fixed-width windows; the trailing partial window is dropped."""
    cfg = WindowConfig(w_min=width, w_max=width)
    state = ProcessMonitorState.fresh(0, cfg)
    out: list[EventWindowSample] = []
    for d in deltas:
        state, bounds = advance(state, d, cfg)
        out.extend(b.sample for b in bounds)
    return out


def _mean(values: Sequence[Fraction]) -> Fraction:
    return sum(values, Fraction(0)) / len(values)


_MAPPING = (
    ("phi1", "r_l2_l1", "direct_attack_runs"),
    ("phi2", "r_llc_l1", "direct_attack_runs"),
    ("phi3", "r_wb_lines", "direct_attack_runs"),
    ("phi4", "r_tlb_l1", "indirect_attack_runs"),
    ("phi5", "r_tlb_l1", "direct_attack_runs"),
)


def calibrate_with_audit(c: CalibrationCorpus) -> tuple[Thresholds, CalibrationAudit]:
    for category in ("direct_attack_runs", "indirect_attack_runs", "benign_runs"):
        if not getattr(c, category):
            raise CalibrationError(f"calibration category {category} is empty")

    def ordered(runs: Sequence[RunSummary]) -> list[RunSummary]:
        return sorted(runs, key=lambda r: r.run_id)

    values = {}
    rows = []
    for phi, metric, category in _MAPPING:
        a = _mean([getattr(r, metric) for r in ordered(getattr(c, category))])
        b = _mean([getattr(r, metric) for r in ordered(c.benign_runs)])
        value = (a + b) / 2
        if phi in ("phi1", "phi2", "phi3"):
            value = min(max(value, Fraction(0)), Fraction(1))
        values[phi] = value
        rows.append((phi, category, a, b, value))
    thresholds = Thresholds(**values)
    result = validate_thresholds(thresholds)
    if not result:
        raise CalibrationError(f"calibrated thresholds violate {result.violation}")
    return thresholds, CalibrationAudit(tuple(rows))


def calibrate_thresholds(c: CalibrationCorpus) -> Thresholds:
    return calibrate_with_audit(c)[0]


def variation_coefficient(samples: Sequence[EventWindowSample]) -> Optional[float]:
    """Worst per-event coefficient of variation of per-window rates.

    Returns None when fewer than two windows are available.
    """
    if len(samples) < 2:
        return None
    counts = np.array([s[:6] for s in samples], dtype=float)
    cycles = np.array([s.elapsed_cycles for s in samples], dtype=float)
    rates = counts / cycles[:, None]
    mean = rates.mean(axis=0)
    std = rates.std(axis=0)
    cv = np.divide(std, mean, out=np.zeros_like(std), where=mean > 0)
    return float(cv.max())


def calibrate_window_bounds(
    probe_runs: Sequence[Sequence[EventWindowSample]],
    candidates: Sequence[int] = tuple(2**k for k in range(20, 25)),
    bound: float = STABILITY_BOUND,
) -> tuple[int, int]:
    """Pick the smallest and largest candidate widths whose windows are stable.

    ``probe_runs`` are per-run delta streams. A width qualifies when every
    probe run yields at least two windows and each run's worst per-event
    variation coefficient stays below ``bound``.
    """
    if not probe_runs:
        return DEFAULT_W_MIN, DEFAULT_W_MAX
    stable = []
    for width in sorted(candidates):
        if width > DEFAULT_W_MAX:
            continue
        cvs = [variation_coefficient(window_samples(run, width)) for run in probe_runs]
        if all(cv is not None and cv < bound for cv in cvs):
            stable.append(width)
    if not stable:
        log.warning("no stable observation window found; using defaults")
        return DEFAULT_W_MIN, DEFAULT_W_MAX
    return stable[0], stable[-1]


_LINE = re.compile(r"^(phi[1-5])=(-?\d+)/(\d+)$")


def write_thresholds(t: Thresholds, path: Path | str) -> None:
    lines = [f"phi{i}={v.numerator}/{v.denominator}" for i, v in enumerate(t.as_tuple(), 1)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_thresholds(path: Path | str) -> Thresholds:
    """Parse a thresholds file; raises ValueError on malformed or invalid content."""
    found: dict[str, Fraction] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _LINE.match(line)
        if not m or int(m.group(3)) == 0:
            raise ValueError(f"{path}:{lineno}: malformed threshold line {raw!r}")
        found[m.group(1)] = Fraction(int(m.group(2)), int(m.group(3)))
    missing = [f"phi{i}" for i in range(1, 6) if f"phi{i}" not in found]
    if missing:
        raise ValueError(f"{path}: missing {', '.join(missing)}")
    t = Thresholds(**found)
    result = validate_thresholds(t)
    if not result:
        raise ValueError(f"{path}: thresholds violate {result.violation}")
    return t
