"""Clock-cycle observation windows with adaptive width."""
from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Optional, Sequence

from .model import ZERO_SAMPLE, EventWindowSample, ProcessMonitorState, WindowConfig, accumulate

EPSILON_RATE = Fraction(1, 10**9)


@dataclass(frozen=True)
class WindowBoundary:
    sample: EventWindowSample
    width_used: int
    offset: int  # cycles into the delta at which the window closed


def fluctuation(prev: Sequence[Fraction], cur: Sequence[Fraction]) -> Fraction:
    """Largest relative change of a per-cycle event rate between two windows."""
    worst = Fraction(0)
    for p, c in zip(prev, cur):
        change = abs(c - p) / max(p, EPSILON_RATE)
        if change > worst:
            worst = change
    return worst


def _resize(width: int, shrink: bool, grow: bool, cfg: WindowConfig) -> int:
    if shrink:
        width //= 2
    elif grow:
        width *= 2
    return min(max(width, cfg.w_min), cfg.w_max)


def adapt(
    width: int,
    prev_rates: Optional[Sequence[Fraction]],
    cur_rates: Sequence[Fraction],
    cfg: WindowConfig,
) -> int:
    """Next window width given the rates of the last two closed windows."""
    if prev_rates is None:
        return _resize(width, False, False, cfg)
    f = fluctuation(prev_rates, cur_rates)
    return _resize(width, f > cfg.shrink_trigger, f < cfg.grow_trigger, cfg)


def _adapt_samples(width: int, prev: Optional[EventWindowSample], cur: EventWindowSample, cfg: WindowConfig) -> int:
    # Same rule as adapt(), with every rate comparison cross-multiplied so
    # the hot path never builds a Fraction.
    if prev is None:
        return _resize(width, False, False, cfg)
    pw, cw = prev.elapsed_cycles, cur.elapsed_cycles
    scale = EPSILON_RATE.denominator
    # relative change of event i is num_i / den_i
    changes = [(abs(cn * pw - pn * cw) * scale, cw * max(pn * scale, pw)) for pn, cn in zip(prev[:6], cur[:6])]
    sn, sd = cfg.shrink_trigger.numerator, cfg.shrink_trigger.denominator
    gn, gd = cfg.grow_trigger.numerator, cfg.grow_trigger.denominator
    shrink = any(n * sd > sn * d for n, d in changes)
    grow = all(n * gd < gn * d for n, d in changes)
    return _resize(width, shrink, grow, cfg)


def _share(count: int, upto: int, total: int) -> int:
    # round-half-up of count * upto / total
    return (2 * count * upto + total) // (2 * total)


def advance(
    state: ProcessMonitorState, delta: EventWindowSample, cfg: WindowConfig
) -> tuple[ProcessMonitorState, list[WindowBoundary]]:
    """Feed ``delta`` into the partial window and close every window it completes.

    Events of a delta that straddles a boundary are split pro-rata by cycles.
    The width is re-adapted after each closed window, so later boundaries
    inside the same delta use the new width.
    """
    total = delta.elapsed_cycles
    if total <= 0:
        raise ValueError("delta must carry a positive cycle count")
    elapsed = state.accum.elapsed_cycles
    width = state.window_width
    if elapsed + total < width:
        return replace(state, accum=accumulate(state.accum, delta)), []

    counts = delta[:6]
    assigned = (0, 0, 0, 0, 0, 0)
    accum = state.accum
    prev = state.prev_window
    observed = state.windows_observed
    pos = 0
    boundaries: list[WindowBoundary] = []
    while total - pos >= width - elapsed:
        upto = pos + width - elapsed
        cum = tuple(_share(c, upto, total) for c in counts)
        piece = [b - a for a, b in zip(assigned, cum)]
        sample = EventWindowSample(*(x + y for x, y in zip(accum[:6], piece)), width)
        boundaries.append(WindowBoundary(sample, width, upto))
        width = _adapt_samples(width, prev, sample, cfg)
        prev = sample
        observed += 1
        accum = ZERO_SAMPLE
        elapsed = 0
        pos = upto
        assigned = cum
    rest = EventWindowSample(*(c - a for c, a in zip(counts, assigned)), total - pos)
    if rest.elapsed_cycles:
        accum = rest
    elif any(rest):
        raise AssertionError("events left over with no cycles")
    new_state = replace(
        state,
        window_width=width,
        accum=accum,
        prev_window=prev,
        windows_observed=observed,
        early_evaluated=False,
    )
    return new_state, boundaries
