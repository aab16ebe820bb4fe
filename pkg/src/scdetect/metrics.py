"""Ratio metrics and the five detection predicates over one window sample.

All comparisons are strict and done by integer cross-multiplication:
``x / y > n / d`` becomes ``x * d > n * y`` (``y, d > 0``).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .model import INCONCLUSIVE, EventWindowSample, PredicateVector, Thresholds


class Verdict(enum.Enum):
    SUSPICIOUS = "suspicious"
    BENIGN = "benign"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class MetricRatios:
    """Exact ratios; ``None`` marks a ratio whose denominator is zero."""

    r_l2_l1: Optional[Fraction]
    r_llc_l1: Optional[Fraction]
    r_wb_lines: Optional[Fraction]
    r_tlb_l1: Optional[Fraction]

    @property
    def defined(self) -> tuple[bool, bool, bool, bool]:
        return tuple(r is not None for r in self.as_tuple())

    def as_tuple(self) -> tuple[Optional[Fraction], ...]:
        return (self.r_l2_l1, self.r_llc_l1, self.r_wb_lines, self.r_tlb_l1)


def compute_ratios(s: EventWindowSample) -> MetricRatios:
    l1 = s.l1_miss
    lines = s.l2_lines_in
    return MetricRatios(
        r_l2_l1=Fraction(s.l2_miss, l1) if l1 else None,
        r_llc_l1=Fraction(s.llc_miss, l1) if l1 else None,
        r_wb_lines=Fraction(s.l2_write_back, lines) if lines else None,
        r_tlb_l1=Fraction(s.tlb_miss_l2, l1) if l1 else None,
    )


def evaluate_predicates(s: EventWindowSample, t: Thresholds) -> PredicateVector:
    """Evaluate P1..P5, S1 and S on ``s``.

    A zero L1-miss count makes every predicate undecidable, so the window is
    inconclusive. A zero L2 lines-in count leaves only P3 undecidable; the
    window is still conclusive whenever S does not depend on P3.
    """
    l1 = s[0]
    if l1 == 0:
        return INCONCLUSIVE
    l2, llc, wb, lines, tlb = s[1], s[2], s[3], s[4], s[5]
    (n1, d1), (n2, d2), (n3, d3), (n4, d4), (n5, d5) = t.pairs

    p1 = l2 * d1 > n1 * l1
    p2 = llc * d2 > n2 * l1
    p4 = tlb * d4 > n4 * l1
    p5 = tlb * d5 < n5 * l1
    if lines:
        p3 = wb * d3 < n3 * lines
    else:
        if p1 and p2 and p5 and not p4:
            return INCONCLUSIVE
        p3 = False
    s1 = p1 and p2 and p3 and p5
    return PredicateVector(p1, p2, p3, p4, p5, s1, s1 or p4, False)


def verdict_of(pv: PredicateVector) -> Verdict:
    if pv.inconclusive:
        return Verdict.INCONCLUSIVE
    return Verdict.SUSPICIOUS if pv.s else Verdict.BENIGN
