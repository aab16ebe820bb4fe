"""Shared domain types: window samples, thresholds, scoring and window configuration.

Counts are plain Python ints bounded to 64 bits; thresholds are exact
``Fraction`` values so that predicate evaluation never touches floating point.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Optional

COUNT_MAX = 2**64 - 1

EVENT_NAMES = (
    "l1_miss",
    "l2_miss",
    "llc_miss",
    "l2_write_back",
    "l2_lines_in",
    "tlb_miss_l2",
)


class CountOverflowError(OverflowError):
    """A count left the 64-bit unsigned range."""


class EventWindowSample(NamedTuple):
    """Six user-mode event counts plus elapsed clock cycles."""

    l1_miss: int = 0
    l2_miss: int = 0
    llc_miss: int = 0
    l2_write_back: int = 0
    l2_lines_in: int = 0
    tlb_miss_l2: int = 0
    elapsed_cycles: int = 0

    @classmethod
    def checked(cls, *values: int) -> "EventWindowSample":
        """Build a sample, rejecting negative, non-integer or oversized counts."""
        sample = cls(*values)
        for name, value in zip(cls._fields, sample):
            if isinstance(value, bool) or not isinstance(value, int):
                raise TypeError(f"{name} must be an int, got {value!r}")
            if value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")
            if value > COUNT_MAX:
                raise CountOverflowError(f"{name} exceeds 64-bit range")
        return sample

    @property
    def events(self) -> tuple[int, ...]:
        return tuple(self[:6])

    def rates(self) -> tuple[Fraction, ...]:
        """Per-cycle rate of each event."""
        if self.elapsed_cycles <= 0:
            raise ValueError("rates need elapsed_cycles > 0")
        return tuple(Fraction(c, self.elapsed_cycles) for c in self[:6])


ZERO_SAMPLE = EventWindowSample()


def accumulate(a: EventWindowSample, b: EventWindowSample) -> EventWindowSample:
    """Componentwise sum; raises CountOverflowError instead of wrapping."""
    total = EventWindowSample(*(x + y for x, y in zip(a, b)))
    if max(total) > COUNT_MAX:
        raise CountOverflowError("accumulated count exceeds 64-bit range")
    return total


@dataclass(frozen=True)
class Thresholds:
    phi1: Fraction
    phi2: Fraction
    phi3: Fraction
    phi4: Fraction
    phi5: Fraction
    # (numerator, denominator) per threshold, for cross-multiplied comparisons
    pairs: tuple[tuple[int, int], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        for name in ("phi1", "phi2", "phi3", "phi4", "phi5"):
            value = getattr(self, name)
            if not isinstance(value, Fraction):
                object.__setattr__(self, name, Fraction(value))
        object.__setattr__(self, "pairs", tuple((f.numerator, f.denominator) for f in self.as_tuple()))

    @classmethod
    def of(cls, *values: object) -> "Thresholds":
        """Build from anything ``Fraction`` accepts; decimal strings stay exact."""
        return cls(*(Fraction(str(v)) if isinstance(v, float) else Fraction(v) for v in values))

    def as_tuple(self) -> tuple[Fraction, ...]:
        return (self.phi1, self.phi2, self.phi3, self.phi4, self.phi5)


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    violation: Optional[str] = None

    def __bool__(self) -> bool:
        return self.ok


def validate_thresholds(t: Thresholds) -> ValidationResult:
    """Check the interval constraints; the violation names the first failure."""
    for name in ("phi1", "phi2", "phi3"):
        value = getattr(t, name)
        if not 0 <= value <= 1:
            return ValidationResult(False, f"{name} in [0, 1]")
    if t.phi4 < 0:
        return ValidationResult(False, "phi4 >= 0")
    if t.phi5 < 0:
        return ValidationResult(False, "phi5 >= 0")
    if not t.phi5 < t.phi4:
        return ValidationResult(False, "phi5 < phi4")
    return ValidationResult(True)


@dataclass(frozen=True)
class ScoreConfig:
    """Suspicion automaton parameters.

    ``gamma=None`` disables detection: the score is never capped and the
    process is never flagged. ``sticky=False`` clears the flag once the score
    falls back to zero.
    """

    alpha: int = 1
    beta: int = 1
    gamma: Optional[int] = 1
    sticky: bool = True

    def __post_init__(self) -> None:
        for name in ("alpha", "beta"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.gamma is not None and (not isinstance(self.gamma, int) or self.gamma < 1):
            raise ValueError("gamma must be a positive integer or None")
        if self.alpha < self.beta:
            warnings.warn(
                f"alpha={self.alpha} < beta={self.beta}: detection may be slow",
                stacklevel=2,
            )


def _is_pow2(x: int) -> bool:
    return x > 0 and x & (x - 1) == 0


@dataclass(frozen=True)
class WindowConfig:
    w_min: int = 2**20
    w_max: int = 2**24
    shrink_trigger: Fraction = Fraction(1, 2)
    grow_trigger: Fraction = Fraction(1, 10)
    early_eval_fraction: Fraction = Fraction(1, 2)

    def __post_init__(self) -> None:
        for name in ("shrink_trigger", "grow_trigger", "early_eval_fraction"):
            value = getattr(self, name)
            if not isinstance(value, Fraction):
                object.__setattr__(self, name, Fraction(str(value)) if isinstance(value, float) else Fraction(value))
        if not (_is_pow2(self.w_min) and _is_pow2(self.w_max)):
            raise ValueError("w_min and w_max must be powers of two")
        if self.w_min > self.w_max:
            raise ValueError("w_min must not exceed w_max")
        if not 0 <= self.grow_trigger < self.shrink_trigger:
            raise ValueError("need 0 <= grow_trigger < shrink_trigger")
        if not 0 < self.early_eval_fraction <= 1:
            raise ValueError("early_eval_fraction must be in (0, 1]")


@dataclass(frozen=True)
class ProcessMonitorState:
    """Per-process detector state carried across context switches.

    ``accum`` holds the partial window; its ``elapsed_cycles`` is the window
    position. ``early_evaluated`` marks that the current partial window has
    already been judged at a deschedule.
    """

    pid: int
    window_width: int
    score: int = 0
    suspected: bool = False
    accum: EventWindowSample = ZERO_SAMPLE
    prev_window: Optional[EventWindowSample] = None  # last closed window
    windows_observed: int = 0
    early_evaluated: bool = False

    @property
    def window_elapsed(self) -> int:
        return self.accum.elapsed_cycles

    @property
    def prev_window_rates(self) -> Optional[tuple[Fraction, ...]]:
        return self.prev_window.rates() if self.prev_window is not None else None

    @classmethod
    def fresh(cls, pid: int, cfg: WindowConfig) -> "ProcessMonitorState":
        return cls(pid=pid, window_width=cfg.w_min)


class PredicateVector(NamedTuple):
    p1: bool = False
    p2: bool = False
    p3: bool = False
    p4: bool = False
    p5: bool = False
    s1: bool = False
    s: bool = False
    inconclusive: bool = False

    def bits(self) -> str:
        return "".join("1" if b else "0" for b in (self.p1, self.p2, self.p3, self.p4, self.p5))


INCONCLUSIVE = PredicateVector(inconclusive=True)

