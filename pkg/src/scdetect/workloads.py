"""Synthetic benign and attack traces, noise injection, and the ``scdtrace v1`` format.

A trace is a flat list of per-thread records. Workloads advance in fixed
"stress iterations" of ``ITERATION_CYCLES``; each iteration runs either the
current base phase, a burst ("spike") phase, or the attack routine. Records
carry the summed expected counts of ``record_cycles // ITERATION_CYCLES``
consecutive iterations, with optional multiplicative noise per record.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .model import EVENT_NAMES, EventWindowSample

ITERATION_CYCLES = 2**16
DEFAULT_RECORD_CYCLES = 2**21
TRACE_MAGIC = "scdtrace"
TRACE_VERSION = "v1"

LABELS = ("benign", "direct_attack", "indirect_attack")
DIRECT_FLAVORS = ("flush_reload", "prime_probe", "evict_time", "flush_flush", "prime_abort")
INDIRECT_FLAVORS = ("xlate",)


class TraceFormatError(ValueError):
    """Malformed or unsupported trace file."""


# -- records -----------------------------------------------------------------


class Delta(NamedTuple):
    tid: int
    sample: EventWindowSample


class Fork(NamedTuple):
    parent: int
    child: int


class Exit(NamedTuple):
    tid: int


Record = Union[Delta, Fork, Exit]


@dataclass(frozen=True)
class Trace:
    name: str
    label: str
    records: tuple[Record, ...] = ()

    def __post_init__(self) -> None:
        if self.label not in LABELS:
            raise ValueError(f"unknown trace label {self.label!r}")

    def tids(self) -> list[int]:
        seen: dict[int, None] = {}
        for r in self.records:
            if isinstance(r, Fork):
                seen.setdefault(r.parent)
                seen.setdefault(r.child)
            else:
                seen.setdefault(r.tid)
        return list(seen)

    def streams(self) -> dict[int, list[Record]]:
        """Per-thread record lists; a FORK belongs to the parent's stream."""
        out: dict[int, list[Record]] = {}
        for r in self.records:
            owner = r.parent if isinstance(r, Fork) else r.tid
            out.setdefault(owner, []).append(r)
        return out

    def validate(self) -> None:
        """Check positive cycle deltas and fork/exit nesting."""
        alive: set[int] = set()
        born: set[int] = set()
        exited: set[int] = set()
        for i, r in enumerate(self.records):
            if isinstance(r, Fork):
                if r.parent in exited or r.child in born or r.child in alive:
                    raise TraceFormatError(f"record {i}: bad fork {r}")
                alive.add(r.parent)
                alive.add(r.child)
                born.add(r.child)
                continue
            if r.tid in exited:
                raise TraceFormatError(f"record {i}: thread {r.tid} used after exit")
            if isinstance(r, Exit):
                exited.add(r.tid)
                alive.discard(r.tid)
            else:
                if r.sample.elapsed_cycles <= 0:
                    raise TraceFormatError(f"record {i}: non-positive cycle delta")
                alive.add(r.tid)
                born.add(r.tid)


# -- profiles ----------------------------------------------------------------


def per_iteration(*counts: int) -> tuple[Fraction, ...]:
    """Per-cycle rates from counts expected in one stress iteration."""
    if len(counts) != 6:
        raise ValueError("need six event counts")
    return tuple(Fraction(c, ITERATION_CYCLES) for c in counts)


@dataclass(frozen=True)
class Phase:
    duration: int
    rates: tuple[Fraction, ...]


@dataclass(frozen=True)
class Spike:
    """Bursts of atypical activity: start probability per iteration, fixed length."""

    probability: float
    length: int
    rates: tuple[Fraction, ...]


@dataclass(frozen=True)
class AttackKind:
    category: str  # "direct" or "indirect"
    flavor: str

    def __post_init__(self) -> None:
        flavors = DIRECT_FLAVORS if self.category == "direct" else INDIRECT_FLAVORS
        if self.category not in ("direct", "indirect") or self.flavor not in flavors:
            raise ValueError(f"unknown attack kind {self.category}/{self.flavor}")

    @property
    def label(self) -> str:
        return f"{self.category}_attack"


@dataclass(frozen=True)
class ForkSpec:
    interval: int
    child_profile: str
    child_lifetime: int


@dataclass(frozen=True)
class WorkloadProfile:
    name: str
    phases: tuple[Phase, ...]
    attack_kind: Optional[AttackKind] = None
    signature: Optional[tuple[Fraction, ...]] = None
    activation_probability: float = 0.0
    initial_delay: tuple[int, int] = (0, 0)
    fork_spec: Optional[ForkSpec] = None
    spike: Optional[Spike] = None

    def __post_init__(self) -> None:
        if not self.phases:
            raise ValueError("a profile needs at least one phase")
        rate_sets = [p.rates for p in self.phases]
        if self.signature is not None:
            rate_sets.append(self.signature)
        if self.spike is not None:
            rate_sets.append(self.spike.rates)
        for rates in rate_sets:
            if len(rates) != 6 or any(r < 0 for r in rates):
                raise ValueError(f"{self.name}: rates must be six non-negative values")
        for p in self.phases:
            if p.duration <= 0 or p.duration % ITERATION_CYCLES:
                raise ValueError(f"{self.name}: phase durations must be positive multiples of {ITERATION_CYCLES}")
        if not 0 <= self.activation_probability <= 1:
            raise ValueError("activation_probability must be in [0, 1]")
        if (self.attack_kind is None) != (self.signature is None):
            raise ValueError("attack profiles need both attack_kind and signature")
        lo, hi = self.initial_delay
        if not 0 <= lo <= hi:
            raise ValueError("initial_delay must be an ordered non-negative range")

    @property
    def label(self) -> str:
        return self.attack_kind.label if self.attack_kind else "benign"


# Expected counts per iteration: l1, l2, llc, l2 write-back, l2 lines-in, l2 TLB miss.
_R = per_iteration

SIGNATURES: dict[str, tuple[Fraction, ...]] = {
    "flush_reload": _R(32768, 30147, 27525, 328, 32768, 164),
    "prime_probe": _R(28672, 24371, 21504, 1434, 28672, 287),
    "evict_time": _R(24576, 20890, 18432, 983, 24576, 246),
    "flush_flush": _R(32768, 29491, 26214, 328, 32768, 164),
    "prime_abort": _R(28672, 24371, 22938, 860, 28672, 230),
    "xlate_time": _R(32768, 16384, 3277, 8192, 16384, 29491),
    "xlate_probe": _R(32768, 16384, 3277, 8192, 16384, 32768),
    "xlate_abort": _R(32768, 16384, 3277, 8192, 16384, 36045),
    # calibration-only attack builds
    "calib_flush_reload": _R(32768, 28836, 25559, 655, 32768, 262),
    "calib_prime_probe": _R(28672, 23798, 20070, 1147, 28672, 344),
    "calib_xlate": _R(32768, 15073, 2949, 7864, 15729, 27853),
}

_STREAM_SPIKE = _R(32768, 30147, 26214, 164, 32768, 98)
_ML_SPIKE = _R(24576, 22118, 18432, 246, 24576, 74)

_LONG = 2**23
_MID = 2**22


def _steady(name: str, *counts: int, **kw) -> WorkloadProfile:
    return WorkloadProfile(name, (Phase(_MID, _R(*counts)),), **kw)


_BENIGN = [
    _steady("steady", 1024, 256, 32, 200, 400, 48),
    WorkloadProfile(
        "memory_intensive",
        (Phase(_MID, _R(2048, 1024, 410, 820, 1638, 96)), Phase(_MID, _R(1536, 615, 154, 700, 1200, 72))),
        spike=Spike(0.004, 8, _STREAM_SPIKE),
    ),
    WorkloadProfile(
        "data_processing",
        (Phase(_LONG, _R(768, 154, 23, 150, 307, 38)), Phase(_LONG, _R(4096, 2458, 820, 2048, 4096, 205))),
        spike=Spike(0.0003, 192, _ML_SPIKE),
    ),
    WorkloadProfile(
        "fork_heavy",
        (Phase(_MID, _R(1024, 300, 40, 220, 440, 50)),),
        spike=Spike(0.0005, 8, _STREAM_SPIKE),
        fork_spec=ForkSpec(2**24, "fork_child", 2**22),
    ),
    WorkloadProfile(
        "fork_child",
        (Phase(_MID, _R(2048, 1024, 410, 820, 1638, 96)),),
        spike=Spike(0.01, 8, _STREAM_SPIKE),
    ),
    # calibration benignware, disjoint from the evaluation corpus
    _steady("calib_browser", 1200, 360, 60, 250, 500, 66),
    _steady("calib_video", 2000, 700, 160, 900, 1800, 90),
    _steady("calib_pdf", 800, 200, 24, 180, 400, 40),
    _steady("calib_editor", 600, 150, 12, 120, 240, 36),
]

_HOSTS = {
    "stress_cpu": (Phase(_MID, _R(512, 100, 10, 100, 200, 20)),),
    "stress_cache": (Phase(_MID, _R(1024, 256, 32, 200, 400, 48)),),
}

EVAL_DELAY = (2**24, 2**27)


def _attack(name: str, category: str, flavor: str, signature: str, host: str, p: float, delay) -> WorkloadProfile:
    return WorkloadProfile(
        name,
        _HOSTS[host],
        attack_kind=AttackKind(category, flavor),
        signature=SIGNATURES[signature],
        activation_probability=p,
        initial_delay=delay,
    )


_ATTACKS = []
for _i, _flavor in enumerate(DIRECT_FLAVORS):
    _ATTACKS.append(
        _attack(f"attack_{_flavor}", "direct", _flavor, _flavor, ("stress_cpu", "stress_cache")[_i % 2], 0.1, EVAL_DELAY)
    )
for _i, _sig in enumerate(("xlate_time", "xlate_probe", "xlate_abort")):
    _ATTACKS.append(
        _attack(f"attack_{_sig}", "indirect", "xlate", _sig, ("stress_cpu", "stress_cache")[_i % 2], 0.1, EVAL_DELAY)
    )
_ATTACKS += [
    _attack("calib_flush_reload", "direct", "flush_reload", "calib_flush_reload", "stress_cpu", 1.0, (0, 0)),
    _attack("calib_prime_probe", "direct", "prime_probe", "calib_prime_probe", "stress_cpu", 1.0, (0, 0)),
    _attack("calib_xlate", "indirect", "xlate", "calib_xlate", "stress_cpu", 1.0, (0, 0)),
    _attack("leak_flush_reload", "direct", "flush_reload", "flush_reload", "stress_cpu", 1.0, (0, 0)),
]
_BENIGN.append(_steady("victim_reader", 256, 40, 4, 60, 120, 10))

PRESETS: dict[str, WorkloadProfile] = {p.name: p for p in _BENIGN + _ATTACKS}

EVAL_BENIGN = ("steady", "memory_intensive", "data_processing", "fork_heavy")
EVAL_DIRECT = tuple(f"attack_{f}" for f in DIRECT_FLAVORS)
EVAL_INDIRECT = ("attack_xlate_time", "attack_xlate_probe", "attack_xlate_abort")
CALIB_BENIGN = ("calib_browser", "calib_video", "calib_pdf", "calib_editor")
CALIB_DIRECT = ("calib_flush_reload", "calib_prime_probe")
CALIB_INDIRECT = ("calib_xlate",)


def get_profile(name: str) -> WorkloadProfile:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown workload profile {name!r}") from None


# -- noise -------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    """Per-event coefficient of variation applied multiplicatively."""

    l1_miss: float = 0.0
    l2_miss: float = 0.0
    llc_miss: float = 0.0
    l2_write_back: float = 0.0
    l2_lines_in: float = 0.0
    tlb_miss_l2: float = 0.0

    def __post_init__(self) -> None:
        if any(c < 0 for c in self.as_tuple()):
            raise ValueError("variation coefficients must be non-negative")

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, n) for n in EVENT_NAMES)

    @classmethod
    def from_table(cls, l1: float, l3: float, l2_lines: float, tlb: float) -> "NoiseModel":
        # L2 miss and write-back have no measured coefficient; they share the L2 lines-in one
        return cls(l1, l2_lines, l3, l2_lines, l2_lines, tlb)


NOISE_PRESETS = {
    "none": NoiseModel(),
    "i7-6700HQ": NoiseModel.from_table(0.020, 0.064, 0.079, 0.0),
    "i7-7600U": NoiseModel.from_table(0.029, 0.039, 0.031, 0.057),
    "i5-8250U": NoiseModel.from_table(0.016, 0.036, 0.047, 0.019),
    "i7-9750H": NoiseModel.from_table(0.022, 0.040, 0.029, 0.024),
    "i7-10750H": NoiseModel.from_table(0.018, 0.077, 0.055, 0.030),
}
DEFAULT_NOISE = NOISE_PRESETS["i7-6700HQ"]


def _noise_factors(rng: np.random.Generator, cv: Sequence[float], n: int) -> np.ndarray:
    """Lognormal multipliers with mean 1 and the given coefficients of variation."""
    cv = np.asarray(cv, dtype=float)
    sigma = np.sqrt(np.log1p(cv**2))
    mu = -0.5 * sigma**2
    return np.exp(mu + sigma * rng.standard_normal((n, len(cv))))


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5).astype(np.int64)


def apply_noise(trace: Trace, coefficients: NoiseModel | Sequence[float], seed: int) -> Trace:
    """Multiply each event count by an independent mean-one lognormal draw."""
    cv = coefficients.as_tuple() if isinstance(coefficients, NoiseModel) else tuple(coefficients)
    if len(cv) != 6 or any(c < 0 for c in cv):
        raise ValueError("need six non-negative variation coefficients")
    if not any(cv):
        return trace
    idx = [i for i, r in enumerate(trace.records) if isinstance(r, Delta)]
    if not idx:
        return trace
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    counts = np.array([trace.records[i].sample[:6] for i in idx], dtype=float)
    noisy = _round_half_up(np.maximum(counts * _noise_factors(rng, cv, len(idx)), 0.0))
    records = list(trace.records)
    for row, i in zip(noisy.tolist(), idx):
        r = records[i]
        records[i] = Delta(r.tid, EventWindowSample(*row, r.sample.elapsed_cycles))
    return replace(trace, records=tuple(records))


# -- generation --------------------------------------------------------------


def _counts(rates: Sequence[Fraction]) -> list[int]:
    return [int(r * ITERATION_CYCLES + Fraction(1, 2)) for r in rates]


def _plan(profile: WorkloadProfile, rng: np.random.Generator, n_iter: int, delay_iters: int) -> np.ndarray:
    """Phase index per iteration: base phases first, then spike, then attack."""
    n_phases = len(profile.phases)
    lengths = [p.duration // ITERATION_CYCLES for p in profile.phases]
    cycle = np.repeat(np.arange(n_phases), lengths)
    kinds = cycle[np.arange(n_iter) % len(cycle)]
    spike_draw = rng.random(n_iter)
    attack_draw = rng.random(n_iter)
    if profile.spike is not None and profile.spike.probability > 0:
        starts = (spike_draw < profile.spike.probability).astype(int)
        active = np.convolve(starts, np.ones(profile.spike.length, dtype=int))[:n_iter] > 0
        kinds = np.where(active, n_phases, kinds)
    if profile.attack_kind is not None and profile.activation_probability > 0:
        on = (np.arange(n_iter) >= delay_iters) & (attack_draw < profile.activation_probability)
        kinds = np.where(on, n_phases + 1, kinds)
    return kinds


def _table(profile: WorkloadProfile) -> np.ndarray:
    rows = [_counts(p.rates) for p in profile.phases]
    rows.append(_counts(profile.spike.rates) if profile.spike else [0] * 6)
    rows.append(_counts(profile.signature) if profile.signature else [0] * 6)
    return np.array(rows, dtype=np.int64)


def iteration_plan(profile: WorkloadProfile, seed: int, horizon: int) -> np.ndarray:
    """Phase index of every stress iteration of the main thread.

    Indices below ``len(profile.phases)`` are base phases; the next one is the
    spike phase and the one after that the attack routine.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed]).spawn(3)[0])
    return _draw_plan(profile, rng, horizon)


def _draw_plan(profile: WorkloadProfile, rng: np.random.Generator, horizon: int) -> np.ndarray:
    n_iter = horizon // ITERATION_CYCLES
    lo, hi = profile.initial_delay
    delay = int(rng.integers(lo, hi + 1)) if hi > lo else lo
    return _plan(profile, rng, n_iter, -(-delay // ITERATION_CYCLES))


def _thread_counts(
    profile: WorkloadProfile, rng: np.random.Generator, horizon: int, per_record: int
) -> np.ndarray:
    """Expected counts per record: iteration counts summed in groups of ``per_record``."""
    kinds = _draw_plan(profile, rng, horizon)
    counts = _table(profile)[kinds]
    n_rec = len(counts) // per_record
    return counts[: n_rec * per_record].reshape(n_rec, per_record, 6).sum(axis=1)


def _records(tid: int, counts: np.ndarray, cycles: int) -> list[Delta]:
    return [Delta(tid, EventWindowSample(*row, cycles)) for row in counts.tolist()]


def _generate(
    profile: WorkloadProfile,
    seed: int,
    horizon: int,
    noise: Optional[NoiseModel],
    name: str,
    record_cycles: int,
) -> Trace:
    if record_cycles <= 0 or record_cycles % ITERATION_CYCLES:
        raise ValueError(f"record_cycles must be a positive multiple of {ITERATION_CYCLES}")
    if horizon < record_cycles:
        raise ValueError(f"horizon must cover at least one record ({record_cycles} cycles)")
    per_record = record_cycles // ITERATION_CYCLES
    main_seq, fork_seq, noise_seq = np.random.SeedSequence([seed]).spawn(3)
    noise_rng = np.random.default_rng(noise_seq)
    cv = noise.as_tuple() if noise is not None and any(noise.as_tuple()) else None

    def thread(prof: WorkloadProfile, tid: int, rng: np.random.Generator, length: int) -> list[Delta]:
        counts = _thread_counts(prof, rng, length, per_record)
        if cv is not None:
            noisy = counts * _noise_factors(noise_rng, cv, len(counts))
            counts = _round_half_up(np.maximum(noisy, 0.0))
        return _records(tid, counts, record_cycles)

    parent = thread(profile, 1, np.random.default_rng(main_seq), horizon)
    spec = profile.fork_spec
    if spec is None:
        records: list[Record] = [*parent, Exit(1)]
        return Trace(name, profile.label, tuple(records))

    child_profile = get_profile(spec.child_profile)
    every = max(spec.interval // record_cycles, 1)
    lifetime = max(min(spec.child_lifetime, horizon), record_cycles)
    child_seqs = iter(fork_seq.spawn(len(parent) // every + 1))
    records = []
    next_tid = 2
    for i, rec in enumerate(parent):
        records.append(rec)
        if (i + 1) % every == 0 and i + 1 < len(parent):
            tid, next_tid = next_tid, next_tid + 1
            records.append(Fork(1, tid))
            records.extend(thread(child_profile, tid, np.random.default_rng(next(child_seqs)), lifetime))
            records.append(Exit(tid))
    records.append(Exit(1))
    return Trace(name, profile.label, tuple(records))


def gen_benign(
    profile: WorkloadProfile,
    seed: int,
    horizon: int,
    noise: Optional[NoiseModel] = None,
    name: Optional[str] = None,
    record_cycles: int = DEFAULT_RECORD_CYCLES,
) -> Trace:
    if profile.attack_kind is not None:
        raise ValueError(f"{profile.name} is an attack profile")
    return _generate(profile, seed, horizon, noise, name or profile.name, record_cycles)


def gen_attack(
    profile: WorkloadProfile,
    seed: int,
    horizon: int,
    noise: Optional[NoiseModel] = None,
    name: Optional[str] = None,
    record_cycles: int = DEFAULT_RECORD_CYCLES,
) -> Trace:
    """Attack trace: host phases until the initial delay, then each stress
    iteration runs the attack routine with ``activation_probability``."""
    if profile.attack_kind is None:
        raise ValueError(f"{profile.name} has no attack kind")
    return _generate(profile, seed, horizon, noise, name or profile.name, record_cycles)


def generate(
    profile: WorkloadProfile,
    seed: int,
    horizon: int,
    noise: Optional[NoiseModel] = None,
    name: Optional[str] = None,
    record_cycles: int = DEFAULT_RECORD_CYCLES,
) -> Trace:
    gen = gen_attack if profile.attack_kind else gen_benign
    return gen(profile, seed, horizon, noise, name, record_cycles)


@dataclass(frozen=True)
class CorpusSpec:
    n_benign: int = 60
    n_direct: int = 20
    n_indirect: int = 20
    horizon: int = 2**31
    noise: NoiseModel = field(default=DEFAULT_NOISE)
    record_cycles: int = DEFAULT_RECORD_CYCLES


def build_corpus(spec: CorpusSpec, seed: int, calibration: bool = False) -> list[Trace]:
    """Labeled traces, cycling through the preset lists of each class.

    Calibration corpora draw only from the ``calib_`` presets, evaluation
    corpora never do.
    """
    if calibration:
        pools = (CALIB_BENIGN, CALIB_DIRECT, CALIB_INDIRECT)
    else:
        pools = (EVAL_BENIGN, EVAL_DIRECT, EVAL_INDIRECT)
    traces: list[Trace] = []
    k = 0
    for pool, n, tag in zip(pools, (spec.n_benign, spec.n_direct, spec.n_indirect), ("benign", "direct", "indirect")):
        for i in range(n):
            profile = get_profile(pool[i % len(pool)])
            trace_seed = int(np.random.SeedSequence([seed, k]).generate_state(1)[0])
            name = f"{tag}-{i:03d}-{profile.name}"
            traces.append(generate(profile, trace_seed, spec.horizon, spec.noise, name, spec.record_cycles))
            k += 1
    return traces


# -- file format -------------------------------------------------------------


def write_trace(t: Trace, path: Path | str) -> None:
    lines = [f"{TRACE_MAGIC} {TRACE_VERSION}", f"#name={t.name}", f"#label={t.label}"]
    for r in t.records:
        if isinstance(r, Delta):
            s = r.sample
            lines.append(f"{r.tid},{s.elapsed_cycles},{s[0]},{s[1]},{s[2]},{s[3]},{s[4]},{s[5]}")
        elif isinstance(r, Fork):
            lines.append(f"FORK,{r.parent},{r.child}")
        else:
            lines.append(f"EXIT,{r.tid}")
    Path(path).write_text("\n".join(lines) + "\n")


def _ints(fields: list[str], where: str) -> list[int]:
    try:
        values = [int(f) for f in fields]
    except ValueError:
        raise TraceFormatError(f"{where}: non-integer field") from None
    if any(v < 0 for v in values):
        raise TraceFormatError(f"{where}: negative field")
    return values


def read_trace(path: Path | str) -> Trace:
    text = Path(path).read_text()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    elif lines:
        raise TraceFormatError(f"{path}:{len(lines)}: truncated record {lines[-1]!r}")
    if not lines:
        raise TraceFormatError(f"{path}:1: missing header")
    head = lines[0].split()
    if len(head) != 2 or head[0] != TRACE_MAGIC:
        raise TraceFormatError(f"{path}:1: not an {TRACE_MAGIC} file")
    if head[1] != TRACE_VERSION:
        raise TraceFormatError(f"{path}:1: unsupported {TRACE_MAGIC} version {head[1]}")
    meta = {"name": Path(path).stem, "label": "benign"}
    records: list[Record] = []
    for lineno, line in enumerate(lines[1:], 2):
        where = f"{path}:{lineno}"
        if line.startswith("#"):
            key, sep, value = line[1:].partition("=")
            if not sep:
                raise TraceFormatError(f"{where}: malformed metadata {line!r}")
            meta[key] = value
            continue
        fields = line.split(",")
        if fields[0] == "FORK":
            if len(fields) != 3:
                raise TraceFormatError(f"{where}: malformed FORK record {line!r}")
            records.append(Fork(*_ints(fields[1:], where)))
        elif fields[0] == "EXIT":
            if len(fields) != 2:
                raise TraceFormatError(f"{where}: malformed EXIT record {line!r}")
            records.append(Exit(*_ints(fields[1:], where)))
        else:
            if len(fields) != 8:
                raise TraceFormatError(f"{where}: expected 8 fields, got {len(fields)} in {line!r}")
            tid, cycles, *events = _ints(fields, where)
            if cycles <= 0:
                raise TraceFormatError(f"{where}: cycle delta must be positive")
            try:
                records.append(Delta(tid, EventWindowSample.checked(*events, cycles)))
            except (ValueError, OverflowError) as exc:
                raise TraceFormatError(f"{where}: {exc}") from None
    try:
        trace = Trace(meta["name"], meta["label"], tuple(records))
        trace.validate()
    except ValueError as exc:
        raise TraceFormatError(f"{path}: {exc}") from None
    return trace
