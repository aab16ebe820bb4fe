"""Experiment harness: configuration, calibration, accuracy sweep and leakage."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .calibration import (
    CalibrationAudit,
    CalibrationCorpus,
    calibrate_window_bounds,
    calibrate_with_audit,
    summarize_run,
    window_samples,
)
from .mitigation import MachineTopology, MitigationPolicy
from .model import ScoreConfig, Thresholds, WindowConfig
from .simkernel import DEFAULT_QUANTUM, EventKind, Scenario, run_simulation
from .workloads import (
    DEFAULT_RECORD_CYCLES,
    NOISE_PRESETS,
    CorpusSpec,
    Delta,
    Trace,
    build_corpus,
    gen_attack,
    gen_benign,
    get_profile,
)

CLASSES = ("benign", "direct_attack", "indirect_attack")
SECRET_BYTES = 256
CYCLES_PER_US = 1024  # 2^20-cycle windows at 1024 windows per second
GAMMA_OFF = "inf"


class ConfigError(ValueError):
    """Bad configuration value or file; reported with exit code 2."""


class InvariantError(RuntimeError):
    """A report failed an internal consistency check; exit code 3."""


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _gammas(text: str) -> tuple[Optional[int], ...]:
    out = []
    for x in text.split(","):
        x = x.strip()
        if not x:
            continue
        out.append(None if x == GAMMA_OFF else int(x))
    return tuple(out)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fmt(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(GAMMA_OFF if v is None else str(v) for v in value)
    if value is None:
        return ""
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    """Every tunable of the harness. Keys match the flat config file."""

    seed: Optional[int] = None
    thresholds: str = "inline"  # a thresholds file path, or calibrate inline
    alpha: int = 1
    beta: int = 1
    sticky: bool = True
    gammas: tuple[int, ...] = (1, 10, 50, 100)
    w_min: int = 2**20
    w_max: int = 2**24
    n_cores: int = 4
    n_domains: int = 2
    policy: str = "none"
    quantum: int = DEFAULT_QUANTUM
    n_benign: int = 60
    n_direct: int = 20
    n_indirect: int = 20
    horizon: int = 2**31
    record_cycles: int = DEFAULT_RECORD_CYCLES
    noise: str = "i7-6700HQ"
    calib_benign: int = 4
    calib_direct: int = 2
    calib_indirect: int = 1
    calib_horizon: int = 2**26
    leak_policy: str = "te+sc"
    leak_gammas: tuple[Optional[int], ...] = (1, 10, 50, 100, None)
    leak_delays_us: tuple[int, ...] = (1, 10, 100, 1000)
    leak_k: int = 1
    leak_window: int = 2**20
    leak_attacker: str = "leak_flush_reload"
    leak_victim: str = "victim_reader"

    def __post_init__(self) -> None:
        try:
            self._check()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def _check(self) -> None:
        if not self.gammas:
            raise ValueError("gammas must not be empty")
        if any(g < 1 for g in self.gammas):
            raise ValueError("gammas must be positive")
        if not self.leak_gammas or any(g is not None and g < 1 for g in self.leak_gammas):
            raise ValueError("leak_gammas must be positive integers or inf")
        if not self.leak_delays_us or any(d <= 0 for d in self.leak_delays_us):
            raise ValueError("leak_delays_us must be positive")
        if self.leak_k < 1:
            raise ValueError("leak_k must be at least 1")
        if self.noise not in NOISE_PRESETS:
            raise ValueError(f"unknown noise preset {self.noise!r}; expected one of {sorted(NOISE_PRESETS)}")
        for name in ("n_benign", "n_direct", "n_indirect", "calib_benign", "calib_direct", "calib_indirect"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("horizon", "calib_horizon", "quantum", "record_cycles"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        # constructing these validates the remaining fields
        self.score_config(self.gammas[0])
        self.window_config()
        self.topology()
        MitigationPolicy.named(self.policy)
        MitigationPolicy.named(self.leak_policy)
        get_profile(self.leak_attacker)
        get_profile(self.leak_victim)

    _PARSERS = {
        "thresholds": str, "policy": str, "noise": str, "leak_policy": str,
        "leak_attacker": str, "leak_victim": str, "sticky": _bool,
        "gammas": _ints, "leak_delays_us": _ints, "leak_gammas": _gammas,
    }

    @classmethod
    def from_mapping(cls, values: Mapping[str, str], base: Optional["ExperimentConfig"] = None) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        parsed = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            parse = cls._PARSERS.get(key, int)
            try:
                parsed[key] = parse(raw.strip())
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from None
        return replace(base, **parsed) if base is not None else cls(**parsed)

    def items(self) -> list[tuple[str, str]]:
        return [(f.name, _fmt(getattr(self, f.name))) for f in fields(self)]

    def score_config(self, gamma: Optional[int]) -> ScoreConfig:
        return ScoreConfig(self.alpha, self.beta, gamma, self.sticky)

    def window_config(self) -> WindowConfig:
        return WindowConfig(w_min=self.w_min, w_max=self.w_max)

    def topology(self) -> MachineTopology:
        return MachineTopology.uniform(self.n_cores, self.n_domains)

    def corpus_spec(self) -> CorpusSpec:
        return CorpusSpec(
            self.n_benign, self.n_direct, self.n_indirect, self.horizon, NOISE_PRESETS[self.noise], self.record_cycles
        )

    def calibration_spec(self) -> CorpusSpec:
        return CorpusSpec(
            self.calib_benign, self.calib_direct, self.calib_indirect,
            self.calib_horizon, NOISE_PRESETS[self.noise], self.record_cycles,
        )

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("a seed is required (--seed or seed= in the config file)")
        return self.seed


def parse_config_file(path: Path | str) -> dict[str, str]:
    """Read ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        out[key.strip()] = value.strip()
    return out


# -- calibration -------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationResult:
    thresholds: Thresholds
    audit: CalibrationAudit
    window_bounds: tuple[int, int]


def _deltas(trace: Trace) -> list:
    return [r.sample for r in trace.records if isinstance(r, Delta)]


def calibrate(cfg: ExperimentConfig, seed: int) -> CalibrationResult:
    """Generate the calibration corpus and derive thresholds and window bounds.

    Run summaries use fixed windows of ``w_min`` cycles. Window bounds are
    probed on the benign calibration runs.
    """
    traces = build_corpus(cfg.calibration_spec(), seed, calibration=True)
    groups: dict[str, list] = {c: [] for c in CLASSES}
    for t in traces:
        groups[t.label].append(summarize_run(t.name, window_samples(_deltas(t), cfg.w_min)))
    corpus = CalibrationCorpus(
        tuple(groups["direct_attack"]), tuple(groups["indirect_attack"]), tuple(groups["benign"])
    )
    thresholds, audit = calibrate_with_audit(corpus)
    probes = [_deltas(t) for t in traces if t.label == "benign"]
    return CalibrationResult(thresholds, audit, calibrate_window_bounds(probes))


# -- accuracy ----------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionMatrix:
    """Suspected / not-suspected trace counts per class, for each gamma."""

    counts: tuple[tuple[int, str, bool, int], ...]  # (gamma, class, suspected, count)
    class_sizes: tuple[tuple[str, int], ...]

    def count(self, gamma: int, cls: str, suspected: bool) -> int:
        for g, c, s, n in self.counts:
            if (g, c, s) == (gamma, cls, suspected):
                return n
        raise KeyError((gamma, cls, suspected))

    @property
    def gammas(self) -> list[int]:
        return sorted({g for g, *_ in self.counts})

    def false_positives(self, gamma: int) -> int:
        return self.count(gamma, "benign", True)

    def false_negatives(self, gamma: int) -> int:
        return self.count(gamma, "direct_attack", False) + self.count(gamma, "indirect_attack", False)

    def check(self) -> None:
        sizes = dict(self.class_sizes)
        for g in self.gammas:
            for c in CLASSES:
                if self.count(g, c, True) + self.count(g, c, False) != sizes[c]:
                    raise InvariantError(f"gamma {g}: {c} row does not sum to the class size")


def evaluate_confusion(
    cfg: ExperimentConfig, thresholds: Thresholds, traces: Sequence[Trace]
) -> ConfusionMatrix:
    """Simulate the corpus once per gamma and tally trace outcomes."""
    sizes = Counter(t.label for t in traces)
    rows = []
    for gamma in sorted(set(cfg.gammas)):
        tally: Counter = Counter()
        if traces:
            report = run_simulation(scenario_for(cfg, thresholds, traces, gamma, cfg.policy))
            tally = Counter((o.label, o.suspected) for o in report.outcomes)
        for c in CLASSES:
            for suspected in (True, False):
                rows.append((gamma, c, suspected, tally[(c, suspected)]))
    matrix = ConfusionMatrix(tuple(rows), tuple((c, sizes[c]) for c in CLASSES))
    matrix.check()
    return matrix


def scenario_for(
    cfg: ExperimentConfig,
    thresholds: Thresholds,
    traces: Sequence[Trace],
    gamma: Optional[int],
    policy: str,
    window: Optional[WindowConfig] = None,
    horizon: Optional[int] = None,
) -> Scenario:
    return Scenario(
        traces=tuple(traces),
        thresholds=thresholds,
        score=cfg.score_config(gamma),
        window=window or cfg.window_config(),
        topology=cfg.topology(),
        policy=MitigationPolicy.named(policy),
        seed=cfg.seed or 0,
        quantum=cfg.quantum,
        horizon=horizon,
    )


# -- leakage -----------------------------------------------------------------


@dataclass(frozen=True)
class LeakageRow:
    gamma: Optional[int]
    delay_us: int
    extracted: int
    windows: int  # conclusive attacker windows up to detection
    detected_at: Optional[int]

    @property
    def percent(self) -> float:
        return 100.0 * self.extracted / SECRET_BYTES


def extracted_bytes(window_ends: Iterable[int], read_interval: int, k: int) -> int:
    """Bytes an attacker pulls out when each window ending at ``t`` takes up to
    ``k`` of the bytes the victim has read by ``t`` and not yet leaked."""
    got = 0
    for t in window_ends:
        available = min(SECRET_BYTES, t // read_interval) - got
        got += max(0, min(k, available))
        if got == SECRET_BYTES:
            break
    return got


def leakage_horizon(cfg: ExperimentConfig, delay_us: int) -> int:
    """Trace length that lets an undetected attacker read the whole secret."""
    step = max(delay_us * CYCLES_PER_US, cfg.leak_window)
    need = 2 * (SECRET_BYTES + 1) * step
    return -(-need // cfg.record_cycles) * cfg.record_cycles


def leakage_traces(cfg: ExperimentConfig, seed: int, delay_us: int) -> tuple[Trace, Trace]:
    horizon = leakage_horizon(cfg, delay_us)
    noise = NOISE_PRESETS[cfg.noise]
    attacker = gen_attack(get_profile(cfg.leak_attacker), seed, horizon, noise, "attacker", cfg.record_cycles)
    victim = gen_benign(get_profile(cfg.leak_victim), seed + 1, horizon, noise, "victim", cfg.record_cycles)
    return attacker, victim


def leakage_run(
    cfg: ExperimentConfig, thresholds: Thresholds, traces: tuple[Trace, Trace], gamma: Optional[int], delay_us: int
) -> LeakageRow:
    window = WindowConfig(w_min=cfg.leak_window, w_max=cfg.leak_window)
    report = run_simulation(scenario_for(cfg, thresholds, traces, gamma, cfg.leak_policy, window=window))
    attacker = report.process(0, 1).pid
    ends = []
    detected = None
    # The verdict that raises suspicion precedes its SuspicionRaised event, so
    # the detecting window still leaks.
    for e in report.events_for(attacker, (EventKind.VERDICT_COMPUTED, EventKind.SUSPICION_RAISED)):
        if e.kind is EventKind.SUSPICION_RAISED:
            detected = e.timestamp
            break
        if e.get("verdict") != "inconclusive":
            ends.append(e.timestamp)
    got = extracted_bytes(ends, delay_us * CYCLES_PER_US, cfg.leak_k)
    return LeakageRow(gamma, delay_us, got, len(ends), detected)


def run_leakage(cfg: ExperimentConfig, thresholds: Thresholds, seed: int) -> list[LeakageRow]:
    rows = []
    for delay in sorted(set(cfg.leak_delays_us)):
        traces = leakage_traces(cfg, seed, delay)
        for gamma in _gamma_order(cfg.leak_gammas):
            row = leakage_run(cfg, thresholds, traces, gamma, delay)
            if not 0 <= row.extracted <= SECRET_BYTES:
                raise InvariantError(f"extracted {row.extracted} bytes is out of range")
            rows.append(row)
    return rows


def _gamma_order(gammas: Iterable[Optional[int]]) -> list[Optional[int]]:
    unique = set(gammas)
    finite = sorted(g for g in unique if g is not None)
    return finite + ([None] if None in unique else [])


def gamma_label(gamma: Optional[int]) -> str:
    return GAMMA_OFF if gamma is None else str(gamma)
