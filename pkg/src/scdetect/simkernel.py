"""Deterministic multi-core round-robin simulator driving the detector.

Each trace thread becomes a simulated process with its own monitor state.
Cores advance independently in cycle time; the loop always steps the core
with the earliest next start so that the global event order is fixed.
"""
from __future__ import annotations

import enum
import operator
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from .metrics import Verdict, evaluate_predicates, verdict_of
from .mitigation import (
    ActionKind,
    MachineTopology,
    MitigationAction,
    MitigationPolicy,
    OverheadLedger,
    mode_switch_cost,
    on_schedule_in,
    on_suspicion_raised,
)
from .model import (
    EventWindowSample,
    ProcessMonitorState,
    ScoreConfig,
    Thresholds,
    WindowConfig,
    validate_thresholds,
)
from .scoring import ScoreEventKind, on_fork, update_score
from .window import advance
from .workloads import Delta, Exit, Fork, Record, Trace

DEFAULT_QUANTUM = 2**21


class ConfigurationError(ValueError):
    pass


class EventKind(enum.Enum):
    CONTEXT_SWITCH = "ContextSwitch"
    WINDOW_BOUNDARY = "WindowBoundary"
    VERDICT_COMPUTED = "VerdictComputed"
    SUSPICION_RAISED = "SuspicionRaised"
    FORK = "Fork"
    EXIT = "Exit"
    MITIGATION_APPLIED = "MitigationApplied"


@dataclass(frozen=True)
class SimEvent:
    timestamp: int
    core: int
    kind: EventKind
    pid: int
    data: tuple[tuple[str, object], ...] = ()

    def get(self, key: str, default: object = None) -> object:
        for k, v in self.data:
            if k == key:
                return v
        return default

    def detail(self) -> str:
        return ";".join(f"{k}={v}" for k, v in self.data)


@dataclass(frozen=True)
class Detector:
    thresholds: Thresholds
    score: ScoreConfig
    window: WindowConfig

    def judge(self, state: ProcessMonitorState, sample: EventWindowSample):
        pv = evaluate_predicates(sample, self.thresholds)
        verdict = verdict_of(pv)
        state, event = update_score(state, verdict, self.score)
        return state, verdict, pv, event


def _verdict_event(ts: int, core: int, pid: int, verdict: Verdict, pv, score: int, early: bool) -> SimEvent:
    return SimEvent(
        ts, core, EventKind.VERDICT_COMPUTED, pid,
        (("verdict", verdict.value), ("predicates", pv.bits()), ("score", score), ("early", int(early))),
    )


@dataclass(frozen=True)
class SwitchResult:
    outgoing: Optional[ProcessMonitorState]
    events: tuple[SimEvent, ...]
    suspicion_raised: bool = False


def context_switch(
    core: int,
    now: int,
    outgoing: Optional[ProcessMonitorState],
    incoming: Optional[ProcessMonitorState],
    detector: Detector,
) -> SwitchResult:
    """Deschedule ``outgoing`` and hand the core to ``incoming``.

    If the outgoing partial window has run for at least the configured
    fraction of its width, it is judged early on the raw partial sample (once
    per window). Its residual window is kept intact either way, so the
    incoming thread never sees the outgoing thread's counts.
    """
    if outgoing is not None and incoming is not None and outgoing.pid == incoming.pid:
        raise ValueError("outgoing and incoming must differ")
    events = [
        SimEvent(
            now, core, EventKind.CONTEXT_SWITCH,
            incoming.pid if incoming is not None else -1,
            (("out", outgoing.pid if outgoing is not None else -1),),
        )
    ]
    raised = False
    if outgoing is not None:
        elapsed = outgoing.window_elapsed
        frac = detector.window.early_eval_fraction
        if (
            elapsed > 0
            and not outgoing.early_evaluated
            and elapsed * frac.denominator >= frac.numerator * outgoing.window_width
        ):
            state, verdict, pv, score_event = detector.judge(outgoing, outgoing.accum)
            outgoing = replace(state, early_evaluated=True)
            events.append(_verdict_event(now, core, outgoing.pid, verdict, pv, outgoing.score, True))
            if score_event.kind is ScoreEventKind.SUSPICION_RAISED:
                raised = True
                events.append(SimEvent(now, core, EventKind.SUSPICION_RAISED, outgoing.pid, (("score", outgoing.score),)))
    return SwitchResult(outgoing, tuple(events), raised)


@dataclass(frozen=True)
class Scenario:
    traces: tuple[Trace, ...]
    thresholds: Thresholds
    score: ScoreConfig = ScoreConfig()
    window: WindowConfig = WindowConfig()
    topology: MachineTopology = MachineTopology.uniform(4, 2)
    policy: MitigationPolicy = MitigationPolicy()
    seed: int = 0
    quantum: int = DEFAULT_QUANTUM
    horizon: Optional[int] = None

    def validate(self) -> None:
        result = validate_thresholds(self.thresholds)
        if not result:
            raise ConfigurationError(f"invalid thresholds: {result.violation}")
        if not self.traces or not any(t.records for t in self.traces):
            raise ConfigurationError("scenario needs at least one process")
        if self.quantum <= 0:
            raise ConfigurationError("quantum must be positive")
        if self.horizon is not None and self.horizon <= 0:
            raise ConfigurationError("horizon must be positive")
        for t in self.traces:
            try:
                t.validate()
            except ValueError as exc:
                raise ConfigurationError(f"trace {t.name}: {exc}") from None


@dataclass(frozen=True)
class ProcessSummary:
    pid: int
    trace_index: int
    trace_name: str
    tid: int
    label: str
    parent_pid: int
    suspected: bool
    ever_suspected: bool
    inherited: bool
    score: int
    windows_observed: int
    suspected_at: Optional[int]
    cycles_run: int
    final_core: int


@dataclass(frozen=True)
class TraceOutcome:
    trace_index: int
    name: str
    label: str
    suspected: bool


@dataclass(frozen=True)
class QuantumRecord:
    pid: int
    core: int
    start: int
    cycles: int
    patches_active: bool


@dataclass(frozen=True)
class SimReport:
    processes: tuple[ProcessSummary, ...]
    events: tuple[SimEvent, ...]
    ledger: OverheadLedger
    quanta: tuple[QuantumRecord, ...]
    outcomes: tuple[TraceOutcome, ...]

    def process(self, trace_index: int, tid: int) -> ProcessSummary:
        for p in self.processes:
            if p.trace_index == trace_index and p.tid == tid:
                return p
        raise KeyError((trace_index, tid))

    def events_for(self, pid: int, kinds: Iterable[EventKind] | None = None) -> list[SimEvent]:
        wanted = set(kinds) if kinds is not None else None
        return [e for e in self.events if e.pid == pid and (wanted is None or e.kind in wanted)]


@dataclass
class _Proc:
    pid: int
    trace_index: int
    tid: int
    label: str
    parent_pid: int
    stream: list[Record]
    core: int
    state: ProcessMonitorState
    ready_at: int
    pos: int = 0
    alive: bool = True
    patches_active: bool = False
    ever_suspected: bool = False
    inherited: bool = False
    suspected_at: Optional[int] = None
    cycles_run: int = 0


@dataclass
class _Core:
    cid: int
    clock: int = 0
    queue: deque = field(default_factory=deque)
    current: Optional[int] = None


class _Simulation:
    def __init__(self, sc: Scenario) -> None:
        self.sc = sc
        self.detector = Detector(sc.thresholds, sc.score, sc.window)
        self.cores = [_Core(i) for i in range(sc.topology.n_cores)]
        self.procs: dict[int, _Proc] = {}
        self.events: list[SimEvent] = []
        self.quanta: list[QuantumRecord] = []
        self.ledger = OverheadLedger()
        self.load = [0] * len(self.cores)  # live processes homed on each core
        self.streams = [t.streams() for t in sc.traces]
        for ti, trace in enumerate(sc.traces):
            children = {r.child for r in trace.records if isinstance(r, Fork)}
            for tid in self.streams[ti]:
                if tid not in children:
                    self._spawn(ti, tid, parent=None, now=0)

    # -- bookkeeping ---------------------------------------------------------

    def _least_loaded(self) -> int:
        load = self.load
        return min(range(len(load)), key=lambda c: (load[c], c))

    def _rehome(self, proc: _Proc, core: Optional[int]) -> None:
        self.load[proc.core] -= 1
        if core is not None:
            self.load[core] += 1
            proc.core = core

    def _spawn(self, ti: int, tid: int, parent: Optional[_Proc], now: int) -> _Proc:
        pid = len(self.procs) + 1
        core = self._least_loaded()
        if parent is None:
            state = ProcessMonitorState.fresh(pid, self.sc.window)
        else:
            state = on_fork(parent.state, pid)
        proc = _Proc(
            pid=pid, trace_index=ti, tid=tid, label=self.sc.traces[ti].label,
            parent_pid=parent.pid if parent else 0, stream=self.streams[ti].get(tid, []),
            core=core, state=state, ready_at=now,
        )
        if parent is not None and state.suspected:
            proc.inherited = proc.ever_suspected = True
            proc.suspected_at = now
            proc.patches_active = parent.patches_active
        self.procs[pid] = proc
        self.load[core] += 1
        self.cores[core].queue.append(pid)
        return proc

    def _emit(self, ts: int, core: int, kind: EventKind, pid: int, **data: object) -> None:
        self.events.append(SimEvent(ts, core, kind, pid, tuple(data.items())))

    def _apply(self, proc: _Proc, core: int, ts: int, action: MitigationAction) -> int:
        self.ledger.charge(proc.pid, action)
        data = {"action": action.kind.value, "cost": action.cost}
        if action.target_core is not None:
            data["target"] = action.target_core
        if action.patches:
            data["patches"] = "+".join(sorted(action.patches))
        self._emit(ts, core, EventKind.MITIGATION_APPLIED, proc.pid, **data)
        return action.cost

    def _raise(self, proc: _Proc, core: int, ts: int) -> tuple[int, Optional[int]]:
        """Run suspicion mitigations; returns (cycles spent, migration target)."""
        proc.ever_suspected = True
        if proc.suspected_at is None:
            proc.suspected_at = ts
        spent = 0
        target = None
        for action in on_suspicion_raised(proc.state, core, self.sc.topology, self.sc.policy):
            spent += self._apply(proc, core, ts, action)
            if action.kind is ActionKind.ENABLE_PATCHES:
                proc.patches_active = True
            elif action.kind is ActionKind.IPI_BROADCAST:
                spent += self._ipi(core, ts)
            elif action.kind is ActionKind.AFFINITY_MIGRATE:
                target = action.target_core
        return spent, target

    def _ipi(self, origin: int, ts: int) -> int:
        spent = 0
        for c in self.cores:
            if c.cid == origin or c.current is None:
                continue
            other = self.procs[c.current]
            if not other.alive or other.core != c.cid:
                continue
            if other.state.suspected and self.sc.policy.te:
                other.patches_active = True
            cost = mode_switch_cost(other.state, self.sc.policy, other.patches_active)
            if cost:
                spent += self._apply(other, origin, ts, MitigationAction(ActionKind.MODE_SWITCH, cost))
        return spent

    # -- detection -----------------------------------------------------------

    def _feed(self, proc: _Proc, core: int, ts0: int, acc: list[int]) -> tuple[int, Optional[int]]:
        """Advance ``proc``'s window by the pending delta that started at ``ts0``."""
        delta = EventWindowSample(*acc)
        state, bounds = advance(proc.state, delta, self.sc.window)
        proc.state = state
        spent = 0
        target = None
        for b in bounds:
            ts = ts0 + b.offset
            self._emit(ts, core, EventKind.WINDOW_BOUNDARY, proc.pid, sample=" ".join(map(str, b.sample)), width=b.width_used)
            state, verdict, pv, score_event = self.detector.judge(proc.state, b.sample)
            proc.state = state
            self.events.append(_verdict_event(ts, core, proc.pid, verdict, pv, state.score, False))
            if score_event.kind is ScoreEventKind.SUSPICION_RAISED:
                self._emit(ts, core, EventKind.SUSPICION_RAISED, proc.pid, score=state.score)
                s, t = self._raise(proc, core, ts)
                spent += s
                target = t if t is not None else target
        return spent, target

    def _switch(self, core: _Core, now: int, outgoing: Optional[_Proc], incoming: Optional[_Proc]) -> int:
        result = context_switch(
            core.cid, now,
            outgoing.state if outgoing is not None else None,
            incoming.state if incoming is not None else None,
            self.detector,
        )
        self.events.extend(result.events)
        spent = 0
        if outgoing is not None:
            outgoing.state = result.outgoing
            if result.suspicion_raised:
                s, target = self._raise(outgoing, core.cid, now)
                spent += s
                if target is not None and outgoing.core == core.cid:
                    self._migrate(outgoing, target, now + spent)
        if incoming is not None:
            for action in on_schedule_in(incoming.state, self.sc.policy):
                spent += self._apply(incoming, core.cid, now + spent, action)
        return spent

    def _migrate(self, proc: _Proc, target: int, now: int) -> None:
        old = self.cores[proc.core]
        if proc.pid in old.queue:
            old.queue.remove(proc.pid)
            self.cores[target].queue.append(proc.pid)
        self._rehome(proc, target)
        proc.ready_at = max(proc.ready_at, now)

    # -- main loop -----------------------------------------------------------

    def _next(self) -> Optional[tuple[int, _Core]]:
        best = None
        procs = self.procs
        for c in self.cores:
            if not c.queue:
                continue
            if procs[c.queue[0]].ready_at <= c.clock:
                start = c.clock
            else:
                start = max(c.clock, min(procs[pid].ready_at for pid in c.queue))
            if best is None or start < best[0]:
                best = (start, c)
        return best

    def run(self) -> SimReport:
        horizon = self.sc.horizon
        while True:
            nxt = self._next()
            if nxt is None:
                break
            start, core = nxt
            if horizon is not None and start >= horizon:
                break
            core.clock = start
            if self.procs[core.queue[0]].ready_at <= start:
                pid = core.queue.popleft()
            else:
                pid = next(p for p in core.queue if self.procs[p].ready_at <= start)
                core.queue.remove(pid)
            proc = self.procs[pid]
            if core.current != pid:
                prev = self.procs.get(core.current) if core.current is not None else None
                if prev is not None and (not prev.alive or prev.core != core.cid):
                    prev = None
                core.clock += self._switch(core, core.clock, prev, proc)
                core.current = pid
            self._run_quantum(core, proc)
        return self._report()

    def _run_quantum(self, core: _Core, proc: _Proc) -> None:
        sc = self.sc
        t0 = core.clock
        used = 0
        spent = 0
        acc: Optional[list[int]] = None
        acc_start = 0
        target: Optional[int] = None
        stream = proc.stream
        patched_at_start = proc.patches_active
        while proc.pos < len(stream) and used < sc.quantum:
            rec = stream[proc.pos]
            proc.pos += 1
            if isinstance(rec, Delta):
                if acc is None:
                    acc = list(rec.sample)
                    acc_start = used
                else:
                    acc = list(map(operator.add, acc, rec.sample))
                used += rec.sample.elapsed_cycles
                continue
            if acc is not None:
                s, t = self._feed(proc, core.cid, t0 + acc_start, acc)
                spent += s
                target = t if t is not None else target
                acc = None
            if isinstance(rec, Fork):
                child = self._spawn(proc.trace_index, rec.child, proc, t0 + used)
                self._emit(t0 + used, core.cid, EventKind.FORK, proc.pid, child=child.pid, inherited=int(child.inherited))
            elif isinstance(rec, Exit):
                break
        if acc is not None:
            s, t = self._feed(proc, core.cid, t0 + acc_start, acc)
            spent += s
            target = t if t is not None else target
        if proc.pos < len(stream) and isinstance(stream[proc.pos], Exit):
            proc.pos += 1  # exit right after the last delta, not in a quantum of its own
        self.quanta.append(QuantumRecord(proc.pid, core.cid, t0, used, patched_at_start))
        proc.cycles_run += used
        end = t0 + used + spent
        cost = mode_switch_cost(proc.state, sc.policy, proc.patches_active)
        if cost and used:
            end += self._apply(proc, core.cid, end, MitigationAction(ActionKind.MODE_SWITCH, cost))
        core.clock = end
        if proc.pos >= len(stream):
            proc.alive = False
            self._rehome(proc, None)
            core.current = None
            self._emit(end, core.cid, EventKind.EXIT, proc.pid)
            return
        proc.ready_at = end
        if target is not None:
            core.clock += self._switch(core, core.clock, proc, None)
            core.current = None
            self._rehome(proc, target)
            proc.ready_at = core.clock
            self.cores[target].queue.append(proc.pid)
        else:
            core.queue.append(proc.pid)

    def _report(self) -> SimReport:
        procs = tuple(
            ProcessSummary(
                pid=p.pid, trace_index=p.trace_index, trace_name=self.sc.traces[p.trace_index].name,
                tid=p.tid, label=p.label, parent_pid=p.parent_pid, suspected=p.state.suspected,
                ever_suspected=p.ever_suspected, inherited=p.inherited, score=p.state.score,
                windows_observed=p.state.windows_observed, suspected_at=p.suspected_at,
                cycles_run=p.cycles_run, final_core=p.core,
            )
            for p in self.procs.values()
        )
        outcomes = tuple(
            TraceOutcome(i, t.name, t.label, any(p.ever_suspected for p in procs if p.trace_index == i))
            for i, t in enumerate(self.sc.traces)
        )
        return SimReport(procs, tuple(self.events), self.ledger, tuple(self.quanta), outcomes)


def run_simulation(scenario: Scenario) -> SimReport:
    scenario.validate()
    return _Simulation(scenario).run()
