"""Mitigation policies for suspected processes and their cycle-cost ledger."""
from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

from .model import ProcessMonitorState

TRANSIENT_PATCHES = frozenset(
    {"kpti", "mds", "spectre_v1_v2_l1tf", "ssb", "kvm_nx_huge_pages", "tsx_async_abort"}
)


class ActionKind(enum.Enum):
    LLC_FLUSH = "LlcFlush"
    AFFINITY_MIGRATE = "AffinityMigrate"
    ENABLE_PATCHES = "EnablePatches"
    IPI_BROADCAST = "IpiBroadcast"
    MODE_SWITCH = "ModeSwitch"


@dataclass(frozen=True)
class MitigationAction:
    kind: ActionKind
    cost: int
    target_core: Optional[int] = None
    patches: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.cost < 0:
            raise ValueError("action cost must be non-negative")
        if self.kind is ActionKind.ENABLE_PATCHES and not self.patches:
            raise ValueError("EnablePatches needs a non-empty patch set")
        if self.kind is ActionKind.AFFINITY_MIGRATE and self.target_core is None:
            raise ValueError("AffinityMigrate needs a target core")


@dataclass(frozen=True)
class MitigationPolicy:
    """Which mitigation families are on, and what each action costs in cycles.

    ``te`` covers transient-execution patches (per-process KPTI and friends,
    activated by an IPI broadcast); ``sc`` covers cache side-channel actions
    (LLC flush at schedule-in, affinity migration).
    """

    te: bool = False
    sc: bool = False
    patches: frozenset[str] = TRANSIENT_PATCHES
    flush_cost: int = 500_000
    mode_switch_cost: int = 1_000
    migration_cost: int = 100_000
    ipi_cost_per_core: int = 10_000

    @classmethod
    def named(cls, name: str, **costs: int) -> "MitigationPolicy":
        flags = {"none": (False, False), "te": (True, False), "sc": (False, True), "te+sc": (True, True)}
        if name not in flags:
            raise ValueError(f"unknown policy {name!r}; expected one of {sorted(flags)}")
        te, sc = flags[name]
        return cls(te=te, sc=sc, **costs)

    @property
    def name(self) -> str:
        return {(False, False): "none", (True, False): "te", (False, True): "sc", (True, True): "te+sc"}[
            (self.te, self.sc)
        ]


@dataclass(frozen=True)
class MachineTopology:
    n_cores: int
    cache_domains: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        if self.n_cores < 1:
            raise ValueError("need at least one core")
        cores = sorted(c for d in self.cache_domains for c in d)
        if cores != list(range(self.n_cores)) or any(not d for d in self.cache_domains):
            raise ValueError("cache domains must partition the cores")

    @classmethod
    def uniform(cls, n_cores: int, n_domains: int = 1) -> "MachineTopology":
        if n_domains < 1 or n_cores % n_domains:
            raise ValueError("n_cores must be a multiple of n_domains")
        per = n_cores // n_domains
        return cls(n_cores, tuple(tuple(range(i * per, (i + 1) * per)) for i in range(n_domains)))

    def domain_of(self, core: int) -> int:
        for i, d in enumerate(self.cache_domains):
            if core in d:
                return i
        raise ValueError(f"core {core} not in topology")


def on_schedule_in(p: ProcessMonitorState, policy: MitigationPolicy) -> list[MitigationAction]:
    if p.suspected and policy.sc:
        return [MitigationAction(ActionKind.LLC_FLUSH, policy.flush_cost)]
    return []


def migration_target(core: int, topology: MachineTopology) -> Optional[int]:
    """Lowest-id core outside ``core``'s cache domain, if any."""
    home = topology.domain_of(core)
    foreign = [c for i, d in enumerate(topology.cache_domains) if i != home for c in d]
    return min(foreign) if foreign else None


def on_suspicion_raised(
    p: ProcessMonitorState, core: int, topology: MachineTopology, policy: MitigationPolicy
) -> list[MitigationAction]:
    actions: list[MitigationAction] = []
    if policy.te:
        actions.append(MitigationAction(ActionKind.ENABLE_PATCHES, 0, patches=policy.patches))
        actions.append(
            MitigationAction(ActionKind.IPI_BROADCAST, policy.ipi_cost_per_core * (topology.n_cores - 1))
        )
    if policy.sc:
        target = migration_target(core, topology)
        if target is not None:
            actions.append(MitigationAction(ActionKind.AFFINITY_MIGRATE, policy.migration_cost, target_core=target))
    return actions


def mode_switch_cost(p: ProcessMonitorState, policy: MitigationPolicy, patches_active: bool) -> int:
    if p.suspected and patches_active and policy.te:
        return policy.mode_switch_cost
    return 0


_CATEGORY = {
    ActionKind.LLC_FLUSH: "flush",
    ActionKind.AFFINITY_MIGRATE: "migration",
    ActionKind.ENABLE_PATCHES: "patch",
    ActionKind.IPI_BROADCAST: "ipi",
    ActionKind.MODE_SWITCH: "patch",
}
CATEGORIES = ("flush", "migration", "patch", "ipi")


@dataclass
class OverheadLedger:
    per_process: dict[int, dict[str, int]] = field(default_factory=lambda: defaultdict(lambda: dict.fromkeys(CATEGORIES, 0)))

    def charge(self, pid: int, action: MitigationAction) -> None:
        self.per_process[pid][_CATEGORY[action.kind]] += action.cost

    def totals(self) -> dict[str, int]:
        out = dict.fromkeys(CATEGORIES, 0)
        for row in self.per_process.values():
            for k, v in row.items():
                out[k] += v
        return out

    @property
    def total(self) -> int:
        return sum(self.totals().values())

    def is_zero(self) -> bool:
        return self.total == 0

    def rows(self) -> list[tuple[int, str, int]]:
        out = []
        for pid in sorted(self.per_process):
            for cat in CATEGORIES:
                out.append((pid, cat, self.per_process[pid][cat]))
        return out
