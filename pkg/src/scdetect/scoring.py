"""Per-process suspicion score automaton and fork inheritance."""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace

from .metrics import Verdict
from .model import ZERO_SAMPLE, ProcessMonitorState, ScoreConfig


class ScoreEventKind(enum.Enum):
    SCORE_CHANGED = "ScoreChanged"
    SUSPICION_RAISED = "SuspicionRaised"
    NO_CHANGE = "NoChange"


@dataclass(frozen=True)
class ScoreEvent:
    kind: ScoreEventKind
    new_score: int


def update_score(
    state: ProcessMonitorState, verdict: Verdict, cfg: ScoreConfig
) -> tuple[ProcessMonitorState, ScoreEvent]:
    """Apply one window verdict.

    Suspicious windows add ``alpha`` (capped at ``gamma``); benign and
    inconclusive ones subtract ``beta`` (floored at zero).
    """
    gamma = cfg.gamma
    if verdict is Verdict.SUSPICIOUS:
        score = state.score + cfg.alpha
        if gamma is not None and score > gamma:
            score = gamma
    else:
        score = max(state.score - cfg.beta, 0)

    suspected = state.suspected
    if gamma is not None and score == gamma and not suspected:
        new = replace(state, score=score, suspected=True)
        return new, ScoreEvent(ScoreEventKind.SUSPICION_RAISED, score)
    if suspected and not cfg.sticky and score == 0:
        suspected = False
    if score == state.score and suspected == state.suspected:
        return state, ScoreEvent(ScoreEventKind.NO_CHANGE, score)
    return replace(state, score=score, suspected=suspected), ScoreEvent(
        ScoreEventKind.SCORE_CHANGED, score
    )


def on_fork(parent: ProcessMonitorState, child_pid: int) -> ProcessMonitorState:
    """Child copies score and flag; its window starts empty at the parent's width."""
    return ProcessMonitorState(
        pid=child_pid,
        window_width=parent.window_width,
        score=parent.score,
        suspected=parent.suspected,
        accum=ZERO_SAMPLE,
    )
