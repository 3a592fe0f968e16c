"""Centralized alignment controller: accumulates per-agent transition
histories, scores each window to a delayed reward in [-1, 1], and applies
that reward uniformly to every (state, action) entry in the window."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Protocol

from .agent import QTable, TransitionRecord

logger = logging.getLogger(__name__)

_NUMBER_RE = re.compile(r"[-+]?\d+(?:\.\d+)?")


class OrderingError(ValueError):
    """A transition arrived out of step order."""


class AgentHistory:
    """Ordered transition window for one agent; cleared after every
    delayed-reward application."""

    def __init__(self, agent_id: str, window_start_step: int = 0):
        self.agent_id = agent_id
        self.records: list[TransitionRecord] = []
        self.window_start_step = window_start_step

    def __len__(self) -> int:
        return len(self.records)

    def clear(self, next_start_step: int | None = None) -> None:
        if next_start_step is None and self.records:
            next_start_step = self.records[-1].step_index + 1
        self.records = []
        if next_start_step is not None:
            self.window_start_step = next_start_step


def accumulate(history: AgentHistory, record: TransitionRecord) -> AgentHistory:
    """Append a transition; step indices must be strictly increasing."""
    if history.records and record.step_index <= history.records[-1].step_index:
        raise OrderingError(
            f"step_index {record.step_index} not after {history.records[-1].step_index}"
        )
    history.records.append(record)
    return history


@dataclass
class DelayedReward:
    value: float
    rationale: str
    flagged: bool = False


class Evaluator(Protocol):
    name: str

    def score(self, history: AgentHistory) -> tuple[float | None, str]:
        """Return (raw value, rationale); None signals an unusable reply."""


class ScriptedEvaluator:
    """Deterministic stand-in for the expert evaluator: scores a window by
    its drop fraction, pinning 0 drops to +1 (excellent) and everything
    dropped to -1 (poor)."""

    name = "scripted"

    def score(self, history: AgentHistory) -> tuple[float, str]:
        drops = sum(rec.psi.drops_this_step for rec in history.records)
        requests = sum(rec.psi.requests_this_step for rec in history.records)
        value = 1.0 - 2.0 * (drops / max(1, requests))
        if drops == 0:
            rationale = "excellent: no dropped requests in window"
        elif requests and drops >= requests:
            rationale = "poor: every request in window dropped"
        else:
            rationale = f"{drops}/{requests} requests dropped in window"
        return value, rationale


class ConstantEvaluator:
    """Fixed-score evaluator, handy for isolating the reward channel."""

    name = "constant"

    def __init__(self, value: float = 0.0):
        self.value = value

    def score(self, history: AgentHistory) -> tuple[float, str]:
        return self.value, f"constant {self.value}"


class RemoteEvaluator:
    """Asks a completion backend to act as the expert evaluator and parses
    a real number from the reply; an unparseable reply scores 0, flagged."""

    name = "remote"

    def __init__(self, backend):
        self.backend = backend

    @staticmethod
    def render_history(history: AgentHistory) -> str:
        lines = [
            f"step={rec.step_index} obs={rec.observation.key()} action={rec.action.value} "
            f"reward={rec.immediate_reward:.3f} load={rec.psi.load_fraction:.2f} "
            f"drops={rec.psi.drops_this_step} requests={rec.psi.requests_this_step}"
            for rec in history.records
        ]
        return "\n".join(lines)

    def score(self, history: AgentHistory) -> tuple[float | None, str]:
        from .advisor import AdvisorPrompt  # local import to avoid a cycle

        text = (
            f"You are an expert evaluator of cellular network agents. "
            f"Judge agent '{history.agent_id}' on network efficiency, fairness, and "
            f"adaptability over this window, then answer with one real number in [-1, 1] "
            f"where +1 is excellent and -1 is poor.\n{self.render_history(history)}"
        )
        prompt = AdvisorPrompt(text=text, target=None, neighbor=None)
        reply = self.backend.complete(prompt)
        if reply is None:
            return None, "no reply from evaluator backend"
        match = _NUMBER_RE.search(reply)
        if match is None:
            return None, f"unparseable evaluator reply: {reply[:80]!r}"
        return float(match.group(0)), reply[:200]


def evaluate(history: AgentHistory, evaluator: Evaluator) -> DelayedReward:
    """Score a non-empty history window to a delayed reward in [-1, 1].

    Out-of-range evaluator outputs are clamped and flagged; an unusable
    reply scores 0 and is flagged.
    """
    if not history.records:
        raise ValueError("cannot evaluate an empty history")
    raw, rationale = evaluator.score(history)
    if raw is None:
        logger.warning("evaluator %s produced no usable score for %s", evaluator.name, history.agent_id)
        return DelayedReward(0.0, rationale, flagged=True)
    clamped = min(1.0, max(-1.0, float(raw)))
    return DelayedReward(clamped, rationale, flagged=clamped != raw)


def apply_delayed(
    q: QTable,
    history: AgentHistory,
    reward: DelayedReward,
    alpha: float,
) -> tuple[QTable, AgentHistory]:
    """Add ``alpha * reward`` to every (state, action) entry of the window,
    once per occurrence, then clear the history."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    bonus = alpha * reward.value
    if bonus:
        for rec in history.records:
            q.set(rec.observation, rec.action, q.get(rec.observation, rec.action) + bonus)
    history.clear()
    return q, history
