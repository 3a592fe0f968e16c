"""Per-station tabular Q-learning agent with trust-gated advisor adoption.

The observation is a discretized 4-tuple (power bucket, coverage class,
at-capacity flag, drop bucket), giving at most 8*3*2*3 = 144 states per
agent. Q-values live in a plain dict keyed by (Observation, Action) and
serialize to JSON so a trained policy can seed a later testing phase.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .environment import Action, Coverage, EnvParams, StationState, coverage_quality

ACTIONS = tuple(Action)

# dropped_bucket: 0 -> no drops, 1 -> 1-2 drops, 2 -> 3 or more
DROP_BUCKET_LABELS = ("0", "1-2", ">=3")


def drop_bucket(count: int) -> int:
    if count <= 0:
        return 0
    return 1 if count <= 2 else 2


@dataclass(frozen=True)
class Observation:
    power_bucket: int
    coverage: Coverage
    at_capacity: bool
    dropped_bucket: int

    def key(self) -> str:
        """Canonical string form, e.g. ``p2|fair|cap0|d1``."""
        return (
            f"p{self.power_bucket}|{self.coverage.value}"
            f"|cap{int(self.at_capacity)}|d{self.dropped_bucket}"
        )

    @classmethod
    def from_key(cls, key: str) -> "Observation":
        try:
            p, cov, cap, d = key.split("|")
            return cls(
                power_bucket=int(p[1:]),
                coverage=Coverage(cov),
                at_capacity=bool(int(cap[3:])),
                dropped_bucket=int(d[1:]),
            )
        except (ValueError, IndexError) as exc:
            raise ValueError(f"malformed observation key {key!r}") from exc


def observe(station: StationState) -> Observation:
    """Encode a station into the agent's discretized local view."""
    drops = station.dropped_last_step + station.handoff_failures_last_step
    return Observation(
        power_bucket=station.power_dbm - station.kind.power_min,
        coverage=coverage_quality(station),
        at_capacity=station.at_capacity,
        dropped_bucket=drop_bucket(drops),
    )


@dataclass
class LearningParams:
    alpha: float = 0.1
    gamma: float = 0.9
    epsilon: float = 0.3
    epsilon_decay: float = 0.995
    epsilon_floor: float = 0.05
    trust_eta: float = 0.05
    reward_ema_beta: float = 0.9

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if not 0.0 < self.epsilon_decay <= 1.0:
            raise ValueError(f"epsilon_decay must be in (0, 1], got {self.epsilon_decay}")
        if not 0.0 < self.trust_eta <= 1.0:
            raise ValueError(f"trust_eta must be in (0, 1], got {self.trust_eta}")
        if not 0.0 < self.reward_ema_beta < 1.0:
            raise ValueError(f"reward_ema_beta must be in (0, 1), got {self.reward_ema_beta}")


class QTable:
    """Sparse action-value table; unseen pairs read as 0."""

    def __init__(self) -> None:
        self._values: dict[tuple[Observation, Action], float] = {}

    def get(self, obs: Observation, action: Action) -> float:
        return self._values.get((obs, action), 0.0)

    def set(self, obs: Observation, action: Action, value: float) -> None:
        if not np.isfinite(value):
            raise ValueError(f"q-value must be finite, got {value}")
        self._values[(obs, action)] = float(value)

    def best_value(self, obs: Observation) -> float:
        return max(self.get(obs, a) for a in ACTIONS)

    def greedy_action(self, obs: Observation) -> Action:
        """Argmax with ties broken by the lowest numeric action code."""
        best = ACTIONS[0]
        best_value = self.get(obs, best)
        for action in ACTIONS[1:]:
            value = self.get(obs, action)
            if value > best_value:
                best, best_value = action, value
        return best

    def __len__(self) -> int:
        return len(self._values)

    def __iter__(self) -> Iterator[tuple[Observation, Action, float]]:
        for (obs, action), value in self._values.items():
            yield obs, action, value

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QTable):
            return NotImplemented
        keys = set(self._values) | set(other._values)
        return all(self._values.get(k, 0.0) == other._values.get(k, 0.0) for k in keys)

    def to_json(self) -> str:
        table: dict[str, dict[str, float]] = {}
        for (obs, action), value in sorted(
            self._values.items(), key=lambda kv: (kv[0][0].key(), kv[0][1].value)
        ):
            table.setdefault(obs.key(), {})[str(action.value)] = value
        return json.dumps(table, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "QTable":
        q = cls()
        for obs_key, row in json.loads(text).items():
            obs = Observation.from_key(obs_key)
            for code, value in row.items():
                q.set(obs, Action(int(code)), float(value))
        return q

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "QTable":
        return cls.from_json(Path(path).read_text())


def select_action(
    q: QTable,
    obs: Observation,
    epsilon: float,
    rng: np.random.Generator | None = None,
) -> Action:
    """Epsilon-greedy policy; with epsilon=0 this is a pure function of
    (QTable, Observation) and consumes no randomness."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    if epsilon > 0.0:
        if rng is None:
            raise ValueError("epsilon > 0 requires an rng")
        if rng.random() < epsilon:
            return ACTIONS[int(rng.integers(len(ACTIONS)))]
    return q.greedy_action(obs)


def q_update(
    q: QTable,
    s: Observation,
    a: Action,
    r: float,
    s_next: Observation,
    alpha: float,
    gamma: float,
) -> QTable:
    """Standard one-step update from the immediate reward:
    Q(s,a) += alpha * (r + gamma * max_a' Q(s',a') - Q(s,a)).
    Mutates and returns ``q``; no other cell changes."""
    if not np.isfinite(r):
        raise ValueError(f"reward must be finite, got {r}")
    current = q.get(s, a)
    target = r + gamma * q.best_value(s_next)
    q.set(s, a, current + alpha * (target - current))
    return q


@dataclass
class TrustScore:
    """Adoption probability for advisor suggestions, with a running reward
    baseline the updates compare against."""

    value: float = 0.5
    reward_ema: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"trust value must be in [0, 1], got {self.value}")


def combine_decision(
    a_llm: Action | None,
    a_rl: Action,
    trust: TrustScore,
    rng: np.random.Generator,
) -> tuple[Action, bool]:
    """Gate the advisor suggestion through the trust score.

    Agreement with the agent's own choice is not counted as adoption; a
    differing suggestion is taken with probability ``trust.value``.
    """
    if a_llm is None or a_llm == a_rl:
        return a_rl, False
    if rng.random() < trust.value:
        return a_llm, True
    return a_rl, False


def update_trust(
    trust: TrustScore,
    a_llm: Action | None,
    a_taken: Action,
    r_immediate: float,
    params: LearningParams,
) -> TrustScore:
    """Move trust toward 1 when a followed suggestion beat the agent's
    running reward baseline, toward 0 otherwise. The baseline updates on
    every call; the comparison uses its pre-update value."""
    ema_before = trust.reward_ema
    beta = params.reward_ema_beta
    trust.reward_ema = beta * ema_before + (1.0 - beta) * r_immediate
    if a_llm is not None and a_taken == a_llm:
        eta = params.trust_eta
        if r_immediate >= ema_before:
            trust.value = trust.value + eta * (1.0 - trust.value)
        else:
            trust.value = trust.value - eta * trust.value
        trust.value = min(1.0, max(0.0, trust.value))
    return trust


@dataclass(frozen=True)
class TransitionRecord:
    """One (observation, action, reward, psi) history entry consumed by
    trust updates and the delayed-reward controller."""

    observation: Observation
    action: Action
    immediate_reward: float
    psi: EnvParams
    step_index: int


class QLearningAgent:
    """State holder wiring one station's table, trust, and random stream."""

    def __init__(
        self,
        station_id: str,
        params: LearningParams,
        rng: np.random.Generator,
        q: QTable | None = None,
    ):
        self.station_id = station_id
        self.params = params
        self.rng = rng
        self.q = q if q is not None else QTable()
        self.trust = TrustScore()
        self.epsilon = params.epsilon

    def act(self, obs: Observation) -> Action:
        return select_action(self.q, obs, self.epsilon, self.rng)

    def learn(self, s: Observation, a: Action, r: float, s_next: Observation) -> None:
        q_update(self.q, s, a, r, s_next, self.params.alpha, self.params.gamma)

    def decay_epsilon(self) -> None:
        self.epsilon = max(self.params.epsilon_floor, self.epsilon * self.params.epsilon_decay)

    def freeze_epsilon(self) -> None:
        self.epsilon = self.params.epsilon_floor
