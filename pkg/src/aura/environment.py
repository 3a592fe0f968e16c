"""Discrete-time simulation of two base stations with dynamic user load.

Stations admit arriving users, lose departing ones, adjust transmit power,
and hand users off to their neighbor. Every random draw comes from a single
seeded generator in a fixed order, so a (config, seed, action sequence)
triple replays bit-identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np

from .config import ConfigurationError, RewardWeights, ScenarioConfig, StationKind

SIGNAL_MIN_DBM = -120.0
SIGNAL_MAX_DBM = -50.0
SNR_MIN_DB = 0.0
SNR_MAX_DB = 30.0

COVERAGE_GOOD_DB = 20.0
COVERAGE_POOR_DB = 10.0


class Action(IntEnum):
    """Agent decision with its numeric wire code."""

    INCREASE = 1
    DECREASE = 2
    MAINTAIN = 3
    HANDOFF = 4


class Coverage(Enum):
    GOOD = "good"
    FAIR = "fair"
    POOR = "poor"


@dataclass(frozen=True)
class UserState:
    """Snapshot view of one attached user."""

    id: int
    station: str
    signal_dbm: float
    snr_db: float


@dataclass(frozen=True)
class EnvParams:
    """Per-station environmental summary handed to the agent alongside its
    reward (the trailing counters let a history be scored without replaying
    the episode)."""

    mean_snr_db: float
    mean_signal_dbm: float
    load_fraction: float
    arrivals_this_step: int
    departures_this_step: int
    drops_this_step: int
    requests_this_step: int


@dataclass
class StationCounters:
    """Activity of one station during a single step.

    ``shared_drops`` counts admission failures that happened elsewhere while
    the whole network was saturated: every station is charged for (and
    observes) a system-wide service failure, but the drop is attributed to
    the station the arrival targeted.
    """

    requests: int = 0
    served: int = 0
    drops: int = 0
    dropped_admissions: int = 0
    handoff_successes: int = 0
    handoff_failures: int = 0
    wasted_actions: int = 0
    arrivals: int = 0
    departures: int = 0
    shared_drops: int = 0


class StationState:
    """One base station: power level, attached users, and last-step drop
    counters.

    Signal/SNR live in capacity-sized pools (the live slice is ``[:n]``)
    so per-step attach/detach and the vectorized channel perturbation stay
    cheap. Removal swaps the last user in, which keeps no particular user
    order; nothing in the model depends on one.
    """

    def __init__(self, station_id: str, kind: StationKind, power_dbm: int):
        self.id = station_id
        self.kind = kind
        self.power_dbm = int(power_dbm)
        self._capacity = kind.capacity
        self.user_ids: list[int] = []
        self._signal = np.empty(kind.capacity, dtype=np.float64)
        self._snr = np.empty(kind.capacity, dtype=np.float64)
        self.dropped_last_step = 0
        self.handoff_failures_last_step = 0

    @property
    def signal_dbm(self) -> np.ndarray:
        return self._signal[: len(self.user_ids)]

    @property
    def snr_db(self) -> np.ndarray:
        return self._snr[: len(self.user_ids)]

    @property
    def capacity(self) -> int:
        return self._capacity

    @property
    def attached(self) -> frozenset[int]:
        return frozenset(self.user_ids)

    @property
    def user_count(self) -> int:
        return len(self.user_ids)

    @property
    def load_fraction(self) -> float:
        return len(self.user_ids) / self._capacity

    @property
    def at_capacity(self) -> bool:
        return len(self.user_ids) >= self._capacity

    def mean_snr(self) -> float:
        n = len(self.user_ids)
        if not n:
            return 0.0
        return float(self._snr[:n].mean())

    def mean_signal(self) -> float:
        n = len(self.user_ids)
        if not n:
            return SIGNAL_MIN_DBM
        return float(self._signal[:n].mean())

    def users(self) -> list[UserState]:
        return [
            UserState(uid, self.id, float(self._signal[i]), float(self._snr[i]))
            for i, uid in enumerate(self.user_ids)
        ]

    def attach(self, user_id: int, signal_dbm: float, snr_db: float) -> None:
        n = len(self.user_ids)
        if n >= self._capacity:
            raise ValueError(f"station {self.id} is at capacity")
        self._signal[n] = signal_dbm
        self._snr[n] = snr_db
        self.user_ids.append(user_id)

    def detach(self, index: int) -> tuple[int, float, float]:
        n = len(self.user_ids)
        signal = float(self._signal[index])
        snr = float(self._snr[index])
        last = n - 1
        uid = self.user_ids[index]
        if index != last:
            self.user_ids[index] = self.user_ids[last]
            self._signal[index] = self._signal[last]
            self._snr[index] = self._snr[last]
        self.user_ids.pop()
        return uid, signal, snr

    def worst_snr_index(self) -> int:
        return int(np.argmin(self._snr[: len(self.user_ids)]))

    def shift_power(self, delta: int) -> int:
        """Move power by ``delta`` dBm, clamped to the kind's bounds; attached
        users' signal shifts by the applied amount. Returns the applied delta."""
        new_power = min(self.kind.power_max, max(self.kind.power_min, self.power_dbm + delta))
        applied = new_power - self.power_dbm
        self.power_dbm = new_power
        n = len(self.user_ids)
        if applied and n:
            view = self._signal[:n]
            view += applied
            np.clip(view, SIGNAL_MIN_DBM, SIGNAL_MAX_DBM, out=view)
        return applied

    def snapshot(self) -> dict:
        n = len(self.user_ids)
        return {
            "id": self.id,
            "kind": self.kind.value,
            "power_dbm": self.power_dbm,
            "user_ids": list(self.user_ids),
            "signal_dbm": self._signal[:n].tolist(),
            "snr_db": self._snr[:n].tolist(),
            "dropped_last_step": self.dropped_last_step,
            "handoff_failures_last_step": self.handoff_failures_last_step,
        }


@dataclass
class StepOutcome:
    rewards: dict[str, float]
    psi: dict[str, EnvParams]
    dropped_requests: int
    dropped_admissions: int
    dropped_handoffs: int
    is_failure_step: bool
    counters: dict[str, StationCounters] = field(default_factory=dict)


def coverage_quality(station: StationState) -> Coverage:
    """Classify coverage from the mean SNR of attached users; an empty
    station has nothing to complain about and reads as good."""
    if not station.user_ids:
        return Coverage.GOOD
    mean = station.mean_snr()
    if mean >= COVERAGE_GOOD_DB:
        return Coverage.GOOD
    if mean >= COVERAGE_POOR_DB:
        return Coverage.FAIR
    return Coverage.POOR


def immediate_reward(station: StationState, counters: StationCounters, weights: RewardWeights) -> float:
    """Local per-step reward: service ratio minus drop and energy penalties
    plus a handoff-success bonus (and a small penalty for wasted actions).
    Only the station's own drops are penalised here; system-wide saturation
    shows up in the observation and in the history the alignment controller
    scores, not in the local reward."""
    kind = station.kind
    energy = (station.power_dbm - kind.power_min) / (kind.power_max - kind.power_min)
    return (
        weights.serve * (counters.served / max(1, counters.requests))
        - weights.drop * counters.drops
        - weights.energy * energy
        + weights.handoff * counters.handoff_successes
        - weights.waste * counters.wasted_actions
    )


def projected_signal(user_signal_dbm: float, source: StationState, target: StationState) -> float:
    """First-order estimate of the user's signal at the target station."""
    return user_signal_dbm + (target.power_dbm - source.power_dbm)


def handoff(
    source: StationState,
    target: StationState,
    user_index: int,
    rng: np.random.Generator,
) -> bool:
    """Attempt to move one user from ``source`` to ``target``.

    Accepted iff the target has spare capacity and the projected signal
    there beats the user's current signal. On accept the user re-attaches
    with its projected signal and a freshly drawn SNR. On reject the user
    stays put, the source records a handoff failure, and the request counts
    as dropped. The total user count is unchanged either way.
    """
    signal = float(source._signal[user_index])
    projected = projected_signal(signal, source, target)
    if target.at_capacity or projected <= signal:
        source.handoff_failures_last_step += 1
        return False
    uid, _, _ = source.detach(user_index)
    new_signal = min(SIGNAL_MAX_DBM, max(SIGNAL_MIN_DBM, projected))
    new_snr = rng.uniform(SNR_MIN_DB, SNR_MAX_DB)
    target.attach(uid, new_signal, new_snr)
    return True


def apply_action(
    station: StationState,
    action: Action,
    neighbor: StationState,
    counters: StationCounters,
    rng: np.random.Generator,
) -> None:
    """Apply one agent decision to its station.

    Power moves are unit dBm steps clamped to the kind's bounds; a handoff
    targets the neighbor with the station's worst-SNR user. A handoff with
    no attached users is a wasted action, not an error.
    """
    if action is Action.INCREASE:
        station.shift_power(1)
    elif action is Action.DECREASE:
        station.shift_power(-1)
    elif action is Action.MAINTAIN:
        pass
    elif action is Action.HANDOFF:
        if not station.user_ids:
            counters.wasted_actions += 1
            return
        counters.requests += 1
        if handoff(station, neighbor, station.worst_snr_index(), rng):
            counters.served += 1
            counters.handoff_successes += 1
        else:
            counters.drops += 1
            counters.handoff_failures += 1
    else:  # pragma: no cover - IntEnum construction rejects other codes
        raise ValueError(f"unknown action {action!r}")


class Environment:
    """Seeded two-station simulation stepped with one action per station."""

    def __init__(self, config: ScenarioConfig):
        if not config.stations:
            raise ConfigurationError("environment requires at least one station")
        if len(config.stations) < 2:
            raise ConfigurationError("environment requires a neighbor for handoffs (>= 2 stations)")
        self.config = config
        self.stations: list[StationState] = []
        self._rng: np.random.Generator | None = None
        self._next_user_id = 0

    # -- lifecycle ---------------------------------------------------------

    def reset(self, seed: int) -> None:
        """Start an episode: power uniform over each station's integer range,
        user count uniform over [0, capacity], signal/SNR uniform over their
        legal ranges. All draws derive from ``seed``."""
        rng = np.random.default_rng(seed)
        self._rng = rng
        self._next_user_id = 0
        self.stations = []
        for spec in self.config.stations:
            kind = spec.kind
            power = int(rng.integers(kind.power_min, kind.power_max + 1))
            station = StationState(spec.id, kind, power)
            n_users = int(rng.integers(0, kind.capacity + 1))
            station.user_ids = list(range(self._next_user_id, self._next_user_id + n_users))
            self._next_user_id += n_users
            station._signal[:n_users] = rng.uniform(SIGNAL_MIN_DBM, SIGNAL_MAX_DBM, n_users)
            station._snr[:n_users] = rng.uniform(SNR_MIN_DB, SNR_MAX_DB, n_users)
            self.stations.append(station)

    def station(self, station_id: str) -> StationState:
        for st in self.stations:
            if st.id == station_id:
                return st
        raise KeyError(station_id)

    def neighbor_of(self, station: StationState) -> StationState:
        others = [s for s in self.stations if s.id != station.id]
        return min(others, key=lambda s: s.load_fraction)

    def total_users(self) -> int:
        return sum(len(s.user_ids) for s in self.stations)

    def snapshot(self) -> dict:
        return {
            "next_user_id": self._next_user_id,
            "stations": [s.snapshot() for s in self.stations],
        }

    # -- dynamics ----------------------------------------------------------

    def _admission_target(self) -> StationState:
        """Arrivals go to the least-loaded station; ties prefer rural, then
        configuration order."""
        best = self.stations[0]
        best_load = len(best.user_ids) / best._capacity
        for st in self.stations[1:]:
            load = len(st.user_ids) / st._capacity
            if load < best_load or (
                load == best_load
                and st.kind is StationKind.RURAL
                and best.kind is not StationKind.RURAL
            ):
                best = st
                best_load = load
        return best

    def step(self, actions: dict[str, Action]) -> StepOutcome:
        """Advance one step: apply actions, then arrivals, departures, and
        channel perturbation; return per-station rewards and summaries."""
        if self._rng is None:
            raise RuntimeError("call reset() before step()")
        missing = {s.id for s in self.stations} - set(actions)
        if missing:
            raise ConfigurationError(f"missing action for stations: {sorted(missing)}")
        rng = self._rng
        counters = {s.id: StationCounters() for s in self.stations}

        # stations act in configuration order
        for station in self.stations:
            apply_action(station, actions[station.id], self.neighbor_of(station), counters[station.id], rng)

        # arrivals are admitted (or dropped) before departures free capacity
        n_arrivals = int(rng.poisson(self.config.traffic.arrival_rate))
        if n_arrivals:
            signals = rng.uniform(SIGNAL_MIN_DBM, SIGNAL_MAX_DBM, n_arrivals)
            snrs = rng.uniform(SNR_MIN_DB, SNR_MAX_DB, n_arrivals)
            for i in range(n_arrivals):
                target = self._admission_target()
                ctr = counters[target.id]
                ctr.requests += 1
                if target.at_capacity:
                    # the least-loaded station is full, so the network is
                    # saturated: every other station shares the failure
                    ctr.drops += 1
                    ctr.dropped_admissions += 1
                    for other in self.stations:
                        if other.id != target.id:
                            counters[other.id].shared_drops += 1
                else:
                    target.attach(self._next_user_id, float(signals[i]), float(snrs[i]))
                    self._next_user_id += 1
                    ctr.served += 1
                    ctr.arrivals += 1

        # departures
        p_leave = self.config.traffic.departure_prob
        for station in self.stations:
            n = len(station.user_ids)
            if not n:
                continue
            keep = rng.random(n) >= p_leave
            left = int(n - keep.sum())
            if left:
                station.user_ids = [uid for uid, k in zip(station.user_ids, keep) if k]
                kept = n - left
                station._signal[:kept] = station._signal[:n][keep]
                station._snr[:kept] = station._snr[:n][keep]
                counters[station.id].departures = left

        # independent channel perturbation, clamped to legal ranges
        bound = self.config.perturbation_db
        for station in self.stations:
            n = len(station.user_ids)
            if not n:
                continue
            signal = station._signal[:n]
            signal += rng.uniform(-bound, bound, n)
            np.clip(signal, SIGNAL_MIN_DBM, SIGNAL_MAX_DBM, out=signal)
            snr = station._snr[:n]
            snr += rng.uniform(-bound, bound, n)
            np.clip(snr, SNR_MIN_DB, SNR_MAX_DB, out=snr)

        rewards: dict[str, float] = {}
        psi: dict[str, EnvParams] = {}
        for station in self.stations:
            ctr = counters[station.id]
            rewards[station.id] = immediate_reward(station, ctr, self.config.weights)
            psi[station.id] = EnvParams(
                mean_snr_db=station.mean_snr(),
                mean_signal_dbm=station.mean_signal(),
                load_fraction=station.load_fraction,
                arrivals_this_step=ctr.arrivals,
                departures_this_step=ctr.departures,
                drops_this_step=ctr.drops,
                requests_this_step=ctr.requests,
            )
            station.dropped_last_step = ctr.dropped_admissions
            # apply_action already bumped handoff_failures_last_step live; make
            # the published counter reflect exactly this step's failures
            station.handoff_failures_last_step = ctr.handoff_failures

        dropped = sum(c.drops for c in counters.values())
        return StepOutcome(
            rewards=rewards,
            psi=psi,
            dropped_requests=dropped,
            dropped_admissions=sum(c.dropped_admissions for c in counters.values()),
            dropped_handoffs=sum(c.handoff_failures for c in counters.values()),
            is_failure_step=dropped >= 1,
            counters=counters,
        )
