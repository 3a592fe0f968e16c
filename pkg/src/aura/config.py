"""Scenario and experiment-plan configuration loaded from YAML files."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml


class ConfigurationError(ValueError):
    """Raised when a scenario or plan file is malformed or inconsistent."""


class StationKind(Enum):
    RURAL = "rural"
    URBAN = "urban"

    @property
    def power_min(self) -> int:
        return 43 if self is StationKind.RURAL else 30

    @property
    def power_max(self) -> int:
        return 46 if self is StationKind.RURAL else 37

    @property
    def capacity(self) -> int:
        return 50 if self is StationKind.RURAL else 30


@dataclass(frozen=True)
class StationSpec:
    id: str
    kind: StationKind


@dataclass(frozen=True)
class TrafficLevel:
    """Named traffic regime: expected system-wide arrivals per step and the
    per-user per-step departure probability."""

    name: str
    arrival_rate: float
    departure_prob: float

    def __post_init__(self) -> None:
        if self.arrival_rate < 0:
            raise ConfigurationError(f"arrival_rate must be >= 0, got {self.arrival_rate}")
        if not 0.0 < self.departure_prob < 1.0:
            raise ConfigurationError(
                f"departure_prob must be in (0, 1), got {self.departure_prob}"
            )


DEFAULT_TRAFFIC_LEVELS: dict[str, TrafficLevel] = {
    "low": TrafficLevel("low", arrival_rate=2.0, departure_prob=0.1),
    "normal": TrafficLevel("normal", arrival_rate=5.0, departure_prob=0.1),
    "high": TrafficLevel("high", arrival_rate=9.0, departure_prob=0.1),
}


@dataclass(frozen=True)
class RewardWeights:
    """Weights of the per-step reward terms. ``waste`` penalises a handoff
    action issued by a station with no attached users."""

    serve: float = 1.0
    drop: float = 0.5
    energy: float = 0.2
    handoff: float = 0.3
    waste: float = 0.1

    def replace(self, **changes: float) -> "RewardWeights":
        return dataclasses.replace(self, **changes)


DEFAULT_STATIONS = (
    StationSpec("rural", StationKind.RURAL),
    StationSpec("urban", StationKind.URBAN),
)


@dataclass(frozen=True)
class ScenarioConfig:
    stations: tuple[StationSpec, ...] = DEFAULT_STATIONS
    traffic: TrafficLevel = DEFAULT_TRAFFIC_LEVELS["normal"]
    weights: RewardWeights = RewardWeights()
    perturbation_db: float = 2.0
    episode_steps: int = 200

    def __post_init__(self) -> None:
        if not self.stations:
            raise ConfigurationError("scenario requires at least one station")
        ids = [s.id for s in self.stations]
        if len(set(ids)) != len(ids):
            raise ConfigurationError(f"duplicate station ids: {ids}")
        if self.perturbation_db < 0:
            raise ConfigurationError("perturbation_db must be >= 0")
        if self.episode_steps < 1:
            raise ConfigurationError("episode_steps must be >= 1")


def _station_specs(raw: Any) -> tuple[StationSpec, ...]:
    if raw is None:
        return DEFAULT_STATIONS
    if not isinstance(raw, Sequence) or isinstance(raw, (str, bytes)) or not raw:
        raise ConfigurationError("stations must be a non-empty list")
    specs = []
    for entry in raw:
        try:
            kind = StationKind(str(entry["kind"]).lower())
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad station entry {entry!r}") from exc
        specs.append(StationSpec(str(entry.get("id", kind.value)), kind))
    return tuple(specs)


def _weights(raw: Any) -> RewardWeights:
    if raw is None:
        return RewardWeights()
    if not isinstance(raw, Mapping):
        raise ConfigurationError("weights must be a mapping")
    known = {f.name for f in dataclasses.fields(RewardWeights)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigurationError(f"unknown weight keys: {sorted(unknown)}")
    return RewardWeights(**{k: float(v) for k, v in raw.items()})


def traffic_level(name: str, overrides: Mapping[str, Any] | None = None) -> TrafficLevel:
    """Resolve a named traffic level, applying optional per-level rate overrides."""
    key = str(name).lower()
    if overrides and key in overrides:
        entry = overrides[key]
        base = DEFAULT_TRAFFIC_LEVELS.get(key)
        return TrafficLevel(
            key,
            arrival_rate=float(entry.get("arrival_rate", base.arrival_rate if base else 0.0)),
            departure_prob=float(
                entry.get("departure_prob", base.departure_prob if base else 0.1)
            ),
        )
    if key not in DEFAULT_TRAFFIC_LEVELS:
        raise ConfigurationError(
            f"unknown traffic level {name!r}; expected one of {sorted(DEFAULT_TRAFFIC_LEVELS)}"
        )
    return DEFAULT_TRAFFIC_LEVELS[key]


def scenario_from_mapping(raw: Mapping[str, Any], traffic_name: str | None = None) -> ScenarioConfig:
    """Build a ScenarioConfig from a parsed mapping.

    Recognised keys: stations[], traffic_level, weights, perturbation_db,
    episode_steps, traffic_rates (per-level overrides).
    """
    if not isinstance(raw, Mapping):
        raise ConfigurationError("scenario file must contain a mapping at top level")
    name = traffic_name or raw.get("traffic_level", "normal")
    return ScenarioConfig(
        stations=_station_specs(raw.get("stations")),
        traffic=traffic_level(name, raw.get("traffic_rates")),
        weights=_weights(raw.get("weights")),
        perturbation_db=float(raw.get("perturbation_db", 2.0)),
        episode_steps=int(raw.get("episode_steps", 200)),
    )


def load_scenario(path: str | Path, traffic_name: str | None = None) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"scenario file not found: {path}")
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return scenario_from_mapping(raw or {}, traffic_name)


@dataclass
class ExperimentPlan:
    """Full experiment description: the config/traffic/seed grid plus
    scenario, learning, and backend settings."""

    configurations: list[str] = field(default_factory=lambda: ["marl_only", "guided_marl", "aura"])
    traffic_levels: list[str] = field(default_factory=lambda: ["low", "normal", "high"])
    seeds: list[int] = field(default_factory=lambda: list(range(20)))
    train_episodes: int = 300
    test_episodes: int = 50
    episode_steps: int = 200
    batch_interval_steps: int = 10
    cac_interval_episodes: int = 2
    delayed_reward_alpha: float | None = None
    backend: str = "scripted"
    replay_log: str | None = None
    scenario_raw: dict[str, Any] = field(default_factory=dict)
    learning_raw: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ConfigurationError("plan requires a non-empty seed list")
        if not self.configurations:
            raise ConfigurationError("plan requires at least one configuration")
        if not self.traffic_levels:
            raise ConfigurationError("plan requires at least one traffic level")
        if self.backend not in ("scripted", "replay", "remote"):
            raise ConfigurationError(f"unknown backend {self.backend!r}")
        if self.backend == "replay" and not self.replay_log:
            raise ConfigurationError("replay backend requires replay_log")
        if self.batch_interval_steps < 1:
            raise ConfigurationError("batch_interval_steps must be >= 1")
        if self.cac_interval_episodes < 1:
            raise ConfigurationError("cac_interval_episodes must be >= 1")

    def scenario(self, traffic_name: str) -> ScenarioConfig:
        raw = dict(self.scenario_raw)
        raw["episode_steps"] = self.episode_steps
        return scenario_from_mapping(raw, traffic_name)


def _seed_list(raw: Mapping[str, Any]) -> list[int]:
    if "seeds" in raw and raw["seeds"] is not None:
        seeds = [int(s) for s in raw["seeds"]]
    else:
        count = int(raw.get("seed_count", 20))
        start = int(raw.get("seed_start", 0))
        seeds = list(range(start, start + count))
    if len(set(seeds)) != len(seeds):
        raise ConfigurationError("seed list contains duplicates")
    return seeds


def plan_from_mapping(raw: Mapping[str, Any]) -> ExperimentPlan:
    if not isinstance(raw, Mapping):
        raise ConfigurationError("plan file must contain a mapping at top level")
    scenario_keys = ("stations", "weights", "perturbation_db", "traffic_rates")
    scenario_raw = {k: raw[k] for k in scenario_keys if k in raw}
    delayed_alpha = raw.get("delayed_reward_alpha")
    return ExperimentPlan(
        configurations=[str(c).lower() for c in raw.get("configurations", ["marl_only", "guided_marl", "aura"])],
        traffic_levels=[str(t).lower() for t in raw.get("traffic_levels", ["low", "normal", "high"])],
        seeds=_seed_list(raw),
        train_episodes=int(raw.get("train_episodes", 300)),
        test_episodes=int(raw.get("test_episodes", 50)),
        episode_steps=int(raw.get("episode_steps", 200)),
        batch_interval_steps=int(raw.get("batch_interval_steps", 10)),
        cac_interval_episodes=int(raw.get("cac_interval_episodes", 2)),
        delayed_reward_alpha=None if delayed_alpha is None else float(delayed_alpha),
        backend=str(raw.get("backend", "scripted")).lower(),
        replay_log=raw.get("replay_log"),
        scenario_raw=scenario_raw,
        learning_raw=dict(raw.get("learning") or {}),
    )


def load_plan(path: str | Path) -> ExperimentPlan:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"plan file not found: {path}")
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return plan_from_mapping(raw or {})
