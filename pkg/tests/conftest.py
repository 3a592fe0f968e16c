import numpy as np
import pytest

from aura.config import (
    DEFAULT_TRAFFIC_LEVELS,
    RewardWeights,
    ScenarioConfig,
    StationKind,
    StationSpec,
    TrafficLevel,
)
from aura.environment import Environment, StationState


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def scenario():
    return ScenarioConfig()


def make_station(kind=StationKind.URBAN, power=None, snrs=(), signals=None, station_id=None):
    """Hand-built station fixture with known users."""
    if power is None:
        power = kind.power_min
    station = StationState(station_id or kind.value, kind, power)
    for i, snr in enumerate(snrs):
        signal = -85.0 if signals is None else signals[i]
        station.attach(1000 + i, signal, snr)
    return station


def make_env(traffic="normal", episode_steps=200, **traffic_overrides):
    level = DEFAULT_TRAFFIC_LEVELS[traffic]
    if traffic_overrides:
        level = TrafficLevel(
            traffic,
            arrival_rate=traffic_overrides.get("arrival_rate", level.arrival_rate),
            departure_prob=traffic_overrides.get("departure_prob", level.departure_prob),
        )
    return Environment(ScenarioConfig(traffic=level, episode_steps=episode_steps))


@pytest.fixture
def weights():
    return RewardWeights()


def fill_to_capacity(env):
    """Attach synthetic users until every station is full."""
    uid = 10_000
    for station in env.stations:
        while not station.at_capacity:
            station.attach(uid, -85.0, 15.0)
            uid += 1
    env._next_user_id = uid
