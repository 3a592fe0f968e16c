"""Advisory layer: prompt construction, pluggable completion backends, and
the translator that turns free-form replies into numeric action codes.

Three backends share one interface: ``Scripted`` answers from a fixed rule
table over the structured state (no text parsing, fully deterministic),
``Replay`` answers from a recorded prompt-hash -> response log, and
``Remote`` posts the prompt to an external text-completion service. Any
backend failure degrades to "no suggestion": the agent simply acts alone.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Protocol

from .agent import LearningParams
from .config import RewardWeights, TrafficLevel
from .environment import Action, StationState, coverage_quality

logger = logging.getLogger(__name__)

PROMPT_MAX_BYTES = 4096
ANSWER_FORMAT_SENTENCE = "Answer with a single action code (1, 2, 3, or 4) and nothing else."
ACTION_LEGEND = "Actions: 1=increase power, 2=decrease power, 3=maintain, 4=handoff worst user."

REMOTE_URL_ENV = "AURA_LLM_URL"
REMOTE_KEY_ENV = "AURA_LLM_KEY"
REMOTE_TIMEOUT_S = 10.0
REMOTE_RETRIES = 2
REMOTE_MAX_IN_FLIGHT = 2
REMOTE_SYSTEM_INSTRUCTION = (
    "You manage cellular base stations. Reply with one action code only."
)

# first standalone digit in 1-4 (not part of a longer digit run)
_CODE_RE = re.compile(r"(?<![0-9])([1-4])(?![0-9])")
_in_flight = threading.Semaphore(REMOTE_MAX_IN_FLIGHT)


@dataclass(frozen=True)
class StationSnapshot:
    """Structured station summary the prompt is rendered from and the
    scripted rules decide on."""

    station_id: str
    kind: str
    power_dbm: int
    power_min: int
    power_max: int
    capacity: int
    user_count: int
    load_fraction: float
    coverage: str
    at_capacity: bool
    dropped_last_step: int
    handoff_failures_last_step: int
    mean_snr_db: float

    @classmethod
    def from_station(cls, station: StationState) -> "StationSnapshot":
        return cls(
            station_id=station.id[:32],
            kind=station.kind.value,
            power_dbm=station.power_dbm,
            power_min=station.kind.power_min,
            power_max=station.kind.power_max,
            capacity=station.capacity,
            user_count=station.user_count,
            load_fraction=station.load_fraction,
            coverage=coverage_quality(station).value,
            at_capacity=station.at_capacity,
            dropped_last_step=station.dropped_last_step,
            handoff_failures_last_step=station.handoff_failures_last_step,
            mean_snr_db=station.mean_snr(),
        )


@dataclass(frozen=True)
class AdvisorPrompt:
    text: str
    target: StationSnapshot
    neighbor: StationSnapshot

    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()


def _station_block(label: str, snap: StationSnapshot) -> str:
    return (
        f"{label} station '{snap.station_id}' ({snap.kind}): "
        f"power {snap.power_dbm} dBm (range {snap.power_min}-{snap.power_max}), "
        f"{snap.user_count}/{snap.capacity} users connected"
        f"{' (AT CAPACITY)' if snap.at_capacity else ''}, "
        f"coverage {snap.coverage} (mean SNR {snap.mean_snr_db:.1f} dB), "
        f"dropped last step: {snap.dropped_last_step} admissions, "
        f"{snap.handoff_failures_last_step} handoffs."
    )


def build_prompt(
    target: StationState,
    neighbor: StationState,
    traffic: TrafficLevel,
) -> AdvisorPrompt:
    """Render the decision prompt for one station from both stations'
    metrics. Pure function: the same inputs yield the same text."""
    t = StationSnapshot.from_station(target)
    n = StationSnapshot.from_station(neighbor)
    text = "\n".join(
        [
            f"You advise the base station '{t.station_id}' in a two-station cellular network "
            f"under {traffic.name} traffic.",
            _station_block("Target", t),
            _station_block("Neighbor", n),
            ACTION_LEGEND,
            "Pick the best action for the target station.",
            ANSWER_FORMAT_SENTENCE,
        ]
    )
    if len(text.encode("utf-8")) > PROMPT_MAX_BYTES:  # pragma: no cover - bounded by construction
        raise ValueError("prompt exceeds the 4 KiB bound")
    return AdvisorPrompt(text=text, target=t, neighbor=n)


def translate(response: str | bytes | None) -> Action | None:
    """Extract the first standalone action code from arbitrary text.

    Standalone means not adjacent to another ASCII digit, so codes embedded
    in longer numbers ("10", "42") never match; anything without a clean
    code is a translation failure (None). Never raises on any byte string.
    """
    if response is None:
        return None
    if isinstance(response, bytes):
        response = response.decode("utf-8", errors="replace")
    match = _CODE_RE.search(response)
    if match is None:
        return None
    return Action(int(match.group(1)))


@dataclass
class Suggestion:
    action: Action | None
    latency_s: float
    translation_failed: bool = False
    backend_error: bool = False


class CompletionBackend(Protocol):
    name: str

    def complete(self, prompt: AdvisorPrompt) -> str | None:
        """Return the raw response text, or None on hard failure."""


class ScriptedBackend:
    """Deterministic expert heuristic over the structured snapshots.

    Rule table: at capacity with room at the neighbor -> handoff; poor
    coverage with power headroom -> increase; good coverage under light
    load -> decrease; otherwise maintain.
    """

    name = "scripted"

    def complete(self, prompt: AdvisorPrompt) -> str | None:
        return str(self.decide(prompt.target, prompt.neighbor).value)

    @staticmethod
    def decide(target: StationSnapshot, neighbor: StationSnapshot) -> Action:
        if target.at_capacity and not neighbor.at_capacity:
            return Action.HANDOFF
        if target.coverage == "poor" and target.power_dbm < target.power_max:
            return Action.INCREASE
        if target.coverage == "good" and target.load_fraction < 0.3:
            return Action.DECREASE
        return Action.MAINTAIN


class ReplayBackend:
    """Looks completions up in a recorded log of JSON lines
    ``{"prompt_sha256": ..., "response_text": ...}``; a miss yields no
    suggestion. The cache is read-only during runs."""

    name = "replay"

    def __init__(self, log_path: str | Path):
        self._responses: dict[str, str] = {}
        path = Path(log_path)
        if not path.is_file():
            raise FileNotFoundError(f"replay log not found: {path}")
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                entry = json.loads(line)
                self._responses[entry["prompt_sha256"]] = entry["response_text"]

    def __len__(self) -> int:
        return len(self._responses)

    def complete(self, prompt: AdvisorPrompt) -> str | None:
        return self._responses.get(prompt.sha256())


def _http_post(url: str, payload: dict, headers: dict, timeout: float) -> dict:
    """Single network touchpoint for the remote backend (patched in tests)."""
    import requests

    resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
    resp.raise_for_status()
    return resp.json()


class RemoteBackend:
    """Posts the prompt to an external completion service.

    Wire contract: JSON request ``{"prompt": ..., "system": ..., "temperature": 0}``
    and JSON response ``{"text": ...}``; ``request_adapter``/``response_adapter``
    map this onto a concrete provider's schema. Transport failures are retried
    and then reported as a backend error; a run never aborts on an outage.
    """

    name = "remote"

    def __init__(
        self,
        url: str | None = None,
        api_key: str | None = None,
        timeout_s: float = REMOTE_TIMEOUT_S,
        retries: int = REMOTE_RETRIES,
        request_adapter=None,
        response_adapter=None,
    ):
        import os

        self.url = url or os.environ.get(REMOTE_URL_ENV)
        self.api_key = api_key if api_key is not None else os.environ.get(REMOTE_KEY_ENV)
        if not self.url:
            raise ValueError(f"remote backend requires a URL ({REMOTE_URL_ENV})")
        self.timeout_s = timeout_s
        self.retries = retries
        self.request_adapter = request_adapter
        self.response_adapter = response_adapter

    def complete(self, prompt: AdvisorPrompt) -> str | None:
        payload = {
            "prompt": prompt.text,
            "system": REMOTE_SYSTEM_INSTRUCTION,
            "temperature": 0,
        }
        if self.request_adapter is not None:
            payload = self.request_adapter(payload)
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(1 + self.retries):
            try:
                with _in_flight:
                    body = _http_post(self.url, payload, headers, self.timeout_s)
                if self.response_adapter is not None:
                    return self.response_adapter(body)
                return body.get("text")
            except Exception as exc:  # noqa: BLE001 - outage must not kill the run
                last_error = exc
        logger.warning("remote completion failed after %d attempts: %s", 1 + self.retries, last_error)
        return None


def suggest(backend: CompletionBackend, prompt: AdvisorPrompt) -> Suggestion:
    """Obtain an action suggestion, recording latency and failure flags.

    Any failure (transport outage, replay miss, untranslatable reply) comes
    back as ``action=None``; callers treat that as "no suggestion".
    """
    start = time.perf_counter()
    text = backend.complete(prompt)
    latency = time.perf_counter() - start
    if text is None:
        return Suggestion(None, latency, backend_error=getattr(backend, "name", "") == "remote")
    action = translate(text)
    if action is None:
        return Suggestion(None, latency, translation_failed=True)
    return Suggestion(action, latency)


class VerbalInstruction(Enum):
    """Closed vocabulary of corrective cues the translator accepts."""

    INCREASE_EXPLORATION = "increase_exploration"
    DECREASE_EXPLORATION = "decrease_exploration"
    PRIORITIZE_HANDOFFS = "prioritize_handoffs"
    PRIORITIZE_ENERGY = "prioritize_energy"


def parse_instruction(text: str) -> VerbalInstruction | None:
    """Map text to an instruction; unknown strings never produce one."""
    try:
        return VerbalInstruction(text.strip().lower().replace(" ", "_").replace("-", "_"))
    except ValueError:
        return None


EPSILON_CLAMP = (0.05, 0.5)


def apply_verbal_feedback(
    instruction: VerbalInstruction,
    params: LearningParams,
    weights: RewardWeights,
) -> tuple[LearningParams, RewardWeights]:
    """Turn a verbal cue into parameter changes; returns updated copies."""
    new_params, new_weights = params, weights
    if instruction is VerbalInstruction.INCREASE_EXPLORATION:
        eps = min(EPSILON_CLAMP[1], max(EPSILON_CLAMP[0], params.epsilon * 1.5))
        new_params = replace(params, epsilon=eps)
        logger.info("verbal feedback %s: epsilon %.4f -> %.4f", instruction.value, params.epsilon, eps)
    elif instruction is VerbalInstruction.DECREASE_EXPLORATION:
        eps = min(EPSILON_CLAMP[1], max(EPSILON_CLAMP[0], params.epsilon * 0.67))
        new_params = replace(params, epsilon=eps)
        logger.info("verbal feedback %s: epsilon %.4f -> %.4f", instruction.value, params.epsilon, eps)
    elif instruction is VerbalInstruction.PRIORITIZE_HANDOFFS:
        new_weights = weights.replace(handoff=weights.handoff * 1.5)
        logger.info(
            "verbal feedback %s: w_handoff %.4f -> %.4f",
            instruction.value, weights.handoff, new_weights.handoff,
        )
    elif instruction is VerbalInstruction.PRIORITIZE_ENERGY:
        new_weights = weights.replace(energy=weights.energy * 1.5)
        logger.info(
            "verbal feedback %s: w_energy %.4f -> %.4f",
            instruction.value, weights.energy, new_weights.energy,
        )
    return new_params, new_weights


def make_backend(name: str, replay_log: str | None = None) -> CompletionBackend:
    """Construct a backend from its plan-file name."""
    name = name.lower()
    if name == "scripted":
        return ScriptedBackend()
    if name == "replay":
        if not replay_log:
            raise ValueError("replay backend requires a log path")
        return ReplayBackend(replay_log)
    if name == "remote":
        return RemoteBackend()
    raise ValueError(f"unknown backend {name!r}")
