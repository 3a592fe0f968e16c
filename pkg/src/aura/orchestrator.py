"""Experiment harness: wires environment, agents, advisor, and the
alignment controller; runs train/test phases over a configuration grid and
collects metrics into CSV rows and an optional JSON-lines event log."""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np

from .advisor import CompletionBackend, RemoteBackend, build_prompt, make_backend, suggest
from .agent import (
    LearningParams,
    QLearningAgent,
    TransitionRecord,
    combine_decision,
    observe,
    q_update,
    select_action,
    update_trust,
)
from .alignment import (
    AgentHistory,
    Evaluator,
    RemoteEvaluator,
    ScriptedEvaluator,
    accumulate,
    apply_delayed,
    evaluate,
)
from .config import ConfigurationError, ExperimentPlan, ScenarioConfig
from .environment import Action, Environment

CONFIG_ORDER = ("marl_only", "guided_marl", "aura")
TRAFFIC_ORDER = ("low", "normal", "high")


class Configuration(Enum):
    MARL_ONLY = "marl_only"
    GUIDED_MARL = "guided_marl"
    AURA = "aura"

    @property
    def advisor_enabled(self) -> bool:
        return self is not Configuration.MARL_ONLY

    @property
    def cac_enabled(self) -> bool:
        return self is Configuration.AURA


@dataclass(frozen=True)
class BatchSchedule:
    """Advisor queries and agent reports happen only at step indices that
    are multiples of the interval; suggestions hold steady in between."""

    interval_steps: int = 10

    def __post_init__(self) -> None:
        if self.interval_steps < 1:
            raise ConfigurationError(f"interval_steps must be >= 1, got {self.interval_steps}")

    def is_boundary(self, step: int) -> bool:
        return step % self.interval_steps == 0


@dataclass
class AgentMetrics:
    dropped_requests: int = 0
    dropped_handoffs: int = 0
    dropped_admissions: int = 0
    llm_queries: int = 0
    llm_adoptions: int = 0
    llm_disagreements: int = 0

    @property
    def usage_rate(self) -> float:
        return self.llm_adoptions / max(1, self.llm_disagreements)

    def merge(self, other: "AgentMetrics") -> None:
        self.dropped_requests += other.dropped_requests
        self.dropped_handoffs += other.dropped_handoffs
        self.dropped_admissions += other.dropped_admissions
        self.llm_queries += other.llm_queries
        self.llm_adoptions += other.llm_adoptions
        self.llm_disagreements += other.llm_disagreements


@dataclass
class RunMetrics:
    dropped_requests_total: int = 0
    dropped_handoffs: int = 0
    dropped_admissions: int = 0
    failure_steps: int = 0
    llm_queries: int = 0
    llm_adoptions: int = 0
    llm_disagreements: int = 0
    llm_translation_failures: int = 0
    llm_backend_errors: int = 0
    llm_latency_s: float = 0.0
    episode_returns: list[float] = field(default_factory=list)
    per_agent: dict[str, AgentMetrics] = field(default_factory=dict)

    @property
    def usage_rate(self) -> float:
        """Adopted suggestions over decisions where a differing suggestion
        was available."""
        return self.llm_adoptions / max(1, self.llm_disagreements)

    def merge(self, other: "RunMetrics") -> None:
        self.dropped_requests_total += other.dropped_requests_total
        self.dropped_handoffs += other.dropped_handoffs
        self.dropped_admissions += other.dropped_admissions
        self.failure_steps += other.failure_steps
        self.llm_queries += other.llm_queries
        self.llm_adoptions += other.llm_adoptions
        self.llm_disagreements += other.llm_disagreements
        self.llm_translation_failures += other.llm_translation_failures
        self.llm_backend_errors += other.llm_backend_errors
        self.llm_latency_s += other.llm_latency_s
        self.episode_returns.extend(other.episode_returns)
        for aid, am in other.per_agent.items():
            self.per_agent.setdefault(aid, AgentMetrics()).merge(am)


class Runner:
    """Runs episodes for one (configuration, scenario, seed) cell.

    Owns the environment, one agent per station, and (for the full
    configuration) the per-agent histories the alignment controller scores.
    """

    def __init__(
        self,
        configuration: Configuration,
        scenario: ScenarioConfig,
        learning: LearningParams | None = None,
        schedule: BatchSchedule | None = None,
        backend: CompletionBackend | None = None,
        evaluator: Evaluator | None = None,
        cac_interval_episodes: int = 2,
        delayed_alpha: float | None = None,
        seed: int = 0,
        events: list[dict] | None = None,
        event_context: dict[str, Any] | None = None,
    ):
        if configuration.advisor_enabled and backend is None:
            raise ConfigurationError(f"{configuration.value} requires an advisor backend")
        if not configuration.advisor_enabled and backend is not None:
            raise ConfigurationError("marl_only must not be given an advisor backend")
        if configuration.cac_enabled and evaluator is None:
            raise ConfigurationError(f"{configuration.value} requires an evaluator")
        if not configuration.cac_enabled and evaluator is not None:
            raise ConfigurationError(f"{configuration.value} must not be given an evaluator")
        if cac_interval_episodes < 1:
            raise ConfigurationError("cac_interval_episodes must be >= 1")

        self.configuration = configuration
        self.scenario = scenario
        self.learning = learning or LearningParams()
        self.schedule = schedule or BatchSchedule()
        self.backend = backend
        self.evaluator = evaluator
        self.cac_interval_episodes = cac_interval_episodes
        self.delayed_alpha = self.learning.alpha if delayed_alpha is None else delayed_alpha
        self.events = events
        self.event_context = event_context or {}

        self.env = Environment(scenario)
        station_ids = [s.id for s in scenario.stations]
        seq = np.random.SeedSequence(seed)
        children = seq.spawn(1 + len(station_ids))
        self._episode_seeder = np.random.default_rng(children[0])
        self.agents: dict[str, QLearningAgent] = {
            sid: QLearningAgent(sid, self.learning, np.random.default_rng(children[1 + i]))
            for i, sid in enumerate(station_ids)
        }
        self.histories: dict[str, AgentHistory] = {sid: AgentHistory(sid) for sid in station_ids}
        self.global_step = 0
        self.episodes_run = 0

    def _emit(self, event: dict) -> None:
        if self.events is not None:
            self.events.append({**self.event_context, **event})

    def run_episode(self, train: bool = True) -> RunMetrics:
        """Run one episode and return its metrics.

        Advisor suggestions refresh at batch boundaries and hold in between;
        the adoption decision for a held suggestion is made at its first
        disagreement with the agent's own choice and then sticks for the
        window, so at most one adoption is counted per query. Trust
        bookkeeping rides the same report cycle: at each boundary the agent
        reports its window's mean reward, and trust moves only for windows
        whose suggestion was actually followed (adopted, or agreed with
        throughout).
        """
        env = self.env
        env.reset(int(self._episode_seeder.integers(0, 2**63)))
        advisor_on = self.configuration.advisor_enabled
        cac_on = self.configuration.cac_enabled
        interval = self.schedule.interval_steps

        metrics = RunMetrics(per_agent={sid: AgentMetrics() for sid in self.agents})
        suggestions: dict[str, Any] = {sid: None for sid in self.agents}
        window_adopt: dict[str, bool | None] = {sid: None for sid in self.agents}
        window_reward_sum = {sid: 0.0 for sid in self.agents}
        window_steps = 0
        episode_return = 0.0
        obs = {st.id: observe(st) for st in env.stations}
        actions: dict[str, Any] = {}

        def report_windows() -> None:
            nonlocal window_steps
            if not window_steps:
                return
            for sid, agent in self.agents.items():
                mean_reward = window_reward_sum[sid] / window_steps
                suggestion = suggestions[sid]
                followed = suggestion is not None and window_adopt[sid] is not False
                update_trust(
                    agent.trust,
                    suggestion if followed else None,
                    suggestion if followed else actions[sid],
                    mean_reward,
                    self.learning,
                )
                window_reward_sum[sid] = 0.0
            window_steps = 0

        for t in range(self.scenario.episode_steps):
            if t % interval == 0:
                report_windows()
            if advisor_on and t % interval == 0:
                for station in env.stations:
                    sid = station.id
                    prompt = build_prompt(station, env.neighbor_of(station), self.scenario.traffic)
                    sug = suggest(self.backend, prompt)
                    am = metrics.per_agent[sid]
                    am.llm_queries += 1
                    metrics.llm_queries += 1
                    metrics.llm_translation_failures += sug.translation_failed
                    metrics.llm_backend_errors += sug.backend_error
                    metrics.llm_latency_s += sug.latency_s
                    suggestions[sid] = sug.action
                    window_adopt[sid] = None
                    self._emit(
                        {
                            "type": "suggestion",
                            "episode": self.episodes_run,
                            "step": t,
                            "agent": sid,
                            "action": None if sug.action is None else int(sug.action),
                        }
                    )

            for station in env.stations:
                sid = station.id
                agent = self.agents[sid]
                a_rl = select_action(agent.q, obs[sid], agent.epsilon, agent.rng)
                suggestion = suggestions[sid]
                if suggestion is None or suggestion == a_rl:
                    actions[sid] = a_rl
                elif window_adopt[sid] is None:
                    action, adopted = combine_decision(suggestion, a_rl, agent.trust, agent.rng)
                    window_adopt[sid] = adopted
                    am = metrics.per_agent[sid]
                    am.llm_disagreements += 1
                    metrics.llm_disagreements += 1
                    if adopted:
                        am.llm_adoptions += 1
                        metrics.llm_adoptions += 1
                    actions[sid] = action
                else:
                    actions[sid] = suggestion if window_adopt[sid] else a_rl

            outcome = env.step(actions)

            for station in env.stations:
                sid = station.id
                agent = self.agents[sid]
                reward = outcome.rewards[sid]
                next_obs = observe(station)
                q_update(
                    agent.q, obs[sid], actions[sid], reward, next_obs,
                    self.learning.alpha, self.learning.gamma,
                )
                window_reward_sum[sid] += reward
                if cac_on and t % interval == 0:
                    # the controller is remote: it sees the transitions agents
                    # report at batch boundaries, not every step
                    accumulate(
                        self.histories[sid],
                        TransitionRecord(obs[sid], actions[sid], reward, outcome.psi[sid], self.global_step),
                    )
                obs[sid] = next_obs
                episode_return += reward
                ctr = outcome.counters[sid]
                am = metrics.per_agent[sid]
                am.dropped_requests += ctr.drops
                am.dropped_handoffs += ctr.handoff_failures
                am.dropped_admissions += ctr.dropped_admissions
            window_steps += 1

            metrics.dropped_requests_total += outcome.dropped_requests
            metrics.dropped_handoffs += outcome.dropped_handoffs
            metrics.dropped_admissions += outcome.dropped_admissions
            metrics.failure_steps += outcome.is_failure_step
            if self.events is not None:
                self._emit(
                    {
                        "type": "step",
                        "episode": self.episodes_run,
                        "step": t,
                        "dropped_requests": outcome.dropped_requests,
                        "dropped_handoffs": outcome.dropped_handoffs,
                        "dropped_admissions": outcome.dropped_admissions,
                        "failure": outcome.is_failure_step,
                    }
                )
            self.global_step += 1

        report_windows()
        metrics.episode_returns.append(episode_return)
        self.episodes_run += 1

        if cac_on and self.episodes_run % self.cac_interval_episodes == 0:
            for sid, history in self.histories.items():
                if not history.records:
                    continue
                delayed = evaluate(history, self.evaluator)
                apply_delayed(self.agents[sid].q, history, delayed, self.delayed_alpha)
                if delayed.value:
                    # the delayed reward is part of the agent's reward stream:
                    # folding it into the trust baseline raises the bar a
                    # followed suggestion must clear (a zero reward is a no-op)
                    update_trust(self.agents[sid].trust, None, Action.MAINTAIN, delayed.value, self.learning)
                self._emit(
                    {
                        "type": "delayed_reward",
                        "episode": self.episodes_run - 1,
                        "agent": sid,
                        "value": delayed.value,
                        "evaluator": self.evaluator.name,
                        "flagged": delayed.flagged,
                    }
                )

        if train:
            for agent in self.agents.values():
                agent.decay_epsilon()
        return metrics

    def run_phases(self, train_episodes: int, test_episodes: int) -> RunMetrics:
        """Train, freeze exploration at its floor, then test; only the test
        phase contributes to the returned metrics."""
        for _ in range(train_episodes):
            self.run_episode(train=True)
        for agent in self.agents.values():
            agent.freeze_epsilon()
        metrics = RunMetrics(per_agent={sid: AgentMetrics() for sid in self.agents})
        for _ in range(test_episodes):
            metrics.merge(self.run_episode(train=False))
        return metrics


def make_evaluator(backend_name: str, backend: CompletionBackend | None) -> Evaluator:
    """Default evaluator pairing: remote backends get the language-model
    evaluator, everything else the deterministic scripted one."""
    if backend_name == "remote" and isinstance(backend, RemoteBackend):
        return RemoteEvaluator(backend)
    return ScriptedEvaluator()


@dataclass
class CellSpec:
    """One experiment cell: a (configuration, traffic, seed) triple plus
    everything a worker needs to run it independently."""

    configuration: str
    traffic: str
    seed: int
    plan: ExperimentPlan
    collect_events: bool = False


@dataclass
class CellResult:
    row: dict[str, Any]
    events: list[dict]


def run_cell(spec: CellSpec) -> CellResult:
    """Train and test one cell; returns its results row and any events."""
    plan = spec.plan
    configuration = Configuration(spec.configuration)
    scenario = plan.scenario(spec.traffic)
    learning = LearningParams(**plan.learning_raw)
    backend = None
    evaluator = None
    if configuration.advisor_enabled:
        backend = make_backend(plan.backend, plan.replay_log)
    if configuration.cac_enabled:
        evaluator = make_evaluator(plan.backend, backend)
    events: list[dict] | None = [] if spec.collect_events else None
    runner = Runner(
        configuration,
        scenario,
        learning=learning,
        schedule=BatchSchedule(plan.batch_interval_steps),
        backend=backend,
        evaluator=evaluator,
        cac_interval_episodes=plan.cac_interval_episodes,
        delayed_alpha=plan.delayed_reward_alpha,
        seed=spec.seed,
        events=events,
        event_context={
            "config": spec.configuration,
            "traffic": spec.traffic,
            "seed": spec.seed,
        },
    )
    metrics = runner.run_phases(plan.train_episodes, plan.test_episodes)

    row: dict[str, Any] = {
        "config": spec.configuration,
        "traffic": spec.traffic,
        "seed": spec.seed,
        "test_episodes": plan.test_episodes,
        "episode_steps": plan.episode_steps,
        "dropped_requests_total": metrics.dropped_requests_total,
        "dropped_handoffs": metrics.dropped_handoffs,
        "dropped_admissions": metrics.dropped_admissions,
        "failure_steps": metrics.failure_steps,
        "llm_queries": metrics.llm_queries,
        "llm_adoptions": metrics.llm_adoptions,
        "llm_disagreements": metrics.llm_disagreements,
        "llm_translation_failures": metrics.llm_translation_failures,
        "llm_backend_errors": metrics.llm_backend_errors,
        "usage_rate": metrics.usage_rate,
        "mean_episode_return": float(np.mean(metrics.episode_returns)) if metrics.episode_returns else 0.0,
    }
    for station in scenario.stations:
        am = metrics.per_agent[station.id]
        prefix = station.id
        row[f"{prefix}_dropped_requests"] = am.dropped_requests
        row[f"{prefix}_dropped_handoffs"] = am.dropped_handoffs
        row[f"{prefix}_dropped_admissions"] = am.dropped_admissions
        row[f"{prefix}_llm_queries"] = am.llm_queries
        row[f"{prefix}_llm_adoptions"] = am.llm_adoptions
        row[f"{prefix}_llm_disagreements"] = am.llm_disagreements
        row[f"{prefix}_usage_rate"] = am.usage_rate
    return CellResult(row=row, events=events or [])


def plan_cells(plan: ExperimentPlan, collect_events: bool = False) -> list[CellSpec]:
    return [
        CellSpec(configuration=c, traffic=t, seed=s, plan=plan, collect_events=collect_events)
        for c in plan.configurations
        for t in plan.traffic_levels
        for s in plan.seeds
    ]


def write_results_csv(rows: list[dict[str, Any]], path: str | Path) -> None:
    """Serialize result rows deterministically (stable column order, repr
    floats, LF line endings) so identical runs are byte-identical."""
    if not rows:
        raise ValueError("no result rows to write")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fieldnames = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([_format_cell(row[k]) for k in fieldnames])


def _format_cell(value: Any) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_results_csv(path: str | Path) -> list[dict[str, Any]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"results file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for raw in reader:
            row: dict[str, Any] = {}
            for key, value in raw.items():
                if key in ("config", "traffic"):
                    row[key] = value
                elif key == "seed" or key.endswith(("_episodes", "_steps")) or (
                    value is not None and _is_int(value)
                ):
                    row[key] = int(value)
                else:
                    row[key] = float(value)
            rows.append(row)
    return rows


def _is_int(text: str) -> bool:
    try:
        int(text)
        return True
    except ValueError:
        return False


def run_experiment(
    plan: ExperimentPlan,
    out_dir: str | Path,
    parallelism: int = 1,
    collect_events: bool = False,
) -> list[dict[str, Any]]:
    """Run the whole plan and write results.csv (plus events.jsonl when
    requested) under ``out_dir``. Cells run independently; results are
    collected and written in plan order regardless of scheduling."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = plan_cells(plan, collect_events)
    if parallelism > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(run_cell, cells))
    else:
        results = [run_cell(cell) for cell in cells]

    rows = [res.row for res in results]
    write_results_csv(rows, out_dir / "results.csv")
    if collect_events:
        with open(out_dir / "events.jsonl", "w") as fh:
            for res in results:
                for event in res.events:
                    fh.write(json.dumps(event, sort_keys=True) + "\n")
    return rows
