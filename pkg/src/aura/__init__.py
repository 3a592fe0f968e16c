"""Two-base-station network overload simulator with tabular Q-learning
agents, a trust-gated advisory loop, delayed reward shaping, and a
nonparametric statistics pipeline."""

from .advisor import (
    AdvisorPrompt,
    RemoteBackend,
    ReplayBackend,
    ScriptedBackend,
    VerbalInstruction,
    apply_verbal_feedback,
    build_prompt,
    suggest,
    translate,
)
from .agent import (
    Action,
    LearningParams,
    Observation,
    QLearningAgent,
    QTable,
    TransitionRecord,
    TrustScore,
    combine_decision,
    observe,
    q_update,
    select_action,
    update_trust,
)
from .alignment import (
    AgentHistory,
    DelayedReward,
    OrderingError,
    RemoteEvaluator,
    ScriptedEvaluator,
    accumulate,
    apply_delayed,
    evaluate,
)
from .config import (
    ConfigurationError,
    ExperimentPlan,
    RewardWeights,
    ScenarioConfig,
    StationKind,
    StationSpec,
    TrafficLevel,
    load_plan,
    load_scenario,
)
from .environment import (
    Coverage,
    EnvParams,
    Environment,
    StationState,
    StepOutcome,
    UserState,
    coverage_quality,
    handoff,
    immediate_reward,
)
from .orchestrator import (
    BatchSchedule,
    Configuration,
    RunMetrics,
    Runner,
    run_experiment,
)
from .stats import (
    chi_square_sf,
    dunn_posthoc,
    holm_adjust,
    kruskal_wallis,
    normal_sf,
)

__version__ = "0.1.0"
