"""Nonparametric comparison of result tables: Kruskal-Wallis across
configurations, then Dunn's pairwise post-hoc against the baseline with
Holm step-down correction. Mid-ranks with the standard tie corrections
throughout, since drop counts are small integers and tie-heavy.

The chi-square and normal upper-tail probabilities are computed here from
the regularized incomplete gamma function and the complementary error
function rather than pulled from a statistics package; this module is the
whole statistics surface of the project.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

SampleGroups = Sequence[tuple[str, Sequence[float]]]

_MAX_ITER = 500
_EPS = 1e-16


# -- special functions -----------------------------------------------------


def _gamma_p_series(s: float, x: float) -> float:
    """Lower regularized incomplete gamma by series expansion (x < s + 1)."""
    term = 1.0 / s
    total = term
    for n in range(1, _MAX_ITER):
        term *= x / (s + n)
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + s * math.log(x) - math.lgamma(s))

def _gamma_q_contfrac(s: float, x: float) -> float:
    """Upper regularized incomplete gamma by Lentz continued fraction
    (x >= s + 1)."""
    tiny = 1e-300
    b = x + 1.0 - s
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * math.exp(-x + s * math.log(x) - math.lgamma(s))


def regularized_gamma_q(s: float, x: float) -> float:
    """Q(s, x) = Gamma(s, x) / Gamma(s), the upper regularized incomplete
    gamma function, for s > 0, x >= 0."""
    if s <= 0:
        raise ValueError(f"shape must be positive, got {s}")
    if x < 0:
        raise ValueError(f"x must be non-negative, got {x}")
    if x == 0.0:
        return 1.0
    if x < s + 1.0:
        return 1.0 - _gamma_p_series(s, x)
    return _gamma_q_contfrac(s, x)


def chi_square_sf(x: float, df: int) -> float:
    """Upper-tail probability of the chi-square distribution."""
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    if x < 0:
        raise ValueError(f"x must be >= 0, got {x}")
    return regularized_gamma_q(df / 2.0, x / 2.0)


def normal_sf(z: float) -> float:
    """Upper-tail probability of the standard normal distribution."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


# -- ranking ---------------------------------------------------------------


def midranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..N with tied values sharing the average of their positions."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    n = len(values)
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _tie_sum(pooled: np.ndarray) -> float:
    """Sum of t^3 - t over tie groups."""
    _, counts = np.unique(pooled, return_counts=True)
    counts = counts.astype(np.float64)
    return float(np.sum(counts**3 - counts))


def _validate_groups(groups: SampleGroups) -> list[tuple[str, np.ndarray]]:
    if len(groups) < 2:
        raise ValueError(f"need at least 2 groups, got {len(groups)}")
    cleaned = []
    for label, values in groups:
        arr = np.asarray(values, dtype=np.float64)
        if arr.size == 0:
            raise ValueError(f"group {label!r} is empty")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"group {label!r} contains non-finite values")
        cleaned.append((str(label), arr))
    n_total = sum(arr.size for _, arr in cleaned)
    if n_total < 3:
        raise ValueError(f"need at least 3 observations in total, got {n_total}")
    return cleaned


# -- tests -----------------------------------------------------------------


def kruskal_wallis(groups: SampleGroups) -> tuple[float, float]:
    """Tie-corrected Kruskal-Wallis H and its chi-square p-value (df = k-1).

    All observations identical is a degenerate case, not an error: H = 0,
    p = 1.
    """
    cleaned = _validate_groups(groups)
    sizes = [arr.size for _, arr in cleaned]
    pooled = np.concatenate([arr for _, arr in cleaned])
    n = pooled.size
    ranks = midranks(pooled)

    h = 0.0
    start = 0
    for size in sizes:
        rank_sum = float(ranks[start : start + size].sum())
        h += rank_sum * rank_sum / size
        start += size
    h = 12.0 / (n * (n + 1)) * h - 3.0 * (n + 1)

    correction = 1.0 - _tie_sum(pooled) / (n**3 - n)
    if correction <= 0.0:
        return 0.0, 1.0
    h /= correction
    h = max(0.0, h)
    return h, chi_square_sf(h, len(cleaned) - 1)


@dataclass(frozen=True)
class PairwiseResult:
    pair: tuple[str, str]
    z: float
    raw_p: float
    adjusted_p: float


@dataclass(frozen=True)
class TestResult:
    h_statistic: float
    degrees_of_freedom: int
    p_value: float
    pairwise: tuple[PairwiseResult, ...]


def holm_adjust(raw_p: Sequence[float]) -> list[float]:
    """Holm step-down adjustment, preserving input order."""
    m = len(raw_p)
    order = sorted(range(m), key=lambda i: raw_p[i])
    adjusted = [0.0] * m
    running = 0.0
    for rank, idx in enumerate(order):
        running = max(running, (m - rank) * raw_p[idx])
        adjusted[idx] = min(1.0, running)
    return adjusted


def dunn_posthoc(groups: SampleGroups, control_label: str) -> list[PairwiseResult]:
    """Dunn's z comparisons of every group against the control, two-sided,
    with Holm-adjusted p-values; output keeps the input group order."""
    cleaned = _validate_groups(groups)
    labels = [label for label, _ in cleaned]
    if control_label not in labels:
        raise ValueError(f"control {control_label!r} not among groups {labels}")

    pooled = np.concatenate([arr for _, arr in cleaned])
    n = pooled.size
    ranks = midranks(pooled)
    mean_ranks: dict[str, float] = {}
    sizes: dict[str, int] = {}
    start = 0
    for label, arr in cleaned:
        mean_ranks[label] = float(ranks[start : start + arr.size].mean())
        sizes[label] = arr.size
        start += arr.size

    tie_term = _tie_sum(pooled) / (12.0 * (n - 1))
    variance = n * (n + 1) / 12.0 - tie_term

    comparisons = [label for label in labels if label != control_label]
    zs = []
    for label in comparisons:
        denom = variance * (1.0 / sizes[control_label] + 1.0 / sizes[label])
        if denom <= 0.0:
            zs.append(0.0)
        else:
            zs.append((mean_ranks[control_label] - mean_ranks[label]) / math.sqrt(denom))
    raw = [2.0 * normal_sf(abs(z)) for z in zs]
    adjusted = holm_adjust(raw)
    return [
        PairwiseResult((control_label, label), z, p, ap)
        for label, z, p, ap in zip(comparisons, zs, raw, adjusted)
    ]


def kruskal_dunn(groups: SampleGroups, control_label: str) -> TestResult:
    """Run the full pipeline for one metric: omnibus test plus post-hoc."""
    h, p = kruskal_wallis(groups)
    pairwise = dunn_posthoc(groups, control_label)
    return TestResult(h, len(list(groups)) - 1, p, tuple(pairwise))


def significance_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


# -- results.csv pipeline ----------------------------------------------------

_CONFIG_ORDER = ("marl_only", "guided_marl", "aura")
_TRAFFIC_ORDER = ("low", "normal", "high")
_CONTROL = "marl_only"


def _canonical(values: list[str], order: tuple[str, ...]) -> list[str]:
    known = [v for v in order if v in values]
    extra = sorted(set(values) - set(order))
    return known + extra


def dropped_request_columns(rows: list[dict[str, Any]]) -> dict[str, str]:
    """Per-agent dropped-request columns keyed by agent name, plus the
    pooled system total."""
    columns = {"system": "dropped_requests_total"}
    for key in rows[0]:
        if key.endswith("_dropped_requests"):
            columns[key[: -len("_dropped_requests")]] = key
    return columns


def analyze_results(rows: list[dict[str, Any]], control: str = _CONTROL) -> list[dict[str, Any]]:
    """Compare dropped requests across configurations for each agent and
    traffic level; returns one output row per pairwise comparison."""
    if not rows:
        raise ValueError("no result rows to analyze")
    configs = _canonical(sorted({r["config"] for r in rows}), _CONFIG_ORDER)
    traffics = _canonical(sorted({r["traffic"] for r in rows}), _TRAFFIC_ORDER)
    if len(configs) < 2:
        raise ValueError("statistics need at least 2 configurations")
    control_label = control if control in configs else configs[0]
    agent_columns = dropped_request_columns(rows)
    agents = ["system"] + sorted(a for a in agent_columns if a != "system")

    out: list[dict[str, Any]] = []
    for traffic in traffics:
        subset = [r for r in rows if r["traffic"] == traffic]
        for agent in agents:
            column = agent_columns[agent]
            groups = [
                (cfg, [float(r[column]) for r in subset if r["config"] == cfg])
                for cfg in configs
            ]
            result = kruskal_dunn(groups, control_label)
            for pair in result.pairwise:
                out.append(
                    {
                        "agent": agent,
                        "traffic": traffic,
                        "H": result.h_statistic,
                        "df": result.degrees_of_freedom,
                        "p": result.p_value,
                        "pair": f"{pair.pair[0]} vs {pair.pair[1]}",
                        "z": pair.z,
                        "raw_p": pair.raw_p,
                        "holm_p": pair.adjusted_p,
                        "stars": significance_stars(pair.adjusted_p),
                    }
                )
    return out


def write_stats_csv(stats_rows: list[dict[str, Any]], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fieldnames = ["agent", "traffic", "H", "df", "p", "pair", "z", "raw_p", "holm_p", "stars"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fieldnames)
        for row in stats_rows:
            writer.writerow(
                [repr(row[k]) if isinstance(row[k], float) else str(row[k]) for k in fieldnames]
            )
