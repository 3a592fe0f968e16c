"""Statistics pipeline: frozen reference fixtures plus structural
properties of the rank tests and special functions.

The expected values below were computed ahead of time from the
definitional formulas (ranking via an independent implementation, tail
probabilities via arbitrary-precision quadrature), so they do not depend
on the code under test.
"""

import math

import numpy as np
import pytest

from aura.stats import (
    PairwiseResult,
    analyze_results,
    chi_square_sf,
    dunn_posthoc,
    holm_adjust,
    kruskal_dunn,
    kruskal_wallis,
    midranks,
    normal_sf,
    significance_stars,
)

# fixture id -> (groups, H, p, [(control-vs-j z, raw_p), ...])
REFERENCE_CASES = {
    "spread": (
        [[1, 2, 3], [4, 5, 6], [7, 8, 9]],
        7.2,
        0.02732372244729256,
        [(-1.3416407864998738, 0.17971249487899976), (-2.6832815729997477, 0.007290358091535638)],
    ),
    "tied_counts": (
        [[0, 0, 1, 1, 2], [1, 2, 2, 3, 3], [3, 3, 4, 5, 5]],
        10.515555555555556,
        0.005206862677722676,
        [(-1.5121728296285006, 0.13048990112711467), (-3.24037034920393, 0.001193745444872003)],
    ),
    "unequal_sizes": (
        [[27, 31, 33, 29], [32, 34, 37, 36, 38], [25, 24, 27, 26]],
        9.872727272727275,
        0.00718066245418747,
        [(-1.6003041492367256, 0.10953112684056657), (1.4545454545454546, 0.14579514095197602)],
    ),
    "two_groups": (
        [[6.4, 6.8, 7.2, 8.3, 8.4, 9.1, 9.4, 9.7], [2.5, 3.7, 4.9, 5.4, 5.9, 8.1, 8.2]],
        6.482142857142861,
        0.010896354195387424,
        [(2.5460052743745165, 0.010896354195387436)],
    ),
    "heavy_ties": (
        [[1, 1, 1, 2], [1, 2, 2, 2], [2, 3, 3, 3]],
        7.300595238095244,
        0.025983394474756775,
        [(-0.940174755792013, 0.3471279283515061), (-2.663828474744037, 0.007725694453465987)],
    ),
    "duplicates": (
        [[10, 12, 12, 14, 15, 16], [9, 9, 11, 13, 13], [17, 18, 18, 20, 21, 22, 22]],
        13.048616874135549,
        0.0014673335497330314,
        [(0.9097595931283565, 0.3629493084863483), (-2.587977474239483, 0.009654129367327796)],
    ),
}


def _as_groups(raw):
    return [(f"g{i}", vals) for i, vals in enumerate(raw)]


@pytest.mark.parametrize("name", sorted(REFERENCE_CASES))
def test_kruskal_wallis_reference(name):
    raw, h_ref, p_ref, _ = REFERENCE_CASES[name]
    h, p = kruskal_wallis(_as_groups(raw))
    assert h == pytest.approx(h_ref, abs=1e-9)
    assert p == pytest.approx(p_ref, abs=1e-9)


@pytest.mark.parametrize("name", sorted(REFERENCE_CASES))
def test_dunn_reference(name):
    raw, _, _, pairs_ref = REFERENCE_CASES[name]
    results = dunn_posthoc(_as_groups(raw), "g0")
    assert len(results) == len(pairs_ref)
    for res, (z_ref, raw_p_ref) in zip(results, pairs_ref):
        assert res.z == pytest.approx(z_ref, abs=1e-9)
        assert res.raw_p == pytest.approx(raw_p_ref, abs=1e-9)


def test_identical_groups_are_degenerate_not_an_error():
    h, p = kruskal_wallis([("a", [5, 5]), ("b", [5, 5])])
    assert h == 0.0
    assert p == 1.0
    res = dunn_posthoc([("a", [5, 5]), ("b", [5, 5])], "a")
    assert res[0].z == 0.0
    assert res[0].raw_p == pytest.approx(1.0)


def test_rank_invariance_under_monotone_transform(rng):
    groups = [(f"g{i}", rng.integers(0, 12, size=9).astype(float)) for i in range(3)]
    h1, p1 = kruskal_wallis(groups)
    transformed = [(lbl, np.exp(vals / 3.0)) for lbl, vals in groups]
    h2, p2 = kruskal_wallis(transformed)
    assert h1 == pytest.approx(h2, abs=1e-9)
    assert p1 == pytest.approx(p2, abs=1e-9)


def test_permutation_symmetry(rng):
    groups = [(f"g{i}", rng.integers(0, 8, size=7).astype(float)) for i in range(3)]
    h1, _ = kruskal_wallis(groups)
    shuffled_within = [(lbl, vals[rng.permutation(len(vals))]) for lbl, vals in groups]
    h2, _ = kruskal_wallis(shuffled_within)
    assert h1 == pytest.approx(h2, abs=1e-12)

    reordered = [groups[2], groups[0], groups[1]]
    res_a = {r.pair: (r.z, r.adjusted_p) for r in dunn_posthoc(groups, "g0")}
    res_b = {r.pair: (r.z, r.adjusted_p) for r in dunn_posthoc(reordered, "g0")}
    for pair, (z, ap) in res_a.items():
        assert res_b[pair][0] == pytest.approx(z, abs=1e-12)
        assert res_b[pair][1] == pytest.approx(ap, abs=1e-12)


def test_holm_fixture():
    assert holm_adjust([0.01, 0.04]) == pytest.approx([0.02, 0.04])


def test_holm_preserves_input_order():
    adjusted = holm_adjust([0.04, 0.01])
    assert adjusted == pytest.approx([0.04, 0.02])


def test_holm_dominance(rng):
    for _ in range(200):
        m = int(rng.integers(1, 7))
        raw = rng.random(m).tolist()
        holm = holm_adjust(raw)
        for r, h in zip(raw, holm):
            bonferroni = min(1.0, m * r)
            assert r <= h + 1e-15
            assert h <= bonferroni + 1e-15
    # sorted by raw p, adjusted values are non-decreasing
    raw = sorted(rng.random(6))
    holm = holm_adjust(raw)
    assert all(a <= b + 1e-15 for a, b in zip(holm, holm[1:]))


def test_validation_errors():
    with pytest.raises(ValueError, match="at least 2"):
        kruskal_wallis([("a", [1, 2, 3])])
    with pytest.raises(ValueError, match="empty"):
        kruskal_wallis([("a", [1.0]), ("b", [])])
    with pytest.raises(ValueError, match="at least 3"):
        kruskal_wallis([("a", [1.0]), ("b", [2.0])])
    with pytest.raises(ValueError, match="control"):
        dunn_posthoc([("a", [1, 2]), ("b", [3, 4])], "missing")


def test_midranks_mid_rank_ties():
    ranks = midranks(np.array([3.0, 1.0, 3.0, 2.0]))
    assert ranks.tolist() == [3.5, 1.0, 3.5, 2.0]


CHI2_CASES = [
    (7.2, 2, 0.02732372244729256),
    (0.0, 3, 1.0),
    (1.0, 1, 0.3173105078629141),
    (3.84145882069412, 1, 0.050000000000000176),
    (10.0, 4, 0.040427681994512805),
    (23.5, 7, 0.001394260350190088),
    (99.9, 30, 1.9255499057569932e-09),
    (5.991464547107979, 2, 0.05000000000000007),
]


@pytest.mark.parametrize("x,df,expected", CHI2_CASES)
def test_chi_square_sf(x, df, expected):
    assert chi_square_sf(x, df) == pytest.approx(expected, abs=1e-10)


def test_chi_square_sf_df2_closed_form():
    # for two degrees of freedom the tail is exactly exp(-x/2)
    for x in (0.5, 3.6, 7.2, 20.0):
        assert chi_square_sf(2 * x, 2) == pytest.approx(math.exp(-x), abs=1e-12)


NORMAL_CASES = [
    (0.0, 0.5),
    (1.0, 0.15865525393145705),
    (1.959963984540054, 0.025000000000000012),
    (-2.5, 0.9937903346742238),
    (3.0909882, 0.0009974578079139013),
    (8.0, 6.220960574271784e-16),
]


@pytest.mark.parametrize("z,expected", NORMAL_CASES)
def test_normal_sf(z, expected):
    assert normal_sf(z) == pytest.approx(expected, abs=1e-12)


def test_special_function_input_validation():
    with pytest.raises(ValueError):
        chi_square_sf(-1.0, 2)
    with pytest.raises(ValueError):
        chi_square_sf(1.0, 0)


def test_significance_stars():
    assert significance_stars(0.2) == ""
    assert significance_stars(0.049) == "*"
    assert significance_stars(0.009) == "**"
    assert significance_stars(0.0009) == "***"


def test_kruskal_dunn_composite():
    raw, h_ref, p_ref, _ = REFERENCE_CASES["spread"]
    result = kruskal_dunn(_as_groups(raw), "g0")
    assert result.h_statistic == pytest.approx(h_ref, abs=1e-9)
    assert result.degrees_of_freedom == 2
    assert result.p_value == pytest.approx(p_ref, abs=1e-9)
    assert all(isinstance(p, PairwiseResult) for p in result.pairwise)
    # Holm never lowers a p-value
    for pair in result.pairwise:
        assert pair.adjusted_p >= pair.raw_p - 1e-15


def test_analyze_results_rows():
    rows = []
    for traffic in ("low", "high"):
        for config in ("marl_only", "guided_marl", "aura"):
            for seed in range(4):
                base = {"marl_only": 30, "guided_marl": 20, "aura": 10}[config]
                rows.append(
                    {
                        "config": config,
                        "traffic": traffic,
                        "seed": seed,
                        "dropped_requests_total": base + seed,
                        "rural_dropped_requests": base // 2 + seed,
                        "urban_dropped_requests": base // 2,
                    }
                )
    out = analyze_results(rows)
    # 2 traffic levels x 3 agents (system, rural, urban) x 2 comparisons
    assert len(out) == 12
    sample = out[0]
    assert set(sample) == {"agent", "traffic", "H", "df", "p", "pair", "z", "raw_p", "holm_p", "stars"}
    assert all(row["pair"].startswith("marl_only vs ") for row in out)
    assert all(0.0 <= row["holm_p"] <= 1.0 for row in out)
