import math

import pytest
from helpers import device, pid
from hypothesis import assume, given
from hypothesis import strategies as st
from oracles import chi2_by_hand, wilcoxon_exact

from malrisk.matching import CLEAN, INFECTED
from malrisk.stats import (
    chi2_two_proportions,
    cohort_panel,
    cohort_report,
    match_by_model_os,
    nearest_rank,
    pearson,
    remove_high_outliers,
    wilcoxon_rank_sum,
)


def test_nearest_rank_trim():
    values = list(range(1, 101))
    assert nearest_rank(values, 95) == 95
    kept, removed = remove_high_outliers(values)
    assert removed == 5
    assert kept == list(range(1, 96))
    assert remove_high_outliers([3.0] * 10) == ([3.0] * 10, 0)
    with pytest.raises(ValueError):
        remove_high_outliers([])


@given(st.lists(st.integers(-50, 50), min_size=1, max_size=60), st.sampled_from([50, 80, 90, 95, 99]))
def test_trim_removes_at_most_the_tail(values, p):
    kept, removed = remove_high_outliers(values, p)
    assert removed <= math.ceil(len(values) * (100 - p) / 100)
    assert removed + len(kept) == len(values)


def test_match_by_model_os():
    infected = [device(1, [], model="A", os_version="4.1")]
    clean = [
        device(2, [], model="A", os_version="4.1"),
        device(3, [], model="A", os_version="4.2"),
        device(4, [], model="B", os_version="4.1"),
    ]
    assert [d.device for d in match_by_model_os(clean, infected)] == [clean[0].device]
    assert match_by_model_os(clean, []) == []


def test_match_three_of_ten():
    infected = [device(0, [], model="A", os_version="1"), device(1, [], model="B", os_version="2")]
    pairs = [("A", "1"), ("B", "2"), ("A", "1")] + [("C", "1")] * 7
    clean = [device(10 + i, [], model=m, os_version=o) for i, (m, o) in enumerate(pairs)]
    assert len(match_by_model_os(clean, infected)) == 3


def test_wilcoxon_identical_samples():
    r = wilcoxon_rank_sum([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert r.statistic == 0 and r.p_value == 1
    const = wilcoxon_rank_sum([4, 4], [4, 4, 4])
    assert (const.statistic, const.p_value) == (0.0, 1.0)
    with pytest.raises(ValueError):
        wilcoxon_rank_sum([], [1])


def test_wilcoxon_small_case_against_enumeration():
    w, mean, var, _ = wilcoxon_exact([1, 2], [3, 4])
    r = wilcoxon_rank_sum([1, 2], [3, 4])
    assert r.rank_sum == w == 3
    assert r.statistic == pytest.approx((w - mean) / math.sqrt(var))
    assert r.statistic < 0


@given(
    st.lists(st.integers(0, 6), min_size=1, max_size=5),
    st.lists(st.integers(0, 6), min_size=1, max_size=5),
)
def test_wilcoxon_z_uses_exact_moments(a, b):
    # ties included: the tie-corrected variance is the exact permutation variance
    w, mean, var, _ = wilcoxon_exact(a, b)
    r = wilcoxon_rank_sum(a, b)
    assert r.rank_sum == pytest.approx(w)
    if var > 1e-12:
        assert r.statistic == pytest.approx((w - mean) / math.sqrt(var))


@given(
    st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20),
    st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20),
)
def test_wilcoxon_antisymmetry(a, b):
    ab, ba = wilcoxon_rank_sum(a, b), wilcoxon_rank_sum(b, a)
    assert ab.statistic == pytest.approx(-ba.statistic, abs=1e-9)
    assert ab.p_value == pytest.approx(ba.p_value, abs=1e-12)


def test_pearson_examples():
    x = [1.0, 2.0, 3.0, 4.0]
    assert pearson(x, x).statistic == pytest.approx(1.0)
    assert pearson(x, [-v for v in x]).statistic == pytest.approx(-1.0)
    y = [2.0, 4.0, 5.0, 4.0]
    # means 2.5 and 3.75; sxy = 3.5, sxx = 5, syy = 4.75
    assert pearson(x, y).statistic == pytest.approx(3.5 / math.sqrt(5 * 4.75))
    with pytest.raises(ValueError):
        pearson([1, 1, 1], [1, 2, 3])


@given(
    st.lists(st.floats(-100, 100), min_size=3, max_size=15),
    st.floats(0.1, 10),
    st.floats(-50, 50),
)
def test_pearson_affine_invariance(x, scale, shift):
    y = [v * v - v for v in x]
    assume(max(x) - min(x) > 1e-3 and max(y) - min(y) > 1e-3)
    r = pearson(x, y).statistic
    assert pearson([scale * v + shift for v in x], y).statistic == pytest.approx(r, abs=1e-6)


def test_chi2_examples():
    eq = chi2_two_proportions(10, 100, 20, 200)
    assert eq.statistic == 0 and eq.p_value == 1
    r = chi2_two_proportions(10, 100, 20, 100)
    assert r.statistic == pytest.approx(chi2_by_hand(10, 100, 20, 100))
    # expected cells 15/85 in both rows: 2 * (25/15 + 25/85)
    assert r.statistic == pytest.approx(2 * (25 / 15 + 25 / 85))
    with pytest.raises(ValueError):
        chi2_two_proportions(0, 10, 0, 10)


@given(st.integers(1, 200), st.integers(1, 200), st.data())
def test_chi2_symmetry(n1, n2, data):
    k1 = data.draw(st.integers(0, n1))
    k2 = data.draw(st.integers(0, n2))
    assume(0 < k1 + k2 < n1 + n2)
    a, b = chi2_two_proportions(k1, n1, k2, n2), chi2_two_proportions(k2, n2, k1, n1)
    assert a.statistic == pytest.approx(b.statistic)
    assert a.statistic == pytest.approx(chi2_by_hand(k1, n1, k2, n2))


def cohort(gap):
    devs, labels = [], {}
    for i in range(60):
        infected = i < 15
        battery = 9.0 + (i % 7) * 0.3 - (gap if infected else 0.0)
        d = device(i, [pid(j, f"a{j}") for j in range(1 + i % 5)], model="M", os_version=str(i % 2), battery_life_hours=battery)
        devs.append(d)
        labels[d.device] = INFECTED if infected else CLEAN
    return devs, labels


def test_planted_battery_gap():
    devs, labels = cohort(gap=2.0)
    panel = cohort_panel(devs, labels, "battery_life_hours")
    assert panel.mean_inf < panel.mean_clean
    assert panel.Z < 0
    assert panel.diff_pct > 0


def test_identical_distributions():
    devs, labels = [], {}
    for i in range(20):
        d = device(i, [pid(1)], model="M", os_version="1", battery_life_hours=5.0 + i % 10)
        devs.append(d)
        labels[d.device] = INFECTED if i < 10 else CLEAN
    panel = cohort_panel(devs, labels, "battery_life_hours")
    assert panel.diff_pct == pytest.approx(0)
    assert panel.p == pytest.approx(1)


def test_cohort_report_panels_and_errors():
    devs, labels = cohort(gap=1.0)
    report = cohort_report(devs, labels, "app_count")
    assert set(report) == {"all/raw", "all/trimmed", "matched/raw", "matched/trimmed"}
    with pytest.raises(ValueError, match="infected"):
        cohort_panel(devs, {d.device: CLEAN for d in devs}, "battery_life_hours")
    with pytest.raises(ValueError):
        cohort_report(devs, labels, "weight")
