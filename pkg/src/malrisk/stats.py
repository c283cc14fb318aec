"""Cohort comparisons between infected and clean devices.

Battery life and installed-app counts are compared with a Wilcoxon rank-sum
test (normal approximation, tie-corrected variance, no continuity
correction).  Outliers are trimmed per group above a nearest-rank percentile.
"""

from __future__ import annotations

import math
import statistics
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import chi2 as chi2_dist
from scipy.stats import norm, rankdata

from .datastore import DeviceProfile
from .matching import CLEAN, INFECTED

__all__ = [
    "SampleGroup",
    "TestResult",
    "CohortPanel",
    "remove_high_outliers",
    "nearest_rank",
    "match_by_model_os",
    "wilcoxon_rank_sum",
    "pearson",
    "chi2_two_proportions",
    "cohort_panel",
    "cohort_report",
    "METRICS",
]

METRICS = ("battery_life_hours", "app_count")


@dataclass(frozen=True)
class SampleGroup:
    label: str
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        values = tuple(float(v) for v in self.values)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"non-finite value in group {self.label!r}")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float | None
    n1: int
    n2: int
    method: str
    rank_sum: float | None = None

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        return asdict(self)


def _values(x: SampleGroup | Iterable[float]) -> np.ndarray:
    if isinstance(x, SampleGroup):
        return np.asarray(x.values, dtype=np.float64)
    arr = np.asarray(list(x), dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("values must be finite")
    return arr


def nearest_rank(values: Sequence[float], percentile: float) -> float:
    """Value at 1-based position ``ceil(p/100 * n)`` of the sorted values."""
    if not len(values):
        raise ValueError("percentile of an empty sample")
    if not 0 < percentile < 100:
        raise ValueError("percentile must be in (0, 100)")
    ordered = sorted(values)
    rank = max(1, math.ceil(percentile / 100.0 * len(ordered)))
    return ordered[rank - 1]


def remove_high_outliers(values: Sequence[float], percentile: float = 95) -> tuple[list[float], int]:
    """Drop values strictly above the nearest-rank percentile.

    Returns the kept values in their original order and the number removed.
    """
    threshold = nearest_rank(values, percentile)
    kept = [v for v in values if v <= threshold]
    return kept, len(values) - len(kept)


def match_by_model_os(
    clean: Iterable[DeviceProfile], infected: Iterable[DeviceProfile]
) -> list[DeviceProfile]:
    """Clean devices sharing a (model, os_version) pair with some infected device."""
    pairs = {
        (d.model, d.os_version)
        for d in infected
        if d.model is not None and d.os_version is not None
    }
    return [
        d for d in clean
        if d.model is not None and d.os_version is not None and (d.model, d.os_version) in pairs
    ]


def wilcoxon_rank_sum(a: SampleGroup | Iterable[float], b: SampleGroup | Iterable[float]) -> TestResult:
    """Two-sided Wilcoxon rank-sum test, normal approximation.

    ``statistic`` is Z, negative when ``a`` tends to rank below ``b``;
    ``rank_sum`` is the sum of mid-ranks of ``a`` in the pooled sample.
    """
    x, y = _values(a), _values(b)
    n1, n2 = len(x), len(y)
    if n1 == 0 or n2 == 0:
        raise ValueError("both groups need at least one value")
    pooled = np.concatenate([x, y])
    ranks = rankdata(pooled)  # mid-ranks for ties
    w = float(ranks[:n1].sum())
    n = n1 + n2
    expected = n1 * (n + 1) / 2.0
    _, tie_sizes = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(tie_sizes.astype(np.float64) ** 3 - tie_sizes))
    correction = tie_term / (n * (n - 1)) if n > 1 else 0.0
    variance = n1 * n2 / 12.0 * ((n + 1) - correction)
    if variance <= 0:
        return TestResult(0.0, 1.0, n1, n2, "wilcoxon-rank-sum", w)
    z = (w - expected) / math.sqrt(variance)
    p = min(1.0, 2.0 * float(norm.sf(abs(z))))
    return TestResult(z, p, n1, n2, "wilcoxon-rank-sum", w)


def pearson(x: Sequence[float], y: Sequence[float]) -> TestResult:
    """Sample correlation coefficient; no p-value is computed."""
    xa, ya = _values(x), _values(y)
    if len(xa) != len(ya):
        raise ValueError("x and y differ in length")
    if len(xa) < 2:
        raise ValueError("need at least two pairs")
    dx = xa - xa.mean()
    dy = ya - ya.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ValueError("correlation undefined for a constant sample")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    return TestResult(r, None, len(xa), len(ya), "pearson")


def chi2_two_proportions(k1: int, n1: int, k2: int, n2: int) -> TestResult:
    """Pearson chi-squared on the 2x2 table of successes/failures, df = 1."""
    for k, n in ((k1, n1), (k2, n2)):
        if n <= 0:
            raise ValueError("sample sizes must be positive")
        if not 0 <= k <= n:
            raise ValueError(f"count {k} outside [0, {n}]")
    observed = np.array([[k1, n1 - k1], [k2, n2 - k2]], dtype=np.float64)
    total = n1 + n2
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0)) / total
    if np.any(expected == 0):
        raise ValueError("degenerate table: an expected cell count is zero")
    stat = float(np.sum((observed - expected) ** 2 / expected))
    p = float(chi2_dist.sf(stat, 1))
    return TestResult(stat, p, n1, n2, "chi2-two-proportions")


@dataclass(frozen=True)
class CohortPanel:
    match_models: bool
    remove_outliers: bool
    n_inf: int
    n_clean: int
    removed_inf: int
    removed_clean: int
    mean_inf: float
    median_inf: float
    mean_clean: float
    median_clean: float
    diff_pct: float | None
    Z: float
    p: float
    pearson_battery_apps: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def _metric(dev: DeviceProfile, metric: str) -> float | None:
    if metric == "battery_life_hours":
        return dev.battery_life_hours
    if metric == "app_count":
        return float(dev.app_count)
    raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")


def _trim(devs: list[DeviceProfile], metric: str) -> tuple[list[DeviceProfile], int]:
    threshold = nearest_rank([_metric(d, metric) for d in devs], 95)
    kept = [d for d in devs if _metric(d, metric) <= threshold]
    return kept, len(devs) - len(kept)


def _battery_app_correlation(devs: Sequence[DeviceProfile]) -> float | None:
    pairs = [(d.battery_life_hours, d.app_count) for d in devs if d.battery_life_hours is not None]
    if len(pairs) < 2:
        return None
    try:
        return pearson([p[0] for p in pairs], [p[1] for p in pairs]).statistic
    except ValueError:
        return None


def cohort_panel(
    devices: Iterable[DeviceProfile],
    labels: Mapping[str, str],
    metric: str,
    match_models: bool = False,
    remove_outliers: bool = False,
) -> CohortPanel:
    devs = [d for d in devices if d.device in labels and _metric(d, metric) is not None]
    infected = [d for d in devs if labels[d.device] == INFECTED]
    clean = [d for d in devs if labels[d.device] == CLEAN]
    if match_models:
        clean = match_by_model_os(clean, infected)
    if not infected:
        raise ValueError(f"no {metric} values for class '{INFECTED}'")
    if not clean:
        raise ValueError(f"no {metric} values for class '{CLEAN}'")
    removed_inf = removed_clean = 0
    if remove_outliers:
        infected, removed_inf = _trim(infected, metric)
        clean, removed_clean = _trim(clean, metric)
    inf_values = [_metric(d, metric) for d in infected]
    clean_values = [_metric(d, metric) for d in clean]
    mean_inf, mean_clean = statistics.fmean(inf_values), statistics.fmean(clean_values)
    test = wilcoxon_rank_sum(inf_values, clean_values)
    return CohortPanel(
        match_models=match_models,
        remove_outliers=remove_outliers,
        n_inf=len(inf_values),
        n_clean=len(clean_values),
        removed_inf=removed_inf,
        removed_clean=removed_clean,
        mean_inf=mean_inf,
        median_inf=statistics.median(inf_values),
        mean_clean=mean_clean,
        median_clean=statistics.median(clean_values),
        # relative to the clean mean; positive when infected devices score lower
        diff_pct=(mean_clean - mean_inf) / mean_clean * 100.0 if mean_clean else None,
        Z=test.statistic,
        p=test.p_value,
        pearson_battery_apps=_battery_app_correlation(infected + clean),
    )


def cohort_report(
    devices: Sequence[DeviceProfile], labels: Mapping[str, str], metric: str
) -> dict[str, CohortPanel]:
    """All four (model matching, outlier removal) panels for one metric."""
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    report = {}
    for match_models in (False, True):
        for remove_outliers in (False, True):
            name = ("matched" if match_models else "all") + ("/trimmed" if remove_outliers else "/raw")
            report[name] = cohort_panel(devices, labels, metric, match_models, remove_outliers)
    return report
