"""Time-to-infection estimates from application-specific distributions.

For every (device, app) pair the time-to-infection (TTI) is the time from the
app's first observation on the device until the device's infection: zero if
the device was already infected, infinite if it never was.  Apps are
summarized by the median TTI; pairs of co-occurring apps whose joint median
beats both members are kept as groups.  A device's estimate is the smallest
median among its apps and kept groups.
"""

from __future__ import annotations

import math
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from itertools import combinations

from .datastore import DeviceProfile
from .identity import PackageId
from .matching import INFECTED

__all__ = [
    "TTIObservation",
    "TTISummary",
    "collect_tti",
    "lower_median",
    "summarize_app",
    "summarize_apps",
    "candidate_groups",
    "device_expected_tti",
]

INF = math.inf


@dataclass(frozen=True, slots=True)
class TTIObservation:
    app: PackageId
    device: str
    tti: float


@dataclass(frozen=True)
class TTISummary:
    subject: PackageId | frozenset[PackageId]
    median_tti: float
    support: int

    @property
    def is_group(self) -> bool:
        return isinstance(self.subject, frozenset)

    def to_dict(self) -> dict:
        if self.is_group:
            subject = sorted(pid.text for pid in self.subject)
        else:
            subject = self.subject.text
        return {
            "subject": subject,
            "median_tti": None if math.isinf(self.median_tti) else self.median_tti,
            "support": self.support,
        }


def collect_tti(
    devices: Iterable[DeviceProfile],
    labels: Mapping[str, str],
    infection_times: Mapping[str, float],
) -> list[TTIObservation]:
    """One observation per (device, timestamped app).

    Raises:
        ValueError: an infected device has no infection time.
    """
    out = []
    for dev in devices:
        infected = labels.get(dev.device) == INFECTED
        if infected and dev.device not in infection_times:
            raise ValueError(f"infected device {dev.device} has no infection time")
        t_inf = infection_times.get(dev.device)
        for pid in sorted(dev.packages, key=lambda p: p.text):
            seen = dev.packages[pid]
            if seen is None:
                continue
            if not infected:
                tti = INF
            elif seen >= t_inf:
                tti = 0.0
            else:
                tti = float(t_inf - seen)
            out.append(TTIObservation(pid, dev.device, tti))
    return out


def lower_median(values: Sequence[float]) -> float:
    """Median over the extended reals; the lower middle element for even sizes."""
    if not values:
        raise ValueError("median of an empty sample")
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def summarize_app(observations: Sequence[TTIObservation]) -> TTISummary:
    if not observations:
        raise ValueError("no observations to summarize")
    apps = {o.app for o in observations}
    if len(apps) != 1:
        raise ValueError("observations belong to more than one app")
    return TTISummary(observations[0].app, lower_median([o.tti for o in observations]), len(observations))


def summarize_apps(observations: Iterable[TTIObservation]) -> dict[PackageId, TTISummary]:
    by_app: dict[PackageId, list[TTIObservation]] = defaultdict(list)
    for o in observations:
        by_app[o.app].append(o)
    return {app: summarize_app(by_app[app]) for app in sorted(by_app, key=lambda p: p.text)}


def candidate_groups(
    app_summaries: Mapping[PackageId, TTISummary],
    observations: Iterable[TTIObservation],
    max_group_size: int = 2,
    min_support: int = 2,
) -> list[TTISummary]:
    """Groups of co-occurring apps whose median TTI beats every member's.

    A group's TTI on a device is measured from the latest first observation
    among its members, which is the smallest member TTI on that device.  Only
    groups seen together on at least ``min_support`` devices are considered.
    """
    if max_group_size < 2:
        return []
    per_device: dict[str, dict[PackageId, float]] = defaultdict(dict)
    for o in observations:
        if o.app in app_summaries:
            per_device[o.device][o.app] = o.tti
    group_tti: dict[tuple[PackageId, ...], list[float]] = defaultdict(list)
    for device in sorted(per_device):
        ttis = per_device[device]
        apps = sorted(ttis, key=lambda p: p.text)
        for size in range(2, max_group_size + 1):
            for combo in combinations(apps, size):
                group_tti[combo].append(min(ttis[a] for a in combo))
    kept = []
    for combo in sorted(group_tti, key=lambda c: tuple(p.text for p in c)):
        values = group_tti[combo]
        if len(values) < min_support:
            continue
        median = lower_median(values)
        if all(median < app_summaries[a].median_tti for a in combo):
            kept.append(TTISummary(frozenset(combo), median, len(values)))
    return kept


def device_expected_tti(
    device: DeviceProfile | Iterable[PackageId],
    app_summaries: Mapping[PackageId, TTISummary],
    group_summaries: Iterable[TTISummary] = (),
) -> float:
    """Smallest median TTI over the device's apps and the kept groups it contains."""
    apps = set(device.packages) if isinstance(device, DeviceProfile) else set(device)
    best = INF
    for app in apps:
        summary = app_summaries.get(app)
        if summary is not None and summary.median_tti < best:
            best = summary.median_tti
    for group in group_summaries:
        if group.median_tti < best and group.subject <= apps:
            best = group.median_tti
    return best
