"""Incidence of infection: devcert-only and full-identifier matching.

Two matchers with different strictness:

* ``match_dc_only`` flags a device when any of its packages is signed with a
  devcert that also signs a malware sample.  Vendors that sign both benign and
  malicious packages make this an over-estimate.
* ``match_dcpv`` flags a device only when a package matches a malware sample on
  devcert, name and version code.  This is the conservative lower bound.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass

from .datastore import DeviceProfile, MalwareSet, Source, _rows
from .errors import DataError, ParseError
from .identity import PackageKey, canonical_hex

__all__ = [
    "INFECTED",
    "CLEAN",
    "IncidenceReport",
    "ExclusionList",
    "match_dc_only",
    "match_dcpv",
    "incidence",
    "label_devices",
    "infected_by",
    "infection_times",
    "infection_rate",
    "region_lower_bounds",
    "load_exclusions",
    "load_markers",
]

INFECTED = "infected"
CLEAN = "clean"


@dataclass(frozen=True)
class IncidenceReport:
    """Counters of one matching run.  Fields not computed by a matcher are None."""

    total_devices: int
    n_c: int | None = None
    n_p: int | None = None
    n_inf_dc: int | None = None
    rate_dc: float | None = None
    n_cpv: int | None = None
    n_inf_dcpv: int | None = None
    rate_dcpv: float | None = None

    def merge(self, other: IncidenceReport) -> IncidenceReport:
        if other.total_devices != self.total_devices:
            raise ValueError("cannot merge reports over different populations")
        fields = asdict(self)
        for k, v in asdict(other).items():
            if v is not None:
                fields[k] = v
        return IncidenceReport(**fields)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ExclusionList:
    """``(dc, p)`` keys left out of full-identifier matching.

    Used for vendors that reuse one version code across releases, which makes
    the version component meaningless for that key.
    """

    keys: frozenset[PackageKey] = frozenset()

    def __contains__(self, key: object) -> bool:
        return key in self.keys


def _rate_or_none(infected: int, total: int) -> float | None:
    return infection_rate(infected, total) if total else None


def match_dc_only(devices: Sequence[DeviceProfile], malware: MalwareSet) -> IncidenceReport:
    bad_dc = malware.dc_index
    seen_dc: set[str] = set()
    seen_pkgs = set()
    infected = set()
    for dev in devices:
        for pid in dev.packages:
            if pid.dc in bad_dc:
                seen_dc.add(pid.dc)
                seen_pkgs.add(pid)
                infected.add(dev.device)
    total = len({d.device for d in devices})
    return IncidenceReport(
        total_devices=total,
        n_c=len(seen_dc),
        n_p=len(seen_pkgs),
        n_inf_dc=len(infected),
        rate_dc=_rate_or_none(len(infected), total),
    )


def _dcpv_hits(dev: DeviceProfile, malware: MalwareSet, excl: ExclusionList | None):
    ids = malware.ids
    keys = excl.keys if excl is not None else frozenset()
    return [pid for pid in dev.packages if pid in ids and (not keys or pid.key not in keys)]


def match_dcpv(
    devices: Sequence[DeviceProfile], malware: MalwareSet, excl: ExclusionList | None = None
) -> IncidenceReport:
    matched = set()
    infected = set()
    for dev in devices:
        hits = _dcpv_hits(dev, malware, excl)
        if hits:
            matched.update(hits)
            infected.add(dev.device)
    total = len({d.device for d in devices})
    return IncidenceReport(
        total_devices=total,
        n_cpv=len(matched),
        n_inf_dcpv=len(infected),
        rate_dcpv=_rate_or_none(len(infected), total),
    )


def incidence(
    devices: Sequence[DeviceProfile], malware: MalwareSet, excl: ExclusionList | None = None
) -> IncidenceReport:
    """Both matchers on the same inputs, merged into one report."""
    return match_dc_only(devices, malware).merge(match_dcpv(devices, malware, excl))


def infected_by(
    devices: Iterable[DeviceProfile], malware: MalwareSet, excl: ExclusionList | None = None
) -> dict[str, frozenset]:
    """Map each device to the malware PackageIds it holds (empty when clean)."""
    return {dev.device: frozenset(_dcpv_hits(dev, malware, excl)) for dev in devices}


def label_devices(
    devices: Iterable[DeviceProfile], malware: MalwareSet, excl: ExclusionList | None = None
) -> dict[str, str]:
    return {
        device: INFECTED if hits else CLEAN
        for device, hits in infected_by(devices, malware, excl).items()
    }


def infection_times(
    devices: Iterable[DeviceProfile], malware: MalwareSet, excl: ExclusionList | None = None
) -> dict[str, float]:
    """Infection time per infected device: earliest first_seen of its malware.

    Infected devices whose malware carries no timestamp are left out; the risk
    estimator reports them as missing.
    """
    out = {}
    for dev in devices:
        times = [dev.packages[pid] for pid in _dcpv_hits(dev, malware, excl)]
        times = [t for t in times if t is not None]
        if times:
            out[dev.device] = min(times)
    return out


def infection_rate(infected: int, total: int) -> float:
    if total <= 0:
        raise ValueError("infection rate needs a positive device count")
    if not 0 <= infected <= total:
        raise ValueError(f"infected count {infected} outside [0, {total}]")
    return infected / total


def region_lower_bounds(
    labels: Mapping[str, str],
    devices: Iterable[DeviceProfile],
    markers: Mapping[str, str],
) -> dict[str, int]:
    """Count infected devices per region, using region-specific package names.

    Markers match on package name alone.  A device carrying markers of several
    regions counts toward each of them.
    """
    if not markers:
        return {}
    counts: dict[str, int] = {}
    for dev in devices:
        if labels.get(dev.device) != INFECTED:
            continue
        regions = {markers[pid.p] for pid in dev.packages if pid.p in markers}
        for region in regions:
            counts[region] = counts.get(region, 0) + 1
    return dict(sorted(counts.items()))


def load_exclusions(source: Source) -> ExclusionList:
    keys = set()
    for line, row in _rows(source, ("dc", "p"), "exclusion list"):
        try:
            keys.add(PackageKey(row["dc"], row["p"]))
        except DataError as exc:
            raise ParseError(str(exc), line=line) from None
    return ExclusionList(frozenset(keys))


def load_markers(source: Source) -> dict[str, str]:
    """Read a ``p,region`` marker CSV.  Hashed names are lowercased."""
    markers: dict[str, str] = {}
    for line, row in _rows(source, ("p", "region"), "marker map"):
        name = row["p"].strip()
        region = row["region"].strip()
        if not name or not region:
            raise ParseError("empty package name or region", line=line)
        try:
            name = canonical_hex(name)
        except DataError:
            pass
        if markers.get(name, region) != region:
            raise ParseError(f"marker {name!r} mapped to two regions", line=line)
        markers[name] = region
    return markers
