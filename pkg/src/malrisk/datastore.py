"""Loading, validation and summaries for device-observation and malware datasets.

CSV layouts (UTF-8, header row required):

* device observations: ``device,dc,p,v,first_seen,translated_name,permission_count``
  (columns after ``v`` may be missing or empty)
* device metadata: ``device,model,os_version,battery_life_hours``
* malware: ``dc,p,v``
"""

from __future__ import annotations

import csv
import io
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from itertools import combinations
from types import MappingProxyType
from typing import IO, Union

from .errors import DataError, ParseError
from .identity import PackageId, PackageKey, canonical_hex, make_package_id

__all__ = [
    "CaratRecord",
    "DeviceProfile",
    "MalwareSet",
    "DatasetSummary",
    "DEVICE_COLUMNS",
    "META_COLUMNS",
    "MALWARE_COLUMNS",
    "read_device_records",
    "load_device_dataset",
    "load_malware_set",
    "summarize",
    "union_malware",
    "overlap_report",
    "write_device_csv",
    "write_metadata_csv",
    "write_malware_csv",
]

DEVICE_COLUMNS = ("device", "dc", "p", "v", "first_seen", "translated_name", "permission_count")
META_COLUMNS = ("device", "model", "os_version", "battery_life_hours")
MALWARE_COLUMNS = ("dc", "p", "v")

Source = Union[str, IO[str], Iterable[str]]


@dataclass(frozen=True, slots=True)
class CaratRecord:
    device: str
    pkg: PackageId
    first_seen: float | None = None
    translated_name: str | None = None
    permission_count: int | None = None


@dataclass(frozen=True)
class DeviceProfile:
    """All packages observed on one device plus optional device metadata.

    ``packages`` maps each PackageId to the earliest time it was seen (or None).
    """

    device: str
    packages: Mapping[PackageId, float | None]
    model: str | None = None
    os_version: str | None = None
    battery_life_hours: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "device", canonical_hex(self.device, "device"))
        if not isinstance(self.packages, MappingProxyType):
            object.__setattr__(self, "packages", MappingProxyType(dict(self.packages)))
        if self.battery_life_hours is not None and not self.battery_life_hours > 0:
            raise DataError(f"battery_life_hours must be > 0 for device {self.device}")

    @property
    def app_count(self) -> int:
        return len(self.packages)

    @property
    def keys(self) -> frozenset[PackageKey]:
        return frozenset(pid.key for pid in self.packages)


@dataclass(frozen=True)
class MalwareSet:
    name: str
    ids: frozenset[PackageId]
    dc_index: frozenset[str] = field(init=False)
    dcp_index: frozenset[PackageKey] = field(init=False)

    def __post_init__(self) -> None:
        ids = frozenset(self.ids)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "dc_index", frozenset(i.dc for i in ids))
        object.__setattr__(self, "dcp_index", frozenset(i.key for i in ids))

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, pid: object) -> bool:
        return pid in self.ids


@dataclass(frozen=True)
class DatasetSummary:
    distinct_devices: int = 0
    unique_package_names: int = 0
    unique_devcerts: int = 0
    unique_dcp: int = 0
    unique_dcpv: int = 0
    total_unique_records: int = 0


def _rows(source: Source, required: Sequence[str], what: str):
    """Yield ``(line_number, row_dict)`` from a CSV source, checking the header."""
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        return
    header = [h.strip() for h in header]
    missing = [c for c in required if c not in header]
    if missing:
        raise ParseError(f"{what} header is missing columns {missing}", line=1)
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) > len(header):
            raise ParseError(f"expected at most {len(header)} fields, got {len(row)}", line=line)
        yield line, dict(zip(header, row))


def _opt(row: Mapping[str, str], name: str) -> str | None:
    value = row.get(name)
    if value is None:
        return None
    value = value.strip()
    return value or None


def _opt_float(row, name, line) -> float | None:
    raw = _opt(row, name)
    if raw is None:
        return None
    try:
        value = float(raw)
    except ValueError:
        raise ParseError(f"not a number: {raw!r}", field=name, line=line) from None
    if value != value or value in (float("inf"), float("-inf")):
        raise ParseError(f"not a finite number: {raw!r}", field=name, line=line)
    return value


def read_device_records(source: Source) -> list[CaratRecord]:
    out = []
    for line, row in _rows(source, DEVICE_COLUMNS[:4], "device"):
        try:
            device = canonical_hex(row.get("device", ""), "device")
        except DataError as exc:
            raise ParseError(str(exc), field="device", line=line) from None
        pkg = make_package_id(row.get("dc", ""), row.get("p", ""), row.get("v", ""), line=line)
        first_seen = _opt_float(row, "first_seen", line)
        if first_seen is not None and first_seen < 0:
            raise ParseError("first_seen must be >= 0", field="first_seen", line=line)
        perm = _opt(row, "permission_count")
        if perm is not None:
            if not perm.isdigit():
                raise ParseError(f"bad permission_count {perm!r}", field="permission_count", line=line)
            perm = int(perm)
        out.append(CaratRecord(device, pkg, first_seen, _opt(row, "translated_name"), perm))
    return out


def _read_metadata(source: Source) -> dict[str, tuple[str | None, str | None, float | None]]:
    meta: dict[str, tuple[str | None, str | None, float | None]] = {}
    for line, row in _rows(source, META_COLUMNS[:1], "device metadata"):
        try:
            device = canonical_hex(row.get("device", ""), "device")
        except DataError as exc:
            raise ParseError(str(exc), field="device", line=line) from None
        battery = _opt_float(row, "battery_life_hours", line)
        if battery is not None and battery <= 0:
            raise ParseError("battery_life_hours must be > 0", field="battery_life_hours", line=line)
        entry = (_opt(row, "model"), _opt(row, "os_version"), battery)
        previous = meta.get(device)
        if previous is not None and previous != entry:
            if previous[:2] != entry[:2]:
                raise DataError(f"line {line}: conflicting model/os_version for device {device}")
            raise DataError(f"line {line}: conflicting battery_life_hours for device {device}")
        meta[device] = entry
    return meta


def _earliest(a: float | None, b: float | None) -> float | None:
    if a is None:
        return b
    if b is None:
        return a
    return min(a, b)


def load_device_dataset(source: Source, metadata: Source | None = None) -> list[DeviceProfile]:
    """Group observation rows into one DeviceProfile per pseudonym.

    Duplicate ``(device, dc, p, v)`` rows collapse to one package entry that
    keeps the earliest ``first_seen``.  Devices are returned sorted by
    pseudonym, so the result does not depend on row order.
    """
    per_device: dict[str, dict[PackageId, float | None]] = {}
    for rec in read_device_records(source):
        pkgs = per_device.setdefault(rec.device, {})
        if rec.pkg in pkgs:
            pkgs[rec.pkg] = _earliest(pkgs[rec.pkg], rec.first_seen)
        else:
            pkgs[rec.pkg] = rec.first_seen
    meta = _read_metadata(metadata) if metadata is not None else {}
    devices = []
    for device in sorted(per_device):
        model, os_version, battery = meta.get(device, (None, None, None))
        devices.append(DeviceProfile(device, per_device[device], model, os_version, battery))
    return devices


def load_malware_set(name: str, source: Source) -> MalwareSet:
    ids = set()
    for line, row in _rows(source, MALWARE_COLUMNS, "malware"):
        ids.add(make_package_id(row["dc"], row["p"], row["v"], line=line))
    return MalwareSet(name, frozenset(ids))


def summarize(devices: Iterable[DeviceProfile]) -> DatasetSummary:
    """Distinct-value counts over a device collection.

    ``total_unique_records`` counts distinct ``(device, dc, p, v)`` tuples.
    """
    names, dcs, keys, ids = set(), set(), set(), set()
    device_names = set()
    records = set()
    for dev in devices:
        device_names.add(dev.device)
        for pid in dev.packages:
            ids.add(pid)
            records.add((dev.device, pid))
    for pid in ids:
        names.add(pid.p)
        dcs.add(pid.dc)
        keys.add(pid.key)
    return DatasetSummary(
        distinct_devices=len(device_names),
        unique_package_names=len(names),
        unique_devcerts=len(dcs),
        unique_dcp=len(keys),
        unique_dcpv=len(ids),
        total_unique_records=len(records),
    )


def union_malware(sets: Sequence[MalwareSet]) -> MalwareSet:
    if not sets:
        raise ValueError("union_malware needs at least one malware set")
    ids: set[PackageId] = set()
    for s in sets:
        ids |= s.ids
    return MalwareSet("+".join(s.name for s in sets), frozenset(ids))


def overlap_report(sets: Sequence[MalwareSet]) -> dict[str, int]:
    """Sizes of the exclusive regions of the Venn diagram of 2 or 3 malware sets.

    Keys name the member sets of a region joined by ``&`` (``"A"``, ``"A&B"``,
    ...), in input order.  Region sizes sum to the size of the union.
    """
    if len(sets) < 2:
        raise ValueError("overlap_report needs at least 2 malware sets")
    if len(sets) > 3:
        raise ValueError("overlap_report supports at most 3 malware sets")
    names = [s.name for s in sets]
    if len(set(names)) != len(names):
        names = [f"{n}#{i}" for i, n in enumerate(names)]
    membership: dict[PackageId, tuple[int, ...]] = {}
    universe = set().union(*(s.ids for s in sets))
    for pid in universe:
        membership[pid] = tuple(i for i, s in enumerate(sets) if pid in s.ids)
    report = {}
    for size in range(1, len(sets) + 1):
        for combo in combinations(range(len(sets)), size):
            report["&".join(names[i] for i in combo)] = 0
    for members in membership.values():
        report["&".join(names[i] for i in members)] += 1
    return report


def _fmt_num(x: float | None) -> str:
    if x is None:
        return ""
    return repr(float(x)) if not float(x).is_integer() else str(int(x))


def write_device_csv(devices: Iterable[DeviceProfile], out: IO[str]) -> None:
    """Write observations in the device CSV layout, sorted for stable output."""
    w = csv.writer(out, lineterminator="\n")
    w.writerow(DEVICE_COLUMNS)
    for dev in sorted(devices, key=lambda d: d.device):
        for pid in sorted(dev.packages, key=lambda i: i.text):
            w.writerow([dev.device, pid.dc, pid.p, pid.v, _fmt_num(dev.packages[pid]), "", ""])


def write_metadata_csv(devices: Iterable[DeviceProfile], out: IO[str]) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(META_COLUMNS)
    for dev in sorted(devices, key=lambda d: d.device):
        w.writerow([dev.device, dev.model or "", dev.os_version or "", _fmt_num(dev.battery_life_hours)])


def write_malware_csv(malware: MalwareSet, out: IO[str]) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(MALWARE_COLUMNS)
    for pid in sorted(malware.ids, key=lambda i: i.text):
        w.writerow([pid.dc, pid.p, pid.v])
