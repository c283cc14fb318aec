"""Seeded synthetic device populations with a planted infection signal.

Random streams: the app catalog is a fixed function of the seed, and device
``i`` draws from ``SeedSequence([seed, 1, i])`` feeding numpy's default PCG64
generator.  A device's content therefore depends only on the seed and its
index.

Signal: a few "companion" benign apps appear on clean devices with
probability ``companion_base_rate`` and on infected devices with that
probability's odds multiplied by ``companion_lift``.  All other benign apps are
drawn independently of infection.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .datastore import (
    DeviceProfile,
    MalwareSet,
    write_device_csv,
    write_malware_csv,
    write_metadata_csv,
)
from .identity import PackageId, hash_devcert, pseudonymize_device
from .matching import CLEAN, INFECTED

__all__ = ["SynthConfig", "SynthDataset", "generate", "companion_probabilities", "write_dataset"]

MODELS = ("GT-I9300", "Nexus 4", "HTC One", "GT-I9100", "LG-P880", "Xperia Z")
OS_VERSIONS = ("4.0.4", "4.1.2", "4.2.2", "4.3")
_MAX_APP_PROB = 0.9
_SIBLING_RATE = 0.01
_DAY = 86400.0


@dataclass(frozen=True)
class SynthConfig:
    n_devices: int = 2000
    n_benign_apps: int = 200
    n_malware_apps: int = 40
    infection_rate: float = 0.005
    apps_per_device: float = 25.0
    companion_lift: float = 1.0
    battery_gap_hours: float = 1.3
    seed: int = 0
    n_companion_apps: int = 20
    companion_base_rate: float = 0.1
    popularity_skew: float = 0.8
    second_infection_rate: float = 0.1
    start_time: float = 1362960000.0
    span_days: float = 210.0

    def __post_init__(self) -> None:
        if self.n_devices < 0:
            raise ValueError("n_devices must be >= 0")
        if not 0 <= self.infection_rate <= 1:
            raise ValueError("infection_rate must be in [0, 1]")
        if self.apps_per_device < 1:
            raise ValueError("apps_per_device must be >= 1")
        if self.apps_per_device > self.n_benign_apps + self.n_malware_apps:
            raise ValueError("apps_per_device exceeds the size of the app catalog")
        if self.companion_lift < 1:
            raise ValueError("companion_lift must be >= 1")
        if not 0 <= self.n_companion_apps <= self.n_benign_apps:
            raise ValueError("n_companion_apps must be between 0 and n_benign_apps")
        if not 0 < self.companion_base_rate < 1:
            raise ValueError("companion_base_rate must be in (0, 1)")
        if self.infection_rate > 0 and self.n_malware_apps < 1:
            raise ValueError("a positive infection_rate needs malware apps")
        if not 0 <= self.second_infection_rate <= 1:
            raise ValueError("second_infection_rate must be in [0, 1]")
        regular = self.n_benign_apps - self.n_companion_apps
        budget = self.apps_per_device - self.n_companion_apps * self.companion_base_rate
        if budget > _MAX_APP_PROB * regular:
            raise ValueError("apps_per_device is not reachable with this many benign apps")

    @classmethod
    def from_dict(cls, data: dict) -> SynthConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown synth config keys: {unknown}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SynthDataset:
    config: SynthConfig
    devices: tuple[DeviceProfile, ...]
    malware: MalwareSet
    labels: dict[str, str]
    infection_times: dict[str, float]
    companions: tuple[PackageId, ...]


def companion_probabilities(config: SynthConfig) -> tuple[float, float]:
    """Per-companion inclusion probability on (clean, infected) devices."""
    q0 = config.companion_base_rate
    odds = config.companion_lift * q0 / (1.0 - q0)
    return q0, odds / (1.0 + odds)


def _popularity(n: int, skew: float, budget: float) -> np.ndarray:
    """Inclusion probabilities ~ rank^-skew, capped, summing to ``budget``."""
    if n == 0:
        return np.zeros(0)
    w = (np.arange(n) + 1.0) ** -skew
    lo, hi = 0.0, budget / w.min() + 1.0
    for _ in range(200):
        mid = (lo + hi) / 2
        if np.minimum(_MAX_APP_PROB, mid * w).sum() < budget:
            lo = mid
        else:
            hi = mid
    return np.minimum(_MAX_APP_PROB, hi * w)


class _Catalog:
    def __init__(self, cfg: SynthConfig):
        s = cfg.seed
        n_dev = max(1, cfg.n_benign_apps // 4)
        self.devcerts = [hash_devcert(f"synth-dev:{s}:{j}".encode()) for j in range(n_dev)]
        self.benign_versions: list[list[PackageId]] = []
        for j in range(cfg.n_benign_apps):
            dc = self.devcerts[j * n_dev // cfg.n_benign_apps]
            base = 1 + j % 7
            vs = [base, base + 1] if j % 3 == 0 else [base]
            self.benign_versions.append([PackageId(dc, f"com.synth.app{j:04d}", v) for v in vs])
        n_regular = cfg.n_benign_apps - cfg.n_companion_apps
        self.regular = self.benign_versions[:n_regular]
        self.companions = self.benign_versions[n_regular:]
        self.malware: list[PackageId] = []
        self.siblings: list[PackageId] = []
        for k in range(cfg.n_malware_apps):
            if k % 4 == 3:
                # a devcert that also signs (unpopular) benign apps
                dc = self.devcerts[n_dev - 1 - (k // 4) % n_dev]
            else:
                dc = hash_devcert(f"synth-maldev:{s}:{k}".encode())
            pid = PackageId(dc, f"com.synth.mal{k:03d}", 10 + k % 5)
            self.malware.append(pid)
            if k % 3 == 0:
                # same key, other version code: never labeled malware
                self.siblings.append(PackageId(dc, pid.p, pid.v - 1))
        budget = cfg.apps_per_device - cfg.n_companion_apps * cfg.companion_base_rate
        self.p_regular = _popularity(n_regular, cfg.popularity_skew, budget)
        mw = (np.arange(cfg.n_malware_apps) + 1.0) ** -cfg.popularity_skew
        self.p_malware = mw / mw.sum() if cfg.n_malware_apps else mw


def _device(cfg: SynthConfig, cat: _Catalog, i: int, salt: bytes, q: tuple[float, float]):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed & ((1 << 64) - 1), 1, i]))
    span = cfg.span_days * _DAY
    t0 = cfg.start_time + rng.uniform(0, span / 2)

    def stamp() -> float:
        return float(round(t0 + rng.uniform(0, span / 2)))

    infected = bool(rng.random() < cfg.infection_rate)
    packages: dict[PackageId, float] = {}
    chosen = np.flatnonzero(rng.random(len(cat.regular)) < cat.p_regular)
    version_u = rng.random(len(cat.regular))
    for j in chosen:
        versions = cat.regular[j]
        packages[versions[int(version_u[j] * len(versions))]] = stamp()
    q_comp = q[1] if infected else q[0]
    for versions in (cat.companions[j] for j in np.flatnonzero(rng.random(len(cat.companions)) < q_comp)):
        packages[versions[0]] = stamp()
    for j in np.flatnonzero(rng.random(len(cat.siblings)) < _SIBLING_RATE):
        packages[cat.siblings[j]] = stamp()
    infection_time = None
    if infected:
        ks = [int(rng.choice(len(cat.malware), p=cat.p_malware))]
        if len(cat.malware) > 1 and rng.random() < cfg.second_infection_rate:
            second = ks[0]
            while second == ks[0]:
                second = int(rng.choice(len(cat.malware), p=cat.p_malware))
            ks.append(second)
        times = []
        for k in ks:
            t = stamp()
            packages[cat.malware[k]] = t
            times.append(t)
        infection_time = min(times)
    model = MODELS[int(rng.integers(len(MODELS)))]
    os_version = OS_VERSIONS[int(rng.integers(len(OS_VERSIONS)))]
    mean = 8.5 - (cfg.battery_gap_hours if infected else 0.0)
    battery = round(max(0.5, float(rng.normal(mean, 2.0))), 3)
    name = pseudonymize_device(f"synth-device-{i}", salt)
    return DeviceProfile(name, packages, model, os_version, battery), infected, infection_time


def generate(config: SynthConfig) -> SynthDataset:
    cat = _Catalog(config)
    q = companion_probabilities(config)
    salt = f"synth-salt:{config.seed}".encode()
    devices, labels, times = [], {}, {}
    for i in range(config.n_devices):
        dev, infected, t_inf = _device(config, cat, i, salt, q)
        devices.append(dev)
        labels[dev.device] = INFECTED if infected else CLEAN
        if infected:
            times[dev.device] = t_inf
    devices.sort(key=lambda d: d.device)
    malware = MalwareSet("synth", frozenset(cat.malware))
    companions = tuple(v[0] for v in cat.companions)
    return SynthDataset(config, tuple(devices), malware, dict(sorted(labels.items())), dict(sorted(times.items())), companions)


def write_dataset(data: SynthDataset, out_dir: str | Path) -> dict[str, Path]:
    """Write the CSV inputs plus a ground-truth JSON; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "devices": out / "devices.csv",
        "device_meta": out / "device_meta.csv",
        "malware": out / "malware.csv",
        "truth": out / "truth.json",
    }
    with paths["devices"].open("w", encoding="utf-8", newline="") as fh:
        write_device_csv(data.devices, fh)
    with paths["device_meta"].open("w", encoding="utf-8", newline="") as fh:
        write_metadata_csv(data.devices, fh)
    with paths["malware"].open("w", encoding="utf-8", newline="") as fh:
        write_malware_csv(data.malware, fh)
    truth = {
        "labels": data.labels,
        "infection_times": data.infection_times,
        "companions": [c.text for c in data.companions],
        "config": data.config.to_dict(),
    }
    paths["truth"].write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths
