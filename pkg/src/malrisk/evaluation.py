"""Evaluation protocols for the bag-of-applications infection indicator.

Four protocols, all summing confusion counts over their runs:

* ``cross_validate``: stratified k-fold over the labeled devices.
* ``eval_new_malware``: malware apps are split into groups of roughly equal
  infected-device weight; each run hides one group, whose infected devices are
  only ever tested, never trained on.
* ``eval_undetected_malware``: as above, but devices infected only by the
  hidden group stay in training labeled clean, mimicking infections nobody
  had detected yet.
* ``eval_real_life``: train on labels from an original malware set, test the
  devices it calls clean against the malware added in an updated set.

Randomness for run ``(repeat, run)`` comes from ``SeedSequence([seed, stage,
repeat, run])`` so runs are independent of execution order.
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Hashable, Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .classifier import fit_matrix, predict_matrix
from .datastore import DeviceProfile, MalwareSet
from .identity import PackageKey
from .matching import CLEAN, INFECTED, ExclusionList, infected_by

__all__ = [
    "ConfusionMatrix",
    "EvalMetrics",
    "ProtocolConfig",
    "RunRecord",
    "ProtocolResult",
    "metrics",
    "stratified_folds",
    "partition_malware_by_device_count",
    "cross_validate",
    "eval_new_malware",
    "eval_undetected_malware",
    "eval_real_life",
]

_MASK64 = (1 << 64) - 1
_STAGE_SPLIT = 1
_STAGE_GROUPS = 2
_STAGE_FOLDS = 3


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fn: int = 0
    fp: int = 0
    tn: int = 0

    def __post_init__(self) -> None:
        for name in ("tp", "fn", "fp", "tn"):
            value = getattr(self, name)
            if value < 0:
                raise ValueError(f"{name} must be non-negative")
            object.__setattr__(self, name, int(value))

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn

    def __add__(self, other: ConfusionMatrix) -> ConfusionMatrix:
        return ConfusionMatrix(
            self.tp + other.tp, self.fn + other.fn, self.fp + other.fp, self.tn + other.tn
        )

    @classmethod
    def from_predictions(cls, truth: np.ndarray, predicted: np.ndarray) -> ConfusionMatrix:
        truth = np.asarray(truth, dtype=bool)
        predicted = np.asarray(predicted, dtype=bool)
        return cls(
            tp=int(np.sum(truth & predicted)),
            fn=int(np.sum(truth & ~predicted)),
            fp=int(np.sum(~truth & predicted)),
            tn=int(np.sum(~truth & ~predicted)),
        )

    def to_dict(self) -> dict[str, int]:
        return asdict(self)


@dataclass(frozen=True)
class EvalMetrics:
    """``precision`` and ``gain`` are None when undefined (nothing flagged, or
    no positives in the population)."""

    precision: float | None
    baseline: float
    gain: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def metrics(cm: ConfusionMatrix) -> EvalMetrics:
    """Precision, baseline (infected share of the population) and their ratio."""
    total = cm.total
    if total == 0:
        raise ValueError("empty confusion matrix")
    flagged = cm.tp + cm.fp
    precision = cm.tp / flagged if flagged else None
    baseline = (cm.tp + cm.fn) / total
    gain = precision / baseline if precision is not None and baseline > 0 else None
    return EvalMetrics(precision, baseline, gain)


@dataclass(frozen=True)
class ProtocolConfig:
    folds: int = 5
    clean_split: float = 0.8
    malware_groups: int = 5
    repeats: int = 5
    seed: int = 0
    alpha: float = 1.0

    def __post_init__(self) -> None:
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if not 0 < self.clean_split < 1:
            raise ValueError("clean_split must be in (0, 1)")
        if self.malware_groups < 2:
            raise ValueError("malware_groups must be >= 2")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RunRecord:
    repeat: int
    run: int
    train: tuple[str, ...]
    test: tuple[str, ...]
    cm: ConfusionMatrix
    hidden_group: int | None = None
    hidden_apps: frozenset[PackageKey] = frozenset()

    def to_dict(self) -> dict:
        return {
            "repeat": self.repeat,
            "run": self.run,
            "hidden_group": self.hidden_group,
            "hidden_apps": sorted(k.text for k in self.hidden_apps),
            "n_train": len(self.train),
            "n_test": len(self.test),
            "cm": self.cm.to_dict(),
        }


@dataclass(frozen=True)
class ProtocolResult:
    protocol: str
    config: ProtocolConfig
    cm: ConfusionMatrix
    runs: tuple[RunRecord, ...] = field(default=())

    @property
    def metrics(self) -> EvalMetrics:
        return metrics(self.cm)

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "config": self.config.to_dict(),
            "cm": self.cm.to_dict(),
            "metrics": self.metrics.to_dict(),
            "runs": [r.to_dict() for r in self.runs],
        }


def _rng(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & _MASK64, *path]))


def _derived_seed(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([seed & _MASK64, *path]).generate_state(2, np.uint64)[0])


def stratified_folds(labels: Mapping[str, str], k: int, seed: int) -> list[list[str]]:
    """Partition devices into ``k`` folds preserving the infected/clean ratio.

    Each class is shuffled and dealt round-robin; the clean deal starts where
    the infected deal stopped, so fold sizes differ by at most one.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    infected = sorted(d for d, lab in labels.items() if lab == INFECTED)
    clean = sorted(d for d, lab in labels.items() if lab == CLEAN)
    if len(infected) + len(clean) != len(labels):
        raise ValueError("labels must be 'infected' or 'clean'")
    if not infected or not clean:
        raise ValueError("stratification needs both infected and clean devices")
    if k > len(infected):
        raise ValueError(f"k={k} exceeds the number of infected devices ({len(infected)})")
    rng = _rng(seed, _STAGE_FOLDS)
    folds: list[list[str]] = [[] for _ in range(k)]
    offset = 0
    for group in (infected, clean):
        order = rng.permutation(len(group))
        for j, idx in enumerate(order):
            folds[(offset + j) % k].append(group[idx])
        offset = (offset + len(group)) % k
    return folds


def _sort_text(key: Hashable) -> str:
    return getattr(key, "text", None) or str(key)


def partition_malware_by_device_count(
    app_counts: Mapping[Hashable, int], groups: int, seed: int
) -> dict[Hashable, int]:
    """Greedy balancing of malware apps into ``groups`` by infected-device count.

    Apps are taken heaviest first (equal weights in a seed-shuffled order) and
    each goes to the currently lightest group, lowest index on ties.
    """
    if groups < 2:
        raise ValueError("groups must be >= 2")
    if len(app_counts) < groups:
        raise ValueError(f"{len(app_counts)} malware apps cannot fill {groups} groups")
    apps = sorted(app_counts, key=_sort_text)
    order = np.random.default_rng(seed & _MASK64).permutation(len(apps))
    shuffled = [apps[i] for i in order]
    shuffled.sort(key=lambda a: -app_counts[a])  # stable: ties keep the shuffled order
    weights = [0] * groups
    assignment = {}
    for app in shuffled:
        g = min(range(groups), key=lambda i: (weights[i], i))
        assignment[app] = g
        weights[g] += app_counts[app]
    return assignment


class _Corpus:
    """All devices as one binary matrix over every observed package id.

    Columns are sorted by ``dc|p|v`` text, so restricting to the ids seen on a
    set of training devices gives the same vocabulary, in the same order, as
    ``build_feature_space`` on those devices.
    """

    def __init__(self, devices: Sequence[DeviceProfile]):
        devs = sorted(devices, key=lambda d: d.device)
        self.names = [d.device for d in devs]
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate device pseudonyms")
        self.row = {name: i for i, name in enumerate(self.names)}
        ids = sorted({pid for d in devs for pid in d.packages}, key=lambda pid: pid.text)
        col = {pid: j for j, pid in enumerate(ids)}
        self.keys = [pid.key for pid in ids]
        indptr = [0]
        indices: list[int] = []
        for d in devs:
            indices.extend(sorted(col[pid] for pid in d.packages))
            indptr.append(len(indices))
        self.X = sp.csr_matrix(
            (np.ones(len(indices)), np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
            shape=(len(devs), len(ids)),
        )

    def excluded_mask(self, keys: Iterable[PackageKey]) -> np.ndarray:
        keys = frozenset(keys)
        return np.array([k in keys for k in self.keys], dtype=bool)

    def evaluate(
        self,
        train: Sequence[str],
        train_infected: np.ndarray,
        test: Sequence[str],
        test_infected: np.ndarray,
        excluded: np.ndarray,
        alpha: float,
    ) -> ConfusionMatrix:
        tr = np.fromiter((self.row[d] for d in train), dtype=np.int64, count=len(train))
        te = np.fromiter((self.row[d] for d in test), dtype=np.int64, count=len(test))
        X_train = self.X[tr]
        present = (X_train.getnnz(axis=0) > 0) & ~excluded
        cols = np.flatnonzero(present)
        model = fit_matrix(X_train[:, cols], train_infected, alpha)
        if len(te) == 0:
            return ConfusionMatrix()
        predicted = predict_matrix(model, self.X[te][:, cols])
        return ConfusionMatrix.from_predictions(test_infected, predicted)


def cross_validate(
    devices: Sequence[DeviceProfile],
    labels: Mapping[str, str],
    config: ProtocolConfig,
    malware: MalwareSet | None = None,
) -> ProtocolResult:
    """Stratified k-fold cross-validation.

    The vocabulary is rebuilt from the training folds of every split; ids whose
    key belongs to ``malware`` are never features.
    """
    corpus = _Corpus(devices)
    missing = [n for n in corpus.names if n not in labels]
    if missing:
        raise ValueError(f"no label for device {missing[0]}")
    folds = stratified_folds({n: labels[n] for n in corpus.names}, config.folds, config.seed)
    excluded = corpus.excluded_mask(malware.dcp_index if malware is not None else ())
    total = ConfusionMatrix()
    runs = []
    for i, test in enumerate(folds):
        train = [d for j, fold in enumerate(folds) if j != i for d in fold]
        cm = corpus.evaluate(
            train,
            np.array([labels[d] == INFECTED for d in train]),
            test,
            np.array([labels[d] == INFECTED for d in test]),
            excluded,
            config.alpha,
        )
        total += cm
        runs.append(RunRecord(0, i, tuple(train), tuple(test), cm))
    return ProtocolResult("cv", config, total, tuple(runs))


def _infected_keys(
    devices: Sequence[DeviceProfile], malware: MalwareSet, excl: ExclusionList | None
) -> dict[str, frozenset[PackageKey]]:
    return {
        dev: frozenset(pid.key for pid in hits)
        for dev, hits in infected_by(devices, malware, excl).items()
    }


def _app_weights(infected: Mapping[str, frozenset[PackageKey]]) -> Counter:
    return Counter(key for keys in infected.values() for key in keys)


def eval_new_malware(
    devices: Sequence[DeviceProfile],
    malware: MalwareSet,
    config: ProtocolConfig,
    excl: ExclusionList | None = None,
) -> ProtocolResult:
    """Hide one malware group per run; its devices are test-only.

    A malware app is a ``(dc, p)`` key.  Clean devices are split
    ``clean_split`` / rest into train and test once per repeat.  Devices
    carrying both hidden and known malware are dropped from that run.
    """
    corpus = _Corpus(devices)
    infected = _infected_keys(devices, malware, excl)
    weights = _app_weights(infected)
    if len(weights) < config.malware_groups:
        raise ValueError(
            f"{len(weights)} observed malware apps cannot fill {config.malware_groups} groups"
        )
    clean = [n for n in corpus.names if not infected[n]]
    sick = [n for n in corpus.names if infected[n]]
    excluded = corpus.excluded_mask(malware.dcp_index)
    total = ConfusionMatrix()
    runs = []
    for r in range(config.repeats):
        order = _rng(config.seed, _STAGE_SPLIT, r).permutation(len(clean))
        n_train = int(round(config.clean_split * len(clean)))
        train_clean = [clean[i] for i in order[:n_train]]
        test_clean = [clean[i] for i in order[n_train:]]
        groups = partition_malware_by_device_count(
            weights, config.malware_groups, _derived_seed(config.seed, _STAGE_GROUPS, r)
        )
        for g in range(config.malware_groups):
            train_inf, test_inf = [], []
            for dev in sick:
                dev_groups = {groups[k] for k in infected[dev]}
                if dev_groups == {g}:
                    test_inf.append(dev)
                elif g not in dev_groups:
                    train_inf.append(dev)
            train = train_clean + train_inf
            test = test_clean + test_inf
            cm = corpus.evaluate(
                train,
                np.r_[np.zeros(len(train_clean), bool), np.ones(len(train_inf), bool)],
                test,
                np.r_[np.zeros(len(test_clean), bool), np.ones(len(test_inf), bool)],
                excluded,
                config.alpha,
            )
            total += cm
            hidden = frozenset(k for k, grp in groups.items() if grp == g)
            runs.append(RunRecord(r, g, tuple(train), tuple(test), cm, g, hidden))
    return ProtocolResult("new", config, total, tuple(runs))


def eval_undetected_malware(
    devices: Sequence[DeviceProfile],
    malware: MalwareSet,
    config: ProtocolConfig,
    excl: ExclusionList | None = None,
) -> ProtocolResult:
    """Hide one malware group per run from the training labels.

    All devices are split ``clean_split`` / rest once per repeat.  Training
    labels only know the other groups, so a device carrying nothing but hidden
    malware trains as clean.  Test devices carrying known malware are moved to
    training; the remaining test devices are scored against the hidden group.
    """
    corpus = _Corpus(devices)
    infected = _infected_keys(devices, malware, excl)
    weights = _app_weights(infected)
    if len(weights) < config.malware_groups:
        raise ValueError(
            f"{len(weights)} observed malware apps cannot fill {config.malware_groups} groups"
        )
    names = corpus.names
    excluded = corpus.excluded_mask(malware.dcp_index)
    total = ConfusionMatrix()
    runs = []
    for r in range(config.repeats):
        order = _rng(config.seed, _STAGE_SPLIT, r).permutation(len(names))
        n_train = int(round(config.clean_split * len(names)))
        train_part = [names[i] for i in order[:n_train]]
        test_part = [names[i] for i in order[n_train:]]
        groups = partition_malware_by_device_count(
            weights, config.malware_groups, _derived_seed(config.seed, _STAGE_GROUPS, r)
        )
        for g in range(config.malware_groups):
            def known(dev: str) -> bool:
                return any(groups[k] != g for k in infected[dev])

            moved = [d for d in test_part if known(d)]
            test = [d for d in test_part if not known(d)]
            train = train_part + moved
            train_y = np.array([known(d) for d in train], dtype=bool)
            test_y = np.array([bool(infected[d]) for d in test], dtype=bool)
            cm = corpus.evaluate(train, train_y, test, test_y, excluded, config.alpha)
            total += cm
            hidden = frozenset(k for k, grp in groups.items() if grp == g)
            runs.append(RunRecord(r, g, tuple(train), tuple(test), cm, g, hidden))
    return ProtocolResult("undetected", config, total, tuple(runs))


def eval_real_life(
    devices: Sequence[DeviceProfile],
    original: MalwareSet,
    updated: MalwareSet,
    config: ProtocolConfig,
    excl: ExclusionList | None = None,
) -> ProtocolResult:
    """Train on labels from ``original``; test its clean devices against the
    malware that only ``updated`` knows about.  One deterministic run."""
    new = MalwareSet(f"{updated.name}-{original.name}", updated.ids - original.ids)
    if not new.ids:
        raise ValueError("updated malware set adds nothing over the original set")
    corpus = _Corpus(devices)
    orig_hits = infected_by(devices, original, excl)
    new_hits = infected_by(devices, new, excl)
    names = corpus.names
    train = list(names)
    train_y = np.array([bool(orig_hits[d]) for d in train], dtype=bool)
    test = [d for d in names if not orig_hits[d]]
    test_y = np.array([bool(new_hits[d]) for d in test], dtype=bool)
    excluded = corpus.excluded_mask(original.dcp_index | updated.dcp_index)
    cm = corpus.evaluate(train, train_y, test, test_y, excluded, config.alpha)
    run = RunRecord(0, 0, tuple(train), tuple(test), cm)
    return ProtocolResult("reallife", config, cm, (run,))
