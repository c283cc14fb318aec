"""Naive Bayes over bag-of-applications vectors.

Each device becomes a sparse binary vector with a one for every application
(full ``(dc, p, v)`` identifier) observed on it.  The model keeps per-class
probabilities of each feature being on and off, so absent applications carry
evidence too:

    P(f=1 | c) = (n_on(f, c) + alpha) / (n(c) + 2 * alpha)

Malware applications, and every other version of a malware ``(dc, p)`` key,
are dropped from the vocabulary; they only serve to label devices.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp

from .datastore import DeviceProfile, MalwareSet
from .identity import PackageId, PackageKey, parse_package_id
from .matching import CLEAN, INFECTED

__all__ = [
    "CLASSES",
    "FeatureSpace",
    "FeatureVector",
    "NaiveBayesModel",
    "Posterior",
    "build_feature_space",
    "vectorize",
    "vectors_to_matrix",
    "train",
    "fit_matrix",
    "log_posterior",
    "classify",
    "score_matrix",
    "predict_matrix",
]

CLASSES = (CLEAN, INFECTED)

# Scores closer than this (relative) are a tie.  Summing the same log terms in
# a different order can split a tie that is exact in real arithmetic.
TIE_RTOL = 1e-10


@dataclass(frozen=True)
class FeatureSpace:
    features: tuple[PackageId, ...]
    excluded_keys: frozenset[PackageKey] = frozenset()
    index: Mapping[PackageId, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "index", {pid: i for i, pid in enumerate(self.features)})
        if len(self.index) != len(self.features):
            raise ValueError("duplicate features in vocabulary")
        bad = [pid for pid in self.features if pid.key in self.excluded_keys]
        if bad:
            raise ValueError(f"feature {bad[0].text} belongs to an excluded key")

    def __len__(self) -> int:
        return len(self.features)


@dataclass(frozen=True)
class FeatureVector:
    device: str
    on: frozenset[int]


def _malware_keys(malware: MalwareSet | Iterable[MalwareSet] | None) -> frozenset[PackageKey]:
    if malware is None:
        return frozenset()
    if isinstance(malware, MalwareSet):
        return malware.dcp_index
    keys: set[PackageKey] = set()
    for m in malware:
        keys |= m.dcp_index
    return frozenset(keys)


def build_feature_space(
    devices: Iterable[DeviceProfile], malware: MalwareSet | Iterable[MalwareSet] | None = None
) -> FeatureSpace:
    """Vocabulary of all observed ids except those sharing a key with malware.

    Features are ordered by their ``dc|p|v`` text.
    """
    excluded = _malware_keys(malware)
    seen: set[PackageId] = set()
    for dev in devices:
        seen.update(dev.packages)
    kept = sorted((pid for pid in seen if pid.key not in excluded), key=lambda pid: pid.text)
    return FeatureSpace(tuple(kept), excluded)


def vectorize(device: DeviceProfile, space: FeatureSpace) -> FeatureVector:
    index = space.index
    return FeatureVector(device.device, frozenset(index[pid] for pid in device.packages if pid in index))


def vectors_to_matrix(vectors: Sequence[FeatureVector], n_features: int) -> sp.csr_matrix:
    indptr = [0]
    indices: list[int] = []
    for vec in vectors:
        cols = sorted(vec.on)
        if cols and (cols[0] < 0 or cols[-1] >= n_features):
            raise IndexError(f"feature position out of range for device {vec.device}")
        indices.extend(cols)
        indptr.append(len(indices))
    data = np.ones(len(indices), dtype=np.float64)
    return sp.csr_matrix(
        (data, np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
        shape=(len(vectors), n_features),
    )


@dataclass(frozen=True, eq=False)
class NaiveBayesModel:
    """Trained model.  Row 0 of every array is ``clean``, row 1 ``infected``."""

    alpha: float
    log_prior: np.ndarray
    log_lik_on: np.ndarray
    log_lik_off: np.ndarray
    vocabulary: FeatureSpace | None = None

    @property
    def classes(self) -> tuple[str, str]:
        return CLASSES

    @property
    def n_features(self) -> int:
        return self.log_lik_on.shape[1]

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "classes": list(CLASSES),
            "log_prior": self.log_prior.tolist(),
            "vocabulary": None if self.vocabulary is None else [f.text for f in self.vocabulary.features],
            "excluded_keys": (
                None if self.vocabulary is None
                else sorted(k.text for k in self.vocabulary.excluded_keys)
            ),
            "log_lik_on": self.log_lik_on.tolist(),
            "log_lik_off": self.log_lik_off.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping) -> NaiveBayesModel:
        if list(data.get("classes", CLASSES)) != list(CLASSES):
            raise ValueError(f"unexpected class order {data.get('classes')}")
        vocab = None
        if data.get("vocabulary") is not None:
            excluded = frozenset(
                PackageKey(*t.split("|")) for t in (data.get("excluded_keys") or [])
            )
            vocab = FeatureSpace(tuple(parse_package_id(t) for t in data["vocabulary"]), excluded)
        return cls(
            alpha=float(data["alpha"]),
            log_prior=np.asarray(data["log_prior"], dtype=np.float64),
            log_lik_on=np.asarray(data["log_lik_on"], dtype=np.float64).reshape(2, -1),
            log_lik_off=np.asarray(data["log_lik_off"], dtype=np.float64).reshape(2, -1),
            vocabulary=vocab,
        )


def fit_matrix(
    X: sp.spmatrix, infected: np.ndarray, alpha: float = 1.0, space: FeatureSpace | None = None
) -> NaiveBayesModel:
    """Train from a binary design matrix and a boolean infected mask."""
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    y = np.asarray(infected, dtype=bool)
    n = y.shape[0]
    if X.shape[0] != n:
        raise ValueError("design matrix and labels differ in length")
    if n == 0:
        raise ValueError("no training examples")
    n_inf = int(y.sum())
    n_clean = n - n_inf
    if n_inf == 0 or n_clean == 0:
        raise ValueError("training data must contain both infected and clean devices")
    X = sp.csr_matrix(X)
    X = (X > 0).astype(np.float64)
    on_inf = np.asarray(X[y].sum(axis=0)).ravel()
    on_all = np.asarray(X.sum(axis=0)).ravel()
    on_counts = np.vstack([on_all - on_inf, on_inf])
    class_counts = np.array([n_clean, n_inf], dtype=np.float64)
    denom = class_counts[:, None] + 2.0 * alpha
    log_on = np.log(on_counts + alpha) - np.log(denom)
    log_off = np.log(class_counts[:, None] - on_counts + alpha) - np.log(denom)
    log_prior = np.log(class_counts / n)
    return NaiveBayesModel(float(alpha), log_prior, log_on, log_off, space)


def train(
    vectors: Sequence[FeatureVector],
    labels: Sequence[str],
    alpha: float = 1.0,
    space: FeatureSpace | None = None,
) -> NaiveBayesModel:
    if len(vectors) != len(labels):
        raise ValueError("vectors and labels differ in length")
    bad = {lab for lab in labels if lab not in CLASSES}
    if bad:
        raise ValueError(f"unknown labels {sorted(bad)}")
    if space is not None:
        n_features = len(space)
    else:
        n_features = 1 + max((max(v.on) for v in vectors if v.on), default=-1)
    X = vectors_to_matrix(vectors, n_features)
    y = np.array([lab == INFECTED for lab in labels], dtype=bool)
    return fit_matrix(X, y, alpha, space)


@dataclass(frozen=True)
class Posterior:
    scores: dict[str, float]
    probabilities: dict[str, float]


def score_matrix(model: NaiveBayesModel, X: sp.spmatrix) -> np.ndarray:
    """Unnormalized log scores, shape ``(n_devices, 2)``."""
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} feature columns, got {X.shape[1]}")
    X = sp.csr_matrix(X)
    base = model.log_prior + model.log_lik_off.sum(axis=1)
    delta = (model.log_lik_on - model.log_lik_off).T
    return np.asarray(X @ delta) + base


def _infected_wins(clean: np.ndarray, infected: np.ndarray) -> np.ndarray:
    scale = np.maximum(1.0, np.maximum(np.abs(clean), np.abs(infected)))
    return infected - clean > TIE_RTOL * scale


def predict_matrix(model: NaiveBayesModel, X: sp.spmatrix) -> np.ndarray:
    """Boolean infected mask; a tie goes to clean."""
    s = score_matrix(model, X)
    return _infected_wins(s[:, 0], s[:, 1])


def log_posterior(model: NaiveBayesModel, vector: FeatureVector) -> Posterior:
    X = vectors_to_matrix([vector], model.n_features)
    s = score_matrix(model, X)[0]
    probs = np.exp(s - logsumexp(s))
    return Posterior(
        scores={c: float(s[i]) for i, c in enumerate(CLASSES)},
        probabilities={c: float(probs[i]) for i, c in enumerate(CLASSES)},
    )


def classify(model: NaiveBayesModel, vector: FeatureVector) -> str:
    post = log_posterior(model, vector)
    wins = _infected_wins(np.array(post.scores[CLEAN]), np.array(post.scores[INFECTED]))
    return INFECTED if bool(wins) else CLEAN
