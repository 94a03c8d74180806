"""Offline internal/external attention classification.

Five resting-normalized band powers per 20 s epoch feed a two-class linear
discriminant with shrinkage covariance; splits are participant-wise so no
participant's epochs leak across train/validation/test.
"""
from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import dsp
from .errors import (
    BaselineMissingError,
    ConfigurationError,
    InvalidParameterError,
    NumericalError,
)
from .iaf import IndividualBands

FEATURE_ORDER = ("delta", "theta", "alpha", "beta", "gamma")
LABEL_INTERNAL = "internal"
LABEL_EXTERNAL = "external"

EPOCH_SECONDS = 20.0
DEFAULT_SHRINKAGE = 0.1
DEFAULT_SPLIT_RATIOS = (12, 5, 5)

DEFAULT_FIXED_BANDS = {
    "delta": dsp.DELTA_BAND,
    "beta": dsp.BETA_BAND,
    "gamma": dsp.GAMMA_BAND,
}

# Broadband bands (delta, gamma) use the union of both adaptation sets.
BROADBAND_CHANNELS = dsp.ChannelSet(
    "broadband",
    dsp.FRONTAL_THETA.labels + dsp.POSTERIOR_ALPHA.labels)

DEFAULT_CHANNEL_MAP = {
    "alpha": dsp.POSTERIOR_ALPHA,
    "theta": dsp.FRONTAL_THETA,
    "beta": dsp.FRONTAL_THETA,
    "delta": BROADBAND_CHANNELS,
    "gamma": BROADBAND_CHANNELS,
}

CSV_HEADER = ("participant_id", "epoch_index", "label") + FEATURE_ORDER


@dataclass(frozen=True)
class FeatureVector:
    """Resting-normalized band powers of one 20 s epoch."""

    participant_id: str
    epoch_index: int
    delta: float
    theta: float
    alpha: float
    beta: float
    gamma: float
    label: str | None = None

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_ORDER])


@dataclass(frozen=True)
class SplitPlan:
    """Disjoint participant buckets for train/validation/test."""

    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]

    def __post_init__(self):
        buckets = (set(self.train_ids), set(self.val_ids), set(self.test_ids))
        total = sum(len(b) for b in buckets)
        if len(buckets[0] | buckets[1] | buckets[2]) != total:
            raise InvalidParameterError("split buckets must be disjoint")

    def as_dict(self) -> dict:
        return {"train_ids": list(self.train_ids),
                "val_ids": list(self.val_ids),
                "test_ids": list(self.test_ids)}


@dataclass(frozen=True)
class LdaModel:
    """Two-class linear discriminant; positive score predicts external."""

    weights: np.ndarray
    bias: float
    priors: tuple[float, float]  # (internal, external)
    shrinkage: float
    feature_order: tuple[str, ...] = FEATURE_ORDER

    def score(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != self.weights.shape:
            raise InvalidParameterError(
                f"feature vector of shape {x.shape} does not match "
                f"{self.weights.shape} model weights")
        return float(self.weights @ x + self.bias)

    def to_json_dict(self) -> dict:
        return {
            "weights": {name: float(w) for name, w
                        in zip(self.feature_order, self.weights)},
            "bias": self.bias,
            "priors": {"internal": self.priors[0], "external": self.priors[1]},
            "shrinkage": self.shrinkage,
            "feature_order": list(self.feature_order),
            "sign_convention": "positive score predicts external attention",
        }

    @classmethod
    def from_json_dict(cls, payload: Mapping) -> "LdaModel":
        order = tuple(payload["feature_order"])
        weights = np.array([payload["weights"][name] for name in order])
        priors = (float(payload["priors"]["internal"]),
                  float(payload["priors"]["external"]))
        return cls(weights=weights, bias=float(payload["bias"]),
                   priors=priors, shrinkage=float(payload["shrinkage"]),
                   feature_order=order)


def extract_features(epoch: dsp.EegChunk, bands: IndividualBands,
                     fixed: Mapping[str, dsp.BandRange] = DEFAULT_FIXED_BANDS,
                     channel_map: Mapping[str, dsp.ChannelSet] = DEFAULT_CHANNEL_MAP,
                     epoch_seconds: float = EPOCH_SECONDS) -> dict[str, float]:
    """Raw 5-band powers of one epoch, each on its assigned channel set."""
    if abs(epoch.duration - epoch_seconds) > 1.0 / epoch.sample_rate:
        raise InvalidParameterError(
            f"epoch of {epoch.duration:.3f} s, expected {epoch_seconds} s")
    band_ranges = {"theta": bands.theta, "alpha": bands.alpha, **fixed}
    psd = dsp.welch_psd(epoch)
    return {name: dsp.band_power(psd, band_ranges[name], channel_map[name])
            for name in FEATURE_ORDER}


def normalize_to_rest(raw_powers: Mapping[str, float],
                      resting_means: Mapping[str, float],
                      participant_id: str, epoch_index: int,
                      label: str | None = None) -> FeatureVector:
    """Divide each band power by the participant's resting-state mean."""
    features = {}
    for name in FEATURE_ORDER:
        if name not in resting_means:
            raise BaselineMissingError(
                f"no resting baseline for band {name!r} of participant "
                f"{participant_id!r}")
        rest = resting_means[name]
        if rest <= 0:
            raise InvalidParameterError(
                f"resting mean for band {name!r} must be positive, got {rest}")
        features[name] = raw_powers[name] / rest
    return FeatureVector(participant_id=participant_id,
                         epoch_index=epoch_index, label=label, **features)


def split_participants(ids: Sequence[str],
                       ratios: tuple[int, int, int] = DEFAULT_SPLIT_RATIOS,
                       seed: int = 0) -> SplitPlan:
    """Deterministic participant-wise split in the given proportions.

    Participants are shuffled under ``seed`` and allocated by the
    largest-remainder rule, so e.g. 10 participants at (12, 5, 5) yield a
    6/2/2 split.
    """
    unique = sorted(set(ids))
    if len(unique) != len(ids):
        raise InvalidParameterError("participant ids must be unique")
    if len(unique) < 3:
        raise InvalidParameterError(
            f"need at least 3 participants for 3 buckets, got {len(unique)}")
    if any(r <= 0 for r in ratios):
        raise InvalidParameterError("split ratios must be positive")

    shuffled = list(unique)
    random.Random(seed).shuffle(shuffled)

    total_ratio = sum(ratios)
    quotas = [len(shuffled) * r / total_ratio for r in ratios]
    sizes = [int(q) for q in quotas]
    remainders = sorted(range(3), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in remainders[:len(shuffled) - sum(sizes)]:
        sizes[i] += 1

    train = tuple(shuffled[:sizes[0]])
    val = tuple(shuffled[sizes[0]:sizes[0] + sizes[1]])
    test = tuple(shuffled[sizes[0] + sizes[1]:])
    return SplitPlan(train_ids=train, val_ids=val, test_ids=test)


def train_lda(rows: Sequence[FeatureVector],
              shrinkage: float = DEFAULT_SHRINKAGE) -> LdaModel:
    """Fit the two-class discriminant on labeled feature rows.

    Pooled within-class covariance is shrunk toward its scaled identity,
    ``(1 - s) * Sigma + s * (tr(Sigma)/d) * I``; weights are
    ``Sigma^-1 (mu_ext - mu_int)`` with the bias centered between the class
    means plus the log-prior ratio.
    """
    if not (0 <= shrinkage <= 1):
        raise InvalidParameterError("shrinkage must lie in [0, 1]")
    internal = np.array([r.as_array() for r in rows if r.label == LABEL_INTERNAL])
    external = np.array([r.as_array() for r in rows if r.label == LABEL_EXTERNAL])
    unlabeled = sum(1 for r in rows if r.label not in (LABEL_INTERNAL, LABEL_EXTERNAL))
    if unlabeled:
        raise InvalidParameterError(f"{unlabeled} rows lack a valid label")
    if len(internal) < 2 or len(external) < 2:
        raise InvalidParameterError(
            "training requires at least 2 rows of each class, got "
            f"{len(internal)} internal / {len(external)} external")

    mu_int = internal.mean(axis=0)
    mu_ext = external.mean(axis=0)
    n = len(internal) + len(external)
    scatter = ((internal - mu_int).T @ (internal - mu_int)
               + (external - mu_ext).T @ (external - mu_ext))
    cov = scatter / (n - 2)

    d = cov.shape[0]
    cov = (1.0 - shrinkage) * cov + shrinkage * (np.trace(cov) / d) * np.eye(d)

    try:
        weights = np.linalg.solve(cov, mu_ext - mu_int)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            "pooled covariance is singular; set shrinkage > 0") from exc
    if not np.all(np.isfinite(weights)):
        raise NumericalError(
            "non-finite discriminant weights; set shrinkage > 0")

    prior_int = len(internal) / n
    prior_ext = len(external) / n
    bias = float(-weights @ (mu_int + mu_ext) / 2.0
                 + np.log(prior_ext / prior_int))
    return LdaModel(weights=weights, bias=bias,
                    priors=(prior_int, prior_ext), shrinkage=shrinkage)


def predict(model: LdaModel, fv: FeatureVector) -> tuple[str, float]:
    """Label and signed score; a score of exactly 0 resolves to external."""
    score = model.score(fv.as_array())
    label = LABEL_EXTERNAL if score >= 0 else LABEL_INTERNAL
    return label, score


def evaluate(model: LdaModel, rows: Sequence[FeatureVector]) -> dict:
    """Accuracy and external-class F1 on labeled rows, plus the weights."""
    if not rows:
        raise InvalidParameterError("cannot evaluate on an empty test set")
    tp = fp = fn = tn = 0
    for row in rows:
        if row.label not in (LABEL_INTERNAL, LABEL_EXTERNAL):
            raise InvalidParameterError(
                f"row {row.participant_id}/{row.epoch_index} lacks a label")
        predicted, _ = predict(model, row)
        if predicted == LABEL_EXTERNAL:
            if row.label == LABEL_EXTERNAL:
                tp += 1
            else:
                fp += 1
        else:
            if row.label == LABEL_EXTERNAL:
                fn += 1
            else:
                tn += 1
    total = tp + fp + fn + tn
    accuracy = (tp + tn) / total
    denom = 2 * tp + fp + fn
    f1 = 2 * tp / denom if denom else 0.0
    return {
        "accuracy": accuracy,
        "f1_external": f1,
        "n": total,
        "weights": {name: float(w) for name, w
                    in zip(model.feature_order, model.weights)},
        "bias": model.bias,
    }


def rows_for_participants(rows: Sequence[FeatureVector],
                          ids: Sequence[str]) -> list[FeatureVector]:
    wanted = set(ids)
    return [r for r in rows if r.participant_id in wanted]


def write_features_csv(path, rows: Sequence[FeatureVector]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in rows:
            writer.writerow([r.participant_id, r.epoch_index, r.label or ""]
                            + [getattr(r, name) for name in FEATURE_ORDER])


def read_features_csv(path) -> list[FeatureVector]:
    rows: list[FeatureVector] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_HEADER:
            raise ConfigurationError(
                f"feature file must have header {','.join(CSV_HEADER)}")
        for record in reader:
            rows.append(FeatureVector(
                participant_id=record["participant_id"],
                epoch_index=int(record["epoch_index"]),
                label=record["label"] or None,
                **{name: float(record[name]) for name in FEATURE_ORDER}))
    return rows


def save_model(model: LdaModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_json_dict(), fh, indent=2)
        fh.write("\n")


def load_model(path) -> LdaModel:
    with open(path) as fh:
        return LdaModel.from_json_dict(json.load(fh))
