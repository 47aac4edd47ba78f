"""Model families, training with a held-out split, and stay-level prediction.

Three classifier families are supported, each with its library defaults (no
tuning): a random forest, gradient boosting, and a small multilayer
perceptron behind a standard scaler. A model is trained once on baseline
patient rows and then reused unchanged for every scenario dataset; the only
thing that varies across scenarios is which stays each dataset lists, so any
metric movement is attributable to label shift, not to the model.

A trained model pins the feature schema it was fitted against. Predicting
with a matrix encoded under any other schema is an error, caught by the
schema hash rather than by silently misaligned columns.
"""

from __future__ import annotations

import pickle
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from sklearn.ensemble import GradientBoostingClassifier, RandomForestClassifier
from sklearn.neural_network import MLPClassifier
from sklearn.pipeline import Pipeline
from sklearn.preprocessing import StandardScaler

from .features import FeatureMatrix, FeatureSchema, HarnessError

RANDOM_FOREST = "random-forest"
GRADIENT_BOOSTING = "gradient-boosting"
MULTILAYER_PERCEPTRON = "multilayer-perceptron"
FAMILIES = (RANDOM_FOREST, GRADIENT_BOOSTING, MULTILAYER_PERCEPTRON)

DEFAULT_SPLIT = 0.8
SCORE_THRESHOLD = 0.5

_MODEL_FORMAT = "edharness-model"
_MODEL_VERSION = 1


def make_estimator(family: str, seed: int):
    """Instantiate one classifier family at its default settings."""
    if family == RANDOM_FOREST:
        return RandomForestClassifier(random_state=seed)
    if family == GRADIENT_BOOSTING:
        return GradientBoostingClassifier(random_state=seed)
    if family == MULTILAYER_PERCEPTRON:
        return Pipeline(
            [
                ("scale", StandardScaler()),
                ("mlp", MLPClassifier(random_state=seed, max_iter=800)),
            ]
        )
    raise HarnessError(f"unknown model family {family!r}; expected one of {', '.join(FAMILIES)}")


@dataclass(frozen=True)
class TrainedModel:
    """A fitted estimator bound to its feature schema and label threshold."""

    family: str
    estimator: object
    schema: FeatureSchema
    los_threshold: float

    def save(self, path: str | Path) -> None:
        payload = {
            "format": _MODEL_FORMAT,
            "version": _MODEL_VERSION,
            "family": self.family,
            "los_threshold": self.los_threshold,
            "schema": self.schema,
            "schema_hash": self.schema.hash,
            "estimator": self.estimator,
        }
        with open(path, "wb") as handle:
            pickle.dump(payload, handle)

    @classmethod
    def load(cls, path: str | Path) -> "TrainedModel":
        with open(path, "rb") as handle:
            try:
                payload = pickle.load(handle)
            except Exception:
                raise HarnessError(f"{path}: not a model file") from None
        if not isinstance(payload, dict) or payload.get("format") != _MODEL_FORMAT:
            raise HarnessError(f"{path}: not a model file")
        if payload.get("version") != _MODEL_VERSION:
            raise HarnessError(f"{path}: unsupported model version {payload.get('version')!r}")
        schema = payload["schema"]
        if schema.hash != payload["schema_hash"]:
            raise HarnessError(f"{path}: stored schema hash does not match its schema")
        return cls(
            family=payload["family"],
            estimator=payload["estimator"],
            schema=schema,
            los_threshold=payload["los_threshold"],
        )


@dataclass(frozen=True)
class TrainReport:
    """Held-out evaluation of one training run."""

    family: str
    n_rows: int
    n_train: int
    n_held_out: int
    accuracy: float
    precision: float | None  # absent when nothing was predicted positive
    recall: float | None  # absent when the held-out split has no positives
    prevalence: float
    schema_hash: str


def _split_indices(n: int, split: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(split * n))
    n_train = min(max(n_train, 1), n - 1)
    return order[:n_train], order[n_train:]


def train(
    matrix: FeatureMatrix,
    family: str,
    split: float = DEFAULT_SPLIT,
    seed: int = 0,
    los_threshold: float = 4.0,
) -> tuple[TrainedModel, TrainReport]:
    """Fit one family on a seeded train/held-out split of the matrix."""
    if not 0.0 < split < 1.0:
        raise HarnessError(f"split must be in (0, 1), got {split}")
    n = len(matrix.ids)
    if n < 2:
        raise HarnessError(f"need at least 2 rows to split, got {n}")
    estimator = make_estimator(family, seed)
    train_idx, held_idx = _split_indices(n, split, seed)
    estimator.fit(matrix.X[train_idx], matrix.y[train_idx])
    model = TrainedModel(
        family=family,
        estimator=estimator,
        schema=matrix.schema,
        los_threshold=los_threshold,
    )
    held_y = matrix.y[held_idx]
    held_pred = (scores(model, matrix.X[held_idx]) >= SCORE_THRESHOLD).astype(np.int64)
    tp = int(np.sum((held_pred == 1) & (held_y == 1)))
    fp = int(np.sum((held_pred == 1) & (held_y == 0)))
    fn = int(np.sum((held_pred == 0) & (held_y == 1)))
    report = TrainReport(
        family=family,
        n_rows=n,
        n_train=len(train_idx),
        n_held_out=len(held_idx),
        accuracy=float(np.mean(held_pred == held_y)),
        precision=tp / (tp + fp) if (tp + fp) > 0 else None,
        recall=tp / (tp + fn) if (tp + fn) > 0 else None,
        prevalence=float(np.mean(held_y)),
        schema_hash=matrix.schema.hash,
    )
    return model, report


def scores(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    """Probability of the long-stay class for each row."""
    if X.ndim != 2 or X.shape[1] != len(model.schema.columns):
        raise HarnessError(
            f"matrix has {X.shape[1] if X.ndim == 2 else '?'} columns, "
            f"schema expects {len(model.schema.columns)}"
        )
    proba = model.estimator.predict_proba(X)
    classes = list(model.estimator.classes_)
    if 1 in classes:
        return np.asarray(proba[:, classes.index(1)], dtype=np.float64)
    # the training fold held a single class and it was the negative one
    return np.zeros(len(X), dtype=np.float64)


def predict_matrix(model: TrainedModel, matrix: FeatureMatrix) -> list[tuple[str, int, float]]:
    """Score a matrix encoded under the model's own schema."""
    if matrix.schema.hash != model.schema.hash:
        raise HarnessError(
            f"feature schema hash {matrix.schema.hash} does not match "
            f"the model's {model.schema.hash}"
        )
    return predict_rows(model, matrix.ids, matrix.X)


def predict_rows(
    model: TrainedModel, ids: Sequence[str], X: np.ndarray
) -> list[tuple[str, int, float]]:
    """Score rows already encoded under the model's schema."""
    if len(ids) != len(X):
        raise HarnessError(f"{len(ids)} ids for {len(X)} rows")
    row_scores = scores(model, X)
    return [
        (pid, int(score >= SCORE_THRESHOLD), float(score))
        for pid, score in zip(ids, row_scores)
    ]


def predict_stays(
    model: TrainedModel,
    stay_index: Sequence[tuple[str, str]],
    patient_rows: Mapping[str, np.ndarray],
) -> list[tuple[str, int, float]]:
    """Score synthetic stays by reusing each stay's source-patient feature row.

    Every stay generated from the same historical patient receives that
    patient's one feature vector, whatever the scenario; the matrix handed to
    the estimator therefore has one row per stay.
    """
    missing = sorted({source for _, source in stay_index if source not in patient_rows})
    if missing:
        raise HarnessError(
            f"dataset references patients absent from the features file: {', '.join(missing[:5])}"
            + (f" and {len(missing) - 5} more" if len(missing) > 5 else "")
        )
    X = np.vstack([patient_rows[source] for _, source in stay_index])
    return predict_rows(model, [stay_id for stay_id, _ in stay_index], X)
