"""Linear support vector machine, trained from scratch.

Training minimizes ``0.5 * ||w||^2 + C * sum_i a_i * hinge(y_i * f(x_i))``
by stochastic subgradient descent with the 1/(lambda * t) step schedule,
where ``lambda = 1 / (C * N)`` makes that objective the N-normalized one
the schedule expects.  Per-class weights ``a_i`` rebalance the heavily
negative-skewed window population (non-lesion windows vastly outnumber
lesions): positives get ``N_neg / N_pos``.  The bias rides along as a
constant input feature, and the example order is reshuffled
deterministically from the seed each epoch, so a (data, C, seed) triple
always reproduces the same model bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .features import FeatureRecord, ScalerStats, apply_scaler

FORMAT_VERSION = 1


class ModelFormatError(Exception):
    """Model file is corrupt or from an incompatible format version."""


@dataclass
class SvmModel:
    weights: np.ndarray
    bias: float
    C: float
    extractor: str
    scaler: Optional[ScalerStats]
    seed: int
    epochs: int


def _labels_to_signs(records: Sequence[FeatureRecord]) -> np.ndarray:
    signs = np.empty(len(records))
    for i, rec in enumerate(records):
        if rec.label == "positive":
            signs[i] = 1.0
        elif rec.label == "negative":
            signs[i] = -1.0
        else:
            raise ValueError(f"record {rec.window_id} is unlabeled")
    return signs


def train(
    records: Sequence[FeatureRecord],
    C: float = 1.0,
    seed: int = 42,
    epochs: Optional[int] = None,
    balance_classes: bool = True,
) -> SvmModel:
    """Fit the hyperplane on scaled, labeled records."""
    if not records:
        raise ValueError("no training records")
    if any(not r.scaled for r in records):
        raise ValueError("training records must be scaled first (see fit_scaler/apply_scaler)")
    x = np.stack([r.values for r in records])
    if not np.isfinite(x).all():
        raise ValueError("training records contain non-finite features")
    y = _labels_to_signs(records)
    n_pos = int((y > 0).sum())
    n_neg = int((y < 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("training needs both classes present")

    n, dim = x.shape
    if epochs is None:
        epochs = 50 * math.ceil(n / 1000)
    alpha = np.where(y > 0, (n_neg / n_pos) if balance_classes else 1.0, 1.0)
    lam = 1.0 / (C * n)

    xb = np.concatenate([x, np.ones((n, 1))], axis=1)  # bias as a constant feature
    w = np.zeros(dim + 1)
    # Step-weighted iterate average: the raw final iterate oscillates with
    # the last few samples; the average converges smoothly.
    w_sum = np.zeros(dim + 1)
    weight_total = 0.0
    rng = np.random.default_rng(seed)
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            violates = y[i] * float(w @ xb[i]) < 1.0
            w *= 1.0 - eta * lam
            if violates:
                w += (eta * alpha[i] * y[i]) * xb[i]
            w_sum += t * w
            weight_total += t
    w = w_sum / weight_total
    return SvmModel(
        weights=w[:-1].copy(),
        bias=float(w[-1]),
        C=C,
        extractor=records[0].extractor,
        scaler=None,
        seed=seed,
        epochs=epochs,
    )


def decision_value(model: SvmModel, values: np.ndarray) -> float:
    if len(values) != len(model.weights):
        raise ValueError(f"expected {len(model.weights)} features, got {len(values)}")
    return float(model.weights @ values + model.bias)


def predict(model: SvmModel, record: FeatureRecord) -> Tuple[str, float]:
    """(label, margin) for one scaled record; a zero margin stays negative."""
    if model.scaler is not None and not record.scaled:
        raise ValueError("record must be scaled with the model's scaler before predict")
    margin = decision_value(model, record.values)
    return ("positive" if margin > 0 else "negative", margin)


def classify(model: SvmModel, record: FeatureRecord) -> Tuple[str, float]:
    """Scale an unscaled record with the model's scaler, then predict."""
    if model.scaler is not None and not record.scaled:
        record = apply_scaler(model.scaler, record)
    return predict(model, record)


def hinge_objective(model: SvmModel, records: Sequence[FeatureRecord], balance_classes: bool = True) -> float:
    """Full-batch value of the trained objective (regularizer + hinge sum)."""
    y = _labels_to_signs(records)
    n_pos = int((y > 0).sum())
    n_neg = int((y < 0).sum())
    alpha = np.where(y > 0, (n_neg / max(n_pos, 1)) if balance_classes else 1.0, 1.0)
    x = np.stack([r.values for r in records])
    margins = y * (x @ model.weights + model.bias)
    hinge = np.maximum(0.0, 1.0 - margins)
    reg = 0.5 * (float(model.weights @ model.weights) + model.bias * model.bias)
    return reg + model.C * float((alpha * hinge).sum())


def save(model: SvmModel, path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "weights": [float(v) for v in model.weights],
        "bias": model.bias,
        "C": model.C,
        "extractor": model.extractor,
        "seed": model.seed,
        "epochs": model.epochs,
        "scaler": None
        if model.scaler is None
        else {
            "mean": [float(v) for v in model.scaler.mean],
            "std": [float(v) for v in model.scaler.std],
            "extractor": model.scaler.extractor,
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load(path) -> SvmModel:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        version = doc["format_version"]
        if version != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported model format_version {version}")
        scaler = None
        if doc["scaler"] is not None:
            scaler = ScalerStats(
                mean=np.asarray(doc["scaler"]["mean"], dtype=np.float64),
                std=np.asarray(doc["scaler"]["std"], dtype=np.float64),
                extractor=doc["scaler"]["extractor"],
            )
        return SvmModel(
            weights=np.asarray(doc["weights"], dtype=np.float64),
            bias=float(doc["bias"]),
            C=float(doc["C"]),
            extractor=str(doc["extractor"]),
            scaler=scaler,
            seed=int(doc["seed"]),
            epochs=int(doc["epochs"]),
        )
    except ModelFormatError:
        raise
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"cannot load model from {path}: {exc}") from exc
