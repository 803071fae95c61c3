"""Classification metrics and attack success rate.

The positive class is the anomaly (label 1).  Attack success rate (ASR)
follows the before-vs-after reading: the fraction of samples whose
*predicted* label changes due to the attack, either by perturbing the test
inputs (inference protocol) or by comparing a cleanly trained model against
one trained under attack on the same clean test set (training protocol).
A compare-to-truth variant is available for the literal reading.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .models import predict_proba

DEFAULT_THRESHOLD = 0.5


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    degenerate: bool = False  # a zero-denominator metric was reported as 0


@dataclass
class AsrReport:
    flipped: int
    total: int
    asr: float
    protocol: str  # "inference_attack" or "training_attack"


def classify(model, x: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Predicted labels: 1 iff probability >= threshold."""
    if not (0.0 < threshold < 1.0):
        raise ValueError(f"threshold must be in (0,1), got {threshold}")
    return (predict_proba(model, x) >= threshold).astype(np.int64)


def compute_metrics(pred: np.ndarray, truth: np.ndarray) -> Metrics:
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction/truth length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("cannot compute metrics on an empty sample set")
    tp = int(np.sum((pred == 1) & (truth == 1)))
    fp = int(np.sum((pred == 1) & (truth == 0)))
    tn = int(np.sum((pred == 0) & (truth == 0)))
    fn = int(np.sum((pred == 0) & (truth == 1)))
    degenerate = False
    accuracy = (tp + tn) / pred.size
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision, degenerate = 0.0, True
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall, degenerate = 0.0, True
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1, degenerate = 0.0, True
    return Metrics(accuracy, precision, recall, f1, tp, fp, tn, fn, degenerate)


def asr_inference(model, x_clean: np.ndarray, x_adv: np.ndarray,
                  threshold: float = DEFAULT_THRESHOLD, *,
                  y_true: np.ndarray | None = None) -> AsrReport:
    """Fraction of paired samples whose prediction flips under the attack.

    With ``y_true`` given, compares attacked predictions to the true labels
    instead (the literal flipped-versus-truth reading).
    """
    if len(x_clean) != len(x_adv):
        raise ValueError(f"paired sets differ in length: {len(x_clean)} vs {len(x_adv)}")
    pred_adv = classify(model, x_adv, threshold)
    reference = (np.asarray(y_true, dtype=np.int64) if y_true is not None
                 else classify(model, x_clean, threshold))
    flipped = int(np.sum(pred_adv != reference))
    return AsrReport(flipped, len(x_adv), flipped / len(x_adv), "inference_attack")


def asr_training(model_clean, model_attacked, x_test_clean: np.ndarray,
                 threshold: float = DEFAULT_THRESHOLD, *,
                 y_true: np.ndarray | None = None) -> AsrReport:
    """Fraction of clean test samples on which the attacked-trained model
    disagrees with the cleanly trained one."""
    pred_attacked = classify(model_attacked, x_test_clean, threshold)
    reference = (np.asarray(y_true, dtype=np.int64) if y_true is not None
                 else classify(model_clean, x_test_clean, threshold))
    flipped = int(np.sum(pred_attacked != reference))
    return AsrReport(flipped, len(x_test_clean), flipped / len(x_test_clean),
                     "training_attack")


METRICS_CSV_HEADER = ["setting", "attack", "acc", "prec", "rec", "f1", "asr"]


def metrics_row(setting: str, attack: str, metrics: Metrics,
                asr: AsrReport | None) -> list[str]:
    """One export row; percentages with two decimals, ASR empty for baselines."""
    return [
        setting,
        attack,
        f"{metrics.accuracy * 100:.2f}",
        f"{metrics.precision * 100:.2f}",
        f"{metrics.recall * 100:.2f}",
        f"{metrics.f1 * 100:.2f}",
        "" if asr is None else f"{asr.asr * 100:.2f}",
    ]


def write_metrics_csv(rows: list[list[str]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_CSV_HEADER)
        writer.writerows(rows)
