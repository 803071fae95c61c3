"""White-box input perturbations and naive baselines.

The signed-gradient attacks perturb inputs along the sign of the loss
gradient with respect to the input: one step (FGSM) or several (PGD).  PGD
as evaluated here applies the signed step iteratively from the clean input,
without random start and, by default, without projection; an optional
l-infinity projection is available for the canonical variant.  The naive
baselines are additive white Gaussian noise on inputs and label flipping.

Attacks operate on normalized profiles, so epsilon is dimensionless.  They
never modify the model: gradients are taken against a fixed weight snapshot.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import HOURS_PER_DAY
from .models import input_gradient

ATTACK_FAMILIES = ("none", "fgsm", "pgd", "awgn", "label_flip")


@dataclass
class AttackSpec:
    """Attack family plus its strength parameters."""

    family: str = "none"
    epsilon: float = 0.5        # FGSM magnitude / PGD step size
    pgd_iters: int = 10
    awgn_variance: float = 0.1
    flip_fraction: float = 1.0  # share of the targeted subset whose labels flip
    project_linf: bool = False
    eps_ball: float | None = None  # projection radius; defaults to epsilon
    seed: int = 0

    def __post_init__(self):
        if self.family not in ATTACK_FAMILIES:
            raise ValueError(f"unknown attack family {self.family!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.pgd_iters < 1:
            raise ValueError("pgd_iters must be >= 1")
        if self.awgn_variance < 0:
            raise ValueError("awgn variance must be >= 0")
        if not (0.0 <= self.flip_fraction <= 1.0):
            raise ValueError("flip_fraction must be in [0, 1]")


def fgsm(model, x: np.ndarray, y: np.ndarray, epsilon: float, *,
         alpha: float = 0.25, gamma: float = 2.0) -> np.ndarray:
    """One signed-gradient step of size epsilon away from the true label."""
    x = np.asarray(x, dtype=np.float64)
    grad = input_gradient(model, x, y, alpha, gamma)
    return x + epsilon * np.sign(grad)


def pgd(model, x: np.ndarray, y: np.ndarray, epsilon: float, iters: int = 10, *,
        project: bool = False, eps_ball: float | None = None,
        alpha: float = 0.25, gamma: float = 2.0) -> np.ndarray:
    """Iterated signed-gradient steps; optional l-inf projection around x."""
    if iters < 1:
        raise ValueError("pgd needs at least one iteration")
    x = np.asarray(x, dtype=np.float64)
    radius = epsilon if eps_ball is None else eps_ball
    x_adv = x.copy()
    for _ in range(iters):
        grad = input_gradient(model, x_adv, y, alpha, gamma)
        x_adv = x_adv + epsilon * np.sign(grad)
        if project:
            x_adv = np.clip(x_adv, x - radius, x + radius)
    return x_adv


def awgn(x: np.ndarray, variance: float, rng: np.random.Generator) -> np.ndarray:
    """Additive white Gaussian noise, i.i.d. per element."""
    if variance < 0:
        raise ValueError("awgn variance must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    if variance == 0:
        return x.copy()
    return x + rng.normal(0.0, np.sqrt(variance), size=x.shape)


def label_flip(y: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Invert floor(fraction * n) labels chosen uniformly without replacement."""
    if not (0.0 <= fraction <= 1.0):
        raise ValueError("flip fraction must be in [0, 1]")
    y = np.asarray(y)
    out = y.copy()
    n_flip = int(np.floor(fraction * len(y)))
    if n_flip:
        idx = rng.choice(len(y), size=n_flip, replace=False)
        out[idx] = 1 - out[idx]
    return out


def poison_batch(model, x: np.ndarray, y: np.ndarray, spec: AttackSpec,
                 rng: np.random.Generator, *, alpha: float = 0.25,
                 gamma: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """Apply one attack family to a training subset.

    Gradient attacks and noise perturb x and keep the true labels; label
    flipping inverts labels and keeps x.
    """
    if spec.family == "none":
        return x.copy(), y.copy()
    if spec.family == "fgsm":
        return fgsm(model, x, y, spec.epsilon, alpha=alpha, gamma=gamma), y.copy()
    if spec.family == "pgd":
        adv = pgd(model, x, y, spec.epsilon, spec.pgd_iters,
                  project=spec.project_linf, eps_ball=spec.eps_ball,
                  alpha=alpha, gamma=gamma)
        return adv, y.copy()
    if spec.family == "awgn":
        return awgn(x, spec.awgn_variance, rng), y.copy()
    if spec.family == "label_flip":
        return x.copy(), label_flip(y, spec.flip_fraction, rng)
    raise ValueError(f"unknown attack family {spec.family!r}")


def dump_adversarial_csv(x_adv: np.ndarray, labels: np.ndarray, kinds: list[str],
                         family: str, epsilon: float, path) -> None:
    """Adversarial samples in the dataset export schema plus attack columns."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"v{i}" for i in range(HOURS_PER_DAY)]
                        + ["label", "kind", "attack_family", "epsilon"])
        for row, label, kind in zip(x_adv, labels, kinds):
            writer.writerow([f"{v:.12g}" for v in row]
                            + [int(label), kind, family, f"{epsilon:.12g}"])
