"""Central finite-difference gradient oracle shared by the test modules.

The oracle never touches the reverse-mode machinery: it re-runs a plain
forward function at perturbed inputs and differences the scalar outputs.
"""

from __future__ import annotations

import numpy as np

STEP = 1e-5
REL_TOL = 1e-4
ABS_FLOOR = 1e-7


def numeric_grad_at(f, arrays: list[np.ndarray], which: int, index: tuple,
                    step: float = STEP) -> float:
    """Central difference of scalar f(arrays) w.r.t. arrays[which][index]."""
    plus = [a.copy() for a in arrays]
    minus = [a.copy() for a in arrays]
    plus[which][index] += step
    minus[which][index] -= step
    return (f(plus) - f(minus)) / (2.0 * step)


def assert_grad_matches(f, arrays: list[np.ndarray], analytic: list[np.ndarray],
                        rng: np.random.Generator, coords_per_array: int = 20,
                        rel_tol: float = REL_TOL, abs_floor: float = ABS_FLOOR,
                        step: float = STEP) -> None:
    """Spot-check analytic gradients against central differences.

    Samples ``coords_per_array`` random coordinates from every array and
    requires |analytic - numeric| <= abs_floor + rel_tol * max(|analytic|, |numeric|).
    """
    for which, (arr, grad) in enumerate(zip(arrays, analytic)):
        assert grad.shape == arr.shape
        n = min(coords_per_array, arr.size)
        flat_choices = rng.choice(arr.size, size=n, replace=False)
        for flat in flat_choices:
            index = np.unravel_index(flat, arr.shape)
            num = numeric_grad_at(f, arrays, which, index, step=step)
            ana = grad[index]
            tol = abs_floor + rel_tol * max(abs(ana), abs(num))
            assert abs(ana - num) <= tol, (
                f"array {which} coord {index}: analytic {ana!r} vs numeric {num!r}")
