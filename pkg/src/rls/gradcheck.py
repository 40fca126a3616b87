"""Central-difference gradient checking for graph-building functions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import ShapeError, Tensor, backward


@dataclass
class GradCheckReport:
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray
    coords: np.ndarray
    tol: float

    @property
    def max_rel_error(self) -> float:
        return float(self.rel_error.max()) if self.rel_error.size else 0.0

    @property
    def passed(self) -> bool:
        return bool(np.all(np.isfinite(self.rel_error))) and self.max_rel_error < self.tol


def grad_check(
    f: Callable[[Tensor], Tensor],
    point,
    step: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-6,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare the autodiff gradient of scalar ``f`` at ``point`` with central differences.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``; ``floor``
    keeps coordinates with vanishing gradient from dividing round-off by zero.
    ``max_coords`` checks a seeded random subset of coordinates.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)

    x = Tensor(base.copy(), requires_grad=True)
    out = f(x)
    if out.data.size != 1:
        raise ShapeError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    backward(out)
    analytic_full = x.grad.reshape(-1)

    flat = base.reshape(-1)
    coords = np.arange(flat.size)
    if max_coords is not None and flat.size > max_coords:
        coords = np.sort(np.random.default_rng(seed).choice(flat.size, max_coords, replace=False))

    numeric = np.empty(coords.size)
    for i, c in enumerate(coords):
        probe = flat.copy()
        probe[c] = flat[c] + step
        fp = f(Tensor(probe.reshape(base.shape))).item()
        probe[c] = flat[c] - step
        fm = f(Tensor(probe.reshape(base.shape))).item()
        numeric[i] = (fp - fm) / (2.0 * step)

    analytic = analytic_full[coords]
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = np.abs(analytic - numeric) / denom
    return GradCheckReport(analytic, numeric, rel, coords, tol)
