"""Rollable latent layout: K structural sub-vectors, each spread over N azimuth bins.

Rolling shifts every sub-vector along its bin axis.  Positive shifts move
content toward higher bin indices: ``out[k, (n + s) % N] = z[k, n]``.
Functions accept either a :class:`LatentCode` or a raw array whose last two
axes are (K, N), so batches roll in one call.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Union

import numpy as np


@dataclass(frozen=True)
class LatentCode:
    values: np.ndarray  # (K, N)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"latent code must be a (K, N) matrix, got shape {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 2:
            raise ValueError(f"need K >= 1 and N >= 2, got K={v.shape[0]}, N={v.shape[1]}")
        object.__setattr__(self, "values", v)

    @property
    def K(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other) -> bool:
        return isinstance(other, LatentCode) and np.array_equal(self.values, other.values)


Latent = Union[LatentCode, np.ndarray]


def _values(z: Latent) -> np.ndarray:
    return z.values if isinstance(z, LatentCode) else np.asarray(z, dtype=np.float64)


def _wrap(like: Latent, arr: np.ndarray) -> Latent:
    return LatentCode(arr) if isinstance(like, LatentCode) else arr


def roll_integer(z: Latent, s: int) -> Latent:
    v = _values(z)
    return _wrap(z, np.roll(v, int(s) % v.shape[-1], axis=-1))


def roll_interpolative(z: Latent, s: float) -> Latent:
    """Circular linear blend of the two integer rolls bracketing ``s``."""
    v = _values(z)
    n = v.shape[-1]
    s = math.fmod(float(s), n)
    lo = math.floor(s)
    f = s - lo
    if f == 0.0:
        return roll_integer(z, lo)
    a = np.roll(v, lo % n, axis=-1)
    b = np.roll(v, (lo + 1) % n, axis=-1)
    return _wrap(z, (1.0 - f) * a + f * b)


def azimuth_to_shift(theta_deg, n_bins: int, mode: Literal["nearest", "continuous"] = "nearest"):
    """Map an azimuth in degrees to a shift in bin units (bin width 360/N)."""
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    s = np.mod(np.asarray(theta_deg, dtype=np.float64), 360.0) * n_bins / 360.0
    if mode == "continuous":
        return s if s.ndim else float(s)
    if mode != "nearest":
        raise ValueError(f"unknown mode {mode!r}")
    out = np.mod(np.floor(s + 0.5), n_bins).astype(np.int64)
    return out if out.ndim else int(out)


def permutation_matrix(n_bins: int, s: int) -> np.ndarray:
    """Explicit R^s with ``R^s @ v == roll_integer(v, s)``; oracle use only."""
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    cols = np.arange(n_bins)
    R = np.zeros((n_bins, n_bins))
    R[(cols + int(s)) % n_bins, cols] = 1.0
    return R


def latent_flatten(z: Latent) -> np.ndarray:
    v = _values(z)
    return v.reshape(*v.shape[:-2], v.shape[-2] * v.shape[-1])


def latent_unflatten(t, K: int, N: int) -> Latent:
    """Inverse of :func:`latent_flatten`; sub-vector k is ``t[k*N:(k+1)*N]``."""
    t = np.asarray(getattr(t, "data", t), dtype=np.float64)
    if t.shape[-1] != K * N:
        raise ValueError(f"flat latent has extent {t.shape[-1]}, expected K*N = {K * N}")
    out = t.reshape(*t.shape[:-1], K, N)
    return LatentCode(out) if out.ndim == 2 and N >= 2 else out
