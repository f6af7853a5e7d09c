"""Baseline pilot schemes and per-column power normalization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ZeroColumn
from .numerics import as_generator, sample_complex_gaussian

UNIT_NORM_TOL = 1e-10


@dataclass
class PilotSet:
    """Unit-norm pilot matrices ``X`` (L, tau, K) and powers ``p`` (L, K) in mW."""

    X: np.ndarray
    p: np.ndarray
    p_max: float

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=complex)
        self.p = np.asarray(self.p, dtype=float)
        norms = np.linalg.norm(self.X, axis=-2)
        if np.max(np.abs(norms - 1.0)) > UNIT_NORM_TOL:
            raise ValueError("pilot columns must have unit norm")
        if np.any(self.p <= 0) or np.any(self.p > self.p_max * (1 + 1e-12)):
            raise ValueError("powers must lie in (0, p_max]")

    @property
    def tau(self) -> int:
        return self.X.shape[-2]

    @property
    def K(self) -> int:
        return self.X.shape[-1]

    def merged(self) -> np.ndarray:
        """Xbar = X P^{1/2}, columns of power p."""
        return self.X * np.sqrt(self.p)[..., None, :]

    @classmethod
    def from_merged(cls, xbar: np.ndarray, p_max: float) -> "PilotSet":
        xbar = np.asarray(xbar, dtype=complex)
        p = np.sum(np.abs(xbar) ** 2, axis=-2)
        if np.any(p == 0):
            raise ZeroColumn("pilot column with zero norm")
        X = xbar / np.sqrt(p)[..., None, :]
        return cls(X, np.minimum(p, p_max), p_max)


def dft_basis(tau: int) -> np.ndarray:
    """Unitary DFT matrix; its columns are the orthogonal pilot candidates."""
    t = np.arange(tau)
    return np.exp(-2j * np.pi * np.outer(t, t) / tau) / np.sqrt(tau)


def orthogonal_pilots(tau: int, K: int, L: int, rng, p_max: float) -> PilotSet:
    """Each cell draws K DFT columns at random, at full power.

    With K <= tau the columns are distinct; otherwise a random ordering of the
    tau columns is assigned cyclically by UE index, so pilots repeat in-cell.
    """
    if tau < 1:
        raise ValueError("tau must be at least 1")
    gen = as_generator(rng)
    base = dft_basis(tau)
    X = np.empty((L, tau, K), dtype=complex)
    for cell in range(L):
        if K <= tau:
            cols = gen.choice(tau, size=K, replace=False)
        else:
            cols = gen.permutation(tau)[np.arange(K) % tau]
        X[cell] = base[:, cols]
    return PilotSet(X, np.full((L, K), float(p_max)), p_max)


def random_pilots(tau: int, K: int, L: int, rng, p_max: float) -> PilotSet:
    """I.i.d. complex-Gaussian columns scaled to unit norm, at full power."""
    if tau < 1:
        raise ValueError("tau must be at least 1")
    gen = as_generator(rng)
    Z = sample_complex_gaussian(gen, shape=(L, tau, K))
    X = Z / np.linalg.norm(Z, axis=-2, keepdims=True)
    return PilotSet(X, np.full((L, K), float(p_max)), p_max)


def normalize_power(x_tilde: np.ndarray, p_max: float) -> np.ndarray:
    """Shrink any column whose power exceeds ``p_max`` onto the budget."""
    return ad.normalize_power(ad.const(np.asarray(x_tilde, dtype=complex)), p_max).value
