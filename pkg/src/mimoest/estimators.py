"""LS pre-processing, the genie LMMSE estimator and its closed-form MSE.

All functions take per-drop statistics (``beta`` of shape (L, L, K)) and merged
or unit-norm pilots of shape (L, tau, K); leading batch axes broadcast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NotPositiveDefinite, RankDeficient
from .numerics import frobenius_norm_sq, herm, hpd_inverse


def phi_coefficients(beta, powers, delta_ue, delta_bs, noise_power, tau_p) -> np.ndarray:
    """phi_i for every BS: (sum_jk (tau d_UE,jk^2 + d_BS,i^2) beta_ijk P_jk + s2) / tau.

    Shapes: beta (..., L, L, K), powers / delta_ue (..., L, K), delta_bs (..., L).
    Returns (..., L).
    """
    beta = np.asarray(beta, dtype=float)
    L, _, K = beta.shape[-3:]
    p = np.asarray(powers, dtype=float)
    d_ue2 = np.asarray(delta_ue, dtype=float) ** 2
    d_bs2 = np.asarray(delta_bs, dtype=float) ** 2
    weight = tau_p * d_ue2[..., None, :, :] + d_bs2[..., :, None, None]   # (..., L_i, L_j, K)
    total = np.sum(weight * beta * p[..., None, :, :], axis=(-2, -1))
    return (total + noise_power) / tau_p


def phi_coefficient(scenario, cell: int, powers=None) -> float:
    p = np.full((scenario.topology.L, scenario.topology.K), scenario.p_max) if powers is None else powers
    return float(phi_coefficients(scenario.beta, p, scenario.delta_ue, scenario.delta_bs,
                                  scenario.noise_power, scenario.tau_p)[cell])


@dataclass
class LmmseContext:
    """Statistics the genie LMMSE estimator is allowed to use."""

    X: np.ndarray        # (..., L, tau, K) unit-norm pilots
    p: np.ndarray        # (..., L, K) powers
    beta: np.ndarray     # (..., L, L, K)
    phi: np.ndarray      # (..., L)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=complex)
        self.p = np.asarray(self.p, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        if np.any(self.phi <= 0):
            raise ValueError("phi must be positive")
        if np.any(self.beta <= 0):
            raise ValueError("beta must be positive")

    @property
    def tau(self) -> int:
        return self.X.shape[-2]

    @property
    def L(self) -> int:
        return self.X.shape[-3]

    @classmethod
    def from_scenario(cls, scenario, pilots) -> "LmmseContext":
        phi = phi_coefficients(scenario.beta, pilots.p, scenario.delta_ue, scenario.delta_bs,
                               scenario.noise_power, scenario.tau_p)
        return cls(pilots.X, pilots.p, scenario.beta, phi)

    def merged(self) -> np.ndarray:
        return self.X * np.sqrt(self.p)[..., None, :]

    def local_beta(self) -> np.ndarray:
        idx = np.arange(self.L)
        return self.beta[..., idx, idx, :]

    def covariance_terms(self) -> np.ndarray:
        """T[i, j] = X_j D_ij P_j X_j^H, shape (..., L, L, tau, tau)."""
        xbar = self.merged()[..., None, :, :, :]                # (..., 1, L_j, tau, K)
        return (xbar * self.beta[..., :, :, None, :]) @ herm(xbar)

    def pilot_covariance(self, include_own: bool = True) -> np.ndarray:
        """sum_j T_ij + phi_i I; with ``include_own=False`` this is B_i."""
        T = self.covariance_terms()
        if not include_own:
            mask = 1.0 - np.eye(self.L)
            T = T * mask[:, :, None, None]
        eye = np.eye(self.tau)
        return np.sum(T, axis=-3) + self.phi[..., None, None] * eye


def lmmse_matrices(ctx: LmmseContext) -> np.ndarray:
    """A_i = tau^{-1/2} C_i^{-1} X_i P_i^{1/2} D_ii for every cell, (..., L, tau, K)."""
    C_inv = hpd_inverse(ctx.pilot_covariance())
    rhs = ctx.merged() * ctx.local_beta()[..., None, :]
    return (C_inv @ rhs) / math.sqrt(ctx.tau)


def lmmse_matrix(ctx: LmmseContext, cell: int) -> np.ndarray:
    return lmmse_matrices(ctx)[..., cell, :, :]


def lmmse_estimate(Y: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Hhat = Y A (batched over leading axes)."""
    Y, A = np.asarray(Y), np.asarray(A)
    if Y.shape[-1] != A.shape[-2]:
        raise ValueError(f"dimension mismatch: Y {Y.shape} vs A {A.shape}")
    return Y @ A


def ls_matrix(xbar: np.ndarray) -> np.ndarray:
    """A_LS = tau^{-1/2} Xbar (Xbar^H Xbar)^{-1}; needs tau >= K and full rank."""
    xbar = np.asarray(xbar, dtype=complex)
    tau, K = xbar.shape[-2:]
    if tau < K:
        raise RankDeficient(f"LS needs tau >= K (tau={tau}, K={K})")
    gram = herm(xbar) @ xbar
    gram = 0.5 * (gram + herm(gram))
    try:
        inv = hpd_inverse(gram, check=False)
    except NotPositiveDefinite as exc:
        raise RankDeficient("pilot Gram matrix is singular") from exc
    # Cholesky with jitter can succeed on numerically singular Gram matrices
    cond = np.linalg.cond(gram)
    if np.any(~np.isfinite(cond)) or np.any(cond > 1e12):
        raise RankDeficient("pilot Gram matrix is singular")
    return (xbar @ inv) / math.sqrt(tau)


def ls_preprocess(Y: np.ndarray, xbar: np.ndarray) -> np.ndarray:
    """Yhat = Y A_LS = H_ii + Z_i."""
    return np.asarray(Y) @ ls_matrix(xbar)


def analytic_mse(ctx: LmmseContext, n_antennas: int) -> np.ndarray:
    """Per-cell LMMSE MSE N Tr((D_ii^{-1} + X_i^H B_i^{-1} X_i P_i)^{-1}), shape (..., L)."""
    B_inv = hpd_inverse(ctx.pilot_covariance(include_own=False))
    M = herm(ctx.X) @ B_inv @ ctx.X                       # (..., L, K, K)
    M = 0.5 * (M + herm(M))
    d = ctx.local_beta()
    # (D^-1 + M P)^-1 = P^-1 ((D P)^-1 + M)^-1 keeps the inverted matrix Hermitian
    inner = M + np.eye(M.shape[-1]) * (1.0 / (d * ctx.p))[..., None, :]
    S = hpd_inverse(inner, check=False)
    tr = np.sum(np.diagonal(S, axis1=-2, axis2=-1).real / ctx.p, axis=-1)
    return n_antennas * tr


def mse_derivation_chain(ctx: LmmseContext, n_antennas: int) -> dict[str, np.ndarray]:
    """Four equivalent MSE forms from the closed-form derivation, per cell.

    Uses general (non-Cholesky) inverses so it stays an independent check of
    :func:`analytic_mse`.
    """
    N = n_antennas
    X, P = ctx.X, ctx.p
    D = ctx.local_beta()
    C_inv = np.linalg.inv(ctx.pilot_covariance())
    B_inv = np.linalg.inv(ctx.pilot_covariance(include_own=False))
    eye = np.eye(X.shape[-1])
    XP = X * P[..., None, :]
    G_full = herm(X) @ C_inv @ XP                           # X^H C^-1 X P
    G_other = herm(X) @ B_inv @ XP                          # X^H B^-1 X P
    Dm = D[..., None, :] * eye
    trD = np.sum(D, axis=-1)
    pre_lemma = N * trD - N * np.trace(G_full @ Dm @ Dm, axis1=-2, axis2=-1).real
    factored = N * np.trace((eye - G_full @ Dm) @ Dm, axis1=-2, axis2=-1).real
    post_lemma = N * np.trace(np.linalg.inv(eye + G_other @ Dm) @ Dm, axis1=-2, axis2=-1).real
    final = N * np.trace(np.linalg.inv((1.0 / D)[..., None, :] * eye + G_other),
                         axis1=-2, axis2=-1).real
    return {"pre_lemma": pre_lemma, "factored": factored,
            "post_lemma": post_lemma, "final": final}


def empirical_mse(H_hat: np.ndarray, H: np.ndarray) -> float:
    """Mean over samples of ||H - Hhat||_F^2 (samples = all leading axes)."""
    H_hat, H = np.asarray(H_hat), np.asarray(H)
    if H_hat.shape != H.shape:
        raise ValueError(f"shape mismatch {H_hat.shape} vs {H.shape}")
    err = frobenius_norm_sq(H - H_hat)
    return float(np.mean(err))


def sum_mse_per_sample(H_hat: np.ndarray, H: np.ndarray) -> np.ndarray:
    """Sum over cells of ||H_ii - Hhat_ii||_F^2, input shape (B, L, N, K)."""
    return np.sum(frobenius_norm_sq(np.asarray(H) - np.asarray(H_hat)), axis=-1)
