"""Fully connected pilot generator and its two training losses.

The generator maps a cell's local large-scale gains to a merged tau x K pilot
matrix. One parameter set is shared by every cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .numerics import as_generator
from .pilots import PilotSet, dft_basis

BETA_DB_RANGE = (-130.0, -60.0)


def beta_feature(beta) -> np.ndarray:
    """Map linear gains to dB, then affinely from [-130, -60] dB onto [-1, 1], clipped."""
    lo, hi = BETA_DB_RANGE
    db = 10.0 * np.log10(np.asarray(beta, dtype=float))
    return np.clip(2.0 * (db - lo) / (hi - lo) - 1.0, -1.0, 1.0)


def glorot_uniform(gen: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return gen.uniform(-limit, limit, size=shape)


@dataclass
class PilotNet:
    tau: int
    K: int
    p_max: float
    weights: list = field(default_factory=list)    # [(W, b), ...] hidden then output
    activation: str = "relu"
    dropout: float = 0.0

    @property
    def hidden_widths(self) -> list[int]:
        return [w.shape[0] for w, _ in self.weights[:-1]]

    def parameters(self) -> list:
        return [t for pair in self.weights for t in pair]

    def named_parameters(self) -> dict:
        out = {}
        n_hidden = len(self.weights) - 1
        for m, (w, b) in enumerate(self.weights):
            tag = "out" if m == n_hidden else str(m + 1)
            out[f"pilot.W_{tag}"] = w
            out[f"pilot.b_{tag}"] = b
        return out

    def copy(self) -> "PilotNet":
        return PilotNet(self.tau, self.K, self.p_max,
                        [(ad.param(w.value), ad.param(b.value)) for w, b in self.weights],
                        self.activation, self.dropout)


def orthogonal_bias(tau: int, K: int) -> np.ndarray:
    """Raw output vector whose packed matrix holds unit-norm DFT columns.

    Column k is DFT column k mod tau, so the columns are orthogonal when
    K <= tau and reused cyclically otherwise.
    """
    X = dft_basis(tau)[:, np.arange(K) % tau]
    flat = X.T.reshape(-1)                      # column-major
    return np.concatenate([flat.real, flat.imag])


def init_pilot_net(tau: int, K: int, p_max: float, rng, n_hidden: int = 2,
                   omega: int = 4, activation: str = "relu", dropout: float = 0.0) -> PilotNet:
    """Hidden width omega * tau * K; weights Glorot-uniform, hidden biases zero.

    The output bias starts at full-power orthogonal pilots, so a net whose
    hidden units are all inactive still emits valid, full-rank pilots.
    """
    gen = as_generator(rng)
    width = omega * tau * K
    sizes = [K] + [width] * n_hidden + [2 * tau * K]
    weights = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = glorot_uniform(gen, (fan_out, fan_in), fan_in, fan_out)
        weights.append((ad.param(W), ad.param(np.zeros(fan_out))))
    weights[-1][1].value = orthogonal_bias(tau, K)
    return PilotNet(tau, K, p_max, weights, activation, dropout)


def _activate(x, kind: str):
    if kind == "relu":
        return ad.relu(x)
    if kind == "linear":
        return x
    raise ValueError(f"unknown activation {kind!r}")


def pilot_forward(beta_local, net: PilotNet, rng: np.random.Generator | None = None) -> ad.Tensor:
    """Merged pilots for each row of ``beta_local`` (..., K) -> (..., tau, K).

    The raw output is reshaped to complex, scaled by sqrt(p_max) so unit-size
    outputs sit at the power budget, and then power-normalized.
    """
    u = ad.const(beta_feature(beta_local))
    for W, b in net.weights[:-1]:
        u = _activate(ad.affine(u, W, b), net.activation)
        u = ad.dropout(u, net.dropout, rng)
    W, b = net.weights[-1]
    u = ad.affine(u, W, b)
    x = ad.scale(ad.pack_complex(u, net.tau, net.K), math.sqrt(net.p_max))
    return ad.normalize_power(x, net.p_max)


def generate_pilots(net: PilotNet, local_beta: np.ndarray) -> PilotSet:
    """Inference helper: local_beta (L, K) -> PilotSet."""
    xbar = pilot_forward(local_beta, net).value
    return PilotSet.from_merged(xbar, net.p_max)


# --------------------------------------------------------------------- losses

def _local(beta: np.ndarray) -> np.ndarray:
    L = beta.shape[-2]
    idx = np.arange(L)
    return beta[..., idx, idx, :]


def loss_aware_terms(xbar: ad.Tensor, beta, delta_ue, delta_bs, noise_power: float,
                     tau: int) -> ad.Tensor:
    """Per-cell Tr((D_ii^-1 + Xbar_i^H Bbar_i^-1 Xbar_i)^-1), shape (..., L).

    ``xbar`` is (..., L, tau, K); ``beta`` (..., L, L, K). The noise-plus-
    distortion coefficient phi_i uses the pilots' own column powers.
    """
    beta = np.asarray(beta, dtype=float)
    L, _, K = beta.shape[-3:]
    lead = beta.shape[:-3]
    d_ue2 = np.broadcast_to(np.asarray(delta_ue, dtype=float) ** 2, lead + (L, K))
    d_bs2 = np.broadcast_to(np.asarray(delta_bs, dtype=float) ** 2, lead + (L,))

    powers = ad.sum(ad.abs2(xbar), axis=-2)                                # (..., L_j, K)
    weight = (tau * d_ue2[..., None, :, :] + d_bs2[..., :, None, None]) * beta
    phi = ad.scale(ad.add(ad.sum(ad.mul(ad.reshape(powers, lead + (1, L, K)), weight),
                                 axis=(-2, -1)), noise_power), 1.0 / tau)     # (..., L_i)

    xj = ad.reshape(xbar, lead + (1, L, tau, K))
    mask = (1.0 - np.eye(L))[:, :, None, None]
    scaled = ad.mul(xj, beta[..., :, :, None, :] * mask)                   # X_j D_ij, j != i
    cross = ad.sum(ad.matmul(scaled, ad.herm(xj)), axis=-3)                # (..., L, tau, tau)
    B = ad.add(cross, ad.mul(ad.reshape(phi, lead + (L, 1, 1)), np.eye(tau)))
    B_inv = ad.inv_hpd(B)
    info = ad.matmul(ad.herm(xbar), ad.matmul(B_inv, xbar))                # (..., L, K, K)
    d_inv = np.eye(K) * (1.0 / _local(beta))[..., None, :]
    return ad.trace_re(ad.inv_hpd(ad.add(info, d_inv)))


def loss_aware(xbar: ad.Tensor, beta, delta_ue, delta_bs, noise_power: float,
               tau: int) -> ad.Tensor:
    """Mean over samples and cells of the contamination-aware objective."""
    return ad.mean(loss_aware_terms(xbar, beta, delta_ue, delta_bs, noise_power, tau))


def loss_unaware_terms(xbar: ad.Tensor, beta_local, tau: int, noise_power: float) -> ad.Tensor:
    """Tr((D^-1 + (tau / s2) Xbar^H Xbar)^-1) per (sample, cell)."""
    beta_local = np.asarray(beta_local, dtype=float)
    K = beta_local.shape[-1]
    gram = ad.scale(ad.matmul(ad.herm(xbar), xbar), tau / noise_power)
    d_inv = np.eye(K) * (1.0 / beta_local)[..., None, :]
    return ad.trace_re(ad.inv_hpd(ad.add(gram, d_inv)))


def loss_unaware(xbar: ad.Tensor, beta_local, tau: int, noise_power: float) -> ad.Tensor:
    return ad.mean(loss_unaware_terms(xbar, beta_local, tau, noise_power))
