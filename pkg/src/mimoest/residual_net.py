"""Residual channel estimator: a conv noise-level estimator plus an affine
denoiser that predicts a scaling map ``alpha`` and a shift map ``gamma``.

The estimate is ``Hhat = Yhat - (alpha * Yhat + gamma)`` on the two-channel
real view of the LS output. Before the network each column k of ``Yhat`` is
divided by a scale ``r_k`` and the estimate is multiplied back afterwards:

``column-power``  r_k is the root mean power of the column. Two gain channels
                  follow Re and Im: beta_k in normalized dB, and beta_k / r_k^2
                  in normalized dB, the local gain relative to what the
                  antenna array observes.
``beta``          r_k = sqrt(beta_k); one gain channel carries beta_k.

Modes
-----
``proposed``    Re, Im and the gain channels; alpha and gamma learned.
``cdrn``        Re and Im only; alpha fixed at zero.
``cdrn-local``  Re, Im and the gain channels; alpha fixed at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .numerics import as_generator
from .pilot_net import beta_feature, glorot_uniform

MODES = ("proposed", "cdrn", "cdrn-local")
SCALINGS = ("column-power", "beta")
RATIO_DB_RANGE = (-40.0, 10.0)
POWER_FLOOR = 1e-300


@dataclass
class ResidualNet:
    mode: str = "proposed"
    convs: list = field(default_factory=list)     # [(w, b)] noise-level estimator
    alpha: tuple | None = None                    # (w, b) or None in CDRN modes
    gamma: tuple | None = None
    scaling: str = "column-power"

    @property
    def depth(self) -> int:
        return len(self.convs)

    @property
    def width(self) -> int:
        return self.convs[0][0].shape[-1]

    @property
    def uses_beta(self) -> bool:
        return self.mode in ("proposed", "cdrn-local")

    def parameters(self) -> list:
        out = [t for pair in self.convs for t in pair]
        for head in (self.alpha, self.gamma):
            if head is not None:
                out.extend(head)
        return out

    def named_parameters(self) -> dict:
        out = {}
        for m, (w, b) in enumerate(self.convs):
            out[f"resnet.conv{m + 1}.w"] = w
            out[f"resnet.conv{m + 1}.b"] = b
        if self.alpha is not None:
            out["resnet.alpha.w"], out["resnet.alpha.b"] = self.alpha
        out["resnet.gamma.w"], out["resnet.gamma.b"] = self.gamma
        return out

    def copy(self) -> "ResidualNet":
        def dup(pair):
            return None if pair is None else (ad.param(pair[0].value), ad.param(pair[1].value))
        return ResidualNet(self.mode, [dup(p) for p in self.convs], dup(self.alpha),
                           dup(self.gamma), self.scaling)


def init_residual_net(rng, depth: int = 7, width: int = 64, mode: str = "proposed",
                      head_scale: float = 1.0, scaling: str = "column-power") -> ResidualNet:
    """Glorot-uniform 3x3 kernels; ``head_scale`` shrinks the alpha/gamma heads.

    With ``head_scale=0`` the untrained estimator is exactly LS.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if scaling not in SCALINGS:
        raise ValueError(f"scaling must be one of {SCALINGS}")
    if depth < 1:
        raise ValueError("depth must be at least 1")
    gen = as_generator(rng)
    c_in = 2 if mode == "cdrn" else (4 if scaling == "column-power" else 3)
    convs = []
    for _ in range(depth):
        w = glorot_uniform(gen, (3, 3, c_in, width), 9 * c_in, 9 * width)
        convs.append((ad.param(w), ad.param(np.zeros(width))))
        c_in = width

    def head():
        w = head_scale * glorot_uniform(gen, (3, 3, width, 2), 9 * width, 18)
        return (ad.param(w), ad.param(np.zeros(2)))

    alpha = head() if mode == "proposed" else None
    gamma = head()
    return ResidualNet(mode, convs, alpha, gamma, scaling)


def column_scale(beta_local) -> np.ndarray:
    """Per-column input scaling 1/sqrt(beta_k), shape (..., 1, K)."""
    return (1.0 / np.sqrt(np.asarray(beta_local, dtype=float)))[..., None, :]


def assemble_input(yhat, beta_local, mode: str = "proposed", feature=None) -> ad.Tensor:
    """(..., N, K) complex -> (..., N, K, C) real: Re, Im and (optionally) beta.

    ``yhat`` is expected already column-scaled. The extra channels are
    ``feature`` (..., K) or (..., K, C) when given, otherwise the normalized-dB
    beta feature, broadcast along the antenna axis.
    """
    yhat = ad.const(yhat)
    parts = ad.reim(yhat)
    if mode == "cdrn":
        return parts
    if feature is None:
        feature = beta_feature(beta_local)
    feature = ad.const(feature)
    if len(feature.shape) == len(yhat.shape) - 1:
        feature = ad.reshape(feature, feature.shape + (1,))
    lead, (K, C) = feature.shape[:-2], feature.shape[-2:]
    feat = ad.reshape(feature, lead + (1, K, C))
    feat = ad.mul(feat, np.ones(yhat.shape + (1,)))
    return ad.concat([parts, feat], axis=-1)


def column_power_scaling(yhat, beta_local):
    """Per-column scale r (..., 1, K) and relative-gain feature (..., K).

    Both are differentiable functions of ``yhat``.
    """
    yhat = ad.const(yhat)
    lead, K = yhat.shape[:-2], yhat.shape[-1]
    power = ad.add(ad.mean(ad.abs2(yhat), axis=-2), POWER_FLOOR)              # (..., K)
    ratio_db = ad.scale(ad.sub(np.log(np.asarray(beta_local, dtype=float)), ad.log(power)),
                        10.0 / np.log(10.0))
    lo, hi = RATIO_DB_RANGE
    feat = ad.clip(ad.add(ad.scale(ratio_db, 2.0 / (hi - lo)), -1.0 - 2.0 * lo / (hi - lo)),
                   -1.0, 1.0)
    return ad.reshape(ad.sqrt(power), lead + (1, K)), feat


def noise_level_forward(x: ad.Tensor, net: ResidualNet) -> ad.Tensor:
    """M conv + ReLU layers on a (B, N, K, C) input."""
    for w, b in net.convs:
        x = ad.relu(ad.conv2d(x, w, b))
    return x


def denoise(y_ri: ad.Tensor, features: ad.Tensor, net: ResidualNet):
    """alpha, gamma and the two-channel estimate y - (alpha * y + gamma)."""
    gamma = ad.conv2d(features, *net.gamma)
    if net.alpha is not None:
        alpha = ad.conv2d(features, *net.alpha)
        z_hat = ad.add(ad.mul(alpha, y_ri), gamma)
    else:
        alpha = None
        z_hat = gamma
    return alpha, gamma, ad.sub(y_ri, z_hat)


def estimate(yhat, beta_local, net: ResidualNet, return_parts: bool = False):
    """Channel estimate from LS output ``yhat`` (..., N, K) and local gains (..., K)."""
    yhat = ad.const(yhat)
    beta_local = np.asarray(beta_local, dtype=float)
    lead = yhat.shape[:-2]
    N, K = yhat.shape[-2:]
    if net.scaling == "column-power":
        r, ratio = column_power_scaling(yhat, beta_local)
        bfeat = np.broadcast_to(beta_feature(beta_local), ratio.shape)
        feature = ad.concat([ad.reshape(ad.const(bfeat), ratio.shape + (1,)),
                             ad.reshape(ratio, ratio.shape + (1,))], axis=-1)
        ys = ad.mul(yhat, ad.reciprocal(r))
    else:
        r = 1.0 / column_scale(beta_local)
        feature = beta_feature(beta_local)
        ys = ad.mul(yhat, 1.0 / r)
    ys = ad.reshape(ys, (-1, N, K))
    feature = ad.const(feature)
    x = assemble_input(ys, None, net.mode, ad.reshape(feature, (-1, K) + feature.shape[len(lead) + 1:]))
    y_ri = ad.reim(ys)
    feats = noise_level_forward(x, net)
    alpha, gamma, h_ri = denoise(y_ri, feats, net)
    h_scaled = ad.reshape(ad.from_reim(h_ri), lead + (N, K))
    h = ad.mul(h_scaled, r)
    if return_parts:
        return h, {"alpha": alpha, "gamma": gamma, "features": feats, "y_ri": y_ri}
    return h


def estimator_loss(h_hat: ad.Tensor, H) -> ad.Tensor:
    """Mean over samples of ||H - Hhat||_F^2."""
    return ad.mean(ad.fro2(ad.sub(h_hat, H)))
