"""Network drops, channel realizations, hardware-impairment distortion and
received uplink pilot blocks.

Array conventions (leading batch axes allowed everywhere):

* ``beta[i, j, k]``  large-scale gain from UE k of cell j to BS i, shape (L, L, K)
* ``H[i, j]``        N x K channel from cell j's UEs to BS i, shape (L, L, N, K)
* ``pilots[j]``      merged tau x K pilot matrix (power included), shape (L, tau, K)
* ``Y[i]``           N x tau received block at BS i, shape (L, N, tau)

Powers are linear milliwatts internally.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import RejectionOverflow
from .numerics import as_generator, herm, sample_complex_gaussian

MAX_ATTEMPTS_PER_UE = 10_000


def dbm_to_mw(dbm):
    return 10.0 ** (np.asarray(dbm, dtype=float) / 10.0)


def mw_to_dbm(mw):
    return 10.0 * np.log10(np.asarray(mw, dtype=float))


@dataclass(frozen=True)
class TopologyConfig:
    L: int = 7
    K: int = 10
    isd: float = 500.0
    min_ue_distance: float = 35.0
    N: int = 100
    shadowing_std_db: float = 8.0

    def __post_init__(self):
        if self.L < 1 or self.K < 1 or self.N < 1:
            raise ValueError("L, K and N must be positive")
        if not 0.0 < self.min_ue_distance < self.isd / 2.0:
            raise ValueError("min_ue_distance must lie in (0, isd/2)")
        if self.shadowing_std_db < 0:
            raise ValueError("shadowing_std_db must be non-negative")


@dataclass
class Scenario:
    """One network drop plus the impairment and power settings."""

    topology: TopologyConfig
    beta: np.ndarray                 # (L, L, K)
    delta_ue: np.ndarray             # (L, K)
    delta_bs: np.ndarray             # (L,)
    noise_power: float               # mW
    tau_p: int
    p_max: float                     # mW
    bs_positions: np.ndarray | None = None   # (L, 2) metres
    ue_positions: np.ndarray | None = None   # (L, K, 2) metres
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        L, K = self.topology.L, self.topology.K
        self.beta = np.asarray(self.beta, dtype=float)
        self.delta_ue = np.broadcast_to(np.asarray(self.delta_ue, dtype=float), (L, K)).copy()
        self.delta_bs = np.broadcast_to(np.asarray(self.delta_bs, dtype=float), (L,)).copy()
        if self.beta.shape != (L, L, K):
            raise ValueError(f"beta must have shape {(L, L, K)}, got {self.beta.shape}")
        if np.any(self.beta <= 0):
            raise ValueError("all large-scale gains must be positive")
        for d in (self.delta_ue, self.delta_bs):
            if np.any(d < 0) or np.any(d > 0.2 + 1e-12):
                raise ValueError("impairment levels must lie in [0, 0.2]")
        if self.noise_power <= 0:
            raise ValueError("noise power must be positive")
        if self.tau_p < 1:
            raise ValueError("tau_p must be at least 1")

    @property
    def local_beta(self) -> np.ndarray:
        """beta[i, i, :] for every cell, shape (L, K)."""
        L = self.topology.L
        return self.beta[np.arange(L), np.arange(L)]

    def to_json(self) -> str:
        doc = {
            "topology": asdict(self.topology),
            "beta_db": (10.0 * np.log10(self.beta)).tolist(),
            "delta_ue": self.delta_ue.tolist(),
            "delta_bs": self.delta_bs.tolist(),
            "noise_power_dbm": float(mw_to_dbm(self.noise_power)),
            "tau_p": int(self.tau_p),
            "p_max_dbm": float(mw_to_dbm(self.p_max)),
        }
        if self.bs_positions is not None:
            doc["bs_positions_m"] = self.bs_positions.tolist()
            doc["ue_positions_m"] = self.ue_positions.tolist()
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        doc = json.loads(text)
        topo = TopologyConfig(**doc["topology"])
        bs = doc.get("bs_positions_m")
        ue = doc.get("ue_positions_m")
        return cls(
            topology=topo,
            beta=10.0 ** (np.asarray(doc["beta_db"]) / 10.0),
            delta_ue=np.asarray(doc["delta_ue"]),
            delta_bs=np.asarray(doc["delta_bs"]),
            noise_power=float(dbm_to_mw(doc["noise_power_dbm"])),
            tau_p=int(doc["tau_p"]),
            p_max=float(dbm_to_mw(doc["p_max_dbm"])),
            bs_positions=None if bs is None else np.asarray(bs),
            ue_positions=None if ue is None else np.asarray(ue),
        )


# ------------------------------------------------------------------ geometry

def hex_centers(L: int, isd: float) -> np.ndarray:
    """BS positions on a hexagonal lattice, ring by ring from the origin."""
    # axial coordinates; neighbours lie at distance isd
    a1 = np.array([isd, 0.0])
    a2 = np.array([isd / 2.0, isd * math.sqrt(3) / 2.0])
    cand = []
    rings = 0
    while 3 * rings * (rings + 1) + 1 < L:
        rings += 1
    for q in range(-rings, rings + 1):
        for r in range(-rings, rings + 1):
            if abs(q + r) > rings:
                continue
            p = q * a1 + r * a2
            dist = round(float(np.hypot(*p)) / isd, 9)
            ang = math.atan2(p[1], p[0]) % (2 * math.pi)
            cand.append((dist, round(ang, 9), p))
    cand.sort(key=lambda c: (c[0], c[1]))
    return np.array([c[2] for c in cand[:L]])


def _inside_hexagon(offsets: np.ndarray, isd: float) -> np.ndarray:
    # hexagon with flat sides facing the six neighbours: apothem isd/2
    normals = np.array([[math.cos(a), math.sin(a)] for a in (0.0, math.pi / 3, 2 * math.pi / 3)])
    proj = np.abs(offsets @ normals.T)
    return np.all(proj <= isd / 2.0, axis=-1)


def drop_topology(config: TopologyConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    """BS positions (L, 2) and UE positions (L, K, 2), in metres.

    UEs are uniform in their serving hexagon, rejected when closer than
    ``min_ue_distance`` to any BS.
    """
    gen = as_generator(rng)
    bs = hex_centers(config.L, config.isd)
    circum = config.isd / math.sqrt(3)
    ues = np.empty((config.L, config.K, 2))
    for cell in range(config.L):
        found = []
        attempts = 0
        limit = MAX_ATTEMPTS_PER_UE * config.K
        while len(found) < config.K:
            if attempts >= limit:
                raise RejectionOverflow(
                    f"cell {cell}: could not place {config.K} UEs in {limit} draws")
            batch = 4 * config.K
            attempts += batch
            off = gen.uniform(-circum, circum, size=(batch, 2))
            ok = _inside_hexagon(off, config.isd)
            pos = bs[cell] + off
            dmin = np.min(np.linalg.norm(pos[:, None, :] - bs[None, :, :], axis=-1), axis=1)
            ok &= dmin >= config.min_ue_distance
            found.extend(pos[ok][: config.K - len(found)])
        ues[cell] = np.array(found)
    return bs, ues


def path_loss_db(distance_km) -> np.ndarray:
    """Macro-cell path loss 128.1 + 37.6 log10(d[km]) in dB."""
    return 128.1 + 37.6 * np.log10(np.asarray(distance_km, dtype=float))


def large_scale_fading(bs: np.ndarray, ues: np.ndarray, shadowing_std_db: float,
                       rng) -> np.ndarray:
    """Linear gains beta[i, j, k] with log-normal shadowing."""
    dist_km = np.linalg.norm(bs[:, None, None, :] - ues[None, :, :, :], axis=-1) / 1000.0
    loss = path_loss_db(dist_km)
    if shadowing_std_db > 0:
        loss = loss + as_generator(rng).normal(0.0, shadowing_std_db, size=loss.shape)
    return 10.0 ** (-loss / 10.0)


def make_scenario(topology: TopologyConfig, seed: int, sample: int = 0, *,
                  delta: float | None = None, delta_ue=0.0, delta_bs=0.0,
                  noise_power_dbm: float = -96.0, tau_p: int = 10,
                  p_max_dbm: float = 23.0) -> Scenario:
    """Draw one drop with its own derived random streams."""
    from .numerics import RngStream

    root = RngStream(seed, sample=sample)
    bs, ues = drop_topology(topology, root.child(tag="drop"))
    beta = large_scale_fading(bs, ues, topology.shadowing_std_db, root.child(tag="shadow"))
    if delta is not None:
        delta_ue = delta_bs = delta
    return Scenario(topology, beta, delta_ue, delta_bs, float(dbm_to_mw(noise_power_dbm)),
                    tau_p, float(dbm_to_mw(p_max_dbm)), bs, ues)


# ----------------------------------------------------------- small-scale part

def sample_channels(beta: np.ndarray, n_antennas: int, rng, batch: int | None = None) -> np.ndarray:
    """H[..., i, j] = G sqrt(D_ij) with G i.i.d. CN(0, 1).

    ``beta`` has shape (..., L, L, K); with ``batch`` an extra leading axis of
    that many independent realizations is prepended.
    """
    beta = np.asarray(beta, dtype=float)
    lead = beta.shape[:-3]
    L, _, K = beta.shape[-3:]
    shape = lead + (L, L, n_antennas, K)
    if batch is not None:
        shape = (batch,) + shape
    g = sample_complex_gaussian(rng, shape=shape)
    return g * np.sqrt(beta)[..., None, :]


def sample_distortion(rng, H: np.ndarray, powers: np.ndarray, delta_ue, delta_bs,
                      tau_p: int) -> tuple[np.ndarray, np.ndarray]:
    """UE and BS distortion blocks.

    Returns ``eta_ue`` of shape (..., L, tau, K), each column
    CN(0, delta_ue^2 P I), and ``eta_bs`` of shape (..., L, N, tau) whose columns
    are independent CN(0, delta_bs^2 sum_j diag(H_ij P_j H_ij^H)).
    """
    gen = as_generator(rng)
    powers = np.asarray(powers, dtype=float)
    lead = H.shape[:-4]
    L, _, N, K = H.shape[-4:]
    delta_ue = np.broadcast_to(np.asarray(delta_ue, dtype=float), lead + (L, K))
    delta_bs = np.broadcast_to(np.asarray(delta_bs, dtype=float), lead + (L,))
    p = np.broadcast_to(powers, lead + (L, K))
    var_ue = (delta_ue ** 2 * p)[..., None, :]                       # (..., L, 1, K)
    eta_ue = sample_complex_gaussian(gen, shape=lead + (L, tau_p, K), variance=var_ue)
    # per-antenna received signal power at BS i: sum_j sum_k P_jk |h_ijnk|^2
    rx_power = np.einsum("...ijnk,...jk->...in", np.abs(H) ** 2, p)
    var_bs = (delta_bs ** 2)[..., None] * rx_power                  # (..., L, N)
    eta_bs = sample_complex_gaussian(gen, shape=lead + (L, N, tau_p), variance=var_bs[..., None])
    return eta_ue, eta_bs


@dataclass
class ReceivedBlock:
    """Received pilot blocks with the distortion parts kept for oracle tests."""

    Y: np.ndarray          # (..., L, N, tau)
    eta_ue: np.ndarray     # (..., L, tau, K)
    eta_bs: np.ndarray     # (..., L, N, tau)
    noise: np.ndarray      # (..., L, N, tau)

    def distortion(self, H: np.ndarray) -> np.ndarray:
        """The aggregate distortion N~_i for every BS."""
        tau = self.eta_ue.shape[-2]
        ue_part = math.sqrt(tau) * np.sum(H @ herm(self.eta_ue)[..., None, :, :, :], axis=-3)
        return ue_part + self.eta_bs + self.noise


def synthesize_received(H: np.ndarray, pilots: np.ndarray, eta_ue: np.ndarray,
                        eta_bs: np.ndarray, noise: np.ndarray) -> ReceivedBlock:
    """Y_i = sqrt(tau) sum_j H_ij (Xbar_j^H + eta_UE_j^H) + eta_BS_i + n_i.

    ``pilots`` are merged pilots (power included), shape (..., L, tau, K).
    """
    tau = pilots.shape[-2]
    tx = herm(pilots) + herm(eta_ue)                           # (..., L_j, K, tau)
    Y = math.sqrt(tau) * np.sum(H @ tx[..., None, :, :, :], axis=-3) + eta_bs + noise
    return ReceivedBlock(Y, eta_ue, eta_bs, noise)


def sample_received(rng, H: np.ndarray, pilots: np.ndarray, delta_ue, delta_bs,
                    noise_power: float) -> ReceivedBlock:
    """Draw distortion and AWGN and synthesize the received blocks."""
    gen = as_generator(rng)
    tau = pilots.shape[-2]
    powers = np.sum(np.abs(pilots) ** 2, axis=-2)
    eta_ue, eta_bs = sample_distortion(gen, H, powers, delta_ue, delta_bs, tau)
    noise = sample_complex_gaussian(gen, shape=eta_bs.shape, variance=noise_power)
    return synthesize_received(H, pilots, eta_ue, eta_bs, noise)


def distortion_covariance(H: np.ndarray, powers: np.ndarray, delta_ue, delta_bs,
                          noise_power: float, tau_p: int) -> np.ndarray:
    """E[N~_i N~_i^H] for fixed channels, one N x N matrix per BS."""
    L, _, N, K = H.shape[-4:]
    delta_ue = np.broadcast_to(np.asarray(delta_ue, dtype=float), (L, K))
    delta_bs = np.broadcast_to(np.asarray(delta_bs, dtype=float), (L,))
    p = np.broadcast_to(np.asarray(powers, dtype=float), (L, K))
    weights = delta_ue ** 2 * p                                   # (L_j, K)
    ue_term = np.einsum("ijnk,jk,ijmk->inm", H, weights, np.conj(H))
    rx_power = np.einsum("ijnk,jk->in", np.abs(H) ** 2, p)
    bs_term = (delta_bs ** 2)[:, None, None] * np.einsum("in,nm->inm", rx_power, np.eye(N))
    return (tau_p ** 2 * ue_term + tau_p * bs_term
            + tau_p * noise_power * np.eye(N)[None])


def measure_evm(distortion: np.ndarray, reference_energy: float) -> float:
    """sqrt(E||eta||^2 / E||sqrt(tau P) x||^2) over the leading sample axis.

    ``distortion`` holds samples of one UE's distortion vector along the last
    axis; ``reference_energy`` is the pilot energy tau * P ||x||^2.
    """
    d = np.asarray(distortion)
    if d.size == 0:
        raise ValueError("need at least one distortion sample")
    mean_energy = np.mean(np.sum(np.abs(d.reshape(-1, d.shape[-1])) ** 2, axis=-1))
    return float(np.sqrt(mean_energy / reference_energy))
