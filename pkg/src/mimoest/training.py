"""Datasets, the three training regimes and evaluation metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import estimators as est
from . import pilot_net as pn
from . import residual_net as rn
from .config import ScenarioConfig, TrainConfig
from .errors import DivergedLoss, NotPositiveDefinite, RankDeficient
from .numerics import RngStream, herm
from .pilots import orthogonal_pilots, random_pilots
from .scenario import dbm_to_mw, drop_topology, large_scale_fading

POWER_TOL = 1e-9


# -------------------------------------------------------------------- dataset

@dataclass
class Dataset:
    """Drops, channels and unit-variance randomness for received blocks.

    Distortion and noise are stored as standard complex-normal draws and scaled
    at synthesis time, so any pilot set or impairment level can be applied to
    the same realizations.
    """

    beta: np.ndarray       # (B, L, L, K)
    H: np.ndarray          # (B, L, L, N, K)
    eps_ue: np.ndarray     # (B, L, tau, K)
    eps_bs: np.ndarray     # (B, L, N, tau)
    eps_n: np.ndarray      # (B, L, N, tau)
    noise_power: float
    p_max: float
    seed: int
    tag: str

    def __len__(self) -> int:
        return self.beta.shape[0]

    @property
    def L(self) -> int:
        return self.beta.shape[1]

    @property
    def K(self) -> int:
        return self.beta.shape[-1]

    @property
    def N(self) -> int:
        return self.H.shape[-2]

    @property
    def tau(self) -> int:
        return self.eps_ue.shape[-2]

    @property
    def local_beta(self) -> np.ndarray:
        idx = np.arange(self.L)
        return self.beta[:, idx, idx]

    @property
    def H_local(self) -> np.ndarray:
        idx = np.arange(self.L)
        return self.H[:, idx, idx]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.beta[idx], self.H[idx], self.eps_ue[idx], self.eps_bs[idx],
                       self.eps_n[idx], self.noise_power, self.p_max, self.seed, self.tag)

    def received(self, xbar: np.ndarray, delta_ue: float, delta_bs: float) -> np.ndarray:
        """Received blocks Y (B, L, N, tau) for merged pilots xbar (B, L, tau, K)."""
        powers = np.sum(np.abs(xbar) ** 2, axis=-2)                       # (B, L, K)
        eta_ue = delta_ue * np.sqrt(powers)[..., None, :] * self.eps_ue
        rx = np.einsum("bijnk,bjk->bin", np.abs(self.H) ** 2, powers)
        eta_bs = delta_bs * np.sqrt(rx)[..., None] * self.eps_bs
        noise = math.sqrt(self.noise_power) * self.eps_n
        tx = herm(xbar) + herm(eta_ue)
        return math.sqrt(self.tau) * np.sum(self.H @ tx[:, None], axis=2) + eta_bs + noise


def _unit_cn(gen: np.random.Generator, shape) -> np.ndarray:
    d = gen.standard_normal(tuple(shape) + (2,))
    return (d[..., 0] + 1j * d[..., 1]) / math.sqrt(2.0)


def generate_drops(scen: ScenarioConfig, n: int, seed: int, tag: str = "train") -> np.ndarray:
    """Only the large-scale gains, (n, L, L, K); enough for pilot pre-training."""
    topo = scen.topology()
    out = np.empty((n, topo.L, topo.L, topo.K))
    for s in range(n):
        root = RngStream(seed, tag=tag, sample=s)
        bs, ues = drop_topology(topo, root.child(tag=tag + "/drop"))
        out[s] = large_scale_fading(bs, ues, topo.shadowing_std_db, root.child(tag=tag + "/shadow"))
    return out


def generate_dataset(scen: ScenarioConfig, tau: int, n: int, seed: int,
                     tag: str = "train") -> Dataset:
    """``n`` samples, each a fresh drop with its own channel and noise draws."""
    topo = scen.topology()
    L, K, N = topo.L, topo.K, topo.N
    beta = generate_drops(scen, n, seed, tag)
    H = np.empty((n, L, L, N, K), dtype=complex)
    eps_ue = np.empty((n, L, tau, K), dtype=complex)
    eps_bs = np.empty((n, L, N, tau), dtype=complex)
    eps_n = np.empty((n, L, N, tau), dtype=complex)
    for s in range(n):
        gen = RngStream(seed, tag=tag + "/small", sample=s).generator()
        H[s] = _unit_cn(gen, (L, L, N, K)) * np.sqrt(beta[s])[:, :, None, :]
        eps_ue[s] = _unit_cn(gen, (L, tau, K))
        eps_bs[s] = _unit_cn(gen, (L, N, tau))
        eps_n[s] = _unit_cn(gen, (L, N, tau))
    return Dataset(beta, H, eps_ue, eps_bs, eps_n, float(dbm_to_mw(scen.noise_power_dbm)),
                   float(dbm_to_mw(scen.p_max_dbm)), seed, tag)


def baseline_pilots(scheme: str, n: int, L: int, tau: int, K: int, p_max: float,
                    seed: int) -> np.ndarray:
    """Merged baseline pilots for every sample, (n, L, tau, K)."""
    maker = {"orthogonal": orthogonal_pilots, "random": random_pilots}[scheme]
    out = np.empty((n, L, tau, K), dtype=complex)
    for s in range(n):
        out[s] = maker(tau, K, L, RngStream(seed, tag="pilots/" + scheme, sample=s), p_max).merged()
    return out


def pilots_for(scheme: str, data: Dataset, seed: int, pilot_net: pn.PilotNet | None = None) -> np.ndarray:
    if scheme == "learned":
        if pilot_net is None:
            raise ValueError("learned pilots need a pilot network")
        return pn.pilot_forward(data.local_beta, pilot_net).value
    return baseline_pilots(scheme, len(data), data.L, data.tau, data.K, data.p_max, seed)


def max_column_power(xbar: np.ndarray) -> float:
    return float(np.max(np.sum(np.abs(xbar) ** 2, axis=-2)))


# ---------------------------------------------------------------- history

@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    max_pilot_power: list = field(default_factory=list)
    best_epoch: int = -1
    loss_scale: float = 1.0
    notes: dict = field(default_factory=dict)


def _check_finite(value: float, epoch: int):
    if not np.isfinite(value):
        raise DivergedLoss(f"epoch-mean loss became {value} at epoch {epoch}")


def _batches(n: int, batch_size: int, gen: np.random.Generator):
    order = gen.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


# ------------------------------------------------------------ pilot training

def pilot_loss_terms(kind: str, xbar: ad.Tensor, beta: np.ndarray, delta: float,
                     noise_power: float, tau: int) -> ad.Tensor:
    if kind == "aware":
        return pn.loss_aware_terms(xbar, beta, delta, delta, noise_power, tau)
    if kind == "unaware":
        idx = np.arange(beta.shape[-2])
        return pn.loss_unaware_terms(xbar, beta[..., idx, idx, :], tau, noise_power)
    raise ValueError(f"unknown pilot loss {kind!r}")


def pilot_objective(net: pn.PilotNet, beta: np.ndarray, kind: str, delta: float,
                    noise_power: float) -> float:
    """Mean pilot loss over drops ``beta`` (n, L, L, K), in physical units."""
    idx = np.arange(beta.shape[1])
    xbar = pn.pilot_forward(beta[:, idx, idx], net)
    return float(ad.mean(pilot_loss_terms(kind, xbar, beta, delta, noise_power, net.tau)).value)


def pretrain_pilot(net: pn.PilotNet, beta_train: np.ndarray, beta_val: np.ndarray,
                   cfg: TrainConfig, noise_power: float, kind: str | None = None):
    """Minimise the aware or unaware pilot loss with Adam; returns (best net, history).

    Only large-scale gains, impairment levels and the noise power enter the
    loss; no channel realizations are used.
    """
    kind = kind or cfg.pilot_loss
    hist = History(loss_scale=noise_power)
    best = net.copy()
    if cfg.epochs == 0:
        return best, hist
    opt = ad.Adam(net.parameters(), lr=cfg.lr)
    gen = RngStream(cfg.seed, tag="pretrain/shuffle").generator()
    drop_gen = RngStream(cfg.seed, tag="pretrain/dropout").generator()
    idx = np.arange(beta_train.shape[1])
    best_val = np.inf
    stale = 0
    for epoch in range(cfg.epochs):
        losses = []
        for batch in _batches(len(beta_train), cfg.batch_size, gen):
            beta = beta_train[batch]
            xbar = pn.pilot_forward(beta[:, idx, idx], net, rng=drop_gen)
            hist.max_pilot_power.append(max_column_power(xbar.value))
            loss = ad.scale(ad.mean(pilot_loss_terms(kind, xbar, beta, cfg.delta, noise_power,
                                                     net.tau)), 1.0 / noise_power)
            loss.backward()
            opt.step()
            losses.append(float(loss.value))
        mean_loss = float(np.mean(losses)) * noise_power
        _check_finite(mean_loss, epoch)
        hist.train_loss.append(mean_loss)
        val = pilot_objective(net, beta_val, kind, cfg.delta, noise_power)
        hist.val_loss.append(val)
        if val < best_val:
            best_val, best, hist.best_epoch, stale = val, net.copy(), epoch, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return best, hist


# --------------------------------------------------------- estimator training

def _cell_samples(data: Dataset, xbar: np.ndarray, delta: float):
    """LS outputs, targets and local gains flattened over (sample, cell)."""
    Y = data.received(xbar, delta, delta)
    yhat = est.ls_preprocess(Y, xbar)
    B, L, N, K = yhat.shape
    return (yhat.reshape(B * L, N, K), data.H_local.reshape(B * L, N, K),
            data.local_beta.reshape(B * L, K))


def predict(net: rn.ResidualNet, yhat: np.ndarray, beta_local: np.ndarray,
            chunk: int = 512) -> np.ndarray:
    """Batched inference over leading axes."""
    lead = yhat.shape[:-2]
    N, K = yhat.shape[-2:]
    flat_y = yhat.reshape(-1, N, K)
    flat_b = beta_local.reshape(-1, K)
    out = np.empty_like(flat_y)
    for start in range(0, flat_y.shape[0], chunk):
        sl = slice(start, start + chunk)
        out[sl] = rn.estimate(flat_y[sl], flat_b[sl], net).value
    return out.reshape(lead + (N, K))


def weighted_loss(h_hat: ad.Tensor, H: np.ndarray, beta_local: np.ndarray,
                  weighting: str = "physical", yhat: np.ndarray | None = None) -> ad.Tensor:
    """Estimator loss in physical units or with per-column weights.

    ``normalized`` divides column k by sqrt(beta_k); ``power`` divides it by the
    root mean power of the LS column ``yhat``. Both weights are functions of the
    network input, so the minimizing predictor is unchanged while strong-gain
    or heavily contaminated UEs no longer dominate the gradient.
    """
    if weighting == "physical":
        return rn.estimator_loss(h_hat, H)
    if weighting == "normalized":
        w = rn.column_scale(beta_local)
        return rn.estimator_loss(ad.mul(h_hat, w), H * w)
    if weighting == "power":
        if yhat is None:
            raise ValueError("power weighting needs the LS output")
        w = 1.0 / np.sqrt(np.mean(np.abs(yhat) ** 2, axis=-2, keepdims=True))
        return rn.estimator_loss(ad.mul(h_hat, w), H * w)
    raise ValueError(f"unknown loss weighting {weighting!r}")


def _phases(cfg: TrainConfig):
    """(weighting, epochs, lr, early-stopping) for the warm-up and main phases."""
    out = []
    if cfg.warmup_epochs > 0:
        out.append((cfg.warmup_weighting, cfg.warmup_epochs, cfg.warmup_lr or cfg.lr, False))
    out.append((cfg.loss_weighting, cfg.epochs, cfg.lr, True))
    return out


def train_estimator(net: rn.ResidualNet, train: Dataset, val: Dataset,
                    xbar_train: np.ndarray, xbar_val: np.ndarray, cfg: TrainConfig):
    """Fit the residual estimator for fixed pilots; returns (best net, history).

    An optional warm-up phase uses a per-column weighted loss; the main phase
    minimizes ``cfg.loss_weighting`` with early stopping. Validation sum-MSE
    (mean over samples of the sum over cells, physical units) is tracked per
    epoch and the best checkpoint, including the initial net, is returned.
    """
    hist = History(loss_scale=train.noise_power)
    yh_tr, h_tr, b_tr = _cell_samples(train, xbar_train, cfg.delta)
    yh_va, h_va, b_va = _cell_samples(val, xbar_val, cfg.delta)
    L = train.L

    def val_sum_mse(model):
        return L * est.empirical_mse(predict(model, yh_va, b_va), h_va)

    best = net.copy()
    best_val = val_sum_mse(net)
    hist.notes["initial_val"] = best_val
    gen = RngStream(cfg.seed, tag="estimator/shuffle").generator()
    epoch = 0
    for weighting, n_epochs, lr, stopping in _phases(cfg):
        if n_epochs == 0:
            continue
        scale = 1.0 / train.noise_power if weighting == "physical" else 1.0
        opt = ad.Adam(net.parameters(), lr=lr)
        stale = 0
        for _ in range(n_epochs):
            losses = []
            for batch in _batches(len(yh_tr), cfg.batch_size * L, gen):
                h_hat = rn.estimate(yh_tr[batch], b_tr[batch], net)
                loss = weighted_loss(h_hat, h_tr[batch], b_tr[batch], weighting, yh_tr[batch])
                loss = ad.scale(loss, scale)
                loss.backward()
                opt.step()
                losses.append(float(loss.value))
            mean_loss = float(np.mean(losses)) * L / scale
            _check_finite(mean_loss, epoch)
            hist.train_loss.append(mean_loss)
            v = val_sum_mse(net)
            hist.val_loss.append(v)
            if v < best_val:
                best_val, best, hist.best_epoch, stale = v, net.copy(), epoch, 0
            else:
                stale += 1
            epoch += 1
            opt.lr *= cfg.lr_decay
            if stopping and stale >= cfg.patience:
                break
    hist.notes["best_val"] = best_val
    return best, hist


# -------------------------------------------------------------- joint training

def received_graph(xbar: ad.Tensor, data: Dataset, idx, delta: float,
                   reparameterized: bool = False) -> ad.Tensor:
    """Differentiable received blocks for a batch of samples ``idx``.

    Distortion variances follow the current pilot powers. By default the
    distortion and noise are constants in the backward pass; with
    ``reparameterized`` the gradient also flows through their variances.
    """
    H = data.H[idx]
    tau = data.tau
    powers = ad.sum(ad.abs2(xbar), axis=-2)                          # (b, L, K)
    if not reparameterized:
        powers = ad.stop_gradient(powers)
    std_ue = ad.scale(ad.sqrt(powers), delta)
    eta_ue = ad.mul(ad.reshape(std_ue, std_ue.shape[:-1] + (1, std_ue.shape[-1])),
                    data.eps_ue[idx])
    rx = ad.sum(ad.mul(np.abs(H) ** 2, ad.reshape(powers, (len(idx), 1, data.L, 1, data.K))),
                axis=(-3, -1))                                        # (b, L, N)
    eta_bs = ad.mul(ad.reshape(ad.scale(ad.sqrt(rx), delta), rx.shape + (1,)), data.eps_bs[idx])
    tx = ad.add(ad.herm(xbar), ad.herm(eta_ue))                       # (b, L_j, K, tau)
    b = len(idx)
    signal = ad.sum(ad.matmul(H, ad.reshape(tx, (b, 1, data.L, data.K, tau))), axis=2)
    noise = math.sqrt(data.noise_power) * data.eps_n[idx]
    return ad.add(ad.add(ad.scale(signal, math.sqrt(tau)), eta_bs), noise)


def ls_graph(Y: ad.Tensor, xbar: ad.Tensor) -> ad.Tensor:
    tau = xbar.shape[-2]
    gram = ad.matmul(ad.herm(xbar), xbar)
    try:
        inv = ad.inv_hpd(gram)
    except NotPositiveDefinite as exc:
        raise RankDeficient("pilot Gram matrix became singular during joint training") from exc
    return ad.scale(ad.matmul(Y, ad.matmul(xbar, inv)), 1.0 / math.sqrt(tau))


def joint_forward(pilot: pn.PilotNet, net: rn.ResidualNet, data: Dataset, idx,
                  delta: float, reparameterized: bool = False):
    """beta -> pilots -> received -> LS -> residual estimator; returns (Hhat, xbar)."""
    beta_local = data.local_beta[idx]
    xbar = pn.pilot_forward(beta_local, pilot)
    Y = received_graph(xbar, data, idx, delta, reparameterized)
    yhat = ls_graph(Y, xbar)
    return rn.estimate(yhat, beta_local, net), xbar


def evaluate_joint(pilot: pn.PilotNet, net: rn.ResidualNet, data: Dataset, delta: float) -> np.ndarray:
    """Per-sample sum-MSE of the joint design on ``data``."""
    xbar = pn.pilot_forward(data.local_beta, pilot).value
    Y = data.received(xbar, delta, delta)
    yhat = est.ls_preprocess(Y, xbar)
    h_hat = predict(net, yhat, data.local_beta)
    return est.sum_mse_per_sample(h_hat, data.H_local)


def train_joint(pilot: pn.PilotNet, net: rn.ResidualNet, train: Dataset, val: Dataset,
                cfg: TrainConfig):
    """Jointly fine-tune a pre-trained pilot generator and the estimator."""
    hist = History(loss_scale=train.noise_power)
    best = (pilot.copy(), net.copy())
    best_val = float(np.mean(evaluate_joint(pilot, net, val, cfg.delta)))
    hist.notes["initial_val"] = best_val
    if cfg.epochs == 0:
        return best[0], best[1], hist
    opt_net = ad.Adam(net.parameters(), lr=cfg.lr)
    opt_pilot = ad.Adam(pilot.parameters(), lr=cfg.joint_pilot_lr or cfg.lr)
    gen = RngStream(cfg.seed, tag="joint/shuffle").generator()
    scale = 1.0 / train.noise_power
    L = train.L
    stale = 0
    for epoch in range(cfg.epochs):
        losses = []
        for batch in _batches(len(train), cfg.batch_size, gen):
            h_hat, xbar = joint_forward(pilot, net, train, batch, cfg.delta, cfg.reparameterized)
            hist.max_pilot_power.append(max_column_power(xbar.value))
            loss = ad.scale(rn.estimator_loss(h_hat, train.H_local[batch]), scale)
            loss.backward()
            if not hist.notes.get("pilot_grad_seen"):
                hist.notes["pilot_grad_seen"] = any(
                    p.grad is not None and np.any(p.grad != 0) for p in pilot.parameters())
            opt_net.step()
            opt_pilot.step()
            losses.append(float(loss.value))
        mean_loss = float(np.mean(losses)) * L / scale
        _check_finite(mean_loss, epoch)
        hist.train_loss.append(mean_loss)
        v = float(np.mean(evaluate_joint(pilot, net, val, cfg.delta)))
        hist.val_loss.append(v)
        if v < best_val:
            best_val, best, hist.best_epoch, stale = v, (pilot.copy(), net.copy()), epoch, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    hist.notes["best_val"] = best_val
    return best[0], best[1], hist


# ------------------------------------------------------------------ metrics

@dataclass
class MetricsRecord:
    rows: list = field(default_factory=list)
    cdfs: dict = field(default_factory=dict)

    def add(self, *, regime: str, estimator: str, pilot: str, tau: int, delta2: float,
            seed: int, per_sample: np.ndarray, per_cell: np.ndarray, keep_cdf: bool = False):
        row = {
            "regime": regime, "estimator": estimator, "pilot": pilot, "tau": int(tau),
            "delta2": float(delta2), "seed": int(seed),
            "sum_mse": float(np.mean(per_sample)),
            "per_cell_mse": [float(v) for v in per_cell],
        }
        self.rows.append(row)
        if keep_cdf:
            self.cdfs[(estimator, pilot, int(tau), float(delta2))] = empirical_cdf(per_sample)
        return row

    def lookup(self, **match) -> list:
        return [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]


def empirical_cdf(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.sort(np.asarray(values, dtype=float))
    return x, np.arange(1, x.size + 1) / x.size


def lmmse_estimates(data: Dataset, xbar: np.ndarray, delta: float, Y: np.ndarray | None = None):
    """Genie LMMSE estimates (B, L, N, K) and analytic per-cell MSE (B, L)."""
    p = np.sum(np.abs(xbar) ** 2, axis=-2)
    X = xbar / np.sqrt(p)[..., None, :]
    phi = est.phi_coefficients(data.beta, p, np.full(p.shape, delta), np.full(p.shape[:-1], delta),
                               data.noise_power, data.tau)
    ctx = est.LmmseContext(X, p, data.beta, phi)
    A = est.lmmse_matrices(ctx)
    if Y is None:
        Y = data.received(xbar, delta, delta)
    return Y @ A, est.analytic_mse(ctx, data.N)


def evaluate(data: Dataset, xbar: np.ndarray, delta: float, *, pilot: str, regime: str = "eval",
             seed: int = 0, nets: dict | None = None, record: MetricsRecord | None = None,
             keep_cdf: bool = False, include=("ls", "lmmse")) -> MetricsRecord:
    """Sum-MSE of the requested estimators on one pilot configuration."""
    record = record or MetricsRecord()
    Y = data.received(xbar, delta, delta)
    H = data.H_local
    delta2 = round(delta ** 2, 12)

    def emit(name, h_hat):
        err = est.sum_mse_per_sample(h_hat, H)
        per_cell = np.mean(np.sum(np.abs(H - h_hat) ** 2, axis=(-2, -1)), axis=0)
        record.add(regime=regime, estimator=name, pilot=pilot, tau=data.tau, delta2=delta2,
                   seed=seed, per_sample=err, per_cell=per_cell, keep_cdf=keep_cdf)

    yhat = None
    if "ls" in include or nets:
        yhat = est.ls_preprocess(Y, xbar)
    if "ls" in include:
        emit("ls", yhat)
    if "lmmse" in include:
        h_lmmse, _ = lmmse_estimates(data, xbar, delta, Y)
        emit("lmmse", h_lmmse)
    for name, net in (nets or {}).items():
        emit(name, predict(net, yhat, data.local_beta))
    return record


def analytic_sum_mse(beta: np.ndarray, xbar: np.ndarray, delta: float, noise_power: float,
                     n_antennas: int) -> np.ndarray:
    """Closed-form LMMSE sum over cells for each drop, (n,)."""
    p = np.sum(np.abs(xbar) ** 2, axis=-2)
    X = xbar / np.sqrt(p)[..., None, :]
    tau = xbar.shape[-2]
    phi = est.phi_coefficients(beta, p, np.full(p.shape, delta), np.full(p.shape[:-1], delta),
                               noise_power, tau)
    return np.sum(est.analytic_mse(est.LmmseContext(X, p, beta, phi), n_antennas), axis=-1)
