"""Desk-scale experiment pipelines shared by the CLI and the acceptance suite.

Every function is a pure function of its configuration and seed: datasets,
initializations and shuffles all draw from named ``RngStream`` ids.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import pilot_net as pn
from . import residual_net as rn
from . import training as tr
from .config import ExperimentConfig, TrainConfig
from .numerics import RngStream
from .scenario import dbm_to_mw


@dataclass
class Datasets:
    train: tr.Dataset
    val: tr.Dataset
    test: tr.Dataset


def make_datasets(cfg: ExperimentConfig, tau: int | None = None, seed: int | None = None,
                  n_test: int | None = None) -> Datasets:
    """Training and validation sets from the training seed; the test set from the
    evaluation seed, so every training seed is scored on the same drops."""
    tau = tau or cfg.train.tau
    seed = cfg.train.seed if seed is None else seed
    return Datasets(
        tr.generate_dataset(cfg.scenario, tau, cfg.train.n_train, seed, "train"),
        tr.generate_dataset(cfg.scenario, tau, cfg.train.n_val, seed, "val"),
        tr.generate_dataset(cfg.scenario, tau, n_test or cfg.eval.n_test, cfg.eval.seed, "test"),
    )


# ------------------------------------------------------------------ training

def train_pilot_net(cfg: ExperimentConfig, tau: int, seed: int, kind: str | None = None,
                    train_cfg: TrainConfig | None = None):
    """Pre-train the pilot generator on fresh drops; returns (net, history)."""
    t = train_cfg or cfg.train
    scen = cfg.scenario
    beta_tr = tr.generate_drops(scen, t.n_train, seed, "pilot-train")
    beta_va = tr.generate_drops(scen, t.n_val, seed, "pilot-val")
    net = pn.init_pilot_net(tau, scen.K, float(dbm_to_mw(scen.p_max_dbm)),
                            RngStream(seed, tag="init/pilot"), t.pilot_hidden, t.pilot_omega,
                            t.pilot_activation, t.pilot_dropout)
    return tr.pretrain_pilot(net, beta_tr, beta_va, replace(t, seed=seed, tau=tau),
                             float(dbm_to_mw(scen.noise_power_dbm)), kind)


def init_estimator(t: TrainConfig, seed: int, mode: str | None = None) -> rn.ResidualNet:
    return rn.init_residual_net(RngStream(seed, tag="init/resnet"), t.depth, t.width,
                                mode or t.mode, t.head_scale)


def train_estimator_run(cfg: ExperimentConfig, data: Datasets, seed: int, *,
                        pilot_scheme: str = "orthogonal", mode: str | None = None,
                        pilot_net: pn.PilotNet | None = None, train_cfg: TrainConfig | None = None):
    """Train one residual estimator for fixed pilots; returns (net, history)."""
    t = replace(train_cfg or cfg.train, seed=seed)
    x_tr = tr.pilots_for(pilot_scheme, data.train, seed, pilot_net)
    x_va = tr.pilots_for(pilot_scheme, data.val, seed + 1, pilot_net)
    net = init_estimator(t, seed, mode)
    return tr.train_estimator(net, data.train, data.val, x_tr, x_va, t)


def joint_config(t: TrainConfig) -> TrainConfig:
    return replace(t, epochs=t.joint_epochs, lr=t.joint_lr or t.lr)


# ----------------------------------------------------------------- pipelines

def estimators_pipeline(cfg: ExperimentConfig, seeds, modes=("proposed", "cdrn", "cdrn-local"),
                        data_by_seed: dict | None = None):
    """Estimator comparison at fixed tau and delta with orthogonal pilots.

    Returns (MetricsRecord, {(mode, seed): net}).
    """
    record = tr.MetricsRecord()
    nets = {}
    test = None
    for seed in seeds:
        data = (data_by_seed or {}).get(seed) or make_datasets(cfg, seed=seed)
        test = data.test
        for mode in modes:
            nets[(mode, seed)], _ = train_estimator_run(cfg, data, seed, mode=mode)
    x_te = tr.pilots_for("orthogonal", test, cfg.eval.seed)
    tr.evaluate(test, x_te, cfg.train.delta, pilot="orthogonal", regime="baseline",
                seed=cfg.eval.seed, record=record, keep_cdf=True)
    for (mode, seed), net in nets.items():
        tr.evaluate(test, x_te, cfg.train.delta, pilot="orthogonal", regime="estimator-only",
                    seed=seed, nets={mode: net}, record=record, include=(), keep_cdf=True)
    return record, nets


def joint_pipeline(cfg: ExperimentConfig, seed: int, data: Datasets | None = None,
                   estimator: rn.ResidualNet | None = None):
    """Unaware pilot pre-training, then joint fine-tuning of pilots and estimator.

    The estimator starts from ``estimator`` when given (for example the one
    trained on orthogonal pilots), otherwise from a fresh initialization.
    Returns (MetricsRecord, pilot net, estimator, history).
    """
    data = data or make_datasets(cfg, seed=seed)
    pilot, _ = train_pilot_net(cfg, cfg.train.tau, seed, "unaware")
    net = estimator.copy() if estimator is not None else init_estimator(cfg.train, seed)
    pilot, net, hist = tr.train_joint(pilot, net, data.train, data.val,
                                      replace(joint_config(cfg.train), seed=seed))
    record = tr.MetricsRecord()
    x_te = tr.pilots_for("learned", data.test, seed, pilot)
    tr.evaluate(data.test, x_te, cfg.train.delta, pilot="learned", regime="joint", seed=seed,
                nets={"proposed": net}, record=record, keep_cdf=True)
    return record, pilot, net, hist


def pilot_length_pipeline(cfg: ExperimentConfig, seed: int, taus=None, n_drops: int | None = None):
    """Analytic LMMSE sum-MSE against pilot length for baseline and learned pilots."""
    taus = list(taus or cfg.eval.tau_grid)
    n_drops = n_drops or cfg.eval.n_test
    scen = cfg.scenario
    noise = float(dbm_to_mw(scen.noise_power_dbm))
    p_max = float(dbm_to_mw(scen.p_max_dbm))
    beta = tr.generate_drops(scen, n_drops, cfg.eval.seed, "test")
    idx = np.arange(scen.L)
    rows = []
    for tau in taus:
        schemes = {s: tr.baseline_pilots(s, n_drops, scen.L, tau, scen.K, p_max, cfg.eval.seed)
                   for s in ("orthogonal", "random")}
        for kind in ("aware", "unaware"):
            net, _ = train_pilot_net(cfg, tau, seed, kind)
            schemes[f"learned-{kind}"] = pn.pilot_forward(beta[:, idx, idx], net).value
        for name, xbar in schemes.items():
            sums = tr.analytic_sum_mse(beta, xbar, cfg.train.delta, noise, scen.N)
            rows.append({"tau": tau, "pilot": name, "delta2": cfg.train.delta2, "seed": seed,
                         "sum_mse": float(np.mean(sums))})
    return rows


def mismatch_pipeline(cfg: ExperimentConfig, seed: int, net: rn.ResidualNet | None = None,
                      data: Datasets | None = None, delta2_grid=None):
    """Train once at ``cfg.train.delta2`` and evaluate across an impairment grid."""
    data = data or make_datasets(cfg, seed=seed)
    if net is None:
        net, _ = train_estimator_run(cfg, data, seed)
    record = tr.MetricsRecord()
    x_te = tr.pilots_for("orthogonal", data.test, cfg.eval.seed)
    for d2 in delta2_grid or cfg.eval.delta2_grid:
        tr.evaluate(data.test, x_te, float(d2) ** 0.5, pilot="orthogonal", regime="mismatch",
                    seed=seed, nets={"proposed": net}, record=record)
    return record, net


# ------------------------------------------------------------------- output

METRIC_FIELDS = ("regime", "estimator", "pilot", "tau", "delta2", "seed", "sum_mse",
                 "per_cell_mse")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ";".join(repr(float(x)) for x in v)
    return str(v)


def metrics_csv(record: tr.MetricsRecord) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_FIELDS)
    for row in record.rows:
        w.writerow([_fmt(row[k]) for k in METRIC_FIELDS])
    return buf.getvalue()


def cdf_csv(values: np.ndarray, probs: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("sum_mse", "cdf"))
    for x, p in zip(values, probs):
        w.writerow((repr(float(x)), repr(float(p))))
    return buf.getvalue()


def rows_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    keys = list(rows[0])
    w.writerow(keys)
    for row in rows:
        w.writerow([_fmt(row[k]) for k in keys])
    return buf.getvalue()


def write_record(record: tr.MetricsRecord, out: Path, stem: str) -> list[Path]:
    """metrics CSV plus one CDF CSV per kept configuration."""
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"{stem}.csv"]
    paths[0].write_text(metrics_csv(record))
    for (estimator, pilot, tau, d2), (x, p) in record.cdfs.items():
        path = out / f"{stem}_cdf_{estimator}_{pilot}_tau{tau}_d{d2:g}.csv"
        path.write_text(cdf_csv(x, p))
        paths.append(path)
    return paths


PIPELINES = ("pilot-length", "estimators", "cdf", "joint", "mismatch")


def reproduce(cfg: ExperimentConfig, names, out: Path, seed: int | None = None) -> list[Path]:
    """Run the named pipelines and write their CSVs under ``out``."""
    seed = cfg.seed if seed is None else seed
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    cache = {}

    def estimator_results():
        if "est" not in cache:
            data = make_datasets(cfg, seed=seed)
            cache["data"] = data
            cache["est"] = estimators_pipeline(cfg, [seed], data_by_seed={seed: data})
        return cache["est"]

    for name in names:
        if name == "pilot-length":
            path = out / "pilot_length.csv"
            path.write_text(rows_csv(pilot_length_pipeline(cfg, seed)))
            written.append(path)
        elif name == "estimators":
            record, _ = estimator_results()
            kept = tr.MetricsRecord(record.rows, {})
            written += write_record(kept, out, "estimators")
        elif name == "cdf":
            record, _ = estimator_results()
            written += write_record(tr.MetricsRecord([], record.cdfs), out, "cdf")[1:]
        elif name == "joint":
            _, nets = estimator_results()
            record, *_ = joint_pipeline(cfg, seed, cache["data"], nets[("proposed", seed)])
            written += write_record(record, out, "joint")
        elif name == "mismatch":
            mcfg = replace(cfg, train=replace(cfg.train, delta2=cfg.eval.mismatch_train_delta2))
            record, _ = mismatch_pipeline(mcfg, seed)
            written += write_record(tr.MetricsRecord(record.rows, {}), out, "mismatch")
        else:
            raise ValueError(f"unknown pipeline {name!r}; choose from {PIPELINES}")
    return written
