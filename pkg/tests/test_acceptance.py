"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Criteria 8-10 train networks at desk scale with ``configs/desk.json`` and take
several minutes each; they are marked ``slow``.
"""

import json
import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from mimoest import experiments as ex
from mimoest import gradsuite
from mimoest import pilot_net as pn
from mimoest import residual_net as rn
from mimoest import training as tr
from mimoest.config import ScenarioConfig, TrainConfig, config_from_dict, load_config
from mimoest.estimators import (LmmseContext, analytic_mse, empirical_mse, lmmse_matrices,
                                ls_preprocess, mse_derivation_chain, phi_coefficients)
from mimoest.numerics import RngStream, frobenius_norm_sq
from mimoest.pilots import orthogonal_pilots, random_pilots
from mimoest.scenario import (TopologyConfig, distortion_covariance, make_scenario,
                              measure_evm, sample_channels, sample_distortion, sample_received)

ROOT = Path(__file__).resolve().parents[1]
DESK = ROOT / "configs" / "desk.json"


# ---------------------------------------------- 1. LMMSE closed-form MSE

def test_c01_lmmse_monte_carlo_matches_closed_form(criterion):
    t0 = time.process_time()
    topo = TopologyConfig(L=3, K=4, N=16)
    tau, draws = 6, 10_000
    worst = 0.0
    for s in range(20):
        gen = RngStream(s, "c01").generator()
        scen = make_scenario(topo, seed=s, delta_ue=gen.uniform(0, 0.2, (3, 4)),
                             delta_bs=gen.uniform(0, 0.2, 3), tau_p=tau)
        maker = orthogonal_pilots if s % 2 == 0 else random_pilots
        pil = maker(tau, 4, 3, gen, scen.p_max)
        ctx = LmmseContext.from_scenario(scen, pil)
        mse = analytic_mse(ctx, topo.N)
        H = sample_channels(scen.beta, topo.N, RngStream(s, "c01/h"), batch=draws)
        block = sample_received(RngStream(s, "c01/rx"), H, pil.merged(), scen.delta_ue,
                                scen.delta_bs, scen.noise_power)
        H_hat = block.Y @ lmmse_matrices(ctx)
        for i in range(3):
            emp = empirical_mse(H_hat[:, i], H[:, i, i])
            worst = max(worst, abs(emp / mse[i] - 1.0))
    cpu = time.process_time() - t0
    ok = criterion(1, worst < 0.02 and cpu < 120,
                   f"LMMSE MC vs analytic, worst rel err {worst:.4f} (< 0.02), {cpu:.0f}s CPU")
    assert ok


# --------------------------------------------------- 2. MSE derivation chain

def test_c02_appendix_identity(criterion):
    gen = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        L, tau, K = (int(v) for v in gen.integers([1, 1, 1], [5, 9, 6]))
        beta = gen.uniform(0.05, 2.0, (L, L, K))
        X = random_pilots(tau, K, L, gen, 1.0).X
        p = gen.uniform(0.2, 2.0, (L, K))
        d = gen.uniform(0.0, 0.3)
        phi = phi_coefficients(beta, p, np.full((L, K), d), np.full(L, d), gen.uniform(0.05, 1), tau)
        forms = mse_derivation_chain(LmmseContext(X, p, beta, phi), int(gen.integers(1, 20)))
        worst = max(worst, float(np.max(np.abs(forms["pre_lemma"] - forms["post_lemma"]))))
    ok = criterion(2, worst < 1e-10, f"pre- vs post-lemma MSE, max abs diff {worst:.2e} (< 1e-10)")
    assert ok


# ---------------------------------------------------- 3. closed-form reductions

def test_c03_closed_form_reductions(criterion):
    gen = np.random.default_rng(3)
    worst = 0.0
    for _ in range(50):
        K = int(gen.integers(1, 5))
        tau = int(gen.integers(K, 9))
        N = int(gen.integers(1, 33))
        beta = gen.uniform(0.05, 2.0, (1, 1, K))
        p = gen.uniform(0.2, 2.0, (1, K))
        s2 = gen.uniform(0.1, 2.0)
        X = orthogonal_pilots(tau, K, 1, gen, 1.0).X
        mse = analytic_mse(LmmseContext(X, p, beta, np.array([s2 / tau])), N)[0]
        b = beta[0, 0]
        worst = max(worst, abs(mse - N * np.sum(b * s2 / (s2 + tau * p[0] * b))))
    # LS: N K s2 / (tau P) by Monte Carlo
    N, K, tau, P, s2 = 8, 2, 4, 1.5, 0.6
    pil = orthogonal_pilots(tau, K, 1, RngStream(3, "c03"), P).merged()
    H = sample_channels(np.ones((1, 1, K)), N, RngStream(3, "c03/h"), batch=10_000)
    Y = sample_received(RngStream(3, "c03/rx"), H, pil, 0.0, 0.0, s2).Y
    ls = empirical_mse(ls_preprocess(Y[:, 0], pil[0]), H[:, 0, 0])
    ls_err = abs(ls / (N * K * s2 / (tau * P)) - 1.0)
    ok = criterion(3, worst < 1e-10 and ls_err < 0.02,
                   f"single-cell LMMSE closed form abs err {worst:.1e} (< 1e-10); "
                   f"LS MC rel err {ls_err:.4f} (< 0.02)")
    assert ok


# ------------------------------------------------------------ 4. distortion

def test_c04_distortion_model(criterion):
    L, K, N, tau = 2, 3, 4, 3
    gen = np.random.default_rng(4)
    beta = gen.uniform(0.2, 1.0, (L, L, K))
    H = sample_channels(beta, N, RngStream(4, "c04/h"))
    p = gen.uniform(0.5, 1.0, (L, K))
    d_ue, d_bs, s2 = 0.15, 0.1, 0.3
    pil = orthogonal_pilots(tau, K, L, gen, 1.0).X * np.sqrt(p)[..., None, :]
    draws = 100_000
    Hb = np.broadcast_to(H, (draws,) + H.shape)
    block = sample_received(RngStream(4, "c04/rx"), Hb, pil, d_ue, d_bs, s2)
    D = block.distortion(Hb)
    emp = np.einsum("bint,bimt->inm", D, np.conj(D)) / draws
    cov = distortion_covariance(H, p, d_ue, d_bs, s2, tau)
    cov_err = float(np.max(np.sqrt(frobenius_norm_sq(emp - cov) / frobenius_norm_sq(cov))))
    # EVM: 10^6 distortion symbols of one UE, delta_UE = 0.1, P = 1
    one = np.ones((10 ** 6, 1, 1, 1, 1), dtype=complex)
    eta, _ = sample_distortion(RngStream(4, "c04/evm"), one, 1.0, 0.1, 0.0, 1)
    evm = measure_evm(eta.reshape(-1, 1), 1.0)
    evm_err = abs(evm / 0.1 - 1.0)
    ok = criterion(4, cov_err < 0.05 and evm_err < 0.01,
                   f"distortion covariance rel Frobenius err {cov_err:.4f} (< 0.05); "
                   f"EVM {evm:.5f} vs 0.1, rel err {evm_err:.4f} (< 0.01)")
    assert ok


# ---------------------------------------------------------------- 5. autodiff

def test_c05_gradient_suite(criterion):
    t0 = time.process_time()
    results = gradsuite.run_suite(points=20, seed=5)
    cpu = time.process_time() - t0
    worst = max(results, key=lambda r: r.max_rel_error)
    names = {r.name for r in results}
    complete = {"loss_aware", "loss_unaware", "estimator_loss", "joint_graph"} <= names
    ok = criterion(5, worst.max_rel_error < 1e-4 and complete and cpu < 300,
                   f"grad_check over {len(results)} cases x 20 points, worst "
                   f"{worst.name} {worst.max_rel_error:.2e} (< 1e-4), {cpu:.0f}s CPU")
    assert ok


# ------------------------------------------------------------ 6. denoiser algebra

def test_c06_zero_denoiser_is_ls(criterion):
    scen = ScenarioConfig()
    data = tr.generate_dataset(scen, 4, 50, 6, "c06")
    x = tr.pilots_for("orthogonal", data, 6)
    worst = 0.0
    for mode in rn.MODES:
        net = rn.init_residual_net(6, depth=3, width=8, mode=mode, head_scale=1.0)
        for head in (net.alpha, net.gamma):
            if head is not None:
                head[0].value[:] = 0.0
                head[1].value[:] = 0.0
        yh, H, b = tr._cell_samples(data, x, 0.1)
        ls = empirical_mse(yh, H)
        net_mse = empirical_mse(tr.predict(net, yh, b), H)
        worst = max(worst, abs(net_mse - ls) / ls)
    ok = criterion(6, worst < 1e-12,
                   f"zero denoiser weights reproduce LS MSE, max rel diff {worst:.1e} (< 1e-12)")
    assert ok


# ------------------------------------------------------------ 7. power constraint

def test_c07_power_constraint(criterion):
    scen = ScenarioConfig()
    data = tr.generate_dataset(scen, 4, 64, 7, "c07")
    limit = data.p_max + 1e-9
    peaks = {}
    for scheme in ("orthogonal", "random"):
        peaks[scheme] = tr.max_column_power(tr.pilots_for(scheme, data, 7))
    cfg = TrainConfig(epochs=3, batch_size=16, lr=1e-2, pilot_dropout=0.1)
    for kind in ("aware", "unaware"):
        net = pn.init_pilot_net(4, scen.K, data.p_max, RngStream(7, "c07/init"), 2, 2)
        _, hist = tr.pretrain_pilot(net, data.beta, data.beta, cfg, data.noise_power, kind)
        peaks[f"pretrain-{kind}"] = max(hist.max_pilot_power)
    est = rn.init_residual_net(7, depth=2, width=4, head_scale=0.1)
    _, _, hist = tr.train_joint(net, est, data, data, replace(cfg, epochs=2, lr=1e-3))
    peaks["joint"] = max(hist.max_pilot_power)
    peaks["learned-eval"] = tr.max_column_power(tr.pilots_for("learned", data, 7, net))
    worst = max(peaks, key=peaks.get)
    ok = criterion(7, all(v <= limit for v in peaks.values()),
                   f"max pilot column power over all steps and schemes {peaks[worst]:.6f} mW "
                   f"({worst}) vs P_max {data.p_max:.6f} mW")
    assert ok


# --------------------------------------------------- 8-10. desk-scale training

SEEDS = (0, 1, 2)
C08_CPU_BUDGET = 30 * 60


def _by_estimator(record):
    return {row["estimator"]: row["sum_mse"] for row in record.rows}


@pytest.mark.slow
def test_c08_desk_ordering(criterion):
    # "best of 3 seeds": seeds run in order and the first one meeting every
    # ordering settles the criterion, which keeps the run inside the budget
    cfg = load_config(DESK)
    t0 = time.process_time()
    notes, passed = [], False
    for seed in SEEDS:
        data = ex.make_datasets(cfg, seed=seed)
        net, _ = ex.train_estimator_run(cfg, data, seed)
        x_te = tr.pilots_for("orthogonal", data.test, cfg.eval.seed)
        m = _by_estimator(tr.evaluate(data.test, x_te, cfg.train.delta, pilot="orthogonal",
                                      nets={"proposed": net}))
        est_ok = m["ls"] > m["proposed"] and m["proposed"] <= 1.15 * m["lmmse"]
        joint = math.inf
        if est_ok:
            record, *_ = ex.joint_pipeline(cfg, seed, data, net)
            joint = _by_estimator(record)["proposed"]
        notes.append(f"seed {seed}: LS {m['ls']:.3e}, proposed {m['proposed']:.3e} "
                     f"({m['proposed'] / m['lmmse']:.3f} x LMMSE {m['lmmse']:.3e}), "
                     f"joint {joint:.3e}")
        if est_ok and joint <= m["proposed"]:
            passed = True
            break
    cpu = time.process_time() - t0
    ok = criterion(8, passed and cpu <= C08_CPU_BUDGET,
                   "; ".join(notes) + f"; {cpu / 60:.1f} min CPU (<= 30)")
    assert ok


@pytest.mark.slow
def test_c09_mismatch_trend(criterion):
    cfg = load_config(DESK)
    cfg = replace(cfg, train=replace(cfg.train, delta2=0.02))
    eval_delta = math.sqrt(0.04)
    notes, passed = [], False
    for seed in SEEDS:
        data = ex.make_datasets(cfg, seed=seed)
        net, _ = ex.train_estimator_run(cfg, data, seed)
        x_te = tr.pilots_for("orthogonal", data.test, cfg.eval.seed)
        m = _by_estimator(tr.evaluate(data.test, x_te, eval_delta, pilot="orthogonal",
                                      nets={"proposed": net}))
        notes.append(f"seed {seed}: proposed {m['proposed']:.3e} vs LMMSE {m['lmmse']:.3e} "
                     f"({m['proposed'] / m['lmmse']:.3f} x)")
        if m["proposed"] <= m["lmmse"]:
            passed = True
            break
    ok = criterion(9, passed, "delta^2 0.04, trained at 0.02: " + "; ".join(notes))
    assert ok


@pytest.mark.slow
def test_c10_learned_pilots_beat_reuse(criterion):
    cfg = load_config(DESK)
    scen = cfg.scenario
    tau = scen.K // 2
    net, _ = ex.train_pilot_net(cfg, tau, cfg.seed, "aware")
    beta = tr.generate_drops(scen, 50, cfg.eval.seed, "test")
    idx = np.arange(scen.L)
    noise = 10 ** (scen.noise_power_dbm / 10)
    p_max = 10 ** (scen.p_max_dbm / 10)
    learned = pn.pilot_forward(beta[:, idx, idx], net).value
    reuse = tr.baseline_pilots("orthogonal", 50, scen.L, tau, scen.K, p_max, cfg.eval.seed)
    a = float(np.mean(tr.analytic_sum_mse(beta, learned, cfg.train.delta, noise, scen.N)))
    b = float(np.mean(tr.analytic_sum_mse(beta, reuse, cfg.train.delta, noise, scen.N)))
    ok = criterion(10, a < b, f"tau={tau}, K={scen.K}, 50 held-out drops: learned {a:.4e} "
                   f"vs orthogonal reuse {b:.4e} ({a / b:.3f} x)")
    assert ok


# ------------------------------------------------------------ 11. reproducibility

REPRO = {
    "scenario": {"L": 2, "K": 2, "N": 4},
    "train": {"tau": 2, "n_train": 16, "n_val": 8, "epochs": 2, "joint_epochs": 1,
              "batch_size": 4, "depth": 1, "width": 3, "pilot_omega": 1, "warmup_epochs": 1},
    "eval": {"n_test": 10, "delta2_grid": [0.0, 0.02], "tau_grid": [1, 2]},
    "seed": 11,
}


def test_c11_reproduce_byte_identical(criterion, tmp_path):
    cfg = config_from_dict(REPRO)
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        paths = ex.reproduce(cfg, ex.PIPELINES, out)
        runs.append({p.relative_to(out): p.read_bytes() for p in paths})
    same = runs[0] == runs[1] and len(runs[0]) > 0
    stems = {p.name.split(".")[0].split("_cdf")[0] for p in runs[0]}
    ok = criterion(11, same and len(stems) == len(ex.PIPELINES),
                   f"{len(runs[0])} CSVs from {len(ex.PIPELINES)} pipelines byte-identical "
                   f"across two runs: {same}")
    assert ok
