"""Command-line entry point: ``mimoest <command> [options]``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import gradsuite
from . import training as tr
from .bundle import load_bundle, save_bundle
from .config import ExperimentConfig, load_config
from .errors import MimoEstError
from .estimators import LmmseContext, analytic_mse, phi_coefficients
from .flops import flops_report
from .pilot_net import pilot_forward
from .scenario import dbm_to_mw, make_scenario

BASELINES = ("ls", "lmmse", "cdrn", "cdrn-local", "proposed")
GRADCHECK_TOL = 1e-4


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="experiment JSON (defaults if omitted)")
    p.add_argument("--seed", type=int, help="root seed; overrides the config")
    p.add_argument("--out", type=Path, help="output file or directory")
    p.add_argument("--threads", type=int, help="worker threads for compiled kernels")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mimoest", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("drop", help="emit one scenario drop as JSON")
    _common(p)
    p.add_argument("--sample", type=int, default=0)

    p = sub.add_parser("eval-analytic", help="closed-form LMMSE sum-MSE table")
    _common(p)
    p.add_argument("--pilot", choices=("orthogonal", "random", "learned"), default="orthogonal")
    p.add_argument("--bundle", type=Path, help="bundle with a pilot net for --pilot learned")

    p = sub.add_parser("train-pilot", help="pre-train the pilot generator")
    _common(p)

    p = sub.add_parser("train-estimator", help="train the residual estimator on fixed pilots")
    _common(p)
    p.add_argument("--pilot", choices=("orthogonal", "random", "learned"))
    p.add_argument("--bundle", type=Path, help="bundle with a pilot net for --pilot learned")

    p = sub.add_parser("train-joint", help="joint fine-tuning from a pre-trained pilot net")
    _common(p)
    p.add_argument("--bundle", type=Path, required=True,
                   help="bundle with the pre-trained pilot net (and optionally an estimator)")

    p = sub.add_parser("evaluate", help="sum-MSE over the impairment grid, CSV + CDF output")
    _common(p)
    p.add_argument("--baseline", choices=BASELINES, default="lmmse")
    p.add_argument("--pilot", choices=("orthogonal", "random", "learned"), default="orthogonal")
    p.add_argument("--bundle", type=Path, help="bundle for trained estimators or learned pilots")

    p = sub.add_parser("gradcheck", help="finite-difference check of every operator and loss")
    _common(p)
    p.add_argument("--points", type=int, default=20)

    p = sub.add_parser("flops", help="MAC counts and asymptotic complexity")
    _common(p)

    p = sub.add_parser("reproduce", help="run desk-scale pipelines and write CSVs")
    _common(p)
    p.add_argument("pipelines", nargs="*", default=list(ex.PIPELINES),
                   help=f"subset of {', '.join(ex.PIPELINES)}")
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, train=replace(cfg.train, seed=args.seed))
    return cfg


def _set_threads(n: int | None):
    if n is None:
        return
    if n < 1:
        raise MimoEstError("--threads must be >= 1")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _emit(text: str, out: Path | None):
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)


def _need_bundle(args, what: str):
    if args.bundle is None:
        raise MimoEstError(f"{what} needs --bundle")
    return load_bundle(args.bundle)


def _learned_pilot(args, cfg: ExperimentConfig):
    pilot = _need_bundle(args, "--pilot learned").pilot_net()
    if pilot is None:
        raise MimoEstError(f"{args.bundle}: bundle has no pilot net")
    if pilot.tau != cfg.train.tau or pilot.K != cfg.scenario.K:
        raise MimoEstError(f"bundle pilot net is tau={pilot.tau}, K={pilot.K}; config has "
                           f"tau={cfg.train.tau}, K={cfg.scenario.K}")
    return pilot


# ------------------------------------------------------------------ commands

def cmd_drop(args, cfg):
    s = cfg.scenario
    scen = make_scenario(s.topology(), cfg.seed, args.sample, delta=cfg.train.delta,
                         noise_power_dbm=s.noise_power_dbm, tau_p=cfg.train.tau,
                         p_max_dbm=s.p_max_dbm)
    _emit(scen.to_json() + "\n", args.out)


def cmd_eval_analytic(args, cfg):
    s = cfg.scenario
    noise = float(dbm_to_mw(s.noise_power_dbm))
    p_max = float(dbm_to_mw(s.p_max_dbm))
    beta = tr.generate_drops(s, cfg.eval.n_test, cfg.eval.seed, "test")
    idx = np.arange(s.L)
    pilot = _learned_pilot(args, cfg) if args.pilot == "learned" else None
    rows = []
    for d2 in cfg.eval.delta2_grid:
        delta = float(d2) ** 0.5
        if pilot is not None:
            xbar = pilot_forward(beta[:, idx, idx], pilot).value
        else:
            xbar = tr.baseline_pilots(args.pilot, len(beta), s.L, cfg.train.tau, s.K, p_max,
                                      cfg.eval.seed)
        p = np.sum(np.abs(xbar) ** 2, axis=-2)
        X = xbar / np.sqrt(p)[..., None, :]
        phi = phi_coefficients(beta, p, np.full(p.shape, delta), np.full(p.shape[:-1], delta),
                               noise, cfg.train.tau)
        per_cell = analytic_mse(LmmseContext(X, p, beta, phi), s.N)
        rows.append({"pilot": args.pilot, "tau": cfg.train.tau, "delta2": float(d2),
                     "seed": cfg.eval.seed, "sum_mse": float(np.mean(per_cell.sum(axis=-1))),
                     "per_cell_mse": list(np.mean(per_cell, axis=0))})
    _emit(ex.rows_csv(rows), args.out)


def cmd_train_pilot(args, cfg):
    net, hist = ex.train_pilot_net(cfg, cfg.train.tau, cfg.train.seed)
    out = args.out or Path("pilot_bundle")
    save_bundle(out, pilot=net, config=cfg.to_dict(),
                metadata={"regime": f"pretrain-{cfg.train.pilot_loss}",
                          "best_epoch": hist.best_epoch, "val_loss": hist.val_loss})
    print(f"pilot net saved to {out} (best epoch {hist.best_epoch})")


def cmd_train_estimator(args, cfg):
    scheme = args.pilot or cfg.train.pilot_scheme
    pilot = _learned_pilot(args, cfg) if scheme == "learned" else None
    data = ex.make_datasets(cfg, seed=cfg.train.seed)
    net, hist = ex.train_estimator_run(cfg, data, cfg.train.seed, pilot_scheme=scheme,
                                       pilot_net=pilot)
    out = args.out or Path("estimator_bundle")
    save_bundle(out, pilot=pilot, estimator=net, config=cfg.to_dict(),
                metadata={"regime": "estimator-only", "pilot_scheme": scheme,
                          "best_epoch": hist.best_epoch, "val_sum_mse": hist.val_loss})
    print(f"estimator saved to {out} (best epoch {hist.best_epoch}, "
          f"val sum-MSE {hist.notes['best_val']:.6g})")


def cmd_train_joint(args, cfg):
    bundle = _need_bundle(args, "train-joint")
    pilot = bundle.pilot_net()
    if pilot is None:
        raise MimoEstError(f"{args.bundle}: bundle has no pre-trained pilot net")
    net = bundle.residual_net() or ex.init_estimator(cfg.train, cfg.train.seed)
    data = ex.make_datasets(cfg, seed=cfg.train.seed)
    pilot, net, hist = tr.train_joint(pilot, net, data.train, data.val,
                                      ex.joint_config(cfg.train))
    out = args.out or Path("joint_bundle")
    save_bundle(out, pilot=pilot, estimator=net, config=cfg.to_dict(),
                metadata={"regime": "joint", "best_epoch": hist.best_epoch,
                          "val_sum_mse": hist.val_loss,
                          "max_pilot_power": max(hist.max_pilot_power, default=0.0)})
    print(f"joint model saved to {out} (best epoch {hist.best_epoch})")


def cmd_evaluate(args, cfg):
    data = tr.generate_dataset(cfg.scenario, cfg.train.tau, cfg.eval.n_test, cfg.eval.seed, "test")
    pilot = _learned_pilot(args, cfg) if args.pilot == "learned" else None
    xbar = tr.pilots_for(args.pilot, data, cfg.eval.seed, pilot)
    nets, include = {}, ()
    if args.baseline in ("ls", "lmmse"):
        include = (args.baseline,)
    else:
        net = _need_bundle(args, f"--baseline {args.baseline}").residual_net()
        if net is None:
            raise MimoEstError(f"{args.bundle}: bundle has no estimator")
        if net.mode != args.baseline:
            raise MimoEstError(f"bundle estimator is mode {net.mode!r}, not {args.baseline!r}")
        nets = {args.baseline: net}
    record = tr.MetricsRecord()
    for d2 in cfg.eval.delta2_grid:
        tr.evaluate(data, xbar, float(d2) ** 0.5, pilot=args.pilot, regime="evaluate",
                    seed=cfg.eval.seed, nets=nets, record=record, keep_cdf=True, include=include)
    if args.out is None:
        sys.stdout.write(ex.metrics_csv(record))
    else:
        for path in ex.write_record(record, args.out, "metrics"):
            print(path)


def cmd_gradcheck(args, cfg):
    seed = cfg.seed if args.seed is None else args.seed
    failed = 0
    for res in gradsuite.run_suite(points=args.points, seed=seed):
        ok = res.max_rel_error < GRADCHECK_TOL
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} {res.name:<18s} max rel err {res.max_rel_error:.3e}")
    if failed:
        raise MimoEstError(f"{failed} gradient check(s) above {GRADCHECK_TOL:g}")


def cmd_flops(args, cfg):
    s, t = cfg.scenario, cfg.train
    c_in = 2 if t.mode == "cdrn" else 4
    rep = flops_report(L=s.L, K=s.K, N=s.N, tau=t.tau, epochs=t.epochs, n_train=t.n_train,
                       n_hidden=t.pilot_hidden, omega=t.pilot_omega, depth=t.depth,
                       width=t.width, c_in=c_in, heads=2 if t.mode == "proposed" else 1)
    _emit(rep.text() + "\n", args.out)


def cmd_reproduce(args, cfg):
    out = args.out or Path("results")
    (out).mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    for path in ex.reproduce(cfg, args.pipelines, out, cfg.seed):
        print(path)


COMMANDS = {
    "drop": cmd_drop, "eval-analytic": cmd_eval_analytic, "train-pilot": cmd_train_pilot,
    "train-estimator": cmd_train_estimator, "train-joint": cmd_train_joint,
    "evaluate": cmd_evaluate, "gradcheck": cmd_gradcheck, "flops": cmd_flops,
    "reproduce": cmd_reproduce,
}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _set_threads(args.threads)
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except (MimoEstError, OSError, ValueError) as exc:
        print(f"mimoest {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
