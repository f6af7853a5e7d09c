"""Finite-difference checks over every autodiff operator and every training loss.

Each case draws a random point, builds a real scalar from the operator output
by contracting it with fixed random weights, and compares the backward pass
against central differences on every real and imaginary component.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import pilot_net as pn
from . import residual_net as rn
from . import training as tr
from .config import ScenarioConfig
from .errors import KinkCrossed

STEP = 1e-4
ORDER = 4
MAX_REDRAWS = 50


@dataclass
class CaseResult:
    name: str
    max_rel_error: float
    points: int


def _cn(gen, *shape):
    return gen.standard_normal(shape) + 1j * gen.standard_normal(shape)


def _contract(out: ad.Tensor, gen) -> ad.Tensor:
    """Real scalar sum(W * out) with fixed random W (over Re/Im for complex out)."""
    if out.is_complex:
        out = ad.reim(out)
    w = gen.standard_normal(out.shape)
    return ad.sum(ad.mul(out, w))


def _unary(op, make_input):
    def case(gen):
        x = ad.param(make_input(gen))
        w_gen_seed = int(gen.integers(2**31))
        return (lambda: _contract(op(x), np.random.default_rng(w_gen_seed))), [x]
    return case


def _binary(op, make_a, make_b):
    def case(gen):
        a, b = ad.param(make_a(gen)), ad.param(make_b(gen))
        seed = int(gen.integers(2**31))
        return (lambda: _contract(op(a, b), np.random.default_rng(seed))), [a, b]
    return case


def _inv_hpd_case(gen):
    # the input must stay Hermitian under perturbation, so differentiate through B B^H + nI
    b = ad.param(_cn(gen, 2, 3, 3))
    seed = int(gen.integers(2**31))

    def build():
        a = ad.add(ad.matmul(b, ad.herm(b)), 3.0 * np.eye(3))
        return _contract(ad.inv_hpd(a), np.random.default_rng(seed))
    return build, [b]


def _dropout_case(gen):
    x = ad.param(gen.standard_normal((4, 5)))
    mask_seed, w_seed = int(gen.integers(2**31)), int(gen.integers(2**31))

    def build():
        out = ad.dropout(x, 0.3, np.random.default_rng(mask_seed))
        return _contract(out, np.random.default_rng(w_seed))
    return build, [x]


def _normalize_case(gen):
    # columns straddle the budget so both branches are exercised
    v = _cn(gen, 2, 3, 4) * np.array([0.2, 0.5, 1.5, 3.0])
    x = ad.param(v)
    seed = int(gen.integers(2**31))
    return (lambda: _contract(ad.normalize_power(x, 1.0), np.random.default_rng(seed))), [x]


def _affine_case(gen):
    x, w, b = (ad.param(gen.standard_normal(s)) for s in [(3, 4), (5, 4), (5,)])
    seed = int(gen.integers(2**31))
    return (lambda: _contract(ad.affine(x, w, b), np.random.default_rng(seed))), [x, w, b]


def _conv_case(gen):
    x = ad.param(gen.standard_normal((2, 4, 3, 2)))
    w = ad.param(gen.standard_normal((3, 3, 2, 3)))
    b = ad.param(gen.standard_normal(3))
    seed = int(gen.integers(2**31))
    return (lambda: _contract(ad.conv2d(x, w, b), np.random.default_rng(seed))), [x, w, b]


def _pack_case(gen):
    u = ad.param(gen.standard_normal((2, 2 * 3 * 2)))
    seed = int(gen.integers(2**31))
    return (lambda: _contract(ad.pack_complex(u, 3, 2), np.random.default_rng(seed))), [u]


def _sum_case(gen):
    x = ad.param(_cn(gen, 2, 3, 4))
    seed = int(gen.integers(2**31))
    return (lambda: _contract(ad.sum(x, axis=1, keepdims=True), np.random.default_rng(seed))), [x]


def _concat_case(gen):
    a, b = ad.param(gen.standard_normal((2, 3))), ad.param(gen.standard_normal((2, 2)))
    seed = int(gen.integers(2**31))
    return (lambda: _contract(ad.concat([a, b], axis=-1), np.random.default_rng(seed))), [a, b]


# ------------------------------------------------------------------- losses

def _generic_biases(params, gen):
    """Random bias vectors, so the check runs at generic points.

    With zero biases a dead ReLU neighbourhood feeds an exact zero
    pre-activation into the next layer, and a pilot net with all hidden units
    inactive emits its orthogonal output bias, exactly on the power budget.
    Both are kinks where one-sided and central differences disagree.
    """
    for p in params:
        if p.value.ndim == 1:
            p.value = 0.1 * gen.standard_normal(p.value.shape)


def _small_scenario():
    return ScenarioConfig(L=2, K=3, N=4)


def _pilot_loss_case(kind: str):
    def case(gen):
        seed = int(gen.integers(2**31))
        scen = _small_scenario()
        beta = tr.generate_drops(scen, 3, seed, "gradcheck")
        noise = 10 ** (scen.noise_power_dbm / 10)
        p_max = 10 ** (scen.p_max_dbm / 10)
        net = pn.init_pilot_net(3, scen.K, p_max, seed, n_hidden=2, omega=1)
        _generic_biases([b for _, b in net.weights], gen)
        idx = np.arange(scen.L)

        def build():
            xbar = pn.pilot_forward(beta[:, idx, idx], net)
            loss = tr.pilot_loss_terms(kind, xbar, beta, 0.1, noise, 3)
            return ad.scale(ad.mean(loss), 1.0 / noise)
        return build, net.parameters()
    return case


def _estimator_loss_case(gen):
    seed = int(gen.integers(2**31))
    net = rn.init_residual_net(seed, depth=2, width=3)
    _generic_biases(net.parameters(), gen)
    yhat = _cn(gen, 2, 4, 3)
    H = yhat + 0.3 * _cn(gen, 2, 4, 3)
    beta = np.exp(gen.uniform(-1, 1, (2, 3)))

    def build():
        return rn.estimator_loss(rn.estimate(yhat, beta, net), H)
    return build, net.parameters()


def _estimator_input_case(gen):
    """Gradient with respect to the LS output itself, through the input scaling."""
    seed = int(gen.integers(2**31))
    net = rn.init_residual_net(seed, depth=2, width=3)
    _generic_biases(net.parameters(), gen)
    y = ad.param(_cn(gen, 2, 4, 3))
    H = _cn(gen, 2, 4, 3)
    beta = np.exp(gen.uniform(-1, 1, (2, 3)))
    return (lambda: rn.estimator_loss(rn.estimate(y, beta, net), H)), [y]


def _joint_case(gen):
    seed = int(gen.integers(2**31))
    scen = _small_scenario()
    tau = 3
    data = tr.generate_dataset(scen, tau, 2, seed, "gradcheck")
    pilot = pn.init_pilot_net(tau, scen.K, data.p_max, seed, n_hidden=1, omega=1)
    net = rn.init_residual_net(seed + 1, depth=2, width=3)
    _generic_biases([b for _, b in pilot.weights] + net.parameters(), gen)
    idx = np.arange(len(data))

    def build():
        h_hat, _ = tr.joint_forward(pilot, net, data, idx, 0.1, reparameterized=True)
        return ad.scale(rn.estimator_loss(h_hat, data.H_local), 1.0 / data.noise_power)
    return build, pilot.parameters() + net.parameters()


CASES: dict[str, Callable] = {
    "add": _binary(ad.add, lambda g: _cn(g, 3, 4), lambda g: g.standard_normal((1, 4))),
    "sub": _binary(ad.sub, lambda g: _cn(g, 3, 4), lambda g: _cn(g, 3, 4)),
    "mul": _binary(ad.mul, lambda g: _cn(g, 3, 4), lambda g: g.standard_normal((3, 1))),
    "mul_complex": _binary(ad.mul, lambda g: _cn(g, 3, 4), lambda g: _cn(g, 3, 4)),
    "scale": _unary(lambda x: ad.scale(x, -1.7), lambda g: _cn(g, 3, 2)),
    "relu": _unary(ad.relu, lambda g: g.standard_normal((4, 5))),
    "sqrt": _unary(ad.sqrt, lambda g: g.uniform(0.5, 2.0, (3, 3))),
    "log": _unary(ad.log, lambda g: g.uniform(0.5, 2.0, (3, 3))),
    "reciprocal": _unary(ad.reciprocal, lambda g: g.uniform(0.5, 2.0, (3, 3))),
    "clip": _unary(lambda x: ad.clip(x, -0.5, 0.5), lambda g: g.standard_normal((4, 4))),
    "abs2": _unary(ad.abs2, lambda g: _cn(g, 3, 3)),
    "abs2_real": _unary(ad.abs2, lambda g: g.standard_normal((3, 3))),
    "conj": _unary(ad.conj, lambda g: _cn(g, 2, 3)),
    "dropout": _dropout_case,
    "reshape": _unary(lambda x: ad.reshape(x, (6, 2)), lambda g: _cn(g, 3, 4)),
    "sum": _sum_case,
    "mean": _unary(lambda x: ad.mean(x, axis=0), lambda g: _cn(g, 3, 4)),
    "concat": _concat_case,
    "transpose": _unary(ad.transpose, lambda g: _cn(g, 2, 3, 4)),
    "herm": _unary(ad.herm, lambda g: _cn(g, 2, 3, 4)),
    "reim": _unary(ad.reim, lambda g: _cn(g, 3, 2)),
    "from_reim": _unary(ad.from_reim, lambda g: g.standard_normal((3, 2, 2))),
    "pack_complex": _pack_case,
    "matmul": _binary(ad.matmul, lambda g: _cn(g, 2, 3, 4), lambda g: _cn(g, 2, 4, 2)),
    "inv_hpd": _inv_hpd_case,
    "trace_re": _unary(ad.trace_re, lambda g: _cn(g, 2, 3, 3)),
    "fro2": _unary(ad.fro2, lambda g: _cn(g, 2, 3, 3)),
    "affine": _affine_case,
    "conv2d": _conv_case,
    "normalize_power": _normalize_case,
    "loss_aware": _pilot_loss_case("aware"),
    "loss_unaware": _pilot_loss_case("unaware"),
    "estimator_loss": _estimator_loss_case,
    "estimator_input": _estimator_input_case,
    "joint_graph": _joint_case,
}


def run_case(name: str, points: int = 20, seed: int = 0, h: float = STEP) -> CaseResult:
    """Worst relative error over ``points`` random points of one case.

    Central differences are only an oracle where the function is smooth, so a
    point whose stencil crosses a ReLU, clip or power-budget kink is redrawn.
    """
    gen = np.random.default_rng([seed, sum(map(ord, name))])
    worst = 0.0
    for _ in range(points):
        for _ in range(MAX_REDRAWS):
            build, params = CASES[name](gen)
            try:
                err = ad.grad_check(build, params, h=h, order=ORDER, same_piece=True)
                break
            except KinkCrossed:
                continue
        else:
            raise RuntimeError(f"{name}: no smooth point found in {MAX_REDRAWS} draws")
        worst = max(worst, err)
    return CaseResult(name, worst, points)


def run_suite(points: int = 20, seed: int = 0, names=None) -> list[CaseResult]:
    return [run_case(n, points, seed) for n in (names or CASES)]
