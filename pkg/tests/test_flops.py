import pytest

from mimoest.flops import (conv_layer_macs, estimator_asymptotic, flops_report, pilot_asymptotic,
                           pilot_net_macs, residual_net_macs)


def test_pilot_macs_by_construction():
    tau, K, omega = 4, 4, 4
    n = omega * tau * K
    assert pilot_net_macs(tau, K, 2, omega) == K * n + n * n + n * 2 * tau * K


def test_pilot_dominant_term_quadruples():
    small = pilot_net_macs(4, 4, 2, 4)
    big = pilot_net_macs(8, 4, 2, 4)
    assert big / small == pytest.approx(4.0, rel=0.1)
    assert pilot_asymptotic(1, 1, 1, 8, 4) / pilot_asymptotic(1, 1, 1, 4, 4) == 4.0


def test_conv_layer_count():
    assert conv_layer_macs(64, 64, 100, 10) == 64 * 64 * 9 * 100 * 10


def test_residual_and_report():
    N, K = 16, 4
    total = residual_net_macs(N, K, depth=2, width=8, c_in=3, heads=2)
    assert total == 9 * N * K * (3 * 8 + 8 * 8 + 2 * 8 * 2)
    rep = flops_report(L=3, K=K, N=N, tau=4, epochs=2, n_train=10, depth=2, width=8)
    assert rep.estimator_training_macs == 3 * total * 2 * 10 * 3
    assert rep.estimator_asymptotic == estimator_asymptotic(2, 10, N, K, 2, 8)
    assert len(rep.text().splitlines()) == 6
