import os
import subprocess
import sys

import numpy as np
import pytest

from mimoest import kernels


def _conv_oracle(x, w, b):
    B, H, W, _ = x.shape
    p = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    y = np.zeros((B, H, W, w.shape[-1])) + b
    for ky in range(3):
        for kx in range(3):
            y += np.einsum("bhwc,co->bhwo", p[:, ky:ky + H, kx:kx + W], w[ky, kx])
    return y


@pytest.fixture
def conv_case():
    gen = np.random.default_rng(0)
    return (gen.standard_normal((2, 5, 4, 3)), gen.standard_normal((3, 3, 3, 6)),
            gen.standard_normal(6), gen.standard_normal((2, 5, 4, 6)))


def test_numpy_forward_matches_oracle(conv_case):
    x, w, b, _ = conv_case
    np.testing.assert_allclose(kernels.conv3x3_forward_np(x, w, b), _conv_oracle(x, w, b),
                               atol=1e-12)


@pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba unavailable")
def test_backends_agree(conv_case):
    x, w, b, g = conv_case
    np.testing.assert_allclose(kernels.conv3x3_forward_nb(x, w, b),
                               kernels.conv3x3_forward_np(x, w, b), atol=1e-12)
    np.testing.assert_allclose(kernels.conv3x3_grad_input_nb(g, w),
                               kernels.conv3x3_grad_input_np(g, w), atol=1e-12)
    np.testing.assert_allclose(kernels.conv3x3_grad_weight_nb(x, g),
                               kernels.conv3x3_grad_weight_np(x, g), atol=1e-12)


def test_gradients_are_adjoint(conv_case):
    # <conv(x), g> is linear in x and w, so the gradients must satisfy the adjoint identities
    x, w, b, g = conv_case
    zero = np.zeros_like(b)
    lhs = np.sum(kernels.conv3x3_forward(x, w, zero) * g)
    assert np.sum(kernels.conv3x3_grad_input(g, w) * x) == pytest.approx(lhs)
    assert np.sum(kernels.conv3x3_grad_weight(x, g) * w) == pytest.approx(lhs)


def test_identity_kernel_hand_value():
    x = np.arange(6.0).reshape(1, 2, 3, 1)
    w = np.zeros((3, 3, 1, 1))
    w[1, 1] = 1.0
    w[1, 2] = 10.0    # right neighbour
    y = kernels.conv3x3_forward(x, w, np.zeros(1))[0, :, :, 0]
    np.testing.assert_allclose(y, [[10.0, 21.0, 2.0], [43.0, 54.0, 5.0]])


def test_env_flag_selects_numpy():
    code = "from mimoest import kernels; print(kernels.active_backend())"
    env = dict(os.environ, MIMOEST_NO_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "numpy"
    env["MIMOEST_NO_NUMBA"] = "0"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == ("numba" if kernels.HAVE_NUMBA else "numpy")
