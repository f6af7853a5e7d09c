import numpy as np
import pytest
from hypothesis import given, strategies as st

from mimoest import autodiff as ad
from mimoest import gradsuite
from mimoest.errors import KinkCrossed, NonScalarOutput


def test_constant_graph():
    c = ad.const(np.array(3.0))
    assert float(ad.scale(c, 2.0).value) == 6.0


def test_dense_zero_weights_gives_bias():
    out = ad.affine(ad.const(np.ones((2, 3))), ad.param(np.zeros((4, 3))), ad.param(np.arange(4.0)))
    np.testing.assert_array_equal(out.value, np.tile(np.arange(4.0), (2, 1)))


def test_relu_affine_hand_value():
    x = ad.const(np.array([[1.0, -2.0]]))
    W = ad.param(np.array([[1.0, 1.0], [2.0, -1.0]]))
    b = ad.param(np.array([0.5, -1.0]))
    np.testing.assert_allclose(ad.relu(ad.affine(x, W, b)).value, [[0.0, 3.0]])


def test_trace_inverse_gradient():
    M = ad.param(np.diag([2.0, 4.0]))
    J = ad.trace_re(ad.inv_hpd(M))
    J.backward()
    assert M.grad[0, 0] == pytest.approx(-0.25)
    assert M.grad[1, 1] == pytest.approx(-1 / 16)


def test_frobenius_wirtinger_gradient():
    X0 = np.array([[1 + 2j, -0.5j], [3.0, 1 - 1j]])
    X = ad.param(X0)
    ad.fro2(X).backward()
    np.testing.assert_allclose(X.grad, X0)


def test_matrix_calculus_oracle():
    gen = np.random.default_rng(0)
    X0 = gen.standard_normal((3, 2)) + 1j * gen.standard_normal((3, 2))
    d = np.array([0.5, 2.0])
    c = 1.7
    X = ad.param(X0)
    J = ad.trace_re(ad.inv_hpd(ad.add(ad.scale(ad.matmul(ad.herm(X), X), c), np.diag(1 / d))))
    J.backward()
    S = np.linalg.inv(np.diag(1 / d) + c * X0.conj().T @ X0)
    np.testing.assert_allclose(X.grad, -c * X0 @ S @ S, atol=1e-12)


def test_backward_requires_scalar():
    with pytest.raises(NonScalarOutput):
        ad.param(np.ones(3)).backward()


def test_backward_resets_gradients():
    x = ad.param(np.array([1.0, 2.0]))
    for _ in range(2):
        ad.sum(ad.abs2(x)).backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0])


def test_stop_gradient_blocks():
    x = ad.param(np.array([1.0, 2.0]))
    ad.sum(ad.mul(ad.stop_gradient(x), x)).backward()
    np.testing.assert_allclose(x.grad, [1.0, 2.0])


def test_normalize_power_examples():
    x = ad.const(np.array([[2.0 + 0j], [0.0]]))
    np.testing.assert_allclose(ad.normalize_power(x, 1.0).value, [[1.0], [0.0]])


def test_adam_zero_gradient_keeps_params():
    p = ad.param(np.array([1.0, -1.0]))
    opt = ad.Adam([p], lr=0.1)
    for _ in range(5):
        opt.step([np.zeros(2)])
    np.testing.assert_array_equal(p.value, [1.0, -1.0])


def test_adam_constant_gradient_step_size():
    p = ad.param(np.array([0.0, 0.0, 0.0j]))
    opt = ad.Adam([p], lr=0.01)
    g = np.array([3.0, -0.2, 1j])
    for _ in range(50):
        before = p.value.copy()
        opt.step([g])
    step = p.value - before
    np.testing.assert_allclose(step, -0.01 * g / np.abs(g), rtol=1e-5)


def test_adam_deterministic():
    def run():
        p = ad.param(np.array([1.0, 2.0]))
        opt = ad.Adam([p], lr=0.05)
        for _ in range(20):
            ad.sum(ad.abs2(ad.sub(p, np.array([0.3, -0.1])))).backward()
            opt.step()
        return p.value
    np.testing.assert_array_equal(run(), run())


def test_grad_check_quadratic():
    x = ad.param(np.array([0.3, -1.2, 2.0]))
    assert ad.grad_check(lambda: ad.sum(ad.abs2(x)), [x]) < 1e-7


def test_grad_check_fourth_order_stencil():
    # cubic: the two-point stencil has error h^2, the four-point one none
    x = ad.param(np.array([0.7]))
    build = lambda: ad.sum(ad.mul(ad.abs2(x), x))
    assert ad.grad_check(build, [x], h=1e-2, order=4) < 1e-12
    assert ad.grad_check(build, [x], h=1e-2, order=2) > 1e-5


def test_piece_signature_tracks_kinks():
    x = ad.param(np.array([-1.0, 0.5, 2.0]))
    s0 = ad.piece_signature(ad.sum(ad.relu(x)))
    x.value = np.array([-1.0, 0.5, 3.0])
    assert ad.piece_signature(ad.sum(ad.relu(x))) == s0
    x.value = np.array([1.0, 0.5, 3.0])
    assert ad.piece_signature(ad.sum(ad.relu(x))) != s0
    c = ad.clip(ad.param(np.array([0.2, 0.9])), -0.5, 0.5)
    d = ad.clip(ad.param(np.array([0.2, 0.4])), -0.5, 0.5)
    assert ad.piece_signature(ad.sum(c)) != ad.piece_signature(ad.sum(d))
    assert ad.piece_signature(ad.sum(ad.abs2(x))) == b""


def test_grad_check_refuses_stencil_across_kink():
    x = ad.param(np.array([1e-6, 1.0]))
    with pytest.raises(KinkCrossed):
        ad.grad_check(lambda: ad.sum(ad.relu(x)), [x], h=1e-5, same_piece=True)
    np.testing.assert_array_equal(x.value, [1e-6, 1.0])
    # without the check the stencil straddles zero and the estimate is wrong
    assert ad.grad_check(lambda: ad.sum(ad.relu(x)), [x], h=1e-5) > 0.1


@pytest.mark.parametrize("name", list(gradsuite.CASES))
def test_gradsuite_case(name):
    res = gradsuite.run_case(name, points=3, seed=1)
    assert res.max_rel_error < 1e-4, res


@given(st.integers(0, 2**31))
def test_matmul_gradient_property(seed):
    gen = np.random.default_rng(seed)
    a = ad.param(gen.standard_normal((2, 3)) + 1j * gen.standard_normal((2, 3)))
    b = ad.param(gen.standard_normal((3, 2)) + 1j * gen.standard_normal((3, 2)))
    assert ad.grad_check(lambda: ad.fro2(ad.matmul(a, b)), [a, b]) < 1e-6
