"""Multiply-accumulate counts for both networks next to their asymptotic orders."""

from __future__ import annotations

from dataclasses import dataclass

KERNEL = 3
BACKWARD_FACTOR = 3   # forward + two backward products per layer


@dataclass
class FlopsReport:
    pilot_forward_macs: int
    pilot_asymptotic: float
    estimator_forward_macs: int
    estimator_asymptotic: float
    epochs: int
    n_train: int
    L: int

    @property
    def pilot_training_macs(self) -> int:
        return BACKWARD_FACTOR * self.pilot_forward_macs * self.epochs * self.n_train * self.L

    @property
    def estimator_training_macs(self) -> int:
        return BACKWARD_FACTOR * self.estimator_forward_macs * self.epochs * self.n_train * self.L

    def rows(self) -> list[tuple[str, float]]:
        return [
            ("pilot_forward_macs", self.pilot_forward_macs),
            ("pilot_training_macs", self.pilot_training_macs),
            ("pilot_asymptotic_NepNTL(tauK)^2", self.pilot_asymptotic),
            ("estimator_forward_macs", self.estimator_forward_macs),
            ("estimator_training_macs", self.estimator_training_macs),
            ("estimator_asymptotic_NepNTNK_sum(n n)F^2", self.estimator_asymptotic),
        ]

    def text(self) -> str:
        return "\n".join(f"{name:<42s} {value:.6g}" for name, value in self.rows())


def pilot_net_macs(tau: int, K: int, n_hidden: int = 2, omega: int = 4) -> int:
    """Dense MACs of one pilot-generator forward pass."""
    width = omega * tau * K
    sizes = [K] + [width] * n_hidden + [2 * tau * K]
    return sum(a * b for a, b in zip(sizes[:-1], sizes[1:]))


def conv_layer_macs(c_in: int, c_out: int, N: int, K: int, kernel: int = KERNEL) -> int:
    return kernel * kernel * c_in * c_out * N * K


def residual_net_channels(depth: int, width: int, c_in: int) -> list[int]:
    return [c_in] + [width] * depth


def residual_net_macs(N: int, K: int, depth: int = 7, width: int = 64, c_in: int = 3,
                      heads: int = 2) -> int:
    """Conv MACs of one estimator forward pass (noise-level stack plus heads)."""
    ch = residual_net_channels(depth, width, c_in)
    stack = sum(conv_layer_macs(a, b, N, K) for a, b in zip(ch[:-1], ch[1:]))
    return stack + heads * conv_layer_macs(width, 2, N, K)


def pilot_asymptotic(epochs: int, n_train: int, L: int, tau: int, K: int) -> float:
    return float(epochs) * n_train * L * (tau * K) ** 2


def estimator_asymptotic(epochs: int, n_train: int, N: int, K: int, depth: int, width: int,
                         c_in: int = 3, kernel: int = KERNEL) -> float:
    ch = residual_net_channels(depth, width, c_in)
    layer_sum = sum(a * b for a, b in zip(ch[:-1], ch[1:]))
    return float(epochs) * n_train * N * K * layer_sum * kernel ** 2


def flops_report(*, L: int, K: int, N: int, tau: int, epochs: int, n_train: int,
                 n_hidden: int = 2, omega: int = 4, depth: int = 7, width: int = 64,
                 c_in: int = 3, heads: int = 2) -> FlopsReport:
    return FlopsReport(
        pilot_forward_macs=pilot_net_macs(tau, K, n_hidden, omega),
        pilot_asymptotic=pilot_asymptotic(epochs, n_train, L, tau, K),
        estimator_forward_macs=residual_net_macs(N, K, depth, width, c_in, heads),
        estimator_asymptotic=estimator_asymptotic(epochs, n_train, N, K, depth, width, c_in),
        epochs=epochs, n_train=n_train, L=L,
    )
