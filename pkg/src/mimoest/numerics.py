"""Dense complex linear algebra and seeded sampling shared by every module.

Matrices are plain ``numpy`` arrays (``complex128`` or ``float64``). Every
routine accepts a stack of matrices in the trailing two axes, so a batch of
``B`` scenarios is just an array of shape ``(B, ..., n, n)``.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .errors import NotPositiveDefinite

HERMITIAN_RTOL = 1e-10
JITTER_SCALE = 1e-12


@dataclass(frozen=True)
class RngStream:
    """Counter-style random stream identified by ``(seed, tag, cell, sample)``.

    Identical identifiers reproduce the same draws; distinct identifiers map to
    distinct ``SeedSequence`` spawn keys and hence independent Philox streams.
    """

    seed: int
    tag: str = ""
    cell: int = 0
    sample: int = 0

    def child(self, tag: str | None = None, cell: int | None = None,
              sample: int | None = None) -> "RngStream":
        return RngStream(
            self.seed,
            self.tag if tag is None else tag,
            self.cell if cell is None else cell,
            self.sample if sample is None else sample,
        )

    def generator(self) -> np.random.Generator:
        key = (zlib.crc32(self.tag.encode("utf-8")), int(self.cell), int(self.sample))
        seq = np.random.SeedSequence(entropy=int(self.seed) & (2**64 - 1), spawn_key=key)
        return np.random.Generator(np.random.Philox(seq))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def herm(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose over the trailing two axes."""
    return np.conj(np.swapaxes(a, -1, -2))


def _check_hermitian(a: np.ndarray) -> None:
    scale = np.max(np.abs(a)) if a.size else 0.0
    if scale == 0.0:
        return
    if np.max(np.abs(a - herm(a))) > HERMITIAN_RTOL * scale:
        raise ValueError("matrix is not Hermitian within tolerance")


def _cholesky_single(a: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    n = a.shape[-1]
    eps = JITTER_SCALE * abs(np.trace(a).real) / n
    try:
        return np.linalg.cholesky(a + eps * np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(
            f"Cholesky failed after jitter {eps:.3e}") from exc


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, retrying once with ``1e-12 * trace/n`` jitter.

    Raises
    ------
    NotPositiveDefinite
        If the jittered matrix still fails to factor.
    """
    a = np.asarray(a)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    if a.ndim == 2:
        return _cholesky_single(a)
    flat = a.reshape((-1,) + a.shape[-2:])
    out = np.empty_like(flat)
    for idx in range(flat.shape[0]):
        out[idx] = _cholesky_single(flat[idx])
    return out.reshape(a.shape)


def hpd_inverse(a: np.ndarray, check: bool = True) -> np.ndarray:
    """Inverse of a Hermitian positive-definite matrix (or stack) via Cholesky.

    The result is symmetrised so it is Hermitian to rounding.
    """
    a = np.asarray(a)
    if a.shape[-1] != a.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {a.shape}")
    if check:
        _check_hermitian(a)
    low = cholesky(a)
    eye = np.broadcast_to(np.eye(a.shape[-1], dtype=low.dtype), low.shape)
    low_inv = np.linalg.solve(low, eye)
    inv = herm(low_inv) @ low_inv
    return 0.5 * (inv + herm(inv))


def sample_complex_gaussian(rng, rows: int | None = None, cols: int | None = None,
                            variance=1.0, *, shape: tuple | None = None) -> np.ndarray:
    """I.i.d. circularly-symmetric complex Gaussian entries.

    ``variance`` is the per-entry variance E|z|^2 and may be any array that
    broadcasts against the output shape. Pass ``shape`` to draw a stack.
    """
    gen = as_generator(rng)
    if shape is None:
        shape = (rows, cols)
    variance = np.asarray(variance, dtype=float)
    if np.any(variance < 0):
        raise ValueError("variance must be non-negative")
    draws = gen.standard_normal(tuple(shape) + (2,))
    z = draws[..., 0] + 1j * draws[..., 1]
    return z * np.sqrt(variance / 2.0)


def frobenius_norm_sq(a: np.ndarray, axes=(-2, -1)) -> np.ndarray | float:
    """Sum of squared magnitudes over the matrix axes."""
    a = np.asarray(a)
    if a.ndim < 2:
        return float(np.sum(np.abs(a) ** 2))
    out = np.sum(a.real ** 2 + a.imag ** 2, axis=axes)
    return float(out) if np.ndim(out) == 0 else out
