"""
Matrix Laurent loops on the unit circle.

A TruncatedLoop holds the coefficients of a 2x2 complex Laurent polynomial
in the loop parameter λ; values at n equispaced points of |λ| = 1 are
computed on demand. Products and inverses are formed pointwise on those samples and
brought back to coefficients with the FFT; factorization works on the
coefficients directly.
"""
from __future__ import annotations

from numbers import Number
from typing import Mapping, Optional

import numpy as np
from scipy import fft
from loguru import logger

from ttstar.config import DEFAULT_LOOP_CONFIG, LoopConfig
from ttstar.errors import SingularLoop

D = np.diag([1.0, -1.0]).astype(complex)
P = np.array([[0, 1], [1, 0]], dtype=complex)
N = np.array([[0, 0], [1, 0]], dtype=complex)
I2 = np.eye(2, dtype=complex)

# Edge coefficients at or below this (relative) size are dropped by trimmed()
TRIM_EPS = 1e-15


def _next_pow2(n: int) -> int:
    return 1 << max(1, (int(n) - 1).bit_length())


def _matrix_norm(values: np.ndarray) -> float:
    """Largest induced infinity norm over a stack of 2x2 matrices."""
    if values.size == 0:
        return 0.0
    return float(np.abs(values).sum(axis=-1).max())


def _det(values: np.ndarray) -> np.ndarray:
    return values[..., 0, 0] * values[..., 1, 1] - values[..., 0, 1] * values[..., 1, 0]


def _adjugate(values: np.ndarray) -> np.ndarray:
    adj = np.empty_like(values)
    adj[..., 0, 0] = values[..., 1, 1]
    adj[..., 1, 1] = values[..., 0, 0]
    adj[..., 0, 1] = -values[..., 0, 1]
    adj[..., 1, 0] = -values[..., 1, 0]
    return adj


def _config(config: Optional[LoopConfig]) -> LoopConfig:
    return config if config is not None else DEFAULT_LOOP_CONFIG


def _sample_size(width: int, config: LoopConfig) -> int:
    return max(config.sample_count, _next_pow2(2 * width))


class TruncatedLoop:
    """
    Immutable 2x2 Laurent polynomial Σ_{k=lo}^{hi} c_k λ^k.

    Args:
        lo: Lowest power of λ
        coeffs: Array-like of shape (hi - lo + 1, 2, 2)
    """

    __slots__ = ("lo", "coeffs")

    def __init__(self, lo: int, coeffs) -> None:
        arr = np.array(coeffs, dtype=complex)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[1:] != (2, 2):
            raise ValueError(f"coefficients must have shape (m, 2, 2), got {arr.shape}")
        if arr.shape[0] == 0:
            arr = np.zeros((1, 2, 2), dtype=complex)
            lo = 0
        arr.setflags(write=False)
        self.lo = int(lo)
        self.coeffs = arr

    # Construction

    @classmethod
    def constant(cls, matrix) -> "TruncatedLoop":
        return cls(0, np.asarray(matrix, dtype=complex)[None])

    @classmethod
    def identity(cls) -> "TruncatedLoop":
        return cls.constant(I2)

    @classmethod
    def zero(cls) -> "TruncatedLoop":
        return cls(0, np.zeros((1, 2, 2)))

    @classmethod
    def from_terms(cls, terms: Mapping[int, object]) -> "TruncatedLoop":
        """Build from a {power: 2x2 matrix} mapping."""
        if not terms:
            return cls.zero()
        lo, hi = min(terms), max(terms)
        coeffs = np.zeros((hi - lo + 1, 2, 2), dtype=complex)
        for power, matrix in terms.items():
            coeffs[power - lo] = np.asarray(matrix, dtype=complex)
        return cls(lo, coeffs)

    @classmethod
    def from_samples(cls, samples: np.ndarray, lo: int, hi: int) -> "TruncatedLoop":
        """Recover the coefficients at powers lo..hi from circle samples."""
        n = samples.shape[0]
        if hi - lo + 1 > n:
            raise ValueError(f"{n} samples cannot resolve powers [{lo}, {hi}]")
        spectrum = fft.fft(samples, axis=0) / n
        return cls(lo, spectrum[np.arange(lo, hi + 1) % n])

    # Shape

    @property
    def hi(self) -> int:
        return self.lo + self.coeffs.shape[0] - 1

    @property
    def width(self) -> int:
        return self.coeffs.shape[0]

    @property
    def powers(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1)

    def coeff(self, k: int) -> np.ndarray:
        if self.lo <= k <= self.hi:
            return self.coeffs[k - self.lo].copy()
        return np.zeros((2, 2), dtype=complex)

    def coeff_table(self, powers: np.ndarray) -> np.ndarray:
        """Coefficients at an integer array of powers, zero outside the window."""
        powers = np.asarray(powers, dtype=int)
        out = np.zeros(powers.shape + (2, 2), dtype=complex)
        index = powers - self.lo
        valid = (index >= 0) & (index < self.width)
        out[valid] = self.coeffs[index[valid]]
        return out

    # Sampled representation

    def samples(self, n: Optional[int] = None) -> np.ndarray:
        """Values at λ_j = exp(2πij/n), j = 0..n-1, as a fresh read-only array."""
        if n is None:
            n = _next_pow2(max(64, 2 * self.width))
        if n < 2 * self.width:
            raise ValueError(f"{n} samples are too few for width {self.width}")
        buffer = np.zeros((n, 2, 2), dtype=complex)
        buffer[self.powers % n] = self.coeffs
        values = n * fft.ifft(buffer, axis=0)
        values.setflags(write=False)
        return values

    def det_samples(self, n: Optional[int] = None) -> np.ndarray:
        return _det(self.samples(n))

    def evaluate(self, lam: complex) -> np.ndarray:
        return evaluate(self, lam)

    def max_norm(self) -> float:
        return _matrix_norm(self.samples())

    def distance(self, other: "TruncatedLoop") -> float:
        return (self - other).max_norm()

    # Structure checks

    def is_twisted(self, tol: float = 1e-10) -> bool:
        scale = max(1.0, float(np.abs(self.coeffs).max()))
        odd = (self.powers % 2 == 1)
        off_even = self.coeffs[~odd][:, [0, 1], [1, 0]]
        diag_odd = self.coeffs[odd][:, [0, 1], [0, 1]]
        worst = max(np.abs(off_even).max(initial=0.0), np.abs(diag_odd).max(initial=0.0))
        return bool(worst <= tol * scale)

    def is_unimodular(self, tol: float = 1e-10) -> bool:
        return bool(np.abs(self.det_samples() - 1.0).max() <= tol)

    # Window management

    def trimmed(self, eps: float = TRIM_EPS) -> "TruncatedLoop":
        """Drop negligible coefficients at both ends of the window."""
        sizes = np.abs(self.coeffs).max(axis=(1, 2))
        threshold = eps * max(1.0, float(sizes.max()))
        keep = np.nonzero(sizes > threshold)[0]
        if keep.size == 0:
            return TruncatedLoop.zero()
        first, last = int(keep[0]), int(keep[-1])
        if first == 0 and last == self.width - 1:
            return self
        return TruncatedLoop(self.lo + first, self.coeffs[first:last + 1])

    def truncated(self, lo: Optional[int] = None, hi: Optional[int] = None) -> "TruncatedLoop":
        """Project onto the powers lo..hi (either bound may be left open)."""
        new_lo = self.lo if lo is None else max(self.lo, lo)
        new_hi = self.hi if hi is None else min(self.hi, hi)
        if new_lo > new_hi:
            return TruncatedLoop.zero()
        return TruncatedLoop(new_lo, self.coeffs[new_lo - self.lo:new_hi - self.lo + 1])

    # Elementary transformations

    def conjugated(self, matrix) -> "TruncatedLoop":
        """G·A·G⁻¹ for a constant invertible G."""
        g = np.asarray(matrix, dtype=complex)
        return TruncatedLoop(self.lo, np.matmul(np.matmul(g, self.coeffs), np.linalg.inv(g)))

    def rescale_lambda(self, eps: complex) -> "TruncatedLoop":
        """The loop λ ↦ A(ελ)."""
        weights = np.power(complex(eps), self.powers)
        return TruncatedLoop(self.lo, self.coeffs * weights[:, None, None])

    def _combine(self, other: "TruncatedLoop", sign: float) -> "TruncatedLoop":
        lo, hi = min(self.lo, other.lo), max(self.hi, other.hi)
        coeffs = np.zeros((hi - lo + 1, 2, 2), dtype=complex)
        coeffs[self.lo - lo:self.hi - lo + 1] += self.coeffs
        coeffs[other.lo - lo:other.hi - lo + 1] += sign * other.coeffs
        return TruncatedLoop(lo, coeffs)

    def __add__(self, other: "TruncatedLoop") -> "TruncatedLoop":
        return self._combine(other, 1.0)

    def __sub__(self, other: "TruncatedLoop") -> "TruncatedLoop":
        return self._combine(other, -1.0)

    def __neg__(self) -> "TruncatedLoop":
        return TruncatedLoop(self.lo, -self.coeffs)

    def __mul__(self, scalar: Number) -> "TruncatedLoop":
        if not isinstance(scalar, Number):
            return NotImplemented
        return TruncatedLoop(self.lo, self.coeffs * complex(scalar))

    __rmul__ = __mul__

    def __matmul__(self, other: "TruncatedLoop") -> "TruncatedLoop":
        return compose(self, other)

    def __repr__(self) -> str:
        return f"TruncatedLoop(lo={self.lo}, hi={self.hi})"


def _fit_budget(loop: TruncatedLoop, config: LoopConfig) -> TruncatedLoop:
    """Re-truncate to [-degree, degree] when the dropped tail is negligible."""
    d = config.degree
    if loop.lo >= -d and loop.hi <= d:
        return loop
    inner = loop.truncated(-d, d)
    dropped = loop.coeffs[(loop.powers < -d) | (loop.powers > d)]
    tail = float(np.abs(dropped).sum(axis=-1).max(axis=-1).sum())
    if tail <= config.tol_residual:
        return inner
    logger.debug(f"Keeping overflow beyond degree {d}: tail norm {tail:.3e}")
    return loop.trimmed()


def compose(A: TruncatedLoop, B: TruncatedLoop, config: Optional[LoopConfig] = None) -> TruncatedLoop:
    """Pointwise product A·B; powers add, so the window is [A.lo + B.lo, A.hi + B.hi]."""
    config = _config(config)
    lo, hi = A.lo + B.lo, A.hi + B.hi
    n = _sample_size(hi - lo + 1, config)
    product = np.matmul(A.samples(n), B.samples(n))
    return _fit_budget(TruncatedLoop.from_samples(product, lo, hi), config)


def invert(A: TruncatedLoop, config: Optional[LoopConfig] = None) -> TruncatedLoop:
    """
    Pointwise inverse via circle samples.

    Args:
        A: Loop with det bounded away from zero on |λ| = 1
        config: Truncation and tolerance parameters

    Returns:
        A⁻¹ on the window spanned by A and [-degree, degree]

    Raises:
        SingularLoop: If |det A| < tol_det at a sample, or the inverse does
            not fit the window to within tol_residual
    """
    config = _config(config)
    d = config.degree
    lo, hi = min(A.lo, -d), max(A.hi, d)
    n = _sample_size(hi - lo + 1, config)
    values = A.samples(n)
    det = _det(values)
    smallest = float(np.abs(det).min())
    if smallest < config.tol_det:
        raise SingularLoop(f"|det| = {smallest:.3e} below tol_det {config.tol_det:.1e}")
    inverse = _adjugate(values) / det[:, None, None]
    result = TruncatedLoop.from_samples(inverse, lo, hi).trimmed()
    residual = _matrix_norm(np.matmul(values, result.samples(n)) - I2)
    scale = max(1.0, _matrix_norm(values) * _matrix_norm(inverse))
    if residual > config.tol_residual * scale:
        raise SingularLoop(f"inverse does not fit powers [{lo}, {hi}]: residual {residual:.3e}")
    return result


def evaluate(A: TruncatedLoop, lam: complex) -> np.ndarray:
    """Σ c_k λ^k at a single λ (off-circle evaluation is allowed but unchecked)."""
    weights = np.power(complex(lam), A.powers)
    return np.einsum("k,kij->ij", weights, A.coeffs)


def apply_C(A: TruncatedLoop, config: Optional[LoopConfig] = None) -> TruncatedLoop:
    """
    The real-form involution C(A)(λ) = D·(conj(A(1/λ̄))ᵀ)⁻¹·D.

    For 2x2 matrices this equals P·B·P / det B with B(λ) = conj(A(1/λ̄)),
    so unimodular loops are handled coefficientwise without inversion.
    """
    config = _config(config)
    n = _sample_size(A.width, config)
    det = _det(A.samples(n))
    if float(np.abs(det).min()) < config.tol_det:
        raise SingularLoop(f"apply_C on a loop with |det| = {np.abs(det).min():.3e}")
    # conj(c_k) moves to power -k
    reflected = TruncatedLoop(-A.hi, P @ np.conj(A.coeffs[::-1]) @ P)
    if float(np.abs(det - 1.0).max()) <= config.tol_det:
        return reflected

    d = config.degree
    lo, hi = min(reflected.lo, -d), max(reflected.hi, d)
    n = _sample_size(hi - lo + 1, config)
    # on the circle 1/λ̄ = λ, so det B is the conjugate of det A samplewise
    values = reflected.samples(n) / np.conj(_det(A.samples(n)))[:, None, None]
    return TruncatedLoop.from_samples(values, lo, hi).trimmed()


def apply_sigma(A: TruncatedLoop) -> TruncatedLoop:
    """The twisting involution σ(A)(λ) = D·A(−λ)·D."""
    signs = np.where(A.powers % 2 == 0, 1.0, -1.0)
    coeffs = A.coeffs * signs[:, None, None]
    coeffs[:, 0, 1] *= -1.0
    coeffs[:, 1, 0] *= -1.0
    return TruncatedLoop(A.lo, coeffs)


def lambda_derivative(A: TruncatedLoop) -> TruncatedLoop:
    """Analytic ∂A/∂λ: k·c_k moves to power k − 1."""
    coeffs = A.coeffs * A.powers[:, None, None]
    return TruncatedLoop(A.lo - 1, coeffs).trimmed(eps=0.0)
