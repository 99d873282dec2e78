"""
Closed-form frames built from the quantum differential equation of CP^1.

The quantum connection gives the holomorphic potential
η = (1/λ)[[0, 1], [1/z, 0]] dz on the slit plane. Its canonical solution is
L = exp(tN/λ)·L0 with t = log z, where L0 is assembled from the Frobenius
series f0, f1. Dressing by γ0(a) selects a member of the family of local
solutions; γ0(4γ) with γ the Euler constant is the globally smooth one.
"""
from __future__ import annotations

import cmath
import math
from typing import Optional

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict

from ttstar.config import LoopConfig
from ttstar.errors import BudgetExceeded, DomainError
from ttstar.loops import TruncatedLoop, apply_C, compose, invert

EULER_GAMMA = 0.57721566490153286060651209008240243104215933593992
A_SMOOTH = 4.0 * EULER_GAMMA

SERIES_TAIL = 1e-16
MAX_Z_TERMS = 64


def z_terms_for(z: complex, threshold: float = SERIES_TAIL, cap: int = MAX_Z_TERMS) -> int:
    """Smallest n ≥ 1 with |z|^n / (n!)^2 below threshold, capped."""
    r = abs(z)
    term = 1.0
    for n in range(1, cap + 1):
        term *= r / (n * n)
        if term < threshold:
            return n
    return cap


def _frobenius_weights(z: complex, n: int):
    """w_i = z^i/(i!)^2 and harmonic numbers H_i for i < n."""
    weights = np.empty(n, dtype=complex)
    harmonic = np.zeros(n)
    weights[0] = 1.0
    for i in range(1, n):
        weights[i] = weights[i - 1] * z / (i * i)
        harmonic[i] = harmonic[i - 1] + 1.0 / i
    return weights, harmonic


class FramePoint(BaseModel):
    """
    A point of the slit plane together with the dressing parameter.

    t is the primitive coordinate; z = exp(t). Points built with from_z use
    the principal branch, from_t accepts any continued value of t.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    t: complex
    a: float
    z_terms: int

    @property
    def z(self) -> complex:
        return cmath.exp(self.t)

    @classmethod
    def from_t(cls, t: complex, a: float, z_terms: Optional[int] = None) -> "FramePoint":
        t = complex(t)
        if not math.isfinite(t.real) or not math.isfinite(t.imag):
            raise DomainError(f"t must be finite, got {t}")
        if z_terms is None:
            z_terms = z_terms_for(math.exp(t.real))
        return cls(t=t, a=float(a), z_terms=int(z_terms))

    @classmethod
    def from_z(cls, z: complex, a: float, z_terms: Optional[int] = None) -> "FramePoint":
        z = complex(z)
        if z == 0:
            raise DomainError("z = 0 is the singular point of the potential")
        return cls.from_t(cmath.log(z), a, z_terms)


class CanonicalFrames(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    L0: TruncatedLoop
    L: TruncatedLoop
    E: TruncatedLoop
    Z: TruncatedLoop


class FrameBundle(BaseModel):
    """Everything known in closed form at one point; `dressed` is γ0⁻¹·L."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    point: FramePoint
    gamma0: TruncatedLoop
    frames: CanonicalFrames
    dressed: TruncatedLoop


def series_f0(z: complex, budget: int, z_terms: Optional[int] = None) -> np.ndarray:
    """
    Coefficients of f0 = Σ z^i / ((i!)^2 λ^{2i}).

    Args:
        z: Point of the plane
        budget: Highest power of 1/λ that may be stored
        z_terms: Number of terms in z (defaults to the adaptive choice)

    Returns:
        Array c of length budget + 1 with f0 = Σ_j c[j] λ^{-j}

    Raises:
        BudgetExceeded: If budget < 2 * z_terms
    """
    n = z_terms or z_terms_for(z)
    if budget < 2 * n:
        raise BudgetExceeded(f"λ-power budget {budget} cannot hold {n} terms")
    weights, _ = _frobenius_weights(complex(z), n)
    out = np.zeros(budget + 1, dtype=complex)
    out[0:2 * n:2] = weights
    return out


def series_f1(z: complex, budget: int, z_terms: Optional[int] = None) -> np.ndarray:
    """Coefficients of f1 = −(2/λ) Σ_{i≥1} H_i z^i / ((i!)^2 λ^{2i}), same layout as series_f0."""
    n = z_terms or z_terms_for(z)
    if budget < 2 * n:
        raise BudgetExceeded(f"λ-power budget {budget} cannot hold {n} terms")
    weights, harmonic = _frobenius_weights(complex(z), n)
    out = np.zeros(budget + 1, dtype=complex)
    out[1:2 * n:2] = -2.0 * harmonic * weights
    return out


def evaluate_series(coeffs: np.ndarray, lam: complex) -> complex:
    """Σ_j c[j] λ^{-j}."""
    return complex(np.sum(coeffs * np.power(complex(lam), -np.arange(len(coeffs)))))


def _frobenius_L0(z: complex, n: int) -> TruncatedLoop:
    weights, harmonic = _frobenius_weights(complex(z), n)
    lo = -(2 * n - 1)
    coeffs = np.zeros((2 * n, 2, 2), dtype=complex)
    for i in range(n):
        even = -2 * i - lo
        coeffs[even, 0, 0] = weights[i]
        coeffs[even, 1, 1] = weights[i] * (1.0 - 2.0 * i * harmonic[i])
        if i >= 1:
            # λ∂f0 and f1 enter at the odd powers 1 - 2i and -2i - 1
            coeffs[even + 1, 0, 1] = i * weights[i]
            coeffs[even - 1, 1, 0] = -2.0 * harmonic[i] * weights[i]
    return TruncatedLoop(lo, coeffs)


def canonical_L0(point: FramePoint) -> TruncatedLoop:
    """L0 = [[f0, λ∂f0], [f1, f0 + λ∂f1]] with ∂ = z d/dz."""
    return _frobenius_L0(point.z, point.z_terms)


def dpw_potential(z: complex, lam: complex) -> np.ndarray:
    """Coefficient of dz in η."""
    return np.array([[0.0, 1.0], [1.0 / z, 0.0]], dtype=complex) / lam


def nilpotent_exponential(t: complex) -> TruncatedLoop:
    """exp(tN/λ) = I + (t/λ)N."""
    return TruncatedLoop(-1, [[[0, 0], [t, 0]], [[1, 0], [0, 1]]])


def gamma0(a: float, allow_negative: bool = False) -> TruncatedLoop:
    """
    The dressing loop γ0(a) = [[1/√a, −λ/√a], [0, √a]].

    With allow_negative the second family [[1/√−a, λ/√−a], [0, √−a]] is
    returned for a < 0.

    Raises:
        DomainError: If a == 0, or a < 0 without allow_negative
    """
    if a > 0:
        root = math.sqrt(a)
        return TruncatedLoop(0, [[[1 / root, 0], [0, root]], [[0, -1 / root], [0, 0]]])
    if a < 0 and allow_negative:
        root = math.sqrt(-a)
        return TruncatedLoop(0, [[[1 / root, 0], [0, root]], [[0, 1 / root], [0, 0]]])
    raise DomainError(f"dressing parameter must be positive, got {a}")


def model_E(a: float, t: complex, config: Optional[LoopConfig] = None,
            allow_negative: bool = False) -> TruncatedLoop:
    """E = γ0(a)⁻¹·exp(tN/λ)."""
    return compose(invert(gamma0(a, allow_negative), config), nilpotent_exponential(t), config)


def model_Z(a: float, t: complex, allow_negative: bool = False) -> TruncatedLoop:
    """Z = ρ·[[a + t + t̄, λ], [−1/λ, 0]] with ρ the sign of a."""
    if a == 0 or (a < 0 and not allow_negative):
        raise DomainError(f"dressing parameter must be positive, got {a}")
    rho = 1.0 if a > 0 else -1.0
    s = a + 2.0 * complex(t).real
    return TruncatedLoop(-1, [
        [[0, 0], [-rho, 0]],
        [[rho * s, 0], [0, 0]],
        [[0, rho], [0, 0]],
    ])


def canonical_frames(point: FramePoint, config: Optional[LoopConfig] = None,
                     allow_negative: bool = False) -> CanonicalFrames:
    L0 = canonical_L0(point)
    L = compose(nilpotent_exponential(point.t), L0, config)
    E = model_E(point.a, point.t, config, allow_negative)
    Z = compose(invert(apply_C(E, config), config), E, config)
    return CanonicalFrames(L0=L0, L=L, E=E, Z=Z)


def frame_bundle(point: FramePoint, config: Optional[LoopConfig] = None,
                 allow_negative: bool = False) -> FrameBundle:
    frames = canonical_frames(point, config, allow_negative)
    return FrameBundle(
        point=point,
        gamma0=gamma0(point.a, allow_negative),
        frames=frames,
        dressed=compose(frames.E, frames.L0, config),
    )


def homogeneity_delta(a: float, t: complex, eps: complex,
                      config: Optional[LoopConfig] = None,
                      dressing: Optional[TruncatedLoop] = None) -> TruncatedLoop:
    """
    δ(ε) = Ẽ·d⁻¹·E⁻¹·d with Ẽ(z, λ) = E(ε²z, ελ) and d = diag(1, ε).

    log(ε²z) is taken as Log ε² + t. Passing `dressing` replaces γ0(a).
    """
    eps = complex(eps)
    g = dressing if dressing is not None else gamma0(a)
    g_inv = invert(g, config)

    def frame(tt: complex) -> TruncatedLoop:
        return compose(g_inv, nilpotent_exponential(tt), config)

    E = frame(t)
    shifted = frame(t + cmath.log(eps * eps)).rescale_lambda(eps)
    d = TruncatedLoop.constant(np.diag([1.0, eps]))
    d_inv = TruncatedLoop.constant(np.diag([1.0, 1.0 / eps]))
    delta = compose(compose(shifted, d_inv, config), compose(invert(E, config), d, config), config)
    logger.debug(f"homogeneity defect built for a={a}, t={t}, eps={eps}")
    return delta
