"""
Birkhoff and SU(1,1) Iwasawa factorization of truncated loops.

Birkhoff: X = X₋·X₊ with X₋ = I + O(1/λ) and X₊ holomorphic in the disk.
The factor Y₊ = X₊⁻¹ is found from the block-Toeplitz system
[X·Y₊]_0 = I, [X·Y₊]_k = 0 for k ≥ 1, solved in the least-squares sense.

Iwasawa: L = F·w·B with F real (C(F) = F), w ∈ {I, w} the open-orbit
representative and B holomorphic with constant term diag(k, 1/k), k > 0.
It is read off from the Birkhoff factorization of C(L)⁻¹·L.
"""
from __future__ import annotations

import math
from enum import Enum
from typing import Optional

import numpy as np
import scipy.linalg
from loguru import logger
from pydantic import BaseModel, ConfigDict

from ttstar.config import LoopConfig
from ttstar.errors import NonRealResult, NotTwisted, OffBigCell, OrbitBoundary, DomainError
from ttstar.loops import (
    TruncatedLoop,
    _config,
    apply_C,
    compose,
    invert,
)
from ttstar.qc_frames import model_E

MAX_CONDITION = 1e12
# |a + t + t̄| at or below this (relative) value is treated as the orbit boundary
BOUNDARY_TOL = 1e-12


class Orbit(str, Enum):
    IDENTITY = "identity"
    W = "w"


W_LOOP = TruncatedLoop(-1, [[[0, 0], [-1, 0]], [[0, 0], [0, 0]], [[0, 1], [0, 0]]])
W_INVERSE = -W_LOOP


def orbit_representative(orbit: Orbit) -> TruncatedLoop:
    return W_LOOP if orbit == Orbit.W else TruncatedLoop.identity()


def _orbit_inverse(orbit: Orbit) -> TruncatedLoop:
    return W_INVERSE if orbit == Orbit.W else TruncatedLoop.identity()


class BirkhoffFactors(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    X_minus: TruncatedLoop
    X_plus: TruncatedLoop
    residual: float
    condition: float
    degree: int


class IwasawaFactors(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    F: TruncatedLoop
    orbit: Orbit
    B: TruncatedLoop
    k: float
    residual: float
    condition: float = 1.0

    @property
    def w(self) -> TruncatedLoop:
        return orbit_representative(self.orbit)


def _toeplitz_system(X: TruncatedLoop, degree: int):
    """Block rows k = 0..hi+d, block columns j = 0..d, block (k, j) = X_{k-j}."""
    rows = max(X.hi, 0) + degree + 1
    k = np.arange(rows)[:, None]
    j = np.arange(degree + 1)[None, :]
    blocks = X.coeff_table(k - j)
    matrix = blocks.transpose(0, 2, 1, 3).reshape(2 * rows, 2 * (degree + 1))
    rhs = np.zeros((2 * rows, 2), dtype=complex)
    rhs[:2] = np.eye(2)
    return matrix, rhs


def _birkhoff_at_degree(X: TruncatedLoop, degree: int, config: LoopConfig) -> BirkhoffFactors:
    matrix, rhs = _toeplitz_system(X, degree)
    solution, _, _, singular_values = scipy.linalg.lstsq(matrix, rhs)
    smallest = float(singular_values[-1]) if singular_values.size else 0.0
    condition = float(singular_values[0]) / smallest if smallest > 0 else math.inf
    if condition > MAX_CONDITION:
        raise OffBigCell(f"Toeplitz condition {condition:.3e} exceeds {MAX_CONDITION:.0e}",
                         condition=condition)

    loop_config = config.with_degree(max(degree, config.degree))
    y_plus = TruncatedLoop(0, solution.reshape(degree + 1, 2, 2))
    x_minus = compose(X, y_plus, loop_config).truncated(None, 0)
    x_plus = invert(y_plus, loop_config).truncated(0, None)
    residual = compose(x_minus, x_plus, loop_config).distance(X)
    if residual > config.tol_residual:
        raise OffBigCell(f"Birkhoff residual {residual:.3e} at degree {degree}",
                         condition=condition, residual=residual, retryable=True)
    return BirkhoffFactors(X_minus=x_minus, X_plus=x_plus, residual=residual,
                           condition=condition, degree=degree)


def birkhoff(X: TruncatedLoop, config: Optional[LoopConfig] = None) -> BirkhoffFactors:
    """
    Big-cell Birkhoff factorization X = X₋·X₊.

    Args:
        X: Unimodular loop
        config: Truncation and tolerance parameters

    Returns:
        BirkhoffFactors with residual and Toeplitz condition estimate

    Raises:
        OffBigCell: If the system is too ill-conditioned, or the residual
            still fails after one retry at doubled degree
        SingularLoop: If X₊ cannot be inverted
    """
    config = _config(config)
    try:
        return _birkhoff_at_degree(X, config.degree, config)
    except OffBigCell as exc:
        if not exc.retryable:
            raise
        logger.debug(f"Retrying Birkhoff factorization at degree {2 * config.degree}: {exc}")
        return _birkhoff_at_degree(X, 2 * config.degree, config)


def _reality_tolerance(F: TruncatedLoop, config: LoopConfig) -> float:
    return 100.0 * config.tol_residual * max(1.0, F.max_norm()) ** 2


def iwasawa_su11(L: TruncatedLoop, config: Optional[LoopConfig] = None) -> IwasawaFactors:
    """
    Two-orbit Iwasawa factorization L = F·w·B.

    Args:
        L: Unimodular twisted loop
        config: Truncation and tolerance parameters

    Returns:
        IwasawaFactors with the orbit flag, k > 0 and the reconstruction residual

    Raises:
        NotTwisted: If L is not fixed by σ
        OffBigCell: On the boundary between the open orbits
        NonRealResult: If the computed F fails C(F) = F
    """
    config = _config(config)
    if not L.is_twisted(config.tol_residual):
        raise NotTwisted("input loop is not fixed by the twisting involution")

    X = compose(invert(apply_C(L, config), config), L, config)
    factors = birkhoff(X, config)
    s = complex(factors.X_plus.coeff(0)[0, 0])
    if abs(s.imag) > 1e-6 * max(1.0, abs(s)):
        raise NonRealResult(f"middle factor sign entry is not real: {s}")
    if s.real == 0.0:
        raise OffBigCell("middle factor vanishes")

    sign = 1.0 if s.real > 0 else -1.0
    orbit = Orbit.IDENTITY if sign > 0 else Orbit.W
    k = math.sqrt(abs(s.real))
    scale = TruncatedLoop.constant(sign * np.diag([1.0 / k, k]))
    B = compose(scale, factors.X_plus, config)
    F = compose(compose(L, invert(B, config), config), _orbit_inverse(orbit), config)

    defect = apply_C(F, config).distance(F)
    if defect > _reality_tolerance(F, config):
        raise NonRealResult(f"C(F) differs from F by {defect:.3e}")
    residual = compose(compose(F, orbit_representative(orbit), config), B, config).distance(L)
    return IwasawaFactors(F=F, orbit=orbit, B=B, k=k, residual=residual,
                          condition=factors.condition)


def model_iwasawa(a: float, t: complex, config: Optional[LoopConfig] = None,
                  allow_negative: bool = False) -> IwasawaFactors:
    """
    Exact factorization of E = γ0(a)⁻¹·exp(tN/λ).

    With s = a + t + t̄ and κ = √|s|, B is [[κ, λ/κ], [0, 1/κ]] or
    [[κ, −λ/κ], [0, 1/κ]]; the orbit is Identity when ρs > 0 (ρ the sign of a).

    Raises:
        OrbitBoundary: If s vanishes
        DomainError: If a ≤ 0 without allow_negative
    """
    if a == 0 or (a < 0 and not allow_negative):
        raise DomainError(f"dressing parameter must be positive, got {a}")
    s = a + 2.0 * complex(t).real
    if abs(s) <= BOUNDARY_TOL * max(1.0, abs(a), abs(2.0 * complex(t).real)):
        raise OrbitBoundary(f"a + t + t̄ = {s:.3e} lies on the orbit boundary")
    kappa = math.sqrt(abs(s))
    B = TruncatedLoop(0, [
        [[kappa, 0], [0, 1 / kappa]],
        [[0, (1.0 if s > 0 else -1.0) / kappa], [0, 0]],
    ])
    orbit = Orbit.IDENTITY if (s > 0) == (a > 0) else Orbit.W
    E = model_E(a, t, config, allow_negative)
    F = compose(compose(E, invert(B, config), config), _orbit_inverse(orbit), config)
    residual = compose(compose(F, orbit_representative(orbit), config), B, config).distance(E)
    return IwasawaFactors(F=F, orbit=orbit, B=B, k=kappa, residual=residual)


def flag_disk_coordinate(a: float, t: complex) -> complex:
    """E·[1:0] = [a + t : t] as the affine point t/(a + t); infinite when a + t = 0."""
    denominator = a + complex(t)
    if denominator == 0:
        return complex(math.inf, 0.0)
    return complex(t) / denominator


def model_orbit(a: float, t: complex) -> Orbit:
    """
    Orbit from the flag picture: 1 − |t/(a+t)|² = a(a + t + t̄)/|a + t|²,
    so the base flag stays in the unit disk exactly on the Identity orbit.
    """
    if abs(flag_disk_coordinate(a, t)) < 1.0:
        return Orbit.IDENTITY
    return Orbit.W
