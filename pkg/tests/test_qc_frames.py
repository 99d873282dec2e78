import cmath
import math

import numpy as np
import pytest

from ttstar.errors import BudgetExceeded, DomainError
from ttstar.loops import (
    TruncatedLoop,
    apply_C,
    compose,
    evaluate,
    invert,
    lambda_derivative,
)
from ttstar.qc_frames import (
    A_SMOOTH,
    EULER_GAMMA,
    FramePoint,
    canonical_frames,
    canonical_L0,
    dpw_potential,
    evaluate_series,
    frame_bundle,
    gamma0,
    homogeneity_delta,
    model_E,
    model_Z,
    series_f0,
    series_f1,
    z_terms_for,
)

I = TruncatedLoop.identity()


def test_smooth_parameter_is_four_gamma():
    assert A_SMOOTH == pytest.approx(2.3088626596, abs=1e-10)
    assert EULER_GAMMA == pytest.approx(0.5772156649015329, abs=1e-16)


def test_series_f0_values():
    """f0 = 1 at z = 0; at z = 1, λ = 1 it is the Bessel value I0(2)."""
    zero = series_f0(0.0, budget=8)
    assert zero[0] == 1.0
    assert np.all(zero[1:] == 0.0)

    coeffs = series_f0(1.0, budget=64)
    assert evaluate_series(coeffs, 1.0).real == pytest.approx(2.2795853023360673, abs=1e-12)

    z = 0.3 + 0.1j
    first = series_f0(z, budget=64)
    assert first[1] == 0.0
    assert first[2] == pytest.approx(z)


def test_series_f1_harmonic_coefficients():
    """Odd coefficients are −2 H_i z^i / (i!)^2."""
    assert np.all(series_f1(0.0, budget=8) == 0.0)

    z = 0.7
    coeffs = series_f1(z, budget=64, z_terms=21)
    assert coeffs[1] == 0.0
    assert coeffs[3] == pytest.approx(-2.0 * z)
    for i in range(1, 21):
        harmonic = sum(1.0 / j for j in range(1, i + 1))
        expected = -2.0 * harmonic * z ** i / math.factorial(i) ** 2
        assert coeffs[2 * i + 1] == pytest.approx(expected, rel=1e-13, abs=1e-300)
        assert coeffs[2 * i] == 0.0


def test_series_budget_exceeded():
    assert z_terms_for(0.5) >= 2
    with pytest.raises(BudgetExceeded):
        series_f0(0.5, budget=3)
    with pytest.raises(BudgetExceeded):
        series_f1(0.5, budget=3)


def test_frame_point_rejects_origin():
    with pytest.raises(DomainError):
        FramePoint.from_z(0.0, 1.0)
    point = FramePoint.from_z(-1.0, 1.0)
    assert point.t.imag == pytest.approx(math.pi)


def test_L0_tends_to_identity():
    """Near z = 0 the canonical frame is the identity."""
    point = FramePoint.from_z(1e-300, 1.0)
    assert canonical_L0(point).distance(I) < 1e-15


def test_L0_is_unimodular():
    rng = np.random.default_rng(7)
    for _ in range(5):
        z = complex(*rng.uniform(-1.4, 1.4, size=2))
        L0 = canonical_L0(FramePoint.from_z(z, 1.0))
        lam = np.exp(1j * rng.uniform(0, 2 * np.pi))
        assert abs(np.linalg.det(evaluate(L0, lam)) - 1.0) < 1e-10


def test_L_solves_the_potential():
    """L⁻¹·dL/dz matches η at a sample λ (finite differences in z)."""
    a, z, h = 1.0, 0.3 + 0.2j, 1e-6
    lam = np.exp(0.4j)

    def L_at(w):
        return evaluate(canonical_frames(FramePoint.from_z(w, a)).L, lam)

    derivative = (L_at(z + h) - L_at(z - h)) / (2 * h)
    potential = np.linalg.inv(L_at(z)) @ derivative
    assert np.abs(potential - dpw_potential(z, lam)).max() < 1e-7


def test_L0_homogeneity():
    """L0(ε²z, ελ) = d⁻¹·L0(z, λ)·d with d = diag(1, ε)."""
    z = 0.1
    for eps in (1j, cmath.exp(1j * math.pi / 3)):
        moved = canonical_L0(FramePoint.from_z(eps * eps * z, 1.0)).rescale_lambda(eps)
        d_inv = np.diag([1.0, 1.0 / eps])
        expected = canonical_L0(FramePoint.from_z(z, 1.0)).conjugated(d_inv)
        assert moved.distance(expected) < 1e-12


def test_potential_homogeneity():
    z, lam = 0.25 - 0.1j, np.exp(0.9j)
    for eps in (1j, cmath.exp(0.4j)):
        d = np.diag([1.0, eps])
        moved = eps * eps * dpw_potential(eps * eps * z, eps * lam)
        assert np.allclose(moved, np.linalg.inv(d) @ dpw_potential(z, lam) @ d, atol=1e-14)


def test_gamma0_examples():
    g = gamma0(1.0)
    assert np.allclose(g.coeff(0), np.eye(2))
    assert np.allclose(g.coeff(1), [[0, -1], [0, 0]])
    assert gamma0(A_SMOOTH).is_twisted()
    assert gamma0(A_SMOOTH).is_unimodular()
    with pytest.raises(DomainError):
        gamma0(0.0)
    with pytest.raises(DomainError):
        gamma0(-2.0)
    negative = gamma0(-2.0, allow_negative=True)
    assert np.allclose(negative.coeff(1), [[0, 1 / math.sqrt(2.0)], [0, 0]])


def test_model_Z_examples():
    """Z on the unit circle and inside it for a = 1."""
    on_circle = model_Z(1.0, 0.7j)
    assert np.allclose(on_circle.coeff(0), [[1, 0], [0, 0]])
    assert np.allclose(on_circle.coeff(1), [[0, 1], [0, 0]])
    assert np.allclose(on_circle.coeff(-1), [[0, 0], [-1, 0]])

    inside = model_Z(1.0, -1.0)
    assert np.allclose(inside.coeff(0), [[-1, 0], [0, 0]])

    flipped = model_Z(-2.0, 0.5, allow_negative=True)
    assert np.allclose(flipped.coeff(0), [[1.0, 0], [0, 0]])
    with pytest.raises(DomainError):
        model_Z(-2.0, 0.5)


def test_model_Z_matches_numeric_Z():
    """C(E)⁻¹·E equals the closed form at random points."""
    rng = np.random.default_rng(8)
    for _ in range(50):
        a = float(rng.uniform(0.1, 10.0))
        t = complex(rng.uniform(-3.0, 1.0), rng.uniform(-math.pi, math.pi))
        frames = canonical_frames(FramePoint.from_t(t, a))
        expected = model_Z(a, t)
        assert frames.Z.distance(expected) < 1e-12 * max(1.0, expected.max_norm())
        assert apply_C(frames.Z).distance(invert(frames.Z)) < 1e-10


def test_frame_bundle_dressing():
    point = FramePoint.from_z(0.2 + 0.05j, A_SMOOTH)
    bundle = frame_bundle(point)
    assert bundle.dressed.distance(compose(invert(bundle.gamma0), bundle.frames.L)) < 1e-12
    assert bundle.dressed.is_twisted()
    assert bundle.frames.E.distance(model_E(A_SMOOTH, point.t)) < 1e-14


def test_homogeneity_delta_is_real():
    """δ(ε) is fixed by C for the dressed frame and not for the undressed one."""
    a, t = 1.0, cmath.log(0.2)
    assert homogeneity_delta(a, t, 1.0).distance(I) < 1e-12

    for eps in (1j, cmath.exp(1j * math.pi / 3)):
        delta = homogeneity_delta(a, t, eps)
        assert apply_C(delta).distance(delta) < 1e-10

    bare = homogeneity_delta(a, t, 1j, dressing=I)
    assert apply_C(bare).distance(bare) > 1e-3


def test_lambda_derivative_of_frame_matches_differences():
    E = model_E(2.0, 0.1 + 0.3j)
    lam, h = np.exp(1.1j), 1e-6
    fd = (evaluate(E, lam * np.exp(1j * h)) - evaluate(E, lam * np.exp(-1j * h))) / (2j * h * lam)
    assert np.abs(evaluate(lambda_derivative(E), lam) - fd).max() < 1e-7
