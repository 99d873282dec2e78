import math

import numpy as np
import pytest
from scipy import special

from ttstar.errors import DomainError, SeedOutOfRegime, ToleranceUnachievable
from ttstar.qc_frames import A_SMOOTH
from ttstar.services.painleve3 import (
    CLASSIFIER_RESOLUTION,
    PainleveService,
    SingularityKind,
    asymptotic_y,
    growth_fraction,
    inverse_transform,
    painleve_residual,
    piii_seed,
    pointwise_residual,
    transform_chain,
)

# Initialize service
painleve_service = PainleveService(tol=1e-10)


def test_transform_chain_example():
    point = transform_chain(1.0 / 16.0, 0.0)
    assert point.x == pytest.approx(1.0)
    assert point.v == pytest.approx(-3.0 * math.log(2.0))
    assert point.y == pytest.approx(0.125)

    back = inverse_transform(point.x, point.v)
    assert back.r == pytest.approx(1.0 / 16.0)
    assert back.u == pytest.approx(0.0, abs=1e-14)

    with pytest.raises(DomainError):
        transform_chain(0.0, 1.0)


def test_seed_values():
    a, x0 = A_SMOOTH, 1e-3
    q = a + 4.0 * math.log(x0) - 4.0 * math.log(4.0)
    v0, w0 = piii_seed(a, x0)
    assert math.exp(v0) == pytest.approx(-0.25 * x0 * q, rel=1e-14)
    assert w0 == pytest.approx(1.0 / x0 + 4.0 / (x0 * q), rel=1e-14)
    assert math.exp(v0) == pytest.approx(asymptotic_y(a, x0), rel=1e-14)


def test_seed_errors():
    with pytest.raises(DomainError):
        piii_seed(A_SMOOTH, 0.0)
    with pytest.raises(DomainError):
        piii_seed(A_SMOOTH, 0.1)
    with pytest.raises(SeedOutOfRegime):
        piii_seed(60.0, 1e-2)


def test_seed_is_self_consistent():
    """Refitting a from y(2·x0) recovers the seed parameter."""
    a, x0 = A_SMOOTH, 1e-4
    trace = painleve_service.integrate(piii_seed(a, x0), (x0, 2 * x0))
    x = 2 * x0
    y = math.exp(trace.evaluate(x)[0])
    refit = -4.0 * y / x - 4.0 * math.log(x) + 4.0 * math.log(4.0)
    assert refit == pytest.approx(a, abs=1e-3)


def test_trivial_solution():
    """v ≡ 0 is the cylinder-like solution y ≡ 1."""
    trace = painleve_service.integrate((0.0, 0.0), (1e-4, 20.0))
    assert not trace.status.singular
    assert trace.status.x_max == 20.0
    assert np.abs(trace.v).max() < 1e-12
    assert np.allclose(trace.y, 1.0)


def test_smooth_trace():
    trace = painleve_service.trace(A_SMOOTH, x_max=20.0, x0=1e-3)
    assert not trace.status.singular
    assert trace.status.x_max == 20.0
    assert trace.status.label == "smooth"
    assert np.all(trace.y > 0)
    v3, v5, v7 = (abs(trace.evaluate(x)[0]) for x in (3.0, 5.0, 7.0))
    assert v3 > v5 > v7
    assert painleve_residual(trace) <= 10 * trace.tol
    assert pointwise_residual(trace) <= 1e-6


def test_singular_traces():
    """Below 4γ the trace blows up to +∞, above it to −∞."""
    low = painleve_service.classify(1.0)
    assert low.singular
    assert low.kind == SingularityKind.V_BLOW_UP_PLUS
    assert low.x_singular < 20.0
    assert low.bracket[0] <= low.x_singular <= low.bracket[1]
    assert low.bracket[1] - low.bracket[0] <= 1e-8

    high = painleve_service.classify(4.0)
    assert high.singular
    assert high.kind == SingularityKind.V_BLOW_UP_MINUS
    assert high.x_singular < 20.0
    assert high.bracket[0] <= high.x_singular <= high.bracket[1]
    assert high.bracket[1] - high.bracket[0] <= 1e-8


def test_classification_is_stable_across_seeds():
    for a in (1.0, 4.0):
        statuses = [painleve_service.classify(a, x0=x0) for x0 in (1e-5, 1e-4, 1e-3)]
        assert all(status.singular for status in statuses)
        assert max(s.x_singular for s in statuses) - min(s.x_singular for s in statuses) < 1e-3

    for x0 in (1e-5, 1e-4, 1e-3):
        assert not painleve_service.classify(A_SMOOTH, x0=x0).singular


def test_truncated_smooth_parameter_is_smooth():
    assert painleve_service.classify(2.30886).label == "smooth"


def test_classifier_resolution_window():
    """Parameters just inside the window around 4γ finish smooth; one just outside blows up."""
    for a in (2.3088, 2.30887):
        assert abs(a - A_SMOOTH) < CLASSIFIER_RESOLUTION
        assert not painleve_service.classify(a).singular
    outside = painleve_service.classify(2.309)
    assert 2.309 - A_SMOOTH > CLASSIFIER_RESOLUTION
    assert outside.singular
    assert outside.kind == SingularityKind.V_BLOW_UP_MINUS


def test_classify_rejects_nonpositive_parameter():
    with pytest.raises(DomainError):
        painleve_service.classify(-1.0)


def test_tolerance_range():
    with pytest.raises(ToleranceUnachievable):
        PainleveService(tol=1e-3)
    with pytest.raises(ToleranceUnachievable):
        painleve_service.trace(A_SMOOTH, tol=1e-14)


def test_tolerance_halving():
    """Halving the tolerance moves y by less than the coarser tolerance."""
    coarse = painleve_service.trace(A_SMOOTH, x_max=1.5, tol=1e-8)
    fine = painleve_service.trace(A_SMOOTH, x_max=1.5, tol=5e-9)
    abscissae = np.array([0.5, 1.0, 1.5])
    y_coarse = np.exp(coarse.evaluate(abscissae)[0])
    y_fine = np.exp(fine.evaluate(abscissae)[0])
    assert np.abs(y_coarse - y_fine).max() < 1e-8


def test_evaluate_outside_range():
    trace = painleve_service.trace(A_SMOOTH, x_max=1.0)
    with pytest.raises(DomainError):
        trace.evaluate(2.0)


def test_growth_fraction_modes():
    x = 2.0
    assert growth_fraction(x, 0.0, 0.0) == 0.0
    decaying = growth_fraction(x, special.k0(2 * x), -2.0 * special.k1(2 * x))
    assert decaying < 1e-12
    growing = growth_fraction(x, special.i0(2 * x), 2.0 * special.i1(2 * x))
    assert growing > 1e6


@pytest.mark.parametrize("a", [1.0, A_SMOOTH])
def test_crosscheck_against_factorization(a):
    """y = k²√r from the loop group agrees with the ODE trace."""
    report = painleve_service.crosscheck(a, [1e-4, 1e-3, 1e-2, 0.1])
    assert not report.status.singular
    assert len(report.rows) == 4
    assert report.max_rel_error < 1e-4


def test_crosscheck_small_r_limit():
    report = painleve_service.crosscheck(A_SMOOTH, [1e-6])
    row = report.rows[0]
    expected = asymptotic_y(A_SMOOTH, row.x)
    assert row.y_loop == pytest.approx(expected, rel=1e-3)
    assert row.y_ode == pytest.approx(expected, rel=1e-3)


def test_crosscheck_beyond_singularity():
    with pytest.raises(DomainError):
        painleve_service.crosscheck(1.0, [0.5])
