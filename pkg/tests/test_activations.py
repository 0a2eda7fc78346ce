"""Activation values, derivatives, and unit-second-moment normalisation."""

import math

import numpy as np
import pytest

from jntk import ConfigError, make_activation
from jntk.quadrature import gauss_hermite


def test_identity_scale_is_one():
    act = make_activation("identity")
    assert act.scale == pytest.approx(1.0, abs=1e-12)


def test_square_scale_is_inverse_sqrt_three():
    # fourth moment of a standard normal is 3
    act = make_activation("square")
    assert act.scale == pytest.approx(1.0 / math.sqrt(3.0), abs=1e-12)


def test_erf_scale_matches_arcsine_identity():
    # E[erf(z)^2] = (2/pi) * arcsin(2/3) for standard normal z
    expected = 1.0 / math.sqrt(2.0 / math.pi * math.asin(2.0 / 3.0))
    act = make_activation("erf")
    assert act.scale == pytest.approx(expected, abs=1e-10)
    assert act.scale == pytest.approx(1.4672, abs=5e-4)


def test_unnormalised_scale_is_one():
    for kind in ("identity", "erf", "gelu", "square"):
        assert make_activation(kind, normalise=False).scale == 1.0


def test_unknown_kind_rejected():
    with pytest.raises(ConfigError):
        make_activation("relu")


def test_eval_identity():
    act = make_activation("identity", normalise=False)
    assert act.eval(2.0) == (2.0, 1.0, 0.0)


def test_eval_square():
    act = make_activation("square", normalise=False)
    assert act.eval(3.0) == (9.0, 6.0, 2.0)


def test_eval_gelu_at_zero():
    act = make_activation("gelu", normalise=False)
    f, df, d2f = act.eval(0.0)
    assert f == pytest.approx(0.0, abs=1e-15)
    assert df == pytest.approx(0.5, abs=1e-12)
    assert d2f == pytest.approx(2.0 / math.sqrt(2.0 * math.pi), abs=1e-12)


@pytest.mark.parametrize("kind", ["identity", "erf", "gelu", "square"])
def test_derivatives_match_finite_differences(kind):
    act = make_activation(kind)
    z = np.linspace(-4.0, 4.0, 81)
    h = 1e-5
    fd_first = (act.value(z + h) - act.value(z - h)) / (2 * h)
    fd_second = (act.deriv(z + h) - act.deriv(z - h)) / (2 * h)
    denom1 = np.maximum(np.abs(act.deriv(z)), 1.0)
    denom2 = np.maximum(np.abs(act.second(z)), 1.0)
    assert np.max(np.abs(fd_first - act.deriv(z)) / denom1) <= 1e-6
    assert np.max(np.abs(fd_second - act.second(z)) / denom2) <= 1e-6


@pytest.mark.parametrize("kind", ["identity", "erf", "gelu", "square"])
def test_normalised_second_moment_is_one(kind):
    # independent check at a higher node count than the constructor uses
    act = make_activation(kind)
    rule = gauss_hermite(160)
    moment = float(np.dot(rule.weights, np.square(act.value(rule.nodes))))
    assert moment == pytest.approx(1.0, abs=1e-10)


def test_values_finite_on_wide_range():
    z = np.linspace(-30.0, 30.0, 301)
    for kind in ("identity", "erf", "gelu", "square"):
        act = make_activation(kind)
        for part in act.eval(z):
            assert np.all(np.isfinite(part))


def test_square_flagged_oracle_only():
    assert make_activation("square").oracle_only
    assert not make_activation("gelu").oracle_only
