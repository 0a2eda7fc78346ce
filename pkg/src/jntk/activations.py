"""Activation functions with first and second derivatives.

Supported kinds: ``identity``, ``erf``, ``gelu`` and ``square``.  GeLU uses
the exact normal-CDF form ``z * Phi(z)`` (not the tanh approximation), so its
derivatives are available in closed form:

    d/dz  [z * Phi(z)] = Phi(z) + z * pdf(z)
    d2/dz2[z * Phi(z)] = 2 * pdf(z) - z**2 * pdf(z)

Every activation can be normalised so that ``E[phi(z)^2] = 1`` for a standard
normal ``z``.  The normalisation constant is obtained numerically with
Gauss-Hermite quadrature instead of being hard-coded, so adding a new kind
does not require a closed form.  ``square`` is special: it fails the
Lipschitz requirements that the deep-kernel recursions rely on, so it is
flagged ``oracle_only`` and refused at depth > 1 unless explicitly forced.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf as _erf, ndtr as _ndtr

from .errors import ConfigError, NumericError
from .quadrature import gauss_hermite

logger = logging.getLogger(__name__)

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)


def _pdf(z):
    return np.exp(-0.5 * np.square(z)) / _SQRT_2PI


_RAW = {
    "identity": (
        lambda z: np.asarray(z, dtype=float),
        lambda z: np.ones_like(np.asarray(z, dtype=float)),
        lambda z: np.zeros_like(np.asarray(z, dtype=float)),
    ),
    "erf": (
        lambda z: _erf(z),
        lambda z: _TWO_OVER_SQRT_PI * np.exp(-np.square(z)),
        lambda z: -2.0 * z * _TWO_OVER_SQRT_PI * np.exp(-np.square(z)),
    ),
    "gelu": (
        lambda z: z * _ndtr(z),
        lambda z: _ndtr(z) + z * _pdf(z),
        lambda z: (2.0 - np.square(z)) * _pdf(z),
    ),
    "square": (
        lambda z: np.square(z),
        lambda z: 2.0 * np.asarray(z, dtype=float),
        lambda z: np.full_like(np.asarray(z, dtype=float), 2.0),
    ),
}

ACTIVATION_KINDS = tuple(sorted(_RAW))


@dataclass(frozen=True)
class Activation:
    """An activation ``phi(z) = scale * raw(z)`` with its two derivatives.

    Immutable after construction; safe to share between concurrent
    evaluations.
    """

    kind: str
    scale: float

    @property
    def oracle_only(self) -> bool:
        """True for activations that violate the smoothness assumptions."""
        return self.kind == "square"

    def value(self, z):
        return self.scale * _RAW[self.kind][0](z)

    def deriv(self, z):
        return self.scale * _RAW[self.kind][1](z)

    def second(self, z):
        return self.scale * _RAW[self.kind][2](z)

    def eval(self, z):
        """Return ``(phi(z), phi'(z), phi''(z))`` in one call."""
        f, df, d2f = _RAW[self.kind]
        return self.scale * f(z), self.scale * df(z), self.scale * d2f(z)


def _second_moment(kind: str, order: int) -> float:
    rule = gauss_hermite(order)
    vals = _RAW[kind][0](rule.nodes)
    return float(np.dot(rule.weights, np.square(vals)))


def make_activation(kind: str, normalise: bool = True, order: int = 64) -> Activation:
    """Build an activation, optionally normalised to unit second moment.

    With ``normalise`` the scale is ``1 / sqrt(E[raw(z)^2])``, computed by
    Gauss-Hermite quadrature at ``order`` nodes and cross-checked at double
    the node count; disagreement beyond 1e-12 raises ``NumericError``.
    """
    if kind not in _RAW:
        raise ConfigError(
            f"unknown activation {kind!r}; expected one of {ACTIVATION_KINDS}"
        )
    if not normalise:
        return Activation(kind, 1.0)
    m2 = _second_moment(kind, order)
    m2_check = _second_moment(kind, 2 * order)
    scale = 1.0 / math.sqrt(m2)
    scale_check = 1.0 / math.sqrt(m2_check)
    if abs(scale - scale_check) > 1e-12:
        raise NumericError(
            f"normalisation for {kind!r} did not stabilise: "
            f"{scale!r} at order {order} vs {scale_check!r} at {2 * order}"
        )
    logger.debug("activation %s normalisation scale = %.15g", kind, scale)
    return Activation(kind, scale)
