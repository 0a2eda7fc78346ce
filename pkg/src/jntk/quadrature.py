"""Gaussian expectations via tensorized Gauss-Hermite quadrature.

This module evaluates the low-dimensional expectations that the kernel
recursions are made of:

* ``expect_pair``:  E[a(u) b(v)] for a centred bivariate Gaussian (u, v);
* ``expect_mixed``: E[a(u) * w * b(v) * w'] (either linear factor optional)
  for a centred 4-dimensional Gaussian (u, v, w, w').

Nodes and weights follow the probabilists' convention: they integrate
against the standard normal density, so weights sum to one.  The mixed
expectation is reduced to a 2-D integral by Gaussian conditioning: given
(u, v), the pair (w, w') is Gaussian with mean linear in (u, v) and a
constant covariance S, hence

    E[w w' | u, v] = m_w(u, v) * m_w'(u, v) + S_ww'.

Degenerate (u, v) marginals (e.g. u = v when both kernel arguments
coincide) are handled by an eigenvalue-floored pseudo-inverse.
"""

from __future__ import annotations

import logging
from functools import lru_cache
from typing import Callable, NamedTuple

import numpy as np

from .errors import DomainError, NumericError

logger = logging.getLogger(__name__)

#: Eigenvalues of a marginal below this are treated as zero when inverting.
EIG_FLOOR = 1e-12

#: Relative tolerance for "PSD up to rounding" checks on covariances.
PSD_TOL = 1e-10


class QuadratureRule(NamedTuple):
    order: int
    nodes: np.ndarray
    weights: np.ndarray


@lru_cache(maxsize=None)
def gauss_hermite(order: int) -> QuadratureRule:
    """Probabilists' Gauss-Hermite rule with ``order`` nodes.

    Exact for polynomials of degree <= 2 * order - 1 against N(0, 1).
    """
    if not 1 <= order <= 256:
        raise DomainError(f"quadrature order must be in [1, 256], got {order}")
    try:
        nodes, weights = np.polynomial.hermite_e.hermegauss(order)
    except Exception as exc:  # root finder failed to converge
        raise NumericError(f"Hermite root finding failed at order {order}") from exc
    weights = weights / weights.sum()
    return QuadratureRule(order, nodes, weights)


def _check_cov(cov: np.ndarray, dim: int) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (dim, dim):
        raise DomainError(f"expected a {dim}x{dim} covariance, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, atol=1e-12, rtol=0.0):
        raise DomainError("covariance matrix is not symmetric")
    return 0.5 * (cov + cov.T)


def _whiten(cov2: np.ndarray) -> np.ndarray:
    """Factor L with L @ L.T = cov2, clamping tiny negative eigenvalues."""
    eigvals, eigvecs = np.linalg.eigh(cov2)
    scale = max(eigvals[-1], 1.0)
    if eigvals[0] < -PSD_TOL * scale:
        raise DomainError(f"covariance is not PSD: min eigenvalue {eigvals[0]!r}")
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def _grid(cov2: np.ndarray, rule: QuadratureRule):
    """Whitened tensor grid: arrays u, v and the combined weights."""
    lmat = _whiten(cov2)
    z1 = np.repeat(rule.nodes, rule.order)
    z2 = np.tile(rule.nodes, rule.order)
    u = lmat[0, 0] * z1 + lmat[0, 1] * z2
    v = lmat[1, 0] * z1 + lmat[1, 1] * z2
    w = np.repeat(rule.weights, rule.order) * np.tile(rule.weights, rule.order)
    return u, v, w


def expect_pair(
    a: Callable[[np.ndarray], np.ndarray],
    b: Callable[[np.ndarray], np.ndarray],
    cov: np.ndarray,
    rule: QuadratureRule,
) -> float:
    """E[a(u) b(v)] for (u, v) ~ N(0, cov)."""
    cov = _check_cov(cov, 2)
    u, v, w = _grid(cov, rule)
    return float(np.dot(w, a(u) * b(v)))


def expect_mixed(
    a: Callable[[np.ndarray], np.ndarray],
    b: Callable[[np.ndarray], np.ndarray],
    cov4: np.ndarray,
    rule: QuadratureRule,
    a_factor: bool = True,
    b_factor: bool = True,
) -> float:
    """E[a(u) * w^{1{a_factor}} * b(v) * w'^{1{b_factor}}].

    ``cov4`` is the covariance of (u, v, w, w') in that coordinate order.
    The linear factors are integrated out analytically by conditioning on
    (u, v); only the remaining 2-D integral is done by quadrature, which is
    exact whenever a and b are polynomials of degree < order.
    """
    cov4 = _check_cov(cov4, 4)
    eigvals = np.linalg.eigvalsh(cov4)
    scale = max(eigvals[-1], 1.0)
    if eigvals[0] < -PSD_TOL * scale:
        raise DomainError(f"joint covariance is not PSD: min eigenvalue {eigvals[0]!r}")

    if not a_factor and not b_factor:
        return expect_pair(a, b, cov4[:2, :2], rule)

    cuu = cov4[:2, :2]
    cwu = cov4[2:, :2]
    cww = cov4[2:, 2:]

    uu_eigvals, uu_eigvecs = np.linalg.eigh(cuu)
    uu_scale = max(uu_eigvals[-1], 1.0)
    keep = uu_eigvals > EIG_FLOOR * uu_scale
    if not np.any(keep):
        raise NumericError("(u, v) marginal is fully degenerate")
    if not np.all(keep):
        logger.debug(
            "eigenvalue floor applied to degenerate (u, v) marginal: %r", uu_eigvals
        )
    inv = np.zeros_like(uu_eigvals)
    inv[keep] = 1.0 / uu_eigvals[keep]
    cuu_pinv = (uu_eigvecs * inv) @ uu_eigvecs.T

    coef = cwu @ cuu_pinv                      # conditional means are coef @ (u, v)
    s_cond = cww - coef @ cwu.T                # conditional covariance of (w, w')

    u, v, w = _grid(cuu, rule)
    m_w = coef[0, 0] * u + coef[0, 1] * v
    m_wp = coef[1, 0] * u + coef[1, 1] * v

    if a_factor and b_factor:
        inner = m_w * m_wp + s_cond[0, 1]
    elif a_factor:
        inner = m_w
    else:
        inner = m_wp
    return float(np.dot(w, a(u) * b(v) * inner))
