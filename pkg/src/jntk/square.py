"""Closed-form shallow kernels for the unnormalised square activation.

For sigma(z) = z^2 and a single hidden layer, every Gaussian expectation in
the kernel recursions is a polynomial moment, so the blocks have exact
closed forms obtained from the Gaussian product-moment factorisation:

    sigma block:        [ 2<x,y>^2 + |x|^2 |y|^2     4<x,y> x^T + 2|x|^2 y^T ]
                        [ 4<x,y> y + 2|y|^2 x        4xy^T + 4yx^T + 4<x,y>I ]

    sigma_dot block:    [ 4<x,y>    4x^T ]
                        [ 4y        4I   ]

``sigma`` equals the level-1 joint NNGP block of the generic quadrature
pipeline and ``sigma_dot`` its level-0 backward factor, which makes this
module an exact oracle for the numerical engine.  The sum
``theta = sigma + sigma_dot`` is the rank-deficient object whose explicit
null vectors and rank bounds drive the minimum-eigenvalue counterexample
diagnostics: its Gram over N > (d0 + 1) / 2 inputs is singular while the
function-only (0,0) submatrix stays positive definite for non-parallel
inputs.

These formulas hold for arbitrary (non-unit) input norms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

#: Numeric rank threshold, relative to the largest eigenvalue.
RANK_RTOL = 1e-8


@dataclass
class SquareKernelPair:
    sigma: np.ndarray
    sigma_dot: np.ndarray

    @property
    def theta(self) -> np.ndarray:
        return self.sigma + self.sigma_dot


def square_kernel_pair(x: np.ndarray, y: np.ndarray) -> SquareKernelPair:
    """Exact closed-form blocks at one input pair."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DomainError("inputs must be vectors of equal length")
    d0 = x.shape[0]
    dot = float(x @ y)
    nx2 = float(x @ x)
    ny2 = float(y @ y)

    sigma = np.empty((1 + d0, 1 + d0))
    sigma[0, 0] = 2.0 * dot * dot + nx2 * ny2
    sigma[0, 1:] = 4.0 * dot * x + 2.0 * nx2 * y
    sigma[1:, 0] = 4.0 * dot * y + 2.0 * ny2 * x
    sigma[1:, 1:] = 4.0 * np.outer(y, x) + 4.0 * np.outer(x, y) + 4.0 * dot * np.eye(d0)

    sigma_dot = np.empty((1 + d0, 1 + d0))
    sigma_dot[0, 0] = 4.0 * dot
    sigma_dot[0, 1:] = 4.0 * x
    sigma_dot[1:, 0] = 4.0 * y
    sigma_dot[1:, 1:] = 4.0 * np.eye(d0)
    return SquareKernelPair(sigma, sigma_dot)


def _gram(inputs: np.ndarray, which: str) -> np.ndarray:
    n, d0 = inputs.shape
    w = 1 + d0
    out = np.empty((n * w, n * w))
    for i in range(n):
        for j in range(n):
            pair = square_kernel_pair(inputs[i], inputs[j])
            out[i * w : (i + 1) * w, j * w : (j + 1) * w] = getattr(pair, which)
    return out


def sigma_gram(inputs: np.ndarray) -> np.ndarray:
    return _gram(np.asarray(inputs, dtype=float), "sigma")


def sigma_dot_gram(inputs: np.ndarray) -> np.ndarray:
    return _gram(np.asarray(inputs, dtype=float), "sigma_dot")


def theta_gram(inputs: np.ndarray) -> np.ndarray:
    return _gram(np.asarray(inputs, dtype=float), "theta")


def null_vectors(inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """The 2N - 1 explicit null vectors of the sigma Gram.

    The first family places (-2, x_i) in block i; the second places
    (0, -x_i) in block 1 and (0, x_1) in block i, for i = 2..N.  Returned
    as row-stacked arrays of shapes (N, N(1+d0)) and (N-1, N(1+d0)).
    """
    inputs = np.asarray(inputs, dtype=float)
    n, d0 = inputs.shape
    if np.any(np.linalg.norm(inputs, axis=1) == 0.0):
        raise DomainError("null-vector construction requires nonzero inputs")
    w = 1 + d0
    first = np.zeros((n, n * w))
    for i in range(n):
        first[i, i * w] = -2.0
        first[i, i * w + 1 : (i + 1) * w] = inputs[i]
    second = np.zeros((n - 1, n * w))
    for idx, i in enumerate(range(1, n)):
        second[idx, 1 : w] = -inputs[i]
        second[idx, i * w + 1 : (i + 1) * w] = inputs[0]
    return first, second


@dataclass
class RankReport:
    sigma_rank: int
    sigma_dot_rank: int
    theta_min_eig: float
    parallel_pairs: list[tuple[int, int]]


def _numeric_rank(mat: np.ndarray) -> int:
    vals = np.abs(np.linalg.eigvalsh(mat))
    top = vals.max()
    if top == 0.0:
        return 0
    return int(np.sum(vals > RANK_RTOL * top))


def rank_report(inputs: np.ndarray) -> RankReport:
    """Numeric ranks of the two Grams and the minimum theta eigenvalue.

    Pairwise-parallel inputs are reported (they change the expected ranks)
    rather than rejected.
    """
    inputs = np.asarray(inputs, dtype=float)
    n = inputs.shape[0]
    norms = np.linalg.norm(inputs, axis=1)
    cos = (inputs @ inputs.T) / np.outer(norms, norms)
    parallel = [
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if abs(abs(cos[i, j]) - 1.0) <= 1e-12
    ]
    return RankReport(
        _numeric_rank(sigma_gram(inputs)),
        _numeric_rank(sigma_dot_gram(inputs)),
        float(np.linalg.eigvalsh(theta_gram(inputs))[0]),
        parallel,
    )
