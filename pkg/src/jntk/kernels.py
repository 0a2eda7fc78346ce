"""Infinite-width kernels for an MLP jointly with its input Jacobian.

Block convention, used everywhere including file formats: kernel values for
one input pair form a ``(1 + d0) x (1 + d0)`` matrix whose row/column 0 is
the network output ("function") component and whose rows/columns ``1..d0``
are the Jacobian components; Jacobian coordinate ``a`` (counted from 0) is
stored at matrix index ``a + 1``.

Three kernel families are computed here.

* ``nngp_chain`` builds the depth-indexed covariance blocks of the joint
  (output, Jacobian) Gaussian process: the base block is assembled from
  inner products and coordinates of the two inputs, and each further level
  applies the activation through low-dimensional Gaussian expectations.
* ``backprop_factor`` builds the per-level blocks of first/second activation
  derivative expectations that weight the backward pass in the limit.
* ``limiting_jntk`` combines both into the limiting Jacobian neural tangent
  kernel via layer sums of products (with the empty-sum = 0 and
  empty-product = 1 conventions).

Gram matrices over a dataset are dense ``N(1+d0) x N(1+d0)`` arrays stored
block-row-major; only upper-triangular block pairs are computed, the rest
mirrored by kernel symmetry.  Grams serialise to CSV rows ``i,j,a,b,value``
(``i, j`` are 1-based sample indices, ``a, b`` 0-based entry indices) in
lexicographic order.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass

import numpy as np

from .activations import Activation
from .errors import ConfigError, DomainError, NumericError
from .quadrature import QuadratureRule, expect_mixed, expect_pair, gauss_hermite

logger = logging.getLogger(__name__)

DEFAULT_QUAD_ORDER = 64

#: PSD tolerance for same-input kernel blocks.
BLOCK_PSD_TOL = 1e-8


def _rule(rule: QuadratureRule | None) -> QuadratureRule:
    return rule if rule is not None else gauss_hermite(DEFAULT_QUAD_ORDER)


def _check_unit(x: np.ndarray, allow_off_sphere: bool, what: str = "input") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DomainError(f"{what} must be a vector, got shape {x.shape}")
    norm = float(np.linalg.norm(x))
    if abs(norm - 1.0) > 1e-12:
        if not allow_off_sphere:
            raise DomainError(f"{what} must have unit norm, got {norm!r}")
        logger.debug("off-sphere %s accepted with norm %.15g", what, norm)
    return x


def _check_activation_depth(act: Activation, depth: int, allow_unsafe: bool) -> None:
    if depth < 1:
        raise DomainError(f"depth must be >= 1, got {depth}")
    if act.oracle_only and depth > 1 and not allow_unsafe:
        raise ConfigError(
            f"activation {act.kind!r} violates the smoothness assumptions the "
            f"deep recursions rely on; pass allow_unsafe (--unsafe-activation) "
            f"to use it at depth {depth} anyway"
        )


def nngp_base(x: np.ndarray, xp: np.ndarray) -> np.ndarray:
    """Depth-0 joint covariance block built directly from the inputs."""
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    d0 = x.shape[0]
    block = np.empty((1 + d0, 1 + d0))
    block[0, 0] = x @ xp
    block[0, 1:] = x
    block[1:, 0] = xp
    block[1:, 1:] = np.eye(d0)
    return block


def _joint_cov(bxx: np.ndarray, bxy: np.ndarray, byy: np.ndarray, a: int, b: int) -> np.ndarray:
    """4x4 covariance of (g(x)_0, g(x')_0, g(x)_a, g(x')_b) for a GP level.

    ``bxx, bxy, byy`` are the same-level blocks at (x,x), (x,x'), (x',x').
    """
    return np.array(
        [
            [bxx[0, 0], bxy[0, 0], bxx[0, a], bxy[0, b]],
            [bxy[0, 0], byy[0, 0], bxy[a, 0], byy[0, b]],
            [bxx[0, a], bxy[a, 0], bxx[a, a], bxy[a, b]],
            [bxy[0, b], byy[0, b], bxy[a, b], byy[b, b]],
        ]
    )


def _level_up(
    act: Activation,
    bxx: np.ndarray,
    bxy: np.ndarray,
    byy: np.ndarray,
    rule: QuadratureRule,
    symmetric: bool = False,
) -> np.ndarray:
    """One recursion level: next joint covariance block at (x, x')."""
    d0 = bxy.shape[0] - 1
    out = np.empty((1 + d0, 1 + d0))
    cov2 = np.array([[bxx[0, 0], bxy[0, 0]], [bxy[0, 0], byy[0, 0]]])
    out[0, 0] = expect_pair(act.value, act.value, cov2, rule)
    for b in range(1, 1 + d0):
        out[0, b] = expect_mixed(
            act.value, act.deriv, _joint_cov(bxx, bxy, byy, b, b), rule,
            a_factor=False, b_factor=True,
        )
    if symmetric:
        out[1:, 0] = out[0, 1:]
    else:
        for a in range(1, 1 + d0):
            out[a, 0] = expect_mixed(
                act.deriv, act.value, _joint_cov(bxx, bxy, byy, a, a), rule,
                a_factor=True, b_factor=False,
            )
    for a in range(1, 1 + d0):
        start = a if symmetric else 1
        for b in range(start, 1 + d0):
            out[a, b] = expect_mixed(
                act.deriv, act.deriv, _joint_cov(bxx, bxy, byy, a, b), rule,
                a_factor=True, b_factor=True,
            )
            if symmetric and b != a:
                out[b, a] = out[a, b]
    return out


def _diag_chain(act: Activation, x: np.ndarray, depth: int, rule: QuadratureRule) -> list[np.ndarray]:
    """Blocks at (x, x) for levels 0..depth, PSD-checked per level."""
    chain = [nngp_base(x, x)]
    for level in range(1, depth + 1):
        prev = chain[-1]
        block = _level_up(act, prev, prev, prev, rule, symmetric=True)
        block = 0.5 * (block + block.T)
        eigmin = float(np.linalg.eigvalsh(block)[0])
        if eigmin < -BLOCK_PSD_TOL * max(1.0, float(np.abs(block).max())):
            raise NumericError(
                f"same-input kernel block lost positive semi-definiteness at "
                f"level {level}: min eigenvalue {eigmin!r}"
            )
        chain.append(block)
    return chain


def _cross_chain(
    act: Activation,
    x: np.ndarray,
    xp: np.ndarray,
    depth: int,
    rule: QuadratureRule,
    diag_x: list[np.ndarray],
    diag_xp: list[np.ndarray],
) -> list[np.ndarray]:
    chain = [nngp_base(x, xp)]
    for level in range(1, depth + 1):
        chain.append(
            _level_up(act, diag_x[level - 1], chain[-1], diag_xp[level - 1], rule)
        )
    return chain


def nngp_chain(
    act: Activation,
    x: np.ndarray,
    xp: np.ndarray,
    depth: int,
    rule: QuadratureRule | None = None,
    allow_off_sphere: bool = False,
    allow_unsafe: bool = False,
) -> list[np.ndarray]:
    """Joint (output, Jacobian) NNGP blocks at (x, x') for levels 0..depth."""
    rule = _rule(rule)
    _check_activation_depth(act, depth, allow_unsafe)
    x = _check_unit(x, allow_off_sphere, "x")
    xp = _check_unit(xp, allow_off_sphere, "x'")
    diag_x = _diag_chain(act, x, depth, rule)
    diag_xp = _diag_chain(act, xp, depth, rule)
    return _cross_chain(act, x, xp, depth, rule, diag_x, diag_xp)


def backprop_factor(
    act: Activation,
    bxx: np.ndarray,
    bxy: np.ndarray,
    byy: np.ndarray,
    rule: QuadratureRule | None = None,
) -> np.ndarray:
    """Backward-pass weighting block for one level.

    Entry (0,0) is the expectation of the product of first derivatives of
    the activation at the two inputs; the Jacobian rows/columns replace one
    (or both) first derivatives by a second derivative times the matching
    linear Jacobian coordinate.
    """
    rule = _rule(rule)
    d0 = bxy.shape[0] - 1
    out = np.empty((1 + d0, 1 + d0))
    cov2 = np.array([[bxx[0, 0], bxy[0, 0]], [bxy[0, 0], byy[0, 0]]])
    out[0, 0] = expect_pair(act.deriv, act.deriv, cov2, rule)
    for a in range(1, 1 + d0):
        out[a, 0] = expect_mixed(
            act.second, act.deriv, _joint_cov(bxx, bxy, byy, a, a), rule,
            a_factor=True, b_factor=False,
        )
    for b in range(1, 1 + d0):
        out[0, b] = expect_mixed(
            act.deriv, act.second, _joint_cov(bxx, bxy, byy, b, b), rule,
            a_factor=False, b_factor=True,
        )
    for a in range(1, 1 + d0):
        for b in range(1, 1 + d0):
            out[a, b] = expect_mixed(
                act.second, act.second, _joint_cov(bxx, bxy, byy, a, b), rule,
                a_factor=True, b_factor=True,
            )
    return out


def _assemble_jntk(sig_xy: list[np.ndarray], gammas: list[np.ndarray]) -> np.ndarray:
    """Layer sums of products assembling the limiting JNTK block.

    ``sig_xy`` holds levels 0..L of the joint NNGP blocks at (x, x'),
    ``gammas`` the backward factors for levels 0..L-1.  Empty sums are 0 and
    empty products 1, so the l = L summand contributes its NNGP block as is.
    """
    L = len(gammas)
    d0 = sig_xy[0].shape[0] - 1
    g00 = np.array([g[0, 0] for g in gammas])

    # table[lo, hi] = product of g00[lo:hi]; built directly, no division, so
    # exact zeros in g00 (square activation, orthogonal inputs) are safe.
    table = np.ones((L + 1, L + 1))
    for lo in range(L):
        acc = 1.0
        for hi in range(lo, L):
            acc *= g00[hi]
            table[lo, hi + 1] = acc

    def prod(lo: int, hi: int) -> float:  # inclusive bounds over g00
        if hi < lo:
            return 1.0
        return float(table[lo, hi + 1])

    theta = np.zeros((1 + d0, 1 + d0))
    for l in range(L + 1):
        S = sig_xy[l]
        full = prod(l, L - 1)
        row_sum = np.zeros(d0)      # sum_u G[u][0, 1:] * prod excluding u
        col_sum = np.zeros(d0)
        inner_sum = np.zeros((d0, d0))
        for e in range(l, L):
            pex = prod(l, e - 1) * prod(e + 1, L - 1)
            row_sum += gammas[e][0, 1:] * pex
            col_sum += gammas[e][1:, 0] * pex
            inner_sum += gammas[e][1:, 1:] * pex
        cross = np.zeros((d0, d0))
        for e1 in range(l, L):
            for e2 in range(l, L):
                if e1 == e2:
                    continue
                lo, hi = (e1, e2) if e1 < e2 else (e2, e1)
                pex2 = prod(l, lo - 1) * prod(lo + 1, hi - 1) * prod(hi + 1, L - 1)
                cross += np.outer(gammas[e1][1:, 0], gammas[e2][0, 1:]) * pex2
        theta[0, 0] += S[0, 0] * full
        theta[0, 1:] += S[0, 1:] * full + S[0, 0] * row_sum
        theta[1:, 0] += S[1:, 0] * full + S[0, 0] * col_sum
        theta[1:, 1:] += (
            S[1:, 1:] * full
            + np.outer(S[1:, 0], row_sum)
            + np.outer(col_sum, S[0, 1:])
            + S[0, 0] * (inner_sum + cross)
        )
    return theta


def _jntk_from_chains(
    act: Activation,
    diag_x: list[np.ndarray],
    cross: list[np.ndarray],
    diag_xp: list[np.ndarray],
    rule: QuadratureRule,
) -> np.ndarray:
    depth = len(cross) - 1
    gammas = [
        backprop_factor(act, diag_x[u], cross[u], diag_xp[u], rule)
        for u in range(depth)
    ]
    return _assemble_jntk(cross, gammas)


def limiting_jntk(
    act: Activation,
    x: np.ndarray,
    xp: np.ndarray,
    depth: int,
    rule: QuadratureRule | None = None,
    allow_off_sphere: bool = False,
    allow_unsafe: bool = False,
) -> np.ndarray:
    """Limiting Jacobian NTK block at (x, x') for the given depth."""
    rule = _rule(rule)
    _check_activation_depth(act, depth, allow_unsafe)
    x = _check_unit(x, allow_off_sphere, "x")
    xp = _check_unit(xp, allow_off_sphere, "x'")
    diag_x = _diag_chain(act, x, depth, rule)
    diag_xp = _diag_chain(act, xp, depth, rule)
    cross = _cross_chain(act, x, xp, depth, rule, diag_x, diag_xp)
    return _jntk_from_chains(act, diag_x, cross, diag_xp, rule)


def lambda_scale(block: np.ndarray, lam: float) -> np.ndarray:
    """Scale Jacobian rows and columns by sqrt(lam) (the function row by 1)."""
    if not 0.0 < lam <= 1.0:
        raise DomainError(f"lambda must lie in (0, 1], got {lam!r}")
    root = np.sqrt(lam)
    scale = np.full(block.shape[0], root)
    scale[0] = 1.0
    return block * np.outer(scale, scale)


@dataclass
class GramMatrix:
    """Dense block matrix of kernel values over a dataset."""

    n: int
    d0: int
    entries: np.ndarray

    @property
    def block_width(self) -> int:
        return 1 + self.d0

    def block(self, i: int, j: int) -> np.ndarray:
        """Kernel block for samples i, j (0-based)."""
        w = self.block_width
        return self.entries[i * w : (i + 1) * w, j * w : (j + 1) * w]

    def function_only(self) -> np.ndarray:
        """The N x N submatrix of (0, 0) entries (the standard-NTK Gram)."""
        idx = np.arange(self.n) * self.block_width
        return self.entries[np.ix_(idx, idx)]

    def max_abs_by_entry(self, other: "GramMatrix") -> np.ndarray:
        """Per-(a, b) max over sample pairs of |self - other|."""
        if self.entries.shape != other.entries.shape:
            raise DomainError("Gram shapes differ")
        w = self.block_width
        diff = np.abs(self.entries - other.entries)
        view = diff.reshape(self.n, w, self.n, w)
        return view.max(axis=(0, 2))


def _gram_from_block_fn(n: int, d0: int, block_fn) -> GramMatrix:
    w = 1 + d0
    entries = np.empty((n * w, n * w))
    for i in range(n):
        for j in range(i, n):
            try:
                blk = block_fn(i, j)
            except (NumericError, DomainError) as exc:
                raise type(exc)(f"block ({i}, {j}): {exc}") from exc
            entries[i * w : (i + 1) * w, j * w : (j + 1) * w] = blk
            if j != i:
                entries[j * w : (j + 1) * w, i * w : (i + 1) * w] = blk.T
    return GramMatrix(n, d0, entries)


def jntk_gram(
    act: Activation,
    inputs: np.ndarray,
    depth: int,
    lam: float = 1.0,
    rule: QuadratureRule | None = None,
    allow_unsafe: bool = False,
) -> GramMatrix:
    """Gram of lambda-scaled limiting JNTK blocks over a dataset.

    Same-input chains are computed once per point and shared by all pairs.
    """
    rule = _rule(rule)
    _check_activation_depth(act, depth, allow_unsafe)
    inputs = np.asarray(inputs, dtype=float)
    n, d0 = inputs.shape
    points = [_check_unit(inputs[i], False, f"input {i}") for i in range(n)]
    diags = [_diag_chain(act, p, depth, rule) for p in points]

    def block_fn(i: int, j: int) -> np.ndarray:
        cross = _cross_chain(act, points[i], points[j], depth, rule, diags[i], diags[j])
        return lambda_scale(_jntk_from_chains(act, diags[i], cross, diags[j], rule), lam)

    return _gram_from_block_fn(n, d0, block_fn)


def nngp_gram(
    act: Activation,
    inputs: np.ndarray,
    depth: int,
    rule: QuadratureRule | None = None,
    allow_unsafe: bool = False,
) -> GramMatrix:
    """Gram of top-level joint NNGP blocks over a dataset."""
    rule = _rule(rule)
    _check_activation_depth(act, depth, allow_unsafe)
    inputs = np.asarray(inputs, dtype=float)
    n, d0 = inputs.shape
    points = [_check_unit(inputs[i], False, f"input {i}") for i in range(n)]
    diags = [_diag_chain(act, p, depth, rule) for p in points]

    def block_fn(i: int, j: int) -> np.ndarray:
        cross = _cross_chain(act, points[i], points[j], depth, rule, diags[i], diags[j])
        return cross[-1]

    return _gram_from_block_fn(n, d0, block_fn)


def _chain00(act: Activation, x: np.ndarray, xp: np.ndarray, depth: int, rule: QuadratureRule):
    """(0,0)-entry chains and backward (0,0) factors, no Jacobian entries."""
    sxx, sxy, syy = float(x @ x), float(x @ xp), float(xp @ xp)
    s00 = [sxy]
    g00 = []
    for _ in range(depth):
        cov = np.array([[sxx, sxy], [sxy, syy]])
        g00.append(expect_pair(act.deriv, act.deriv, cov, rule))
        new_xy = expect_pair(act.value, act.value, cov, rule)
        new_xx = expect_pair(act.value, act.value, np.array([[sxx, sxx], [sxx, sxx]]), rule)
        new_yy = expect_pair(act.value, act.value, np.array([[syy, syy], [syy, syy]]), rule)
        sxx, sxy, syy = new_xx, new_xy, new_yy
        s00.append(sxy)
    return s00, g00


def theta00(
    act: Activation,
    x: np.ndarray,
    xp: np.ndarray,
    depth: int,
    rule: QuadratureRule | None = None,
) -> float:
    """(0,0) entry of the limiting JNTK, without the Jacobian machinery."""
    rule = _rule(rule)
    s00, g00 = _chain00(act, np.asarray(x, float), np.asarray(xp, float), depth, rule)
    total = 0.0
    for l in range(depth + 1):
        prod = 1.0
        for u in range(l, depth):
            prod *= g00[u]
        total += s00[l] * prod
    return total


def sigma00(
    act: Activation,
    x: np.ndarray,
    xp: np.ndarray,
    depth: int,
    rule: QuadratureRule | None = None,
) -> float:
    """(0,0) entry of the top-level NNGP kernel."""
    rule = _rule(rule)
    s00, _ = _chain00(act, np.asarray(x, float), np.asarray(xp, float), depth, rule)
    return s00[-1]


def derivative_consistency(
    act: Activation,
    x: np.ndarray,
    xp: np.ndarray,
    depth: int,
    which: str = "theta",
    step: float = 1e-4,
    rule: QuadratureRule | None = None,
    allow_unsafe: bool = False,
) -> float:
    """Check that Jacobian entries are ambient derivatives of the (0,0) entry.

    Central finite differences of the (0,0) entry in the ambient input
    coordinates (perturbed points are *not* re-projected to the sphere) are
    compared against the (0,b), (a,0), (a,b) entries of the same kernel.
    Returns the worst error, measured relative to ``max(|entry|, |fd|, 1)``.
    """
    if not 1e-6 <= step <= 1e-2:
        raise DomainError(f"finite-difference step must be in [1e-6, 1e-2], got {step}")
    if which not in ("sigma", "theta"):
        raise DomainError(f"which must be 'sigma' or 'theta', got {which!r}")
    rule = _rule(rule)
    _check_activation_depth(act, depth, allow_unsafe)
    x = _check_unit(x, False, "x")
    xp = _check_unit(xp, False, "x'")
    d0 = x.shape[0]

    if which == "sigma":
        block = nngp_chain(act, x, xp, depth, rule, allow_unsafe=allow_unsafe)[-1]
        scalar = lambda u, v: sigma00(act, u, v, depth, rule)
    else:
        block = limiting_jntk(act, x, xp, depth, rule, allow_unsafe=allow_unsafe)
        scalar = lambda u, v: theta00(act, u, v, depth, rule)

    def rel(err: float, val: float, fd: float) -> float:
        return abs(err) / max(abs(val), abs(fd), 1.0)

    worst = 0.0
    eye = np.eye(d0)
    for a in range(d0):
        fd = (scalar(x + step * eye[a], xp) - scalar(x - step * eye[a], xp)) / (2 * step)
        worst = max(worst, rel(fd - block[a + 1, 0], block[a + 1, 0], fd))
    for b in range(d0):
        fd = (scalar(x, xp + step * eye[b]) - scalar(x, xp - step * eye[b])) / (2 * step)
        worst = max(worst, rel(fd - block[0, b + 1], block[0, b + 1], fd))
    for a in range(d0):
        for b in range(d0):
            fd = (
                scalar(x + step * eye[a], xp + step * eye[b])
                - scalar(x + step * eye[a], xp - step * eye[b])
                - scalar(x - step * eye[a], xp + step * eye[b])
                + scalar(x - step * eye[a], xp - step * eye[b])
            ) / (4 * step * step)
            worst = max(worst, rel(fd - block[a + 1, b + 1], block[a + 1, b + 1], fd))
    return worst


def gram_to_csv(gram: GramMatrix, out: io.TextIOBase | str, config_hash: str | None = None) -> None:
    """Write a Gram matrix as ``i,j,a,b,value`` rows in lexicographic order."""
    own = isinstance(out, str)
    fh = open(out, "w", newline="") if own else out
    try:
        if config_hash is not None:
            fh.write(f"# config_sha256={config_hash}\n")
        fh.write(f"# n={gram.n} d0={gram.d0}\n")
        fh.write("i,j,a,b,value\n")
        w = gram.block_width
        for i in range(gram.n):
            for j in range(gram.n):
                blk = gram.block(i, j)
                for a in range(w):
                    for b in range(w):
                        fh.write(f"{i + 1},{j + 1},{a},{b},{float(blk[a, b])!r}\n")
    finally:
        if own:
            fh.close()


def gram_from_csv(path: str) -> GramMatrix:
    n = d0 = None
    rows = []
    with open(path, "r", newline="") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "n=" in line and "d0=" in line:
                    parts = dict(p.split("=") for p in line[1:].split() if "=" in p)
                    n, d0 = int(parts["n"]), int(parts["d0"])
                continue
            if line.startswith("i,"):
                continue
            rows.append(line.split(","))
    if n is None or d0 is None:
        raise ConfigError(f"{path}: missing '# n=... d0=...' header")
    w = 1 + d0
    entries = np.zeros((n * w, n * w))
    for i, j, a, b, value in rows:
        entries[(int(i) - 1) * w + int(a), (int(j) - 1) * w + int(b)] = float(value)
    return GramMatrix(n, d0, entries)
