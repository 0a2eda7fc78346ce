"""Closed-form kernel regression, eigenfeatures, and eigenvalue diagnostics.

The infinite-width limit of robust training is the kernel interpolant

    u(x) = B(x) @ K^-1 @ y_stacked

where K is the lambda-scaled JNTK Gram over the training inputs, B(x) the
(1 + d0) x N(1 + d0) block row of lambda-scaled kernel blocks at x, and
``y_stacked`` puts each target in the function slot with zeros in the
Jacobian slots.  Row 0 of the prediction is the learnt function; rows
1..d0 are its sqrt(lam)-scaled Jacobian.

Solving is Cholesky-first: on factorisation failure the diagonal is
jittered by 1e-10 x mean diagonal, escalated by 10x at most three times,
after which an eigenvalue-floored pseudo-inverse (floor 1e-10 x largest
eigenvalue) is used; whatever happened is recorded in the solve report.

``eigenfeatures`` decomposes the regressor along the Gram eigenvectors and
scores every retained component by sign accuracy, before and after moving
the test inputs by one projected gradient-ascent step on the squared error
of the lambda-free (function-only) regressor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .activations import Activation
from .errors import AssumptionViolation, DomainError, NumericError
from .kernels import (
    GramMatrix,
    QuadratureRule,
    jntk_gram,
    lambda_scale,
    limiting_jntk,
    theta00,
)

logger = logging.getLogger(__name__)

#: Relative (to trace) positivity threshold for the minimum eigenvalue.
MIN_EIG_RTOL = 1e-12

#: Eigenvalue floor (relative to the largest) for pseudo-inverse fallback
#: and for retaining eigenfeatures.
EIG_KEEP_RTOL = 1e-10


def stack_targets(targets: np.ndarray, d0: int) -> np.ndarray:
    """Per sample (y_i, 0, ..., 0), concatenated."""
    targets = np.asarray(targets, dtype=float)
    out = np.zeros(targets.shape[0] * (1 + d0))
    out[:: 1 + d0] = targets
    return out


@dataclass
class SolveReport:
    method: str
    jitter: float
    residual: float
    min_eig: float


@dataclass
class KernelRegressor:
    act: Activation
    inputs: np.ndarray
    targets: np.ndarray
    depth: int
    lam: float
    gram: GramMatrix
    coef: np.ndarray
    report: SolveReport
    rule: QuadratureRule | None = None
    allow_unsafe: bool = False


def solve(
    gram: GramMatrix, stacked: np.ndarray, override: bool = False
) -> tuple[np.ndarray, SolveReport]:
    """Coefficients K^-1 y with the documented jitter/pseudo-inverse ladder.

    Raises ``AssumptionViolation`` when the minimum eigenvalue sits below
    the positivity threshold, unless ``override`` is given (used by the
    deliberately singular diagnostics).
    """
    K = gram.entries
    stacked = np.asarray(stacked, dtype=float)
    if K.shape[0] != stacked.shape[0]:
        raise DomainError("target vector length does not match the Gram size")
    eigvals, eigvecs = np.linalg.eigh(K)
    min_eig = float(eigvals[0])
    threshold = MIN_EIG_RTOL * float(np.trace(K))

    def pinv_solve() -> np.ndarray:
        floor = EIG_KEEP_RTOL * float(eigvals[-1])
        keep = eigvals > floor
        inv = np.zeros_like(eigvals)
        inv[keep] = 1.0 / eigvals[keep]
        return eigvecs @ (inv * (eigvecs.T @ stacked))

    if min_eig <= threshold:
        if not override:
            raise AssumptionViolation(
                f"Gram minimum eigenvalue {min_eig!r} is below the positivity "
                f"threshold {threshold!r}; the kernel-regression solve is not "
                f"well posed (pass override to force a pseudo-inverse solve)"
            )
        # numerically singular: jitter would hide the rank deficiency
        coef = pinv_solve()
        residual = float(np.linalg.norm(K @ coef - stacked))
        return coef, SolveReport("pinv", 0.0, residual, min_eig)

    method = "cholesky"
    jitter = 0.0
    coef = None
    mean_diag = float(np.trace(K)) / K.shape[0]
    mat = K
    for attempt in range(4):
        try:
            coef = cho_solve(cho_factor(mat, lower=True), stacked)
            break
        except LinAlgError:
            if attempt == 3:
                break
            jitter = 1e-10 * (10.0**attempt) * mean_diag
            mat = K + jitter * np.eye(K.shape[0])
            method = "cholesky+jitter"
            logger.debug("Cholesky failed; retrying with jitter %.3e", jitter)
    if coef is None:
        method = "pinv"
        coef = pinv_solve()
        logger.debug("falling back to eigenvalue-floored pseudo-inverse")

    residual = float(np.linalg.norm(K @ coef - stacked))
    if residual > 1e-6 * np.linalg.norm(stacked) and not override:
        raise NumericError(
            f"kernel solve residual {residual!r} exceeds 1e-6 * ||y||; "
            f"method={method}, jitter={jitter!r}"
        )
    return coef, SolveReport(method, jitter, residual, min_eig)


def fit(
    act: Activation,
    inputs: np.ndarray,
    targets: np.ndarray,
    depth: int,
    lam: float,
    rule: QuadratureRule | None = None,
    override: bool = False,
    allow_unsafe: bool = False,
) -> KernelRegressor:
    """Build the lambda-scaled Gram and solve for the regression coefficients."""
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    gram = jntk_gram(act, inputs, depth, lam, rule, allow_unsafe=allow_unsafe)
    stacked = stack_targets(targets, gram.d0)
    coef, report = solve(gram, stacked, override=override)
    return KernelRegressor(
        act, inputs, targets, depth, lam, gram, coef, report, rule, allow_unsafe
    )


def _block_row(reg: KernelRegressor, x: np.ndarray, allow_off_sphere: bool = False) -> np.ndarray:
    """(1 + d0) x N(1 + d0) row of lambda-scaled kernel blocks at x."""
    n, d0 = reg.inputs.shape
    row = np.empty((1 + d0, n * (1 + d0)))
    for i in range(n):
        blk = limiting_jntk(
            reg.act,
            x,
            reg.inputs[i],
            reg.depth,
            reg.rule,
            allow_off_sphere=allow_off_sphere,
            allow_unsafe=reg.allow_unsafe,
        )
        row[:, i * (1 + d0) : (i + 1) * (1 + d0)] = lambda_scale(blk, reg.lam)
    return row


def predict(reg: KernelRegressor, x: np.ndarray, allow_off_sphere: bool = False) -> np.ndarray:
    """Joint prediction at x: function value, then sqrt(lam)-scaled Jacobian."""
    x = np.asarray(x, dtype=float)
    if not allow_off_sphere and abs(np.linalg.norm(x) - 1.0) > 1e-12:
        raise DomainError(f"prediction point must have unit norm, got {np.linalg.norm(x)!r}")
    return _block_row(reg, x, allow_off_sphere) @ reg.coef


@dataclass
class FunctionOnlyRegressor:
    """Standard kernel regression on the (0,0) kernel entries only.

    This is the analytic solution *without* the Jacobian penalty; its input
    gradient comes from the Jacobian column of the same kernel blocks.
    """

    act: Activation
    inputs: np.ndarray
    targets: np.ndarray
    depth: int
    coef: np.ndarray
    rule: QuadratureRule | None = None
    allow_unsafe: bool = False

    def value(self, x: np.ndarray) -> float:
        return float(
            sum(
                self.coef[i] * theta00(self.act, x, self.inputs[i], self.depth, self.rule)
                for i in range(self.inputs.shape[0])
            )
        )

    def grad(self, x: np.ndarray) -> np.ndarray:
        d0 = self.inputs.shape[1]
        out = np.zeros(d0)
        for i in range(self.inputs.shape[0]):
            blk = limiting_jntk(
                self.act, x, self.inputs[i], self.depth, self.rule,
                allow_off_sphere=True, allow_unsafe=self.allow_unsafe,
            )
            out += self.coef[i] * blk[1:, 0]
        return out


def fit_function_only(
    act: Activation,
    inputs: np.ndarray,
    targets: np.ndarray,
    depth: int,
    rule: QuadratureRule | None = None,
    allow_unsafe: bool = False,
) -> FunctionOnlyRegressor:
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    n = inputs.shape[0]
    K = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            K[i, j] = K[j, i] = theta00(act, inputs[i], inputs[j], depth, rule)
    gram = GramMatrix(n, 0, K)
    coef, _ = solve(gram, targets, override=False)
    return FunctionOnlyRegressor(act, inputs, targets, depth, coef, rule, allow_unsafe)


def perturb_inputs(
    predictor: FunctionOnlyRegressor,
    inputs: np.ndarray,
    targets: np.ndarray,
    step: float,
) -> np.ndarray:
    """One projected gradient-ascent step against the lambda-free regressor.

    Each input moves along the gradient of its squared error
    (f(x) - y)^2 scaled by ``step`` (the learning rate), then is projected
    back to the unit sphere by renormalisation.
    """
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if step == 0.0:
        return inputs.copy()
    out = np.empty_like(inputs)
    for i in range(inputs.shape[0]):
        x = inputs[i]
        ascent = 2.0 * (predictor.value(x) - targets[i]) * predictor.grad(x)
        moved = x + step * ascent
        out[i] = moved / np.linalg.norm(moved)
    return out


@dataclass
class EigenfeatureReport:
    eigenvalues: np.ndarray            # descending
    eigenvectors: np.ndarray           # column i pairs with eigenvalues[i]
    retained: np.ndarray               # boolean mask of non-null features
    accuracy: np.ndarray               # per retained feature
    accuracy_perturbed: dict[float, np.ndarray]
    skipped: list[int] = field(default_factory=list)


def _sign_fix(vecs: np.ndarray) -> np.ndarray:
    """Deterministic sign: the entry of largest magnitude (lowest index on
    ties) is made positive."""
    out = vecs.copy()
    for i in range(out.shape[1]):
        col = out[:, i]
        lead = int(np.argmax(np.abs(col)))
        if col[lead] < 0:
            out[:, i] = -col
    return out


def _sign_accuracy(values: np.ndarray, labels: np.ndarray) -> float:
    """Sign agreement; a value of exactly 0 counts as incorrect."""
    pred = np.sign(values)
    return float(np.mean((pred == np.sign(labels)) & (pred != 0)))


def eigenfeatures(
    reg: KernelRegressor,
    test_inputs: np.ndarray,
    test_targets: np.ndarray,
    perturb_steps: tuple[float, float] = (0.01, 0.1),
    predictor: FunctionOnlyRegressor | None = None,
) -> EigenfeatureReport:
    """Eigen-decompose the Gram and score each feature's sign accuracy.

    Features whose eigenvalue falls below the pseudo-inverse floor are
    excluded and reported as skipped (the decomposition of a singular Gram
    has no well-defined component there).
    """
    test_inputs = np.asarray(test_inputs, dtype=float)
    test_targets = np.asarray(test_targets, dtype=float)
    try:
        vals, vecs = np.linalg.eigh(reg.gram.entries)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed: {exc}") from exc
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = _sign_fix(vecs[:, order])
    retained = vals > EIG_KEEP_RTOL * vals[0]
    skipped = [int(i) for i in np.flatnonzero(~retained)]
    if skipped:
        logger.debug("skipping %d null eigenfeatures", len(skipped))

    stacked = stack_targets(reg.targets, reg.gram.d0)
    # feature i evaluated at x is  B0(x) . v_i (v_i . y) / val_i
    weights = vecs[:, retained] * (vecs[:, retained].T @ stacked) / vals[retained]

    if predictor is None:
        predictor = fit_function_only(
            reg.act, reg.inputs, reg.targets, reg.depth, reg.rule, reg.allow_unsafe
        )

    def feature_accuracies(points: np.ndarray) -> np.ndarray:
        rows = np.stack([_block_row(reg, p, allow_off_sphere=True)[0] for p in points])
        feats = rows @ weights          # (n_test, n_retained)
        return np.array(
            [_sign_accuracy(feats[:, i], test_targets) for i in range(feats.shape[1])]
        )

    accuracy = feature_accuracies(test_inputs)
    perturbed = {}
    for step in perturb_steps:
        moved = perturb_inputs(predictor, test_inputs, test_targets, step)
        perturbed[float(step)] = feature_accuracies(moved)

    return EigenfeatureReport(vals, vecs, retained, accuracy, perturbed, skipped)


def feature_sum(reg: KernelRegressor, report: EigenfeatureReport, x: np.ndarray) -> float:
    """Sum of all retained eigenfeatures at x (equals the regressor's
    function output when nothing was skipped)."""
    stacked = stack_targets(reg.targets, reg.gram.d0)
    vals, vecs = report.eigenvalues, report.eigenvectors
    keep = report.retained
    weights = vecs[:, keep] * (vecs[:, keep].T @ stacked) / vals[keep]
    row0 = _block_row(reg, np.asarray(x, dtype=float), allow_off_sphere=True)[0]
    return float((row0 @ weights).sum())


@dataclass
class MinEigReport:
    depths: list[int]
    jntk_min: list[float]
    ntk_min: list[float]
    assumption_ok: list[bool]
    parallel_pairs: list[tuple[int, int]]


def min_eig_sweep(
    act: Activation,
    inputs: np.ndarray,
    depths: list[int],
    lam: float = 1.0,
    rule: QuadratureRule | None = None,
    allow_unsafe: bool = False,
) -> MinEigReport:
    """Minimum eigenvalue of the full JNTK Gram and of its (0,0) submatrix,
    per depth.  Exactly-parallel input pairs are reported, not rejected."""
    inputs = np.asarray(inputs, dtype=float)
    n = inputs.shape[0]
    cos = inputs @ inputs.T
    parallel = [
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if abs(abs(cos[i, j]) - 1.0) <= 1e-12
    ]
    if parallel:
        logger.warning("dataset contains exactly parallel pairs: %s", parallel)
    report = MinEigReport([], [], [], [], parallel)
    for depth in depths:
        gram = jntk_gram(act, inputs, depth, lam, rule, allow_unsafe=allow_unsafe)
        full_min = float(np.linalg.eigvalsh(gram.entries)[0])
        ntk_min = float(np.linalg.eigvalsh(gram.function_only())[0])
        report.depths.append(depth)
        report.jntk_min.append(full_min)
        report.ntk_min.append(ntk_min)
        report.assumption_ok.append(full_min > MIN_EIG_RTOL * float(np.trace(gram.entries)))
    return report
