"""Full-batch gradient descent under the Jacobian-regularised objective.

The objective over a dataset of N pairs is

    loss = (1/2N) * sum_i [ (f(x_i) - y_i)^2 + lam * ||df/dx (x_i)||^2 ]

and training is plain full-batch gradient descent; no minibatching,
momentum, or schedules, so the dynamics stay comparable to the kernel
description.  Divergence is not clipped: a non-finite value aborts with
the offending step index.

Diagnostics logged on a configurable schedule: the loss, per-layer weight
movement from initialisation in operator / max-row-sum / max-col-sum
norms, and (optionally) the per-entry max-norm distance between the
1/kappa^2-scaled finite JNTK at the current parameters and a fixed
limiting-kernel Gram.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .activations import Activation
from .errors import DomainError, NumericError
from .kernels import GramMatrix
from .mlp import Mlp, finite_jntk_gram, forward

_POWER_ITER_SEED = 0x5EED


@dataclass
class TrainConfig:
    lam: float
    eta: float
    steps: int
    log_schedule: list[int] = field(default_factory=list)
    track_movement: bool = True     # weight-movement norms at logged steps
    record_losses: bool = False     # keep the per-step loss sequence

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise DomainError(f"lam must lie in (0, 1], got {self.lam!r}")
        if self.eta < 0:
            raise DomainError(f"eta must be >= 0, got {self.eta!r}")
        if self.steps < 1:
            raise DomainError(f"steps must be >= 1, got {self.steps}")
        self.log_schedule = sorted(self.log_schedule)
        if self.log_schedule and not (
            0 <= self.log_schedule[0] and self.log_schedule[-1] <= self.steps
        ):
            raise DomainError("log_schedule entries must lie in [0, steps]")


def log2_schedule(steps: int) -> list[int]:
    """0, 1, 2, 4, ... capped at ``steps`` (the sampling grid for drift)."""
    out = [0]
    t = 1
    while t <= steps:
        out.append(t)
        t *= 2
    return out


@dataclass
class LogRecord:
    step: int
    loss: float
    movement: list[tuple[float, float, float]]  # per layer: (op, inf, one)


@dataclass
class TrainLog:
    records: list[LogRecord]
    drift: list[tuple[int, np.ndarray]]
    final_state: Mlp
    losses: list[float] = field(default_factory=list)  # loss before step k, k = 1..steps


def robust_loss(net: Mlp, act: Activation, inputs: np.ndarray, targets: np.ndarray, lam: float) -> float:
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    total = 0.0
    for i in range(inputs.shape[0]):
        _, tr = forward(net, act, inputs[i])
        total += (tr.value - targets[i]) ** 2 + lam * float(tr.jacobian @ tr.jacobian)
    return total / (2.0 * inputs.shape[0])


def loss_gradient(
    net: Mlp, act: Activation, inputs: np.ndarray, targets: np.ndarray, lam: float
) -> tuple[list[np.ndarray], float]:
    """Gradient of the objective and the loss value at the same parameters.

    Contracts, per layer, the per-example parameter gradients with the
    residuals (f - y) and lam-weighted Jacobians; this equals assembling
    the full per-example gradient matrices first, without materialising
    them.  All examples are carried through the forward and backward passes
    together (the weight matrices are streamed once per step, not once per
    example), so each reduction over examples is a single matrix product.
    """
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    n, d0 = inputs.shape
    d, depth = net.width, net.depth
    inv_sqrt_d = 1.0 / np.sqrt(d)
    kappa = net.kappa

    # overflow to inf is the divergence signal and is caught by the caller
    with np.errstate(over="ignore", invalid="ignore"):
        # forward: hidden[k] (d_k, n), jac_hidden[k] (d_k, d0, n)
        hidden = [inputs.T]
        jac_hidden = [np.repeat(np.eye(d0)[:, :, None], n, axis=2)]
        pre, jac_pre = [], []
        g = net.weights[0] @ hidden[0]
        jg = np.repeat(net.weights[0][:, :, None], n, axis=2)
        pre.append(g)
        jac_pre.append(jg)
        for k in range(1, depth + 1):
            val, der, _ = act.eval(pre[-1])
            hidden.append(val)
            jac_hidden.append(der[:, None, :] * jac_pre[-1])
            w = net.weights[k]
            stacked = np.concatenate([val[:, None, :], jac_hidden[-1]], axis=1)
            out = (w @ stacked.reshape(val.shape[0], (1 + d0) * n) * inv_sqrt_d).reshape(
                w.shape[0], 1 + d0, n
            )
            pre.append(out[:, 0, :])
            jac_pre.append(out[:, 1:, :])
        values = kappa * pre[-1][0]                 # (n,)
        jacs = kappa * jac_pre[-1][0]               # (d0, n)
        resid = values - targets
        if not (np.all(np.isfinite(resid)) and np.all(np.isfinite(jacs))):
            raise NumericError("non-finite network output")
        loss = float(resid @ resid + lam * (jacs * jacs).sum()) / (2.0 * n)

        # backward: dg[k] (d_k, n), dag[k] (d_k, d0, n); the gradient of a
        # Jacobian component with respect to the propagated input derivative
        # equals dg at every level (same head seed, same recursion), so dg
        # stands in for it below
        dg = [None] * (depth + 1)
        dag = [None] * (depth + 1)
        dg[depth] = np.full((1, n), kappa)
        dag[depth] = np.zeros((1, d0, n))
        dh = net.weights[depth].T @ dg[depth] * inv_sqrt_d
        dah = np.zeros((d, d0, n))
        for k in range(depth - 1, -1, -1):
            der = act.deriv(pre[k])
            sec = act.second(pre[k])
            dg[k] = der * dh
            dag[k] = sec[:, None, :] * jac_pre[k] * dh[:, None, :] + der[:, None, :] * dah
            if k > 0:
                w = net.weights[k]
                # one product for both backward families: [dg | dag]
                stacked = np.concatenate([dg[k][:, None, :], dag[k]], axis=1)
                back = (w.T @ stacked.reshape(w.shape[0], (1 + d0) * n) * inv_sqrt_d).reshape(
                    w.shape[1], 1 + d0, n
                )
                dh = back[:, 0, :]
                dah = back[:, 1:, :]

        grads = []
        for k in range(depth + 1):
            scale = (1.0 if k == 0 else inv_sqrt_d) / n
            h = hidden[k]
            # the three reductions over examples as one matrix product:
            #   sum_i resid_i dg_i h_i^T
            # + lam sum_i (dag_i jac_i) h_i^T
            # + lam sum_i dg_i (jac_hidden_i jac_i)^T
            dag_jac = np.einsum("dan,an->dn", dag[k], jacs)
            jh_jac = np.einsum("dan,an->dn", jac_hidden[k], jacs)
            left = np.concatenate([dg[k] * resid + lam * dag_jac, lam * dg[k]], axis=1)
            right = np.concatenate([h, jh_jac], axis=1)
            grads.append(scale * (left @ right.T))
    return grads, loss


def operator_norm(mat: np.ndarray, tol: float = 1e-8, max_iter: int = 1000) -> float:
    """Largest singular value by power iteration with a fixed start vector."""
    if not np.any(mat):
        return 0.0
    rng = np.random.Generator(np.random.Philox(_POWER_ITER_SEED))
    v = rng.standard_normal(mat.shape[1])
    v /= np.linalg.norm(v)
    prev = 0.0
    for _ in range(max_iter):
        u = mat @ v
        v = mat.T @ u
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return 0.0
        v /= nv
        sigma = np.linalg.norm(mat @ v)
        if abs(sigma - prev) <= tol * max(sigma, 1.0):
            return float(sigma)
        prev = sigma
    raise NumericError(f"power iteration did not converge within {max_iter} iterations")


def weight_movement(net_t: Mlp, net_0: Mlp) -> list[tuple[float, float, float]]:
    """Per-layer (operator, max-row-sum, max-col-sum) norms of W_t - W_0."""
    out = []
    for wt, w0 in zip(net_t.weights, net_0.weights, strict=True):
        if wt.shape != w0.shape:
            raise DomainError("weight shapes differ between states")
        diff = wt - w0
        out.append(
            (
                operator_norm(diff),
                float(np.abs(diff).sum(axis=1).max()),
                float(np.abs(diff).sum(axis=0).max()),
            )
        )
    return out


def jntk_drift(
    net: Mlp,
    act: Activation,
    inputs: np.ndarray,
    kappa: float,
    reference: GramMatrix,
) -> np.ndarray:
    """Per-(a, b) max-norm distance of the 1/kappa^2-scaled finite JNTK
    from a fixed limiting-kernel Gram on the same dataset."""
    fin = finite_jntk_gram(net, act, inputs)
    scaled = GramMatrix(fin.n, fin.d0, fin.entries / (kappa * kappa))
    return scaled.max_abs_by_entry(reference)


def train(
    net: Mlp,
    act: Activation,
    inputs: np.ndarray,
    targets: np.ndarray,
    cfg: TrainConfig,
    drift_reference: GramMatrix | None = None,
) -> TrainLog:
    """Full-batch gradient descent; deterministic given the state and config."""
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    state = net.copy()
    start = net.copy()
    schedule = set(cfg.log_schedule)
    records: list[LogRecord] = []
    drift: list[tuple[int, np.ndarray]] = []
    losses: list[float] = []

    def log_at(step: int, loss_val: float) -> None:
        movement = weight_movement(state, start) if cfg.track_movement else []
        records.append(LogRecord(step, loss_val, movement))
        if drift_reference is not None:
            drift.append((step, jntk_drift(state, act, inputs, state.kappa, drift_reference)))

    if 0 in schedule:
        log_at(0, robust_loss(state, act, inputs, targets, cfg.lam))

    # One BLAS thread: the per-step matrices are too skinny for threaded
    # kernels to pay off, and a fixed thread count keeps the reduction
    # order (and therefore the trained weights) bit-identical across hosts.
    with threadpool_limits(limits=1):
        for step in range(1, cfg.steps + 1):
            try:
                grads, loss_val = loss_gradient(state, act, inputs, targets, cfg.lam)
            except NumericError as exc:
                raise NumericError(f"training diverged at step {step}: {exc}") from exc
            if not np.isfinite(loss_val):
                raise NumericError(f"training diverged at step {step}: loss {loss_val!r}")
            if cfg.record_losses:
                losses.append(loss_val)
            for k in range(len(state.weights)):
                # in place, without an eta-scaled temporary
                np.multiply(grads[k], cfg.eta, out=grads[k])
                np.subtract(state.weights[k], grads[k], out=state.weights[k])
            if step in schedule:
                log_at(step, robust_loss(state, act, inputs, targets, cfg.lam))

    return TrainLog(records, drift, state, losses)
