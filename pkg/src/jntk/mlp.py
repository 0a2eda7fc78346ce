"""Finite-width MLP, its input Jacobian, and the exact finite JNTK.

Architecture (no biases, uniform hidden width d, scalar output):

    g1 = W1 x,   hl = phi(gl),   gl = Wl h(l-1) / sqrt(d)  (l >= 2),
    f  = kappa * g(L+1)

with every weight entry drawn i.i.d. standard normal.  ``weights[k]`` holds
the layer mapping hidden level k to pre-activation level k+1, so
``weights[0]`` is (d, d0), the middle ones are (d, d), and the head is
(1, d).

The forward pass carries all d0 directional input derivatives as batched
columns, so one pass yields the full Jacobian.  The backward pass produces
three gradient families per level: the output gradient, the gradient of
each Jacobian component, and the gradient of each Jacobian component with
respect to the propagated input-derivative; the last one obeys the same
recursion as the first and is therefore equal to it at every level (kept as
its own computation so the identity stays testable).

The finite JNTK is assembled from layer-wise inner products of these
traces, never materialising per-parameter gradient vectors.

Reproducibility: all randomness flows through a counter-based Philox
generator keyed by ``(seed, stream)``; stream 0 is the weight
initialisation, streams 1, 2, ... are Monte-Carlo redraws.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .activations import Activation
from .errors import DomainError, NumericError
from .kernels import GramMatrix

WEIGHT_MAGIC = b"JNTKWTS1"


def rng_stream(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for the documented (seed, stream) scheme."""
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(stream,))
    return np.random.Generator(np.random.Philox(seq))


@dataclass
class Mlp:
    weights: list[np.ndarray]
    width: int
    depth: int
    in_dim: int
    kappa: float
    seed: int

    def copy(self) -> "Mlp":
        return Mlp(
            [w.copy() for w in self.weights],
            self.width,
            self.depth,
            self.in_dim,
            self.kappa,
            self.seed,
        )


def init_mlp(seed: int, width: int, depth: int, in_dim: int, kappa: float, stream: int = 0) -> Mlp:
    if width < 1 or depth < 1 or in_dim < 1:
        raise DomainError("width, depth and in_dim must all be >= 1")
    if kappa <= 0:
        raise DomainError(f"kappa must be positive, got {kappa!r}")
    rng = rng_stream(seed, stream)
    shapes = [(width, in_dim)] + [(width, width)] * (depth - 1) + [(1, width)]
    weights = [rng.standard_normal(shape) for shape in shapes]
    return Mlp(weights, width, depth, in_dim, kappa, seed)


@dataclass
class ForwardTrace:
    """All forward quantities needed by the backward pass and the JNTK.

    ``pre[k]`` is the pre-activation at level k+1; ``hidden[k]`` the
    activation at level k (``hidden[0]`` is the input itself);
    ``jac_pre[k]`` and ``jac_hidden[k]`` their input-derivative matrices
    with one column per input coordinate (``jac_hidden[0]`` is the
    identity).
    """

    x: np.ndarray
    pre: list[np.ndarray]
    hidden: list[np.ndarray]
    jac_pre: list[np.ndarray]
    jac_hidden: list[np.ndarray]
    value: float
    jacobian: np.ndarray


def forward(net: Mlp, act: Activation, x: np.ndarray) -> tuple[float, ForwardTrace]:
    x = np.asarray(x, dtype=float)
    if x.shape != (net.in_dim,):
        raise DomainError(f"expected input of shape ({net.in_dim},), got {x.shape}")
    inv_sqrt_d = 1.0 / np.sqrt(net.width)
    g = net.weights[0] @ x
    jg = net.weights[0]
    pre, jac_pre = [g], [jg]
    hidden, jac_hidden = [x], [np.eye(net.in_dim)]
    for k in range(1, net.depth + 1):
        h, dh, _ = act.eval(pre[-1])
        hidden.append(h)
        jac_hidden.append(dh[:, None] * jac_pre[-1])
        pre.append(net.weights[k] @ hidden[-1] * inv_sqrt_d)
        jac_pre.append(net.weights[k] @ jac_hidden[-1] * inv_sqrt_d)
    value = float(net.kappa * pre[-1][0])
    jac = net.kappa * jac_pre[-1][0]
    return value, ForwardTrace(x, pre, hidden, jac_pre, jac_hidden, value, jac)


def input_jacobian(net: Mlp, act: Activation, x: np.ndarray) -> np.ndarray:
    """d f / d x, read off the batched derivative columns of the forward pass."""
    _, trace = forward(net, act, x)
    return trace.jacobian


@dataclass
class BackwardTrace:
    """Gradient families per level, aligned with ``ForwardTrace.pre``.

    ``dg[k]`` is the output gradient at pre-activation level k+1;
    ``dag[k]`` (one column per Jacobian coordinate) the gradient of each
    Jacobian component; ``dajag[k]`` the gradient of each Jacobian
    component with respect to the propagated input derivative.  The
    recursion for ``dajag`` is identical to the one for ``dg`` (same head
    seed, same updates), so they coincide for every level and coordinate;
    it is stored once per level as a vector.
    """

    dg: list[np.ndarray]
    dag: list[np.ndarray]
    dajag: list[np.ndarray]


def backward(net: Mlp, act: Activation, trace: ForwardTrace) -> BackwardTrace:
    d, L, d0 = net.width, net.depth, net.in_dim
    inv_sqrt_d = 1.0 / np.sqrt(d)
    dg: list[np.ndarray] = [None] * (L + 1)
    dag: list[np.ndarray] = [None] * (L + 1)
    dajag: list[np.ndarray] = [None] * (L + 1)

    dg[L] = np.array([net.kappa])
    dag[L] = np.zeros((1, d0))
    dajag[L] = np.array([net.kappa])

    dh = net.weights[L].T @ dg[L] * inv_sqrt_d
    dah = np.zeros((d, d0))
    dajah = net.weights[L].T @ dajag[L] * inv_sqrt_d
    for k in range(L - 1, -1, -1):
        der = act.deriv(trace.pre[k])
        sec = act.second(trace.pre[k])
        dg[k] = der * dh
        dajag[k] = der * dajah
        dag[k] = sec[:, None] * trace.jac_pre[k] * dajah[:, None] + der[:, None] * dah
        if k > 0:
            dh = net.weights[k].T @ dg[k] * inv_sqrt_d
            dajah = net.weights[k].T @ dajag[k] * inv_sqrt_d
            dah = net.weights[k].T @ dag[k] * inv_sqrt_d
    return BackwardTrace(dg, dag, dajag)


def param_gradients(
    net: Mlp, act: Activation, x: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-layer gradients of f and of every Jacobian component.

    Returns ``(df, dj)`` where ``df[k]`` has the shape of ``weights[k]``
    and ``dj[k]`` stacks the d0 Jacobian-component gradients along axis 0.
    Each is a sum of at most two outer products of backward vectors with
    forward activations.
    """
    _, tr = forward(net, act, x)
    bw = backward(net, act, tr)
    df, dj = [], []
    for k in range(net.depth + 1):
        scale = 1.0 if k == 0 else 1.0 / np.sqrt(net.width)
        df.append(scale * np.outer(bw.dg[k], tr.hidden[k]))
        layer = np.empty((net.in_dim,) + net.weights[k].shape)
        for a in range(net.in_dim):
            layer[a] = scale * (
                np.outer(bw.dag[k][:, a], tr.hidden[k])
                + np.outer(bw.dajag[k], tr.jac_hidden[k][:, a])
            )
        dj.append(layer)
    return df, dj


def _jntk_from_traces(
    width: int,
    depth: int,
    fx: ForwardTrace,
    bx: BackwardTrace,
    fy: ForwardTrace,
    by: BackwardTrace,
) -> np.ndarray:
    d0 = fx.x.shape[0]
    theta = np.zeros((1 + d0, 1 + d0))
    for k in range(depth + 1):
        inv_c = 1.0 if k == 0 else 1.0 / width
        hx, hy = fx.hidden[k], fy.hidden[k]
        jhx, jhy = fx.jac_hidden[k], fy.jac_hidden[k]
        hh = hx @ hy
        jh_h = jhx.T @ hy
        h_jh = jhy.T @ hx
        jj = jhx.T @ jhy
        dgdg = bx.dg[k] @ by.dg[k]
        theta[0, 0] += inv_c * hh * dgdg
        theta[1:, 0] += inv_c * (hh * (bx.dag[k].T @ by.dg[k]) + jh_h * (bx.dajag[k] @ by.dg[k]))
        theta[0, 1:] += inv_c * (hh * (by.dag[k].T @ bx.dg[k]) + h_jh * (by.dajag[k] @ bx.dg[k]))
        theta[1:, 1:] += inv_c * (
            hh * (bx.dag[k].T @ by.dag[k])
            + np.outer(jh_h, by.dag[k].T @ bx.dajag[k])
            + np.outer(bx.dag[k].T @ by.dajag[k], h_jh)
            + jj * (bx.dajag[k] @ by.dajag[k])
        )
    return theta


def finite_jntk(net: Mlp, act: Activation, x: np.ndarray, xp: np.ndarray) -> np.ndarray:
    """Exact finite-width JNTK block via the layer-wise decomposition."""
    _, fx = forward(net, act, x)
    _, fy = forward(net, act, xp)
    bx = backward(net, act, fx)
    by = backward(net, act, fy)
    return _jntk_from_traces(net.width, net.depth, fx, bx, fy, by)


def finite_jntk_gram(net: Mlp, act: Activation, inputs: np.ndarray) -> GramMatrix:
    """Finite JNTK over a dataset, tracing each input once."""
    inputs = np.asarray(inputs, dtype=float)
    n, d0 = inputs.shape
    traces = []
    for i in range(n):
        _, f = forward(net, act, inputs[i])
        traces.append((f, backward(net, act, f)))
    w = 1 + d0
    entries = np.empty((n * w, n * w))
    for i in range(n):
        for j in range(i, n):
            blk = _jntk_from_traces(
                net.width, net.depth, traces[i][0], traces[i][1], traces[j][0], traces[j][1]
            )
            entries[i * w : (i + 1) * w, j * w : (j + 1) * w] = blk
            if j != i:
                entries[j * w : (j + 1) * w, i * w : (i + 1) * w] = blk.T
    return GramMatrix(n, d0, entries)


def estimate_nngp(
    act: Activation,
    width: int,
    depth: int,
    inputs: np.ndarray,
    kappa: float,
    samples: int,
    seed: int,
) -> GramMatrix:
    """Monte-Carlo estimate of the joint (output, Jacobian) covariance.

    Draws ``samples`` independent initialisations (streams 1..samples of
    the seed), evaluates output and Jacobian at every dataset point, and
    returns the empirical covariance (mean subtracted, 1/(samples - 1)
    normaliser) divided by kappa^2 for comparison with the limiting kernel.
    """
    if samples < 2:
        raise DomainError(f"need at least 2 samples, got {samples}")
    inputs = np.asarray(inputs, dtype=float)
    n, d0 = inputs.shape
    vecs = np.empty((samples, n * (1 + d0)))
    for s in range(samples):
        net = init_mlp(seed, width, depth, d0, kappa, stream=s + 1)
        for i in range(n):
            _, tr = forward(net, act, inputs[i])
            base = i * (1 + d0)
            vecs[s, base] = tr.value
            vecs[s, base + 1 : base + 1 + d0] = tr.jacobian
    cov = np.cov(vecs, rowvar=False, ddof=1)
    return GramMatrix(n, d0, cov / (kappa * kappa))


def save_weights(net: Mlp, path: str) -> None:
    """Flat binary dump: header (magic, d, L, d0, kappa, seed), then layers
    in order as little-endian float64, row-major."""
    with open(path, "wb") as fh:
        fh.write(
            struct.pack(
                "<8sIIIdq",
                WEIGHT_MAGIC,
                net.width,
                net.depth,
                net.in_dim,
                net.kappa,
                net.seed,
            )
        )
        for w in net.weights:
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())


def load_weights(path: str) -> Mlp:
    header_size = struct.calcsize("<8sIIIdq")
    with open(path, "rb") as fh:
        header = fh.read(header_size)
        magic, width, depth, in_dim, kappa, seed = struct.unpack("<8sIIIdq", header)
        if magic != WEIGHT_MAGIC:
            raise NumericError(f"{path}: bad magic {magic!r}")
        shapes = [(width, in_dim)] + [(width, width)] * (depth - 1) + [(1, width)]
        weights = []
        for shape in shapes:
            count = shape[0] * shape[1]
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise NumericError(f"{path}: truncated weight file")
            weights.append(np.frombuffer(buf, dtype="<f8").reshape(shape).copy())
    return Mlp(weights, width, depth, in_dim, kappa, seed)
