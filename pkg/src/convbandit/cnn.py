"""Convolutional reward model: init, forward, analytic gradient, training.

The model is L convolutional layers (channels m, patch size q, stride 1,
zero padding, no bias) followed by one linear read-out:

    h^1 = sigma(W^1 phi(x)) / sqrt(q m)
    h^l = sigma(W^l phi(h^{l-1})) / sqrt(q m)      2 <= l <= L
    f(x) = <W_out, h^L> / sqrt(m)

phi stacks the zero-padded patch of every pixel into a column (see
``topology``).  Everything here is pure 64-bit numpy; training returns new
parameter values and never mutates its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import expit

from .errors import DimensionError, DivergedError, EmptyHistoryError, NumericError
from .topology import (
    Grid,
    Line,
    NetTopology,
    gather_patches,
    patch_tables,
    scatter_patches,
)

# Upper bound on floats in the largest per-chunk patch buffer (~64 MB).
_CHUNK_FLOAT_BUDGET = 8_000_000


def _activation(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        return expit(z)
    return np.logaddexp(0.0, z)  # softplus


def _activation_prime(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        s = expit(z)
        return s * (1.0 - s)
    return expit(z)


@dataclass(frozen=True)
class CnnParams:
    """Immutable parameter collection: conv weights W^1..W^L plus read-out."""

    conv: tuple[np.ndarray, ...]
    out: np.ndarray

    def __post_init__(self):
        conv = tuple(np.array(w, dtype=np.float64) for w in self.conv)
        out = np.array(self.out, dtype=np.float64)
        for w in conv:
            w.setflags(write=False)
        out.setflags(write=False)
        object.__setattr__(self, "conv", conv)
        object.__setattr__(self, "out", out)

    @property
    def layer_matrices(self) -> tuple[np.ndarray, ...]:
        return self.conv + (self.out,)

    @property
    def d(self) -> int:
        return sum(w.size for w in self.layer_matrices)

    def to_vector(self) -> np.ndarray:
        """Flatten in layer order: vec(W^1), ..., vec(W^out)."""
        return np.concatenate([w.ravel() for w in self.layer_matrices])


@dataclass(frozen=True)
class GradientVec:
    """Flattened network gradient with per-layer Frobenius norms."""

    flat: np.ndarray
    per_layer_norms: tuple[float, ...]


@dataclass
class ForwardTrace:
    """Per-layer record of one forward evaluation."""

    layers: list[np.ndarray]
    preactivations: list[np.ndarray]
    output: float


class TrainingHistory:
    """Append-only store of (context, reward) pairs."""

    def __init__(self):
        self._contexts: list[np.ndarray] = []
        self._rewards: list[float] = []

    def append(self, context: np.ndarray, reward: float) -> None:
        context = np.asarray(context, dtype=np.float64)
        if self._contexts and context.shape != self._contexts[0].shape:
            raise DimensionError(
                f"context shape {context.shape} != {self._contexts[0].shape}"
            )
        self._contexts.append(context)
        self._rewards.append(float(reward))

    def __len__(self) -> int:
        return len(self._contexts)

    @property
    def contexts(self) -> list[np.ndarray]:
        return list(self._contexts)

    @property
    def rewards(self) -> list[float]:
        return list(self._rewards)

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        if not self._contexts:
            raise EmptyHistoryError("history is empty")
        return np.stack(self._contexts), np.asarray(self._rewards, dtype=np.float64)


def init_params(topology: NetTopology, seed: int) -> CnnParams:
    """Draw W^1..W^L entries from N(0, 1) and read-out entries from N(0, 1/m)."""
    rng = np.random.default_rng(seed)
    m = topology.channels
    conv = tuple(
        rng.standard_normal((m, topology.layer_width(l)))
        for l in range(1, topology.layers + 1)
    )
    out = rng.standard_normal((m, topology.pixels)) / np.sqrt(m)
    return CnnParams(conv=conv, out=out)


def _check_context(x: np.ndarray, topology: NetTopology) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (topology.in_channels, topology.pixels):
        raise DimensionError(
            f"context shape {x.shape} != "
            f"({topology.in_channels}, {topology.pixels})"
        )
    return x


def _check_params(params: CnnParams, topology: NetTopology) -> None:
    if len(params.conv) != topology.layers:
        raise DimensionError(
            f"params carry {len(params.conv)} conv layers, "
            f"topology declares {topology.layers}"
        )
    for l, w in enumerate(params.conv, start=1):
        want = (topology.channels, topology.layer_width(l))
        if w.shape != want:
            raise DimensionError(f"layer {l} weight shape {w.shape} != {want}")
    if params.out.shape != (topology.channels, topology.pixels):
        raise DimensionError(
            f"read-out shape {params.out.shape} != "
            f"({topology.channels}, {topology.pixels})"
        )


def forward(x: np.ndarray, params: CnnParams, topology: NetTopology) -> ForwardTrace:
    """Evaluate the network on one context, keeping per-layer intermediates."""
    x = _check_context(x, topology)
    _check_params(params, topology)
    gather, _ = patch_tables(topology.spatial, topology.patch)
    scale = 1.0 / np.sqrt(topology.patch * topology.channels)
    layers, pres = [], []
    h = x
    for l, w in enumerate(params.conv, start=1):
        z = w @ gather_patches(h, gather)
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite preactivation at layer {l}")
        h = scale * _activation(z, topology.activation)
        pres.append(z)
        layers.append(h)
    out = float(np.vdot(params.out, h)) / np.sqrt(topology.channels)
    if not np.isfinite(out):
        raise NumericError("non-finite network output")
    return ForwardTrace(layers=layers, preactivations=pres, output=out)


def _layer_gradients(
    x: np.ndarray, trace: ForwardTrace, params: CnnParams, topology: NetTopology
) -> list[np.ndarray]:
    """Backward pass: d f / d W^l for every layer, in layer order."""
    gather, scatter = patch_tables(topology.spatial, topology.patch)
    m = topology.channels
    scale = 1.0 / np.sqrt(topology.patch * m)
    n_layers = topology.layers
    grads: list[np.ndarray | None] = [None] * (n_layers + 1)
    grads[n_layers] = trace.layers[-1] / np.sqrt(m)
    cot = params.out / np.sqrt(m)  # d f / d h^L
    for l in range(n_layers, 0, -1):
        delta = cot * _activation_prime(trace.preactivations[l - 1], topology.activation)
        delta *= scale
        prev = x if l == 1 else trace.layers[l - 2]
        grads[l - 1] = delta @ gather_patches(prev, gather).T
        if l > 1:
            cot = scatter_patches(params.conv[l - 1].T @ delta, scatter)
    return grads  # type: ignore[return-value]


def network_gradient(
    x: np.ndarray, params: CnnParams, topology: NetTopology
) -> GradientVec:
    """Gradient of the network output with respect to all parameters."""
    trace = forward(x, params, topology)
    grads = _layer_gradients(np.asarray(x, dtype=np.float64), trace, params, topology)
    flat = np.concatenate([g.ravel() for g in grads])
    norms = tuple(float(np.linalg.norm(g)) for g in grads)
    return GradientVec(flat=flat, per_layer_norms=norms)


def loss(history: TrainingHistory, params: CnnParams, topology: NetTopology) -> float:
    """Half the summed squared prediction error over the whole history."""
    contexts, rewards = history.stacked()
    preds = batch_forward(contexts, params, topology)
    return float(0.5 * np.sum((preds - rewards) ** 2))


def param_distance(params: CnnParams, params0: CnnParams) -> np.ndarray:
    """Per-layer Frobenius distances between two parameter collections."""
    a, b = params.layer_matrices, params0.layer_matrices
    if len(a) != len(b) or any(x.shape != y.shape for x, y in zip(a, b)):
        raise DimensionError("parameter collections have mismatched shapes")
    return np.array([np.linalg.norm(x - y) for x, y in zip(a, b)])


def train_gd(
    params0: CnnParams,
    history: TrainingHistory,
    eta: float,
    k: int,
    topology: NetTopology,
) -> CnnParams:
    """Run exactly k full-batch gradient steps on the quadratic loss.

    ``params0`` is the starting point: pass the frozen initialisation for
    retrain-from-scratch, or the previous round's parameters for warm starts.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if k < 0:
        raise ValueError("k must be non-negative")
    _check_params(params0, topology)
    if k == 0:
        return params0
    contexts, rewards = history.stacked()
    weights = [np.array(w) for w in params0.conv]
    out_w = np.array(params0.out)
    for i in range(1, k + 1):
        loss_val, grads, out_grad = _loss_and_gradient(
            contexts, rewards, weights, out_w, topology
        )
        if not np.isfinite(loss_val):
            raise DivergedError(i)
        for w, g in zip(weights, grads):
            w -= eta * g
        out_w -= eta * out_grad
    if not all(np.all(np.isfinite(w)) for w in weights + [out_w]):
        raise DivergedError(k)
    return CnnParams(conv=tuple(weights), out=out_w)


# ---------------------------------------------------------------------------
# Batched internals.  Samples are laid out pixel-flat: a stack of n contexts
# becomes a (channels, n * pixels) matrix so every layer is one dense GEMM.
# Patch windows must not cross sample boundaries, hence the per-sample index
# tables below (one zero slot per sample).


@lru_cache(maxsize=32)
def _flat_tables(spatial, patch: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    gather, scatter = patch_tables(spatial, patch)
    p = spatial.pixels
    offs = np.arange(n, dtype=np.intp)[None, :, None] * (p + 1)
    gflat = (gather[:, None, :] + offs).reshape(patch, n * p)
    sflat = (scatter[:, None, :] + offs).reshape(patch, n * p)
    gflat.setflags(write=False)
    sflat.setflags(write=False)
    return gflat, sflat


def _chunk_size(topology: NetTopology) -> int:
    widest = max(topology.in_channels, topology.channels) * topology.patch
    return max(1, _CHUNK_FLOAT_BUDGET // (widest * topology.pixels))


def _flat_gather(h3: np.ndarray, gflat: np.ndarray) -> np.ndarray:
    """h3: (channels, n, pixels+1) padded buffer -> (channels*q, n*pixels)."""
    channels = h3.shape[0]
    q, npix = gflat.shape
    flat = h3.reshape(channels, -1)
    return flat[:, gflat].reshape(channels * q, npix)


def _flat_scatter(v: np.ndarray, sflat: np.ndarray, n: int, p: int) -> np.ndarray:
    """Adjoint of :func:`_flat_gather`; v is (channels*q, n*p)."""
    q = sflat.shape[0]
    channels = v.shape[0] // q
    v4 = v.reshape(channels, q, n, p)
    vext = np.concatenate([v4, np.zeros((channels, q, n, 1))], axis=-1)
    vext = vext.reshape(channels, q, n * (p + 1))
    picked = vext[:, np.arange(q)[:, None], sflat]  # (channels, q, n*p)
    return picked.sum(axis=1)


def _padded(h: np.ndarray, n: int, p: int) -> np.ndarray:
    """Reshape (channels, n*p) to (channels, n, p+1) with a zero pad slot."""
    buf = np.zeros((h.shape[0], n, p + 1))
    buf[:, :, :p] = h.reshape(h.shape[0], n, p)
    return buf


def _forward_chunk(xc, weights, out_w, topology, keep):
    """Forward one chunk; returns (preds, per-layer buffers when keep)."""
    n = xc.shape[0]
    p = topology.pixels
    m = topology.channels
    scale = 1.0 / np.sqrt(topology.patch * m)
    gflat, sflat = _flat_tables(topology.spatial, topology.patch, n)
    # (n, c, p) -> (c, n, p+1) padded
    h3 = np.zeros((xc.shape[1], n, p + 1))
    h3[:, :, :p] = xc.transpose(1, 0, 2)
    phis, zs, hs = [], [], []
    for w in weights:
        phi = _flat_gather(h3, gflat)
        z = w @ phi
        h3 = np.zeros((m, n, p + 1))
        h3[:, :, :p] = (scale * _activation(z, topology.activation)).reshape(m, n, p)
        if keep:
            phis.append(phi)
            zs.append(z)
            hs.append(h3)
    preds = np.einsum("mp,mnp->n", out_w, h3[:, :, :p]) / np.sqrt(m)
    return preds, phis, zs, hs, (gflat, sflat)


def batch_forward(
    contexts: np.ndarray, params: CnnParams, topology: NetTopology
) -> np.ndarray:
    """Network outputs for a (n, channels, pixels) stack of contexts."""
    contexts = np.asarray(contexts, dtype=np.float64)
    _check_params(params, topology)
    chunk = _chunk_size(topology)
    preds = np.empty(contexts.shape[0])
    for lo in range(0, contexts.shape[0], chunk):
        xc = contexts[lo : lo + chunk]
        preds[lo : lo + xc.shape[0]] = _forward_chunk(
            xc, params.conv, params.out, topology, keep=False
        )[0]
    return preds


def _loss_and_gradient(contexts, rewards, weights, out_w, topology):
    """Loss plus its full-batch gradient, accumulated over sample chunks."""
    m = topology.channels
    p = topology.pixels
    scale = 1.0 / np.sqrt(topology.patch * m)
    grads = [np.zeros_like(w) for w in weights]
    out_grad = np.zeros_like(out_w)
    total = 0.0
    chunk = _chunk_size(topology)
    for lo in range(0, contexts.shape[0], chunk):
        xc = contexts[lo : lo + chunk]
        rc = rewards[lo : lo + xc.shape[0]]
        n = xc.shape[0]
        preds, phis, zs, hs, (gflat, sflat) = _forward_chunk(
            xc, weights, out_w, topology, keep=True
        )
        resid = preds - rc
        total += 0.5 * float(resid @ resid)
        hl = hs[-1][:, :, :p]
        out_grad += np.einsum("n,mnp->mp", resid, hl) / np.sqrt(m)
        # cotangent wrt h^L, pixel-flat
        cot = (out_w[:, None, :] * resid[None, :, None] / np.sqrt(m)).reshape(m, n * p)
        for l in range(len(weights), 0, -1):
            delta = cot * _activation_prime(zs[l - 1], topology.activation)
            delta *= scale
            grads[l - 1] += delta @ phis[l - 1].T
            if l > 1:
                v = weights[l - 1].T @ delta
                cot = _flat_scatter(v, sflat, n, p)
    return total, grads, out_grad
