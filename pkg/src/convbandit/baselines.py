"""Comparison policies: LinUCB, RBF kernel UCB, and a fully-connected
network that plugs into the same gradient-feature UCB machinery."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cnn import CnnParams, GradientVec, forward, init_params, network_gradient
from .errors import BanditError, DimensionError, NumericError
from .precision import PrecisionState, new_state, ridge_theta_hat, update_state, widths
from .topology import Line, NetTopology


def default_alpha(delta: float) -> float:
    """Classical LinUCB exploration scale 1 + sqrt(ln(2/delta)/2)."""
    return 1.0 + math.sqrt(math.log(2.0 / delta) / 2.0)


# ---------------------------------------------------------------------------
# LinUCB


@dataclass(frozen=True)
class LinUcbState:
    """Ridge-regression bandit state over raw context vectors."""

    alpha: float
    precision: PrecisionState

    @property
    def d(self) -> int:
        return self.precision.d

    @property
    def lam(self) -> float:
        return self.precision.lam

    @property
    def theta_hat(self) -> np.ndarray:
        return ridge_theta_hat(self.precision)


def linucb_new(lam: float, d: int, alpha: float | None = None,
               delta: float = 0.1) -> LinUcbState:
    if alpha is None:
        alpha = default_alpha(delta)
    return LinUcbState(alpha=float(alpha), precision=new_state(lam, d))


def linucb_scores(state: LinUcbState, contexts) -> tuple[np.ndarray, np.ndarray]:
    """Ridge estimates x^T theta_hat and widths ||x||_{A^{-1}} per context."""
    contexts = [np.asarray(x, dtype=np.float64).ravel() for x in contexts]
    if not contexts:
        raise BanditError("cannot select from an empty context list")
    for x in contexts:
        if x.shape != (state.d,):
            raise DimensionError(f"context length {x.shape} != ({state.d},)")
    cols = np.column_stack(contexts)
    return cols.T @ state.theta_hat, widths(state.precision, cols)


def linucb_select(state: LinUcbState, contexts) -> int:
    """argmax of x^T theta_hat + alpha * ||x||_{A^{-1}}, lowest index on ties."""
    means, width_vals = linucb_scores(state, contexts)
    return int(np.argmax(means + state.alpha * width_vals))


def linucb_update(state: LinUcbState, context, reward: float) -> LinUcbState:
    """Rank-1 update of the shared precision state with the raw context."""
    x = np.asarray(context, dtype=np.float64).ravel()
    # m=1: LinUCB features are the contexts themselves, unscaled.
    return replace(state, precision=update_state(state.precision, x, 1, reward))


# ---------------------------------------------------------------------------
# Kernel UCB with an RBF kernel and a capped context dictionary


@dataclass(frozen=True)
class KernelUcbState:
    """Kernel ridge state; stops absorbing new contexts once at capacity."""

    gamma: float
    lam: float
    beta: float
    capacity: int = 500
    dictionary: tuple = ()
    rewards: tuple = ()
    kernel_inv: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def size(self) -> int:
        return len(self.dictionary)


def kernelucb_new(gamma: float, lam: float, beta: float | None = None,
                  delta: float = 0.1, capacity: int = 500) -> KernelUcbState:
    if gamma <= 0 or lam <= 0:
        raise ValueError("gamma and lambda must be positive")
    if beta is None:
        beta = default_alpha(delta)
    return KernelUcbState(gamma=float(gamma), lam=float(lam), beta=float(beta),
                          capacity=capacity)


def rbf_kernel(x: np.ndarray, y: np.ndarray, gamma: float) -> float:
    diff = np.asarray(x, dtype=np.float64).ravel() - np.asarray(y, dtype=np.float64).ravel()
    return float(np.exp(-gamma * float(diff @ diff)))


def _kernel_columns(state: KernelUcbState, contexts) -> np.ndarray:
    """k(x_i, c_j) matrix of stored points against candidates, (size, n)."""
    if state.size == 0:
        return np.zeros((0, len(contexts)))
    stored = np.stack([np.asarray(x, dtype=np.float64).ravel() for x in state.dictionary])
    cand = np.stack([np.asarray(x, dtype=np.float64).ravel() for x in contexts])
    sq = ((stored[:, None, :] - cand[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-state.gamma * sq)


def kernelucb_scores(state: KernelUcbState, contexts) -> tuple[np.ndarray, np.ndarray]:
    """Posterior means and widths for each candidate context."""
    kx = _kernel_columns(state, contexts)
    n = kx.shape[1]
    if state.size == 0:
        means = np.zeros(n)
        var = np.full(n, 1.0 / state.lam)  # k(x,x)=1 for the RBF kernel
    else:
        r = np.asarray(state.rewards)
        solved = state.kernel_inv @ kx
        means = solved.T @ r
        var = (1.0 - np.einsum("sn,sn->n", kx, solved)) / state.lam
    return means, np.sqrt(np.maximum(var, 0.0))


def kernelucb_select(state: KernelUcbState, contexts) -> int:
    contexts = list(contexts)
    if not contexts:
        raise BanditError("cannot select from an empty context list")
    means, width_vals = kernelucb_scores(state, contexts)
    return int(np.argmax(means + state.beta * width_vals))


def kernelucb_update(state: KernelUcbState, context, reward: float) -> KernelUcbState:
    """Absorb one observation; past capacity the dictionary stays frozen."""
    if state.size >= state.capacity:
        return state
    x = np.asarray(context, dtype=np.float64).ravel()
    if state.size == 0:
        inv = np.array([[1.0 / (1.0 + state.lam)]])
    else:
        kx = _kernel_columns(state, [x])[:, 0]
        solved = state.kernel_inv @ kx
        schur = (1.0 + state.lam) - float(kx @ solved)
        if schur <= 1e-12:
            raise NumericError(
                "kernel system is singular; escalate the ridge jitter lambda"
            )
        top_left = state.kernel_inv + np.outer(solved, solved) / schur
        inv = np.block([
            [top_left, -solved[:, None] / schur],
            [-solved[None, :] / schur, np.array([[1.0 / schur]])],
        ])
    return replace(
        state,
        dictionary=state.dictionary + (x,),
        rewards=state.rewards + (float(reward),),
        kernel_inv=inv,
    )


def kernelucb_step(state: KernelUcbState, contexts, observe) -> tuple[int, KernelUcbState]:
    """Select, observe via ``observe(index) -> reward``, and update."""
    idx = kernelucb_select(state, contexts)
    reward = observe(idx)
    return idx, kernelucb_update(state, list(contexts)[idx], reward)


# ---------------------------------------------------------------------------
# Fully-connected reward model


@dataclass(frozen=True)
class FcTopology:
    """Fully-connected network shape: ``depth`` hidden layers of ``width``."""

    input_dim: int
    depth: int = 4
    width: int = 100
    activation: str = "sigmoid"

    def as_net_topology(self) -> NetTopology:
        # A single-pixel, patch-1 convolutional stack is exactly a
        # fully-connected network with the same 1/sqrt(width) scaling.
        return NetTopology(
            layers=self.depth,
            channels=self.width,
            patch=1,
            in_channels=self.input_dim,
            pixels=1,
            spatial=Line(1),
            activation=self.activation,
        )


def init_fc_params(topology: FcTopology, seed: int) -> CnnParams:
    return init_params(topology.as_net_topology(), seed)


def fc_forward_gradient(
    x: np.ndarray, params: CnnParams, topology: FcTopology
) -> tuple[float, GradientVec]:
    """Output and flattened gradient for one input vector."""
    net = topology.as_net_topology()
    col = np.asarray(x, dtype=np.float64).reshape(topology.input_dim, 1)
    value = forward(col, params, net).output
    grad = network_gradient(col, params, net)
    return value, grad
