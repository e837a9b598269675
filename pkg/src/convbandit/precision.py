"""Regularized design-matrix state for gradient-feature ridge regression.

Tracks A_t^{-1}, b_t and log det(A_t) - d log(lambda) under rank-1 updates
A_t = A_{t-1} + u u^T with u = g / sqrt(m).  The default keeps the full
d x d inverse via Sherman-Morrison; a diagonal approximation is available
for parameter counts where the dense inverse is not affordable (a deviation
from the exact rule, so it must be requested explicitly).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError


@dataclass(frozen=True)
class PrecisionState:
    """Inverse design matrix, reward-weighted features, and log-det ratio."""

    lam: float
    d: int
    a_inv: np.ndarray  # (d, d) when dense, (d,) of diagonal entries otherwise
    b: np.ndarray
    logdet_ratio: float
    t: int
    diagonal: bool = False

    def __post_init__(self):
        a_inv = np.asarray(self.a_inv, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        a_inv.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a_inv", a_inv)
        object.__setattr__(self, "b", b)


def new_state(lam: float, d: int, diagonal: bool = False) -> PrecisionState:
    """Fresh state for A_0 = lambda * I."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if d < 1:
        raise ValueError("dimension must be >= 1")
    a_inv = np.full(d, 1.0 / lam) if diagonal else np.eye(d) / lam
    return PrecisionState(
        lam=float(lam), d=d, a_inv=a_inv, b=np.zeros(d), logdet_ratio=0.0, t=0,
        diagonal=diagonal,
    )


def _feature(g, m: int, d: int) -> np.ndarray:
    # Accepts a raw vector or anything carrying one in a .flat attribute
    # (e.g. a network GradientVec); the state is model-agnostic.
    flat = g if isinstance(g, np.ndarray) else g.flat
    u = np.asarray(flat, dtype=np.float64) / np.sqrt(m)
    if u.shape != (d,):
        raise DimensionError(f"gradient length {u.shape} != ({d},)")
    if not np.all(np.isfinite(u)):
        raise NumericError("non-finite gradient feature")
    return u


def update_state(state: PrecisionState, g, m: int, reward: float) -> PrecisionState:
    """Absorb one observation: rank-1 update of A^{-1}, b and the log-det."""
    u = _feature(g, m, state.d)
    if state.diagonal:
        a_diag = 1.0 / state.a_inv  # current diagonal of A
        gain = np.log1p(u * u / a_diag).sum()
        new_inv = 1.0 / (a_diag + u * u)
    else:
        v = state.a_inv @ u
        denom = 1.0 + float(u @ v)
        new_inv = state.a_inv - np.outer(v, v) / denom
        new_inv = (new_inv + new_inv.T) * 0.5
        gain = np.log(denom)
    return PrecisionState(
        lam=state.lam,
        d=state.d,
        a_inv=new_inv,
        b=state.b + reward * u,
        logdet_ratio=state.logdet_ratio + float(gain),
        t=state.t + 1,
        diagonal=state.diagonal,
    )


def width(state: PrecisionState, g, m: int) -> float:
    """Exploration width ||g / sqrt(m)||_{A^{-1}}."""
    u = _feature(g, m, state.d)
    if state.diagonal:
        quad = float(np.sum(u * u * state.a_inv))
    else:
        quad = float(u @ (state.a_inv @ u))
    return float(np.sqrt(max(quad, 0.0)))


def widths(state: PrecisionState, u_cols: np.ndarray) -> np.ndarray:
    """Widths for many features at once; u_cols is (d, n) of g/sqrt(m)."""
    if u_cols.shape[0] != state.d:
        raise DimensionError(f"feature rows {u_cols.shape[0]} != {state.d}")
    if state.diagonal:
        quad = np.einsum("dn,d,dn->n", u_cols, state.a_inv, u_cols)
    else:
        quad = np.einsum("dn,dn->n", u_cols, state.a_inv @ u_cols)
    return np.sqrt(np.maximum(quad, 0.0))


def ridge_theta_hat(state: PrecisionState) -> np.ndarray:
    """Ridge estimate A^{-1} b in gradient-feature space."""
    if state.diagonal:
        return state.a_inv * state.b
    return state.a_inv @ state.b
