"""Tangent-kernel diagnostics: kernel values, linearized predictions,
gradient Gram matrices and the effective dimension."""

from __future__ import annotations

import math

import numpy as np

from .cnn import CnnParams, network_gradient
from .errors import NumericError
from .topology import NetTopology


def cntk_kernel(
    x1: np.ndarray, x2: np.ndarray, params0: CnnParams, topology: NetTopology
) -> float:
    """Inner product of initialization gradients <g(x1), g(x2)>."""
    g1 = network_gradient(x1, params0, topology).flat
    g2 = network_gradient(x2, params0, topology).flat
    return float(g1 @ g2)


def cntk_predict(
    x: np.ndarray, params: CnnParams, params0: CnnParams, topology: NetTopology
) -> float:
    """First-order model around initialization: <g(x; theta0), theta - theta0>."""
    g0 = network_gradient(x, params0, topology).flat
    shift = params.to_vector() - params0.to_vector()
    if shift.shape != g0.shape:
        raise NumericError("parameter collections have mismatched sizes")
    return float(g0 @ shift)


def gradient_features(
    arms, params0: CnnParams, topology: NetTopology, normalized: bool = True
) -> np.ndarray:
    """Stack gradients at params0 as columns, optionally scaled by 1/sqrt(m)."""
    cols = [network_gradient(x, params0, topology).flat for x in arms]
    u = np.column_stack(cols) if cols else np.zeros((params0.d, 0))
    if normalized:
        u = u / math.sqrt(topology.channels)
    return u


def gram_matrix(
    arms, params0: CnnParams, topology: NetTopology, normalized: bool = True
) -> np.ndarray:
    """Kernel matrix K_ij over the supplied arms at initialization."""
    u = gradient_features(arms, params0, topology, normalized=normalized)
    k = u.T @ u
    return (k + k.T) * 0.5


def logdet_psd(gram: np.ndarray, lam: float) -> float:
    """log det(I + K / lambda) for a PSD kernel matrix, via Cholesky."""
    k = np.asarray(gram, dtype=np.float64)
    if k.size == 0:
        return 0.0
    k = (k + k.T) * 0.5
    if np.diag(k).min() < -1e-8:
        raise NumericError("kernel matrix has a negative diagonal beyond jitter")
    a = np.eye(k.shape[0]) + k / lam
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NumericError("kernel matrix is not positive semi-definite") from exc
    return float(2.0 * np.sum(np.log(np.diag(chol))))


def effective_dimension(
    arms, params0: CnnParams, topology: NetTopology, lam: float, T: int
) -> float:
    """Spectral-decay measure log det(I + K/lambda) / log(1 + T/lambda).

    K is the Gram of initialization gradients scaled by 1/sqrt(m), matching
    the design matrix's feature convention.  T must equal the arm count.
    """
    arms = list(arms)
    if T < 1 or len(arms) != T:
        raise ValueError(f"T={T} must equal the number of arms ({len(arms)})")
    gram = gram_matrix(arms, params0, topology, normalized=True)
    return logdet_psd(gram, lam) / math.log(1.0 + T / lam)
