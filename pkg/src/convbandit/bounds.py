"""Closed-form confidence and regret bound terms.

These are report-only diagnostics at practical network widths: the width
condition they assume is astronomically large, so nothing here ever steers
arm selection except the arm-independent offsets added in theoretical
scoring mode.  All expressions are evaluated verbatim as printed, with the
asymptotic wrappers read as exact constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .topology import NetTopology


@dataclass(frozen=True)
class ExploreConfig:
    """Exploration settings shared by scoring and the bound calculator.

    mode "practical" explores with nu * width; mode "theoretical" uses the
    full confidence radius (psi1 * width + psi2 + psi3).  delta is the
    failure probability, s_bar the assumed scaled parameter-shift bound,
    and (c0, c1, c2) the constants of the width condition, with c1 and c2
    restricted to (1, 2).
    """

    mode: str = "practical"
    delta: float = 0.1
    s_bar: float = 1.0
    nu: float = 1.0
    c0: float = 1.0
    c1: float = 1.5
    c2: float = 1.5

    def __post_init__(self):
        if self.mode not in ("practical", "theoretical"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.s_bar <= 0:
            raise ValueError("s_bar must be positive")
        if self.nu < 0:
            raise ValueError("nu must be non-negative")
        if self.c0 <= 0:
            raise ValueError("c0 must be positive")
        for name, c in (("c1", self.c1), ("c2", self.c2)):
            if not 1.0 < c < 2.0:
                raise ValueError(f"{name} must lie in (1, 2)")


@dataclass(frozen=True)
class BoundTerms:
    """Intermediate quantities of the confidence-radius expressions."""

    w: float
    psi_lk: float
    a_bar_1: float
    a_bar_2: float
    a_bar_3: float
    ridge_distance: float  # bracketed factor of psi2
    psi2: float
    psi3: float


@dataclass(frozen=True)
class BoundReport:
    """Everything the bound calculator can say about one configuration."""

    w: float
    psi_lk: float
    a_bar_1: float
    a_bar_2: float
    a_bar_3: float
    psi2: float
    psi3: float
    m_required: float
    eta_max: float
    gram_drift: float
    lambda_1: float | None = None
    d_bar: float | None = None
    regret_bound: float | None = None

    def lines(self) -> list[str]:
        out = []
        for name in (
            "w", "psi_lk", "a_bar_1", "a_bar_2", "a_bar_3", "psi2", "psi3",
            "m_required", "eta_max", "gram_drift", "lambda_1", "d_bar",
            "regret_bound",
        ):
            value = getattr(self, name)
            out.append(f"{name} = {'n/a' if value is None else repr(float(value))}")
        return out


def ucb_terms(topology: NetTopology, cfg: ExploreConfig, t: int, lam: float) -> BoundTerms:
    """Evaluate w, Psi_{L,(k')}, the A-bars and psi2/psi3 at round t."""
    L = topology.layers
    m = topology.channels
    q = topology.patch
    p = topology.pixels
    mu = topology.lipschitz
    c0, c1, c2 = cfg.c0, cfg.c1, cfg.c2
    sq = math.sqrt(q)

    w = 2.0 * t * math.sqrt(2.0) * mu**L * math.exp(c1 * (L - 1) * sq + c2) * (
        (c1 * mu) ** L + 1.0
    ) / c0
    ratio = 2.0 * mu * c1 * sq
    if abs(ratio - 1.0) < 1e-12:
        geom = float(L)  # limit of the geometric sum as the ratio -> 1
    else:
        geom = (ratio**L - 1.0) / (ratio - 1.0)
    psi_lk = mu * w * geom / m

    cl = (c1 * mu) ** L
    grad0_norm = math.sqrt(p) * (c1 * mu * sq) ** L / m
    grad_shift = sq * psi_lk * (cl + 2.0)

    a1 = t * math.sqrt(2.0 * q * (L + 1)) * psi_lk * (cl + 2.0)
    lin0 = psi_lk * (c2 + 1.0) + cl * c2 + sq * w * ((L - 1) * cl + 1.0)
    a2 = t * math.sqrt(L + 1.0) * math.sqrt(p) * (c1 * mu * sq) ** L * math.sqrt(t) \
        * lin0 * m ** (-1.5)
    a3 = lam * math.sqrt(L + 1.0) * w / math.sqrt(m)

    ridge = (a1 + a2 + a3) / (m * lam) + math.sqrt(t / (m * lam)) + (
        t * (L + 1) / m
    ) * (2.0 * grad0_norm + grad_shift) * grad_shift
    psi2 = math.sqrt(L + 1.0) * (grad0_norm + grad_shift) * ridge
    psi3 = (
        c2 * (psi_lk + cl)
        + sq * (1.0 + psi_lk) * w * ((L - 1) * (psi_lk + cl) + 1.0)
    ) / math.sqrt(m)
    return BoundTerms(
        w=w, psi_lk=psi_lk, a_bar_1=a1, a_bar_2=a2, a_bar_3=a3,
        ridge_distance=ridge, psi2=psi2, psi3=psi3,
    )


def gram_drift_bound(topology: NetTopology, cfg: ExploreConfig, T: int, lam: float) -> float:
    """Frobenius bound on the Gram-matrix drift away from initialization."""
    terms = ucb_terms(topology, cfg, T, lam)
    L, m, q, p = topology.layers, topology.channels, topology.patch, topology.pixels
    mu, c1 = topology.lipschitz, cfg.c1
    cl = (c1 * mu) ** L
    grad0_norm = math.sqrt(p) * (c1 * mu * math.sqrt(q)) ** L / m
    grad_shift = math.sqrt(q) * terms.psi_lk * (cl + 2.0)
    return (T * (L + 1) / m) * (2.0 * grad0_norm + grad_shift) * grad_shift


def width_condition(topology: NetTopology, cfg: ExploreConfig, t: int, lam: float,
                    delta: float) -> float:
    """Channel count the confidence bound demands at round t."""
    L, q = topology.layers, topology.patch
    mu, c0, c1, c2 = topology.lipschitz, cfg.c0, cfg.c1, cfg.c2
    poly = t**4 * (c1 * mu) ** L * math.exp(c1 * L * math.sqrt(q) + c2) / (lam * c0)
    tail = math.log(max(L * t, 1) / delta)
    return max(poly, tail)


def effective_dimension_from_gram(gram: np.ndarray, lam: float, T: int) -> float:
    """log det(I + K/lambda) / log(1 + T/lambda) via Cholesky."""
    from .ntk import logdet_psd  # local import to avoid a cycle

    return logdet_psd(gram, lam) / math.log(1.0 + T / lam)


def regret_bound_rhs(d_bar: float, T: int, lam: float, delta: float, s_bar: float) -> float:
    """Right-hand side of the cumulative regret guarantee."""
    ld = d_bar * math.log(1.0 + T / lam)
    return 2.0 * math.sqrt(2.0 * T * ld + 1.0) * (
        math.sqrt(ld + 2.0 * math.log(1.0 / delta) + 1.0) + math.sqrt(lam) * s_bar
    ) + 2.0


def theory_bounds(
    topology: NetTopology,
    cfg: ExploreConfig,
    t: int,
    k: int,
    T: int,
    lam: float,
    gram: np.ndarray | None = None,
) -> BoundReport:
    """Evaluate every printed bound expression for one configuration.

    ``gram`` is the optional T x T kernel of initialization gradients scaled
    by 1/sqrt(m) (the same normalization the design matrix uses); it unlocks
    lambda_1, the effective dimension and the regret right-hand side.
    ``k`` is accepted for interface completeness: the printed closed forms
    do not depend on the iteration count.
    """
    del k
    terms = ucb_terms(topology, cfg, t, lam)
    report = {
        "w": terms.w,
        "psi_lk": terms.psi_lk,
        "a_bar_1": terms.a_bar_1,
        "a_bar_2": terms.a_bar_2,
        "a_bar_3": terms.a_bar_3,
        "psi2": terms.psi2,
        "psi3": terms.psi3,
        "m_required": width_condition(topology, cfg, t, lam, cfg.delta),
        "eta_max": 1.0 / (topology.channels * lam + 1.0),
        "gram_drift": gram_drift_bound(topology, cfg, T, lam),
    }
    if gram is not None:
        gram = np.asarray(gram, dtype=np.float64)
        eigs = np.linalg.eigvalsh((gram + gram.T) * 0.5)
        d_bar = effective_dimension_from_gram(gram, lam, T)
        report["lambda_1"] = float(eigs[0]) * topology.channels
        report["d_bar"] = d_bar
        report["regret_bound"] = regret_bound_rhs(d_bar, T, lam, cfg.delta, cfg.s_bar)
    return BoundReport(**report)
