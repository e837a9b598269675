"""Arm scoring and selection for the gradient-feature UCB rule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bounds import ExploreConfig, ucb_terms
from .cnn import CnnParams, forward, network_gradient
from .errors import BanditError
from .precision import PrecisionState, widths
from .topology import NetTopology


@dataclass(frozen=True)
class UcbScore:
    """Per-arm decomposition of the selection value.

    total = mean + psi1 * width + psi2 + psi3; practical mode records the
    exploration scale nu in psi1 and zeros in psi2/psi3, so the identity
    holds in both modes.
    """

    mean: float
    width: float
    psi1: float
    psi2: float
    psi3: float
    total: float

    @property
    def selection_key(self) -> float:
        """Arm-dependent part of the total.

        psi2 and psi3 are identical for every arm within a round, so ranking
        by mean + psi1 * width is exactly the ranking by total - and it stays
        exact in floating point even when the theoretical offsets dwarf the
        arm-dependent terms.
        """
        return self.mean + self.psi1 * self.width


def psi1(state: PrecisionState, cfg: ExploreConfig) -> float:
    """Confidence-radius multiplier sqrt(logdet ratio - 2 ln delta) + sqrt(lambda) S."""
    radicand = state.logdet_ratio - 2.0 * math.log(cfg.delta)
    return math.sqrt(radicand) + math.sqrt(state.lam) * cfg.s_bar


def _assemble_scores(
    means: np.ndarray,
    width_vals: np.ndarray,
    topology: NetTopology,
    state: PrecisionState,
    cfg: ExploreConfig,
) -> list[UcbScore]:
    if cfg.mode == "practical":
        p1, p2, p3 = cfg.nu, 0.0, 0.0
    else:
        terms = ucb_terms(topology, cfg, state.t, state.lam)
        p1, p2, p3 = psi1(state, cfg), terms.psi2, terms.psi3
    return [
        UcbScore(
            mean=float(mu),
            width=float(wd),
            psi1=p1,
            psi2=p2,
            psi3=p3,
            total=float(mu) + p1 * float(wd) + p2 + p3,
        )
        for mu, wd in zip(means, width_vals)
    ]


def score_arms(
    arms,
    params: CnnParams,
    topology: NetTopology,
    state: PrecisionState,
    cfg: ExploreConfig,
    params0: CnnParams | None = None,
) -> tuple[list[UcbScore], np.ndarray]:
    """Score every arm; also returns the g/sqrt(m) feature columns.

    Means and widths are evaluated at the current trained parameters; the
    returned feature matrix lets the caller reuse the chosen arm's gradient
    for the design-matrix update without recomputing it.
    """
    del params0  # scoring needs only the current parameters
    means = np.empty(len(arms))
    cols = np.empty((state.d, len(arms)))
    sqrt_m = math.sqrt(topology.channels)
    for i, x in enumerate(arms):
        means[i] = forward(x, params, topology).output
        cols[:, i] = network_gradient(x, params, topology).flat / sqrt_m
    width_vals = widths(state, cols)
    return _assemble_scores(means, width_vals, topology, state, cfg), cols


def score_arm(
    x,
    params: CnnParams,
    topology: NetTopology,
    state: PrecisionState,
    cfg: ExploreConfig,
    params0: CnnParams | None = None,
) -> UcbScore:
    """Score a single arm (see :func:`score_arms`)."""
    scores, _ = score_arms([x], params, topology, state, cfg, params0)
    return scores[0]


def select_arm(scores) -> int:
    """Index of the maximal selection value; ties go to the lowest index.

    Ranking uses the arm-dependent part of the total (see
    ``UcbScore.selection_key``), which is invariant to any constant added
    to every arm's total within a round.
    """
    scores = list(scores)
    if not scores:
        raise BanditError("cannot select from an empty score list")
    keys = np.array([s.selection_key for s in scores])
    return int(np.argmax(keys))
