"""Finite-width verification of the theory's building blocks.

Nothing here asserts the printed constants (they need absurd widths); the
sweeps measure how fast gradients, the tangent kernel, the linearization
and the ridge coupling drift as the channel count grows, and report the
matching bound expressions next to the measurements.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .bounds import ExploreConfig, ucb_terms
from .cnn import (
    CnnParams,
    TrainingHistory,
    forward,
    init_params,
    network_gradient,
    param_distance,
    train_gd,
)
from .errors import DivergedError, EmptyHistoryError, RankError
from .ntk import cntk_predict, gradient_features, logdet_psd
from .topology import NetTopology


def construct_theta_star(
    arms, targets, params: CnnParams, topology: NetTopology
) -> tuple[np.ndarray, float, float, float]:
    """Minimum-norm parameter shift reproducing the targets linearly.

    Stacks the gradients at ``params`` as columns G (d x t) and solves
    G^T shift = targets through the SVD.  Returns (shift, residual,
    ||shift||^2 as the quadratic form targets^T (G^T G)^{-1} targets, and
    the smallest eigenvalue of G^T G).
    """
    arms = list(arms)
    f_star = np.asarray(targets, dtype=np.float64).ravel()
    if len(arms) != f_star.size:
        raise ValueError("arm and target counts differ")
    if len(arms) > params.d:
        raise RankError("more targets than parameters: system is overdetermined")
    g = gradient_features(arms, params, topology, normalized=False)
    u, s, vt = np.linalg.svd(g, full_matrices=False)
    if s[0] == 0.0 or s[-1] < 1e-10 * s[0]:
        raise RankError("gradient matrix is rank deficient")
    shift = u @ ((vt @ f_star) / s)
    residual = float(np.linalg.norm(g.T @ shift - f_star))
    norm_sq = float(f_star @ (vt.T @ ((vt @ f_star) / s**2)))
    lambda_1 = float(s[-1] ** 2)
    return shift, residual, norm_sq, lambda_1


def ridge_solution_lowrank(
    features: np.ndarray, rewards: np.ndarray, lam: float
) -> np.ndarray:
    """theta_hat = (lam I + U U^T)^{-1} U r without forming the d x d matrix.

    ``features`` holds the g/sqrt(m) columns U (d x t).  Equivalent to the
    incremental ridge state but solved in the t x t dual, which keeps huge
    parameter counts affordable and doubles as an independent oracle.
    """
    u = np.asarray(features, dtype=np.float64)
    r = np.asarray(rewards, dtype=np.float64).ravel()
    t = u.shape[1]
    dual = lam * np.eye(t) + u.T @ u
    return u @ np.linalg.solve(dual, r)


# ---------------------------------------------------------------------------
# Width sweeps

SWEEP_STATISTICS = (
    "grad_drift_abs",
    "grad_drift_rel",
    "kernel_drift",
    "linearization_error",
    "weight_drift_scaled",
    "ridge_distance",
)


@dataclass(frozen=True)
class SweepRow:
    width: int
    statistic: str
    median: float
    max: float
    bound: float  # matching printed bound, NaN when none applies


@dataclass(frozen=True)
class SweepReport:
    widths: tuple[int, ...]
    rows: tuple[SweepRow, ...]
    diverged: tuple[int, ...] = ()

    def stat(self, width: int, statistic: str) -> SweepRow:
        for row in self.rows:
            if row.width == width and row.statistic == statistic:
                return row
        raise KeyError((width, statistic))

    def medians(self, statistic: str) -> list[float]:
        return [self.stat(w, statistic).median for w in self.widths
                if w not in self.diverged]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["width", "statistic", "median", "max", "bound"])
            for row in self.rows:
                writer.writerow([row.width, row.statistic,
                                 repr(row.median), repr(row.max), repr(row.bound)])


def _sweep_bounds(topology: NetTopology, cfg: ExploreConfig, t: int,
                  lam: float) -> dict[str, float]:
    """Bound column per statistic, from the printed drift expressions."""
    terms = ucb_terms(topology, cfg, t, lam)
    L, m, q, p = topology.layers, topology.channels, topology.patch, topology.pixels
    mu, c1 = topology.lipschitz, cfg.c1
    cl = (c1 * mu) ** L
    sq = math.sqrt(q)
    grad_shift = sq * terms.psi_lk * (cl + 2.0)
    grad0 = math.sqrt(p) * (c1 * mu * sq) ** L / m
    return {
        "grad_drift_abs": math.sqrt(q * (L + 1)) * terms.psi_lk * (cl + 2.0),
        "grad_drift_rel": float("nan"),
        "kernel_drift": (L + 1) * (2.0 * grad0 + grad_shift) * grad_shift,
        "linearization_error": (
            terms.psi_lk * (cfg.c2 + 1.0) + cl * cfg.c2
            + sq * terms.w * ((L - 1) * cl + 1.0)
        ) / math.sqrt(m),
        "weight_drift_scaled": terms.w,
        "ridge_distance": terms.ridge_distance,
    }


def width_sweep(
    base_topology: NetTopology,
    widths: list[int],
    train_rounds: int,
    k: int,
    eta: float | None = None,
    seed: int = 0,
    lam: float = 1.0,
    noise_sigma: float = 0.05,
    n_probes: int = 10,
    cfg: ExploreConfig | None = None,
) -> SweepReport:
    """Train one net per width on shared data and measure every drift.

    The training pairs and probe arms are drawn once from ``seed`` and
    reused across widths, so differences isolate the width effect.  A width
    whose training diverges is flagged and skipped, not fatal.

    ``eta=None`` uses the stability cap 1/(m*lambda + 1) per width; the
    drift statements assume the step size respects that cap, and a fixed
    rate would violate it at the larger widths and decouple gradient
    descent from the ridge solution it is compared against.
    """
    if sorted(widths) != list(widths):
        raise ValueError("widths must be sorted ascending")
    cfg = cfg or ExploreConfig()
    c, p = base_topology.in_channels, base_topology.pixels
    rng = np.random.default_rng(seed)
    hidden = rng.standard_normal(c * p)
    hidden /= np.linalg.norm(hidden)

    def draw_contexts(n):
        raw = rng.standard_normal((n, c, p))
        return raw / np.linalg.norm(raw, axis=(1, 2), keepdims=True)

    train_x = draw_contexts(train_rounds)
    train_r = np.clip(
        (1.0 + train_x.reshape(train_rounds, -1) @ hidden) / 2.0, 0.0, 1.0
    ) + (rng.normal(0.0, noise_sigma, train_rounds) if noise_sigma > 0 else 0.0)
    probes = draw_contexts(n_probes)

    history = TrainingHistory()
    for x, r in zip(train_x, train_r):
        history.append(x, float(r))

    rows: list[SweepRow] = []
    diverged: list[int] = []
    for m in widths:
        topo = base_topology.with_channels(m)
        params0 = init_params(topo, seed)
        eta_m = eta if eta is not None else 1.0 / (m * lam + 1.0)
        try:
            trained = train_gd(params0, history, eta=eta_m, k=k, topology=topo)
        except DivergedError:
            diverged.append(m)
            for name in SWEEP_STATISTICS:
                rows.append(SweepRow(m, name, float("nan"), float("nan"),
                                     float("nan")))
            continue

        grad_abs, grad_rel, kern, lin = [], [], [], []
        for x in probes:
            g0 = network_gradient(x, params0, topo).flat
            gt = network_gradient(x, trained, topo).flat
            drift = float(np.linalg.norm(gt - g0))
            grad_abs.append(drift)
            grad_rel.append(drift / max(float(np.linalg.norm(g0)), 1e-300))
            kern.append(abs(float(gt @ gt) - float(g0 @ g0)))
            lin.append(abs(forward(x, trained, topo).output
                           - cntk_predict(x, trained, params0, topo)))
        weight_drift = np.sqrt(m) * param_distance(trained, params0)

        feats = gradient_features(history.contexts, trained, topo, normalized=True)
        theta_hat = ridge_solution_lowrank(feats, train_r, lam)
        shift = trained.to_vector() - params0.to_vector()
        ridge_dist = float(np.linalg.norm(shift - theta_hat / np.sqrt(m)))

        bounds = _sweep_bounds(topo, cfg, train_rounds, lam)
        measured = {
            "grad_drift_abs": grad_abs,
            "grad_drift_rel": grad_rel,
            "kernel_drift": kern,
            "linearization_error": lin,
            "weight_drift_scaled": list(weight_drift),
            "ridge_distance": [ridge_dist],
        }
        for name in SWEEP_STATISTICS:
            vals = np.asarray(measured[name])
            rows.append(SweepRow(m, name, float(np.median(vals)),
                                 float(vals.max()), bounds[name]))
    return SweepReport(widths=tuple(widths), rows=tuple(rows),
                       diverged=tuple(diverged))


# ---------------------------------------------------------------------------
# Log-det / effective-dimension report


@dataclass(frozen=True)
class RunArtifacts:
    """What a benchmark run must store for the spectral report."""

    features0: np.ndarray | None  # g(x_t; theta0)/sqrt(m) columns, d x T
    logdet_ratio: float
    lam: float

    def save(self, path) -> None:
        if self.features0 is None:
            raise EmptyHistoryError("no stored gradients to save")
        np.savez_compressed(path, features0=self.features0,
                            logdet_ratio=self.logdet_ratio, lam=self.lam)

    @classmethod
    def load(cls, path) -> "RunArtifacts":
        with np.load(path) as data:
            return cls(features0=data["features0"],
                       logdet_ratio=float(data["logdet_ratio"]),
                       lam=float(data["lam"]))


def logdet_report(artifacts: RunArtifacts) -> tuple[float, float, float]:
    """Both sides of the spectral cap on the design log-det.

    Returns (logdet_ratio, effective dimension, bound right-hand side
    d_bar * log(1 + T/lambda) + 1).  Report-only: the inequality needs the
    width condition, so callers log it rather than assert it.
    """
    if artifacts.features0 is None:
        raise EmptyHistoryError("run stored no initialization gradients")
    u = np.asarray(artifacts.features0, dtype=np.float64)
    T = u.shape[1]
    if T == 0:
        return artifacts.logdet_ratio, 0.0, 1.0
    gram = u.T @ u
    d_bar = logdet_psd(gram, artifacts.lam) / math.log(1.0 + T / artifacts.lam)
    bound = d_bar * math.log(1.0 + T / artifacts.lam) + 1.0
    return artifacts.logdet_ratio, d_bar, bound
