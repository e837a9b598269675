"""Experiment orchestration: configs, the bandit loop, CSV logging.

A run is fully determined by its config: per repeat the stream seed is
``seed + repeat`` and every policy draws from its own generator, so two
executions of the same config produce byte-identical CSVs (the wall-clock
column stays zero unless timing is explicitly requested, precisely to keep
that contract).
"""

from __future__ import annotations

import dataclasses
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import baselines
from .bounds import ExploreConfig
from .cnn import TrainingHistory, init_params, network_gradient, train_gd
from .data import (
    LabeledImageSet,
    SyntheticTask,
    build_round,
    classification_stream,
    load_cifar10,
    load_idx,
    normalize_unit_frobenius,
    synthetic_stream,
)
from .errors import BanditError, DivergedError
from .precision import new_state, update_state
from .theory import RunArtifacts
from .topology import Grid, Line, NetTopology
from .ucb import score_arms, select_arm

DATA_DIR_ENV = "CONVBANDIT_DATA_DIR"
CSV_SCHEMA = "# convbandit rounds csv v1"
SUMMARY_SCHEMA = "# convbandit summary csv v1"
CSV_COLUMNS = (
    "round", "repeat", "algorithm", "chosen_arm", "correct_arm", "reward",
    "regret", "cum_regret", "mean", "width", "psi1", "wallclock_ms",
)

ALGORITHMS = ("cnn-ucb", "fc-ucb", "linucb", "kernelucb", "random")
DATASETS = ("mnist", "notmnist", "cifar10", "synthetic")


@dataclass(frozen=True)
class RoundRecord:
    """One benchmark row; field order is the CSV column order."""

    round: int
    repeat: int
    algorithm: str
    chosen_arm: int
    correct_arm: int
    reward: float
    regret: float
    cum_regret: float
    mean: float
    width: float
    psi1: float
    wallclock_ms: float

    def csv_row(self) -> str:
        return ",".join([
            str(self.round), str(self.repeat), self.algorithm,
            str(self.chosen_arm), str(self.correct_arm), repr(self.reward),
            repr(self.regret), repr(self.cum_regret), repr(self.mean),
            repr(self.width), repr(self.psi1), repr(self.wallclock_ms),
        ])


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one benchmark run needs; defaults follow the evaluated
    image-bandit configuration (3 conv layers, 20 channels, 4x4 kernels,
    sigmoid, lambda=1, eta=0.001, delta=0.1, iteration schedule k=t up to
    round 200 then 100)."""

    dataset: str = "synthetic"
    algorithm: str = "cnn-ucb"
    T: int = 200
    repeats: int = 1
    seed: int = 0
    # data locations (resolved against $CONVBANDIT_DATA_DIR when relative)
    image_path: str = ""
    label_path: str = ""
    cifar_batches: tuple[str, ...] = ()
    # synthetic task
    synthetic_kind: str = "linear"
    n_arms: int = 4
    arm_dim: int = 8
    noise_sigma: float = 0.05
    # convolutional reward model
    conv_layers: int = 3
    conv_channels: int = 20
    kernel_size: int = 4
    activation: str = "sigmoid"
    # fully-connected baseline model
    fc_depth: int = 4
    fc_width: int = 100
    # bandit hyperparameters
    lam: float = 1.0
    eta: float = 0.001
    delta: float = 0.1
    nu: float = 1.0
    s_bar: float = 1.0
    mode: str = "practical"
    c0: float = 1.0
    c1: float = 1.5
    c2: float = 1.5
    # gradient-descent schedule: k = t while t <= k_grow_until, else k_after
    k_grow_until: int = 200
    k_after: int = 100
    warm_start: bool = False
    # precision state: full d x d inverse, diagonal approximation, or auto
    precision: str = "auto"
    precision_full_max_dim: int = 20000
    # baseline knobs (None picks the classical defaults)
    alpha: float | None = None
    beta: float | None = None
    rbf_gamma: float | None = None
    kernel_capacity: int = 500
    # outputs
    out_dir: str = "runs"
    record_timing: bool = False
    store_gradients: bool = False

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ValueError(f"unknown dataset {self.dataset!r}")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.T < 1 or self.repeats < 1:
            raise ValueError("T and repeats must be >= 1")
        for name in ("lam", "eta", "nu", "s_bar"):
            if getattr(self, name) < 0 or (name in ("lam", "eta")
                                           and getattr(self, name) == 0):
                raise ValueError(f"{name} must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.mode not in ("practical", "theoretical"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.precision not in ("auto", "full", "diag"):
            raise ValueError(f"unknown precision setting {self.precision!r}")
        if isinstance(self.cifar_batches, list):
            object.__setattr__(self, "cifar_batches", tuple(self.cifar_batches))

    def k_schedule(self, t: int) -> int:
        return t if t <= self.k_grow_until else self.k_after

    def explore_config(self) -> ExploreConfig:
        return ExploreConfig(mode=self.mode, delta=self.delta, s_bar=self.s_bar,
                             nu=self.nu, c0=self.c0, c1=self.c1, c2=self.c2)

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        with open(path, "rb") as f:
            raw = tomllib.load(f)
        flat: dict = {}
        for key, value in raw.items():
            if isinstance(value, dict):  # section: keys stay flat and unique
                for k, v in value.items():
                    if k in flat:
                        raise ValueError(f"duplicate config key {k!r}")
                    flat[k] = v
            else:
                flat[key] = value
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(flat) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**flat)

    def to_toml(self) -> str:
        lines = ["[config]"]
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, (int, float)):
                text = repr(value)
            elif isinstance(value, tuple):
                text = "[" + ", ".join(f'"{v}"' for v in value) + "]"
            else:
                text = f'"{value}"'
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"


def _resolve_path(path: str) -> Path:
    p = Path(path)
    base = os.environ.get(DATA_DIR_ENV)
    if base and not p.is_absolute():
        return Path(base) / p
    return p


def load_dataset(cfg: ExperimentConfig) -> LabeledImageSet:
    if cfg.dataset in ("mnist", "notmnist"):
        if not cfg.image_path or not cfg.label_path:
            raise BanditError(f"{cfg.dataset} needs image_path and label_path")
        return load_idx(_resolve_path(cfg.image_path), _resolve_path(cfg.label_path))
    if cfg.dataset == "cifar10":
        if not cfg.cifar_batches:
            raise BanditError("cifar10 needs cifar_batches")
        return load_cifar10([_resolve_path(p) for p in cfg.cifar_batches])
    raise BanditError(f"dataset {cfg.dataset!r} has no files to load")


def build_topology(cfg: ExperimentConfig, dataset: LabeledImageSet | None) -> NetTopology:
    """Reward-model topology for the configured stream."""
    if cfg.dataset == "synthetic":
        return NetTopology(
            layers=cfg.conv_layers, channels=cfg.conv_channels,
            patch=cfg.kernel_size, in_channels=1, pixels=cfg.arm_dim,
            spatial=Line(cfg.arm_dim), activation=cfg.activation,
        )
    assert dataset is not None
    return NetTopology(
        layers=cfg.conv_layers, channels=cfg.conv_channels,
        patch=cfg.kernel_size**2,
        in_channels=dataset.n_classes * dataset.channels,
        pixels=dataset.height * dataset.width,
        spatial=Grid(dataset.height, dataset.width),
        activation=cfg.activation,
    )


def _rounds(cfg: ExperimentConfig, dataset: LabeledImageSet | None, seed: int):
    """Yield (arms, correct_arm, rewards_fn, regret_fn) per round.

    For classification streams the oracle reward is always 1, so the regret
    of a choice is 1 - reward; synthetic streams score against the true
    values directly.
    """
    if cfg.dataset == "synthetic":
        task = SyntheticTask.make(cfg.synthetic_kind, cfg.arm_dim, cfg.n_arms,
                                  cfg.noise_sigma, seed)
        for arms, values, rewards in synthetic_stream(task, cfg.T):
            best = float(values.max())
            correct = int(values.argmax())
            yield (arms, correct,
                   lambda i, r=rewards: float(r[i]),
                   lambda i, v=values, b=best: b - float(v[i]))
    else:
        assert dataset is not None
        for rnd in classification_stream(dataset, cfg.T, seed):
            yield (list(rnd.arms), rnd.correct,
                   rnd.reward,
                   lambda i, rnd=rnd: 1.0 - rnd.reward(i))


def _use_diagonal(cfg: ExperimentConfig, d: int) -> bool:
    if cfg.precision == "diag":
        return True
    if cfg.precision == "full":
        return False
    return d > cfg.precision_full_max_dim


class _NeuralPolicy:
    """Shared loop body for the convolutional and fully-connected models."""

    def __init__(self, cfg: ExperimentConfig, topology: NetTopology, seed: int):
        self.cfg = cfg
        self.topology = topology
        self.params0 = init_params(topology, seed)
        self.params = self.params0
        self.state = new_state(cfg.lam, self.params0.d,
                               diagonal=_use_diagonal(cfg, self.params0.d))
        self.explore = cfg.explore_config()
        self.history = TrainingHistory()
        self.features0: list[np.ndarray] = []

    def model_arms(self, arms):
        if self.topology.pixels == 1:  # fully-connected: flatten to a column
            return [np.asarray(x, dtype=np.float64).reshape(-1, 1) for x in arms]
        return arms

    def choose(self, arms):
        scores, cols = score_arms(arms, self.params, self.topology, self.state,
                                  self.explore)
        idx = select_arm(scores)
        return idx, scores[idx], cols[:, idx]

    def observe(self, t: int, arm, feature, reward: float) -> None:
        # feature is already g/sqrt(m): absorbed with unit scaling.
        self.state = update_state(self.state, feature, 1, reward)
        if self.cfg.store_gradients:
            g0 = network_gradient(arm, self.params0, self.topology).flat
            self.features0.append(g0 / math.sqrt(self.topology.channels))
        self.history.append(arm, reward)
        k = self.cfg.k_schedule(t)
        start = self.params if self.cfg.warm_start else self.params0
        self.params = train_gd(start, self.history, self.cfg.eta, k, self.topology)

    def artifacts(self) -> RunArtifacts | None:
        if not self.cfg.store_gradients:
            return None
        return RunArtifacts(
            features0=np.column_stack(self.features0) if self.features0
            else np.zeros((self.params0.d, 0)),
            logdet_ratio=self.state.logdet_ratio,
            lam=self.cfg.lam,
        )


def _run_repeat(cfg: ExperimentConfig, dataset, repeat: int, writer) -> RunArtifacts | None:
    seed = cfg.seed + repeat
    rng = np.random.default_rng(seed)  # only the random policy draws from it
    algo = cfg.algorithm
    neural = None
    lin = None   # linucb and kernelucb are sized on the first round
    kern = None
    if algo in ("cnn-ucb", "fc-ucb"):
        if algo == "cnn-ucb":
            topo = build_topology(cfg, dataset)
        else:
            if cfg.dataset == "synthetic":
                input_dim = cfg.arm_dim
            else:
                input_dim = dataset.n_classes * dataset.channels * \
                    dataset.height * dataset.width
            topo = baselines.FcTopology(
                input_dim=input_dim, depth=cfg.fc_depth, width=cfg.fc_width,
                activation=cfg.activation,
            ).as_net_topology()
        neural = _NeuralPolicy(cfg, topo, seed)

    cum_regret = 0.0
    for t, (arms, correct, reward_fn, regret_fn) in enumerate(
        _rounds(cfg, dataset, seed), start=1
    ):
        tic = time.monotonic()
        flat = [np.asarray(x).ravel() for x in arms]
        if algo == "random":
            idx = int(rng.integers(len(arms)))
            reward = reward_fn(idx)
            mean = width = psi1_val = 0.0
        elif algo == "linucb":
            if lin is None:
                lin = baselines.linucb_new(cfg.lam, flat[0].size,
                                           alpha=cfg.alpha, delta=cfg.delta)
            means, width_vals = baselines.linucb_scores(lin, flat)
            idx = int(np.argmax(means + lin.alpha * width_vals))
            reward = reward_fn(idx)
            lin = baselines.linucb_update(lin, flat[idx], reward)
            mean, width, psi1_val = float(means[idx]), float(width_vals[idx]), lin.alpha
        elif algo == "kernelucb":
            if kern is None:
                gamma = cfg.rbf_gamma if cfg.rbf_gamma is not None \
                    else 1.0 / flat[0].size
                kern = baselines.kernelucb_new(gamma, cfg.lam, beta=cfg.beta,
                                               delta=cfg.delta,
                                               capacity=cfg.kernel_capacity)
            means, width_vals = baselines.kernelucb_scores(kern, flat)
            idx = int(np.argmax(means + kern.beta * width_vals))
            reward = reward_fn(idx)
            kern = baselines.kernelucb_update(kern, flat[idx], reward)
            mean, width, psi1_val = float(means[idx]), float(width_vals[idx]), kern.beta
        else:  # neural policies
            model_arms = neural.model_arms(arms)
            idx, score, feature = neural.choose(model_arms)
            reward = reward_fn(idx)
            neural.observe(t, model_arms[idx], feature, reward)
            mean, width, psi1_val = score.mean, score.width, score.psi1
        regret = regret_fn(idx)
        cum_regret += regret
        elapsed = (time.monotonic() - tic) * 1000.0 if cfg.record_timing else 0.0
        writer(RoundRecord(
            round=t, repeat=repeat, algorithm=algo, chosen_arm=idx,
            correct_arm=correct, reward=float(reward), regret=float(regret),
            cum_regret=float(cum_regret), mean=float(mean), width=float(width),
            psi1=float(psi1_val), wallclock_ms=float(elapsed),
        ))
    return neural.artifacts() if neural is not None else None


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> Path:
    """Execute the configured run and return the rounds CSV path."""
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(cfg.to_toml())
    dataset = load_dataset(cfg) if cfg.dataset != "synthetic" else None
    csv_path = out / "rounds.csv"
    with open(csv_path, "w", newline="") as f:
        f.write(CSV_SCHEMA + "\n")
        f.write(",".join(CSV_COLUMNS) + "\n")

        def writer(record: RoundRecord) -> None:
            f.write(record.csv_row() + "\n")

        try:
            for repeat in range(cfg.repeats):
                artifacts = _run_repeat(cfg, dataset, repeat, writer)
                if artifacts is not None:
                    artifacts.save(out / f"artifacts_rep{repeat}.npz")
        except DivergedError as exc:
            f.write(f"# aborted: {exc}\n")
            f.flush()
            raise
    return csv_path


# ---------------------------------------------------------------------------
# Summaries


def read_rounds(path) -> list[RoundRecord]:
    records = []
    with open(path) as f:
        header: list[str] | None = None
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                if tuple(header) != CSV_COLUMNS:
                    raise BanditError(f"{path}: unexpected columns {header}")
                continue
            parts = line.split(",")
            records.append(RoundRecord(
                round=int(parts[0]), repeat=int(parts[1]), algorithm=parts[2],
                chosen_arm=int(parts[3]), correct_arm=int(parts[4]),
                reward=float(parts[5]), regret=float(parts[6]),
                cum_regret=float(parts[7]), mean=float(parts[8]),
                width=float(parts[9]), psi1=float(parts[10]),
                wallclock_ms=float(parts[11]),
            ))
    return records


def summarize(csv_paths, out_path=None) -> Path:
    """Mean and sample std of cumulative regret per (algorithm, round)."""
    paths = [csv_paths] if isinstance(csv_paths, (str, Path)) else list(csv_paths)
    if not paths:
        raise BanditError("summarize needs at least one run file")
    by_algo: dict[str, dict[tuple, dict[int, float]]] = {}
    for path in paths:
        for rec in read_rounds(path):
            runs = by_algo.setdefault(rec.algorithm, {})
            runs.setdefault((str(path), rec.repeat), {})[rec.round] = rec.cum_regret

    out = Path(out_path) if out_path is not None else \
        Path(paths[0]).parent / "summary.csv"
    lines = [SUMMARY_SCHEMA, "algorithm,round,mean_cum_regret,std_cum_regret,repeats"]
    for algo in sorted(by_algo):
        runs = list(by_algo[algo].values())
        grids = [sorted(r) for r in runs]
        if any(g != grids[0] for g in grids):
            raise BanditError(f"{algo}: round grids differ across repeats")
        for rnd in grids[0]:
            vals = np.array([r[rnd] for r in runs])
            std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
            lines.append(
                f"{algo},{rnd},{repr(float(vals.mean()))},{repr(std)},{vals.size}"
            )
    out.write_text("\n".join(lines) + "\n")
    return out


def final_regret_table(summary_path) -> list[tuple[str, int, float, float]]:
    """(algorithm, final round, mean, std) rows from a summary CSV."""
    best: dict[str, tuple[int, float, float]] = {}
    with open(summary_path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("algorithm,"):
                continue
            algo, rnd, mean, std, _ = line.split(",")
            rnd = int(rnd)
            if algo not in best or rnd > best[algo][0]:
                best[algo] = (rnd, float(mean), float(std))
    return [(a, *best[a]) for a in sorted(best)]
