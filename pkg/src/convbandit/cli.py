"""Command-line entry points.

Exit codes: 0 success, 1 usage error, 2 data or numeric error.
"""

from __future__ import annotations

import argparse
import math
import struct
import sys
from pathlib import Path

import numpy as np

from .bench import (
    ExperimentConfig,
    final_regret_table,
    run_experiment,
    summarize,
)
from .bounds import theory_bounds
from .cnn import init_params
from .data import CIFAR_RECORD_BYTES, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC
from .errors import BanditError
from .theory import construct_theta_star, width_sweep
from .topology import Line, NetTopology


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convbandit",
        description="Image-bandit benchmark harness and theory diagnostics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute one benchmark config")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default=None, help="output directory")

    summ = sub.add_parser("summarize", help="aggregate run CSVs across repeats")
    summ.add_argument("files", nargs="+")
    summ.add_argument("--out", default=None, help="summary CSV path")

    theory = sub.add_parser("theory", help="finite-width verification tools")
    tsub = theory.add_subparsers(dest="theory_command", required=True)
    sweep = tsub.add_parser("sweep", help="drift statistics across widths")
    sweep.add_argument("--widths", default="8,32,128")
    sweep.add_argument("--rounds", type=int, default=50)
    sweep.add_argument("--k", type=int, default=50)
    sweep.add_argument("--eta", type=float, default=None,
                       help="fixed step size; default is 1/(m*lambda+1) per width")
    sweep.add_argument("--seed", type=int, default=0)
    sweep.add_argument("--out", default="sweep.csv")
    lemma = tsub.add_parser("lemma51", help="minimum-norm shift construction check")
    lemma.add_argument("--t", type=int, default=10)
    lemma.add_argument("--d-target", type=int, default=500)
    lemma.add_argument("--seed", type=int, default=0)

    bounds = sub.add_parser("bounds", help="print every bound-report field")
    bounds.add_argument("--config", required=True)
    bounds.add_argument("--t", type=int, required=True)

    dataset = sub.add_parser("dataset", help="dataset utilities")
    dsub = dataset.add_subparsers(dest="dataset_command", required=True)
    check = dsub.add_parser("check", help="validate binary dataset files")
    check.add_argument("paths", nargs="+")

    return parser


def _cmd_run(args) -> int:
    cfg_path = Path(args.config)
    if not cfg_path.exists():
        print(f"error: config file not found: {cfg_path}", file=sys.stderr)
        print("usage: convbandit run --config FILE [--out DIR]", file=sys.stderr)
        return 1
    try:
        cfg = ExperimentConfig.from_toml(cfg_path)
    except (ValueError, TypeError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return 1
    path = run_experiment(cfg, out_dir=args.out)
    print(path)
    return 0


def _cmd_summarize(args) -> int:
    for f in args.files:
        if not Path(f).exists():
            print(f"error: run file not found: {f}", file=sys.stderr)
            return 1
    out = summarize(args.files, out_path=args.out)
    print(out)
    for algo, rnd, mean, std in final_regret_table(out):
        print(f"{algo}: round {rnd} cumulative regret {mean:.3f} +/- {std:.3f}")
    return 0


def _cmd_sweep(args) -> int:
    try:
        widths = sorted(int(w) for w in args.widths.split(","))
    except ValueError:
        print(f"error: bad width list {args.widths!r}", file=sys.stderr)
        return 1
    base = NetTopology(layers=2, channels=widths[0], patch=3, in_channels=1,
                       pixels=9, spatial=Line(9))
    report = width_sweep(base, widths, train_rounds=args.rounds, k=args.k,
                         eta=args.eta, seed=args.seed)
    report.write_csv(args.out)
    print(args.out)
    for row in report.rows:
        print(f"m={row.width:>5} {row.statistic:<22} median={row.median:.3e} "
              f"max={row.max:.3e} bound={row.bound:.3e}")
    if report.diverged:
        print(f"diverged widths: {report.diverged}")
    return 0


def _cmd_lemma51(args) -> int:
    rng = np.random.default_rng(args.seed)
    m = max(4, math.isqrt(max(args.d_target, 16) // 4))
    pixels = max(4, math.ceil((args.d_target - 3 * m - 3 * m * m) / m))
    topo = NetTopology(layers=2, channels=m, patch=3, in_channels=1,
                       pixels=pixels, spatial=Line(pixels))
    params = init_params(topo, args.seed)
    arms = rng.standard_normal((args.t, 1, pixels))
    arms /= np.linalg.norm(arms, axis=(1, 2), keepdims=True)
    targets = rng.uniform(0.0, 1.0, args.t)
    shift, residual, norm_sq, lambda_1 = construct_theta_star(
        list(arms), targets, params, topo
    )
    print(f"d = {topo.param_count}, t = {args.t}")
    print(f"residual = {residual:.3e}")
    print(f"norm identity gap = {abs(float(shift @ shift) - norm_sq):.3e}")
    print(f"lambda_1 = {lambda_1:.6e}")
    print(f"scaled shift norm sqrt(m)*||shift|| = "
          f"{math.sqrt(m) * float(np.linalg.norm(shift)):.6f}")
    return 0


def _cmd_bounds(args) -> int:
    cfg_path = Path(args.config)
    if not cfg_path.exists():
        print(f"error: config file not found: {cfg_path}", file=sys.stderr)
        return 1
    try:
        cfg = ExperimentConfig.from_toml(cfg_path)
    except (ValueError, TypeError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return 1
    from .bench import build_topology, load_dataset

    dataset = load_dataset(cfg) if cfg.dataset != "synthetic" else None
    topo = build_topology(cfg, dataset)
    report = theory_bounds(topo, cfg.explore_config(), t=args.t,
                           k=cfg.k_schedule(args.t), T=cfg.T, lam=cfg.lam)
    for line in report.lines():
        print(line)
    return 0


def _check_one(path: Path) -> str:
    size = path.stat().st_size
    with open(path, "rb") as f:
        head = f.read(16)
    if len(head) >= 4:
        magic = struct.unpack(">I", head[:4])[0]
        if magic == IDX_IMAGES_MAGIC:
            if len(head) < 16:
                raise BanditError(f"{path}: truncated IDX image header")
            _, n, rows, cols = struct.unpack(">IIII", head)
            want = 16 + n * rows * cols
            if size != want:
                raise BanditError(
                    f"{path}: payload is {size} bytes, header implies {want}"
                )
            return f"{path}: IDX images N={n} {rows}x{cols}"
        if magic == IDX_LABELS_MAGIC:
            if len(head) < 8:
                raise BanditError(f"{path}: truncated IDX label header")
            _, n = struct.unpack(">II", head[:8])
            want = 8 + n
            if size != want:
                raise BanditError(
                    f"{path}: payload is {size} bytes, header implies {want}"
                )
            return f"{path}: IDX labels N={n}"
    if size > 0 and size % CIFAR_RECORD_BYTES == 0:
        labels = np.fromfile(path, dtype=np.uint8).reshape(
            -1, CIFAR_RECORD_BYTES)[:, 0]
        if labels.max(initial=0) >= 10:
            raise BanditError(f"{path}: label byte {int(labels.max())} >= 10")
        return f"{path}: CIFAR-10 batch N={size // CIFAR_RECORD_BYTES} records"
    raise BanditError(f"{path}: unrecognized format "
                      f"(magic 0x{struct.unpack('>I', head[:4])[0]:08x})"
                      if len(head) >= 4 else f"{path}: file too short")


def _cmd_dataset_check(args) -> int:
    for p in args.paths:
        path = Path(p)
        if not path.exists():
            print(f"error: no such file: {path}", file=sys.stderr)
            return 2
        print(_check_one(path))
    return 0


def cli_main(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems; --help exits 0
        return 0 if exc.code == 0 else 1
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "summarize":
            return _cmd_summarize(args)
        if args.command == "theory":
            if args.theory_command == "sweep":
                return _cmd_sweep(args)
            return _cmd_lemma51(args)
        if args.command == "bounds":
            return _cmd_bounds(args)
        if args.command == "dataset":
            return _cmd_dataset_check(args)
    except (BanditError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 1


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))
