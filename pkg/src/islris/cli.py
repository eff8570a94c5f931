"""Command-line entry point: ``islris <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import control, experiments
from .cnn import TrainConfig, load_model, per_class_accuracy, save_model, train
from .geometry import ScenarioConfig, load_config, place_scenario, sample_channels
from .waveform import WINDOW_SIZES, DatasetConfig, build_dataset, class_name, read_dataset, write_dataset

log = logging.getLogger("islris")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class NumericError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _scenario_config(args) -> ScenarioConfig:
    return load_config(args.config) if args.config else ScenarioConfig()


# ------------------------------------------------------------- subcommands

def cmd_gen_data(args) -> int:
    if args.window not in WINDOW_SIZES:
        log.warning("window %d is not one of the standard sizes %s", args.window, WINDOW_SIZES)
    cfg = DatasetConfig(n_users=args.users, per_class=args.per_class, window=args.window)
    ds = build_dataset(cfg, seed=args.seed, workers=args.workers)
    path = Path(args.output) if args.output else _out(args) / f"dataset_w{args.window}.isld"
    write_dataset(path, ds)
    hist = Counter(int(c) for c in ds.labels)
    print(f"wrote {len(ds)} windows to {path}")
    for c in sorted(hist):
        print(f"{class_name(c, args.users):<12} {hist[c]}")
    return EXIT_OK


def cmd_train(args) -> int:
    ds = read_dataset(args.data)
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs, seed=args.seed, split_seed=args.seed)
    model, report = train(ds, cfg)
    if not all(math.isfinite(x) for x in report.epoch_losses):
        raise NumericError("training loss diverged")
    if args.model:
        path = Path(args.model)
    elif args.out.endswith(".islm"):
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
    else:
        path = _out(args) / f"model_w{ds.window}.islm"
    save_model(model, path)
    print(report.table(ds.n_users))
    print(f"best epoch {report.best_epoch + 1}/{cfg.epochs}; model written to {path}")
    return EXIT_OK


def _split(ds, which: str, seed: int):
    if which == "all":
        return ds
    tr, va, te = ds.split_indices(seed)
    return ds.subset({"train": tr, "val": va, "test": te}[which])


def cmd_eval(args) -> int:
    models = [load_model(p) for p in args.model]
    if len(models) not in (1, len(args.data)):
        raise UsageError("give one model, or one model per dataset")
    columns = []
    for i, path in enumerate(args.data):
        model = models[i if len(models) > 1 else 0]
        ds = _split(read_dataset(path), args.split, args.seed)
        try:
            acc, overall = per_class_accuracy(model, ds)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        columns.append((ds.window, ds.n_users, acc, overall))
    n_users = columns[0][1]
    header = f"{'Class':<12}" + "".join(f"{'w=' + str(w):>10}" for w, *_ in columns)
    print(header)
    for c in range(2 ** n_users):
        cells = "".join(f"{100 * acc.get(c, float('nan')):9.2f}%" for _, _, acc, _ in columns)
        print(f"{class_name(c, n_users):<12}{cells}")
    print(f"{'Overall':<12}" + "".join(f"{100 * o:9.2f}%" for *_, o in columns))
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg = _scenario_config(args)
    changes = {}
    if args.k is not None:
        changes["n_ris"] = args.k
    if args.n is not None:
        changes["elements_per_ris"] = args.n
    if args.lam is not None:
        changes["interferer_angles"] = [args.lam] * len(cfg.interferer_angles)
    if args.pm is not None:
        changes["interferer_powers_dbm"] = [args.pm] * len(cfg.interferer_powers_dbm)
    cfg = cfg.replace(**changes)
    scenario = place_scenario(cfg)
    channels = sample_channels(scenario, args.seed)
    res = experiments.evaluate_instance(scenario, channels, experiments.OracleClassifier())
    for policy in experiments.POLICIES:
        report, beta, _ = res[policy]
        if not math.isfinite(report.gamma_db):
            raise NumericError(f"non-finite SINR for {policy}")
        print(f"{policy:<11} B={list(beta)}  gamma={report.gamma_db:8.3f} dB")
    phases = control.optimize_phases(channels, frozenset(range(1, scenario.n_users)),
                                     scenario.tx_powers, scenario.noise_power)
    for k, th in enumerate(phases):
        mean = np.angle(np.mean(np.exp(1j * th))) % (2 * np.pi)
        spread = 1.0 - abs(np.mean(np.exp(1j * th)))
        print(f"theta[{k}]    N={len(th)}  circular mean={mean:.4f} rad  circular spread={spread:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = experiments.load_sweep_spec(args.spec)
    if args.trials is not None:
        spec.trials = args.trials
    if args.classifier is not None:
        spec.classifier = args.classifier
    spec.workers = args.workers
    spec.seed = args.seed if args.seed_given else spec.seed
    result = experiments.sweep(spec, out_dir=_out(args))
    print(f"{spec.variable:>10}" + "".join(f"{p:>12}" for p in experiments.POLICIES) + f"{'acc':>8}")
    for row in result.rows:
        cells = "".join(f"{row.mean_db[p]:12.3f}" for p in experiments.POLICIES)
        print(f"{row.grid_value:10.3g}{cells}{row.accuracy:8.3f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    spec = experiments.load_bench_spec(args.spec) if args.spec else experiments.BenchSpec()
    if args.config:
        spec.scenario = load_config(args.config)
    if args.kmax is not None:
        if args.kmax < 2:
            raise UsageError("--kmax must be at least 2")
        spec.k_values = list(range(2, args.kmax + 1))
    if args.reps is not None:
        spec.repetitions = args.reps
    if args.seed_given:
        spec.seed = args.seed
    rows = experiments.bench_runtime(spec.k_values, repetitions=spec.repetitions, seed=spec.seed,
                                     scenario=spec.scenario, lambda_deg=spec.lambda_deg)
    experiments.export_bench(rows, _out(args) / "bench.csv")
    print(f"{'K':>3} {'drbc (ms)':>12} {'exhaustive (ms)':>16} {'ratio':>8}")
    for r in rows:
        print(f"{r.n_ris:>3} {r.drbc_ms:12.4f} {r.exhaustive_ms:16.4f} {r.speedup:8.1f}")
    slope, _, r2 = experiments.linear_fit_r2([r.n_ris for r in rows], [r.drbc_ms for r in rows])
    print(f"drbc linear fit: slope {slope:.4f} ms/RIS, R^2 {r2:.3f}")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
    common.add_argument("--config", help="scenario TOML file")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("--out", default=".", help="output directory")

    p = _Parser(prog="islris", description="Interference-aware RIS control simulator.")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic I/Q dataset")
    g.add_argument("--users", type=int, default=2)
    g.add_argument("--per-class", type=int, default=4000)
    g.add_argument("--window", type=int, default=32)
    g.add_argument("--output", help="dataset path (default <out>/dataset_w<window>.isld)")
    g.add_argument("--workers", type=int, default=1)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="train the classifier")
    t.add_argument("--data", required=True)
    t.add_argument("--model", help="output model path; an --out ending in .islm is also taken as the path")
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--batch", type=int, default=64)
    t.add_argument("--lr", type=float, default=1e-3)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="per-class accuracy table")
    e.add_argument("--model", required=True, action="append")
    e.add_argument("--data", required=True, action="append")
    e.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("optimize", parents=[common], help="solve one instance and compare policies")
    o.add_argument("--k", type=int)
    o.add_argument("--n", type=int, help="elements per RIS")
    o.add_argument("--lambda", dest="lam", type=float, help="incidence angle difference (deg)")
    o.add_argument("--pm", type=float, help="interferer transmit power (dBm)")
    o.set_defaults(func=cmd_optimize)

    s = sub.add_parser("sweep", parents=[common], help="Monte-Carlo sweep from a spec file")
    s.add_argument("--spec", required=True)
    s.add_argument("--trials", type=int)
    s.add_argument("--classifier", help="'oracle' or a model path")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    b = sub.add_parser("bench", parents=[common], help="ON-OFF decision runtime vs K")
    b.add_argument("--spec", help="bench TOML file")
    b.add_argument("--kmax", type=int, help="benchmark K = 2..kmax (default 10)")
    b.add_argument("--reps", type=int, help="repetitions per timing (default 100)")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        with np.errstate(invalid="raise", divide="raise", over="raise"):
            return args.func(args)
    except UsageError as exc:
        print(f"islris: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FloatingPointError, ArithmeticError) as exc:
        print(f"islris: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError, ValueError) as exc:
        print(f"islris: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
