"""End-to-end runs, Monte-Carlo sweeps and runtime benchmarks.

Policies compared per instance:

``isl``
    infer interferers -> interference-aware phases -> DRBC ON-OFF vector.
``always_on``
    a conventional RIS: phases co-phased for the desired user with no
    knowledge of interference, every RIS ON.
``always_off``
    direct links only.
``exhaustive``
    the ISL phases with the best of all 2^K ON-OFF vectors.

Realised SINR is always evaluated against the true interferer set, so
classification errors show up as lost SINR.
"""

from __future__ import annotations

import csv
import gc
import json
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from . import control
from .cnn import CnnModel, forward, load_model
from .control import RisState, SinrReport
from .geometry import ActivitySet, ChannelSet, Scenario, ScenarioConfig, config_from_dict, place_scenario, sample_channels
from .waveform import SNR_GRID_DB, decode_class, encode_flags, synthesize_window

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

POLICIES = ("isl", "always_on", "always_off", "exhaustive")
SWEEP_VARIABLES = ("lambda", "K", "p_m")
SCHEMA_VERSION = 1
TIMING_COLUMNS = ("decision_time_us",)


# ------------------------------------------------------------- classifiers

class Classifier(Protocol):
    def __call__(self, activity: ActivitySet, rng: np.random.Generator) -> tuple[frozenset[int], bool]: ...


class OracleClassifier:
    """Returns the true interferer set."""

    def __call__(self, activity, rng):
        return activity.interferers, True


@dataclass
class FixedClassifier:
    """Always reports the same set; used to inject classification errors."""

    inferred: frozenset[int]

    def __call__(self, activity, rng):
        return frozenset(self.inferred), frozenset(self.inferred) == activity.interferers


@dataclass
class ModelClassifier:
    """Feeds a synthetic window of the true activity pattern to a trained CNN."""

    model: CnnModel
    snr_grid: Sequence[float] = SNR_GRID_DB
    powers: Sequence[float] | None = None

    def __call__(self, activity, rng):
        n = self.model.n_users
        if len(activity.alpha) != n:
            raise ValueError(f"model was trained for {n} users, scenario has {len(activity.alpha)}")
        powers = (1.0,) * n if self.powers is None else self.powers
        snr = float(self.snr_grid[int(rng.integers(len(self.snr_grid)))])
        window = synthesize_window(activity.alpha, powers, snr, self.model.window,
                                   seed=int(rng.integers(2 ** 63)))
        predicted = int(np.argmax(forward(self.model, window)))
        flags = decode_class(predicted, n)
        inferred = frozenset(m for m, a in enumerate(flags) if a and m != activity.desired)
        return inferred, predicted == encode_flags(activity.alpha)


def make_classifier(name: str) -> Classifier:
    if name == "oracle":
        return OracleClassifier()
    return ModelClassifier(load_model(name))


# --------------------------------------------------------------- instances

@dataclass
class InstanceResult:
    gamma_db: dict[str, float]
    beta: dict[str, tuple[int, ...]]
    inferred: frozenset[int]
    true_interferers: frozenset[int]
    correct: bool
    decision_time_us: float


def _powers_noise(scenario: Scenario):
    return scenario.tx_powers, scenario.noise_power


def run_instance(scenario: Scenario, channels: ChannelSet, classifier: Classifier, policy: str,
                 activity: ActivitySet | None = None, rng: np.random.Generator | None = None,
                 ) -> tuple[SinrReport, tuple[int, ...], float]:
    """Run one policy on one channel realization; returns (report, B, decision seconds)."""
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    result = evaluate_instance(scenario, channels, classifier, activity, rng, policies=(policy,))
    return result[policy]


def evaluate_instance(scenario: Scenario, channels: ChannelSet, classifier: Classifier,
                      activity: ActivitySet | None = None, rng: np.random.Generator | None = None,
                      policies: Sequence[str] = POLICIES) -> dict[str, tuple[SinrReport, tuple[int, ...], float]]:
    powers, noise = _powers_noise(scenario)
    K = channels.n_ris
    if activity is None:
        activity = ActivitySet(tuple([1] * channels.n_users), channels.desired)
    rng = np.random.default_rng(0) if rng is None else rng
    truth = activity.interferers
    out = {}

    inferred = None
    phases = None
    if "isl" in policies or "exhaustive" in policies:
        inferred, _ = classifier(activity, rng)
        phases = control.optimize_phases(channels, inferred, powers, noise)
    if "isl" in policies:
        t0 = time.perf_counter()
        beta = control.drbc(channels, inferred, phases, powers, noise)
        elapsed = time.perf_counter() - t0
        out["isl"] = (control.sinr(channels, RisState(beta, tuple(phases)), truth, powers, noise), beta, elapsed)
    if "exhaustive" in policies:
        t0 = time.perf_counter()
        beta, _ = control.exhaustive_onoff(channels, inferred, phases, powers, noise)
        elapsed = time.perf_counter() - t0
        out["exhaustive"] = (control.sinr(channels, RisState(beta, tuple(phases)), truth, powers, noise), beta, elapsed)
    if "always_on" in policies:
        conventional = control.optimize_phases(channels, (), powers, noise)
        state = RisState.all_on(conventional)
        out["always_on"] = (control.sinr(channels, state, truth, powers, noise), state.beta, 0.0)
    if "always_off" in policies:
        out["always_off"] = (control.sinr_direct(channels, truth, powers, noise), tuple([0] * K), 0.0)
    return out


def _instance(scenario, channels, classifier, activity, rng) -> InstanceResult:
    # classifier draws come first so every policy sees the same inference
    inferred, correct = classifier(activity, rng)
    fixed = FixedClassifier(inferred)
    res = evaluate_instance(scenario, channels, fixed, activity, rng)
    return InstanceResult(
        gamma_db={p: res[p][0].gamma_db for p in POLICIES},
        beta={p: res[p][1] for p in POLICIES},
        inferred=inferred,
        true_interferers=activity.interferers,
        correct=correct,
        decision_time_us=1e6 * res["isl"][2],
    )


# ------------------------------------------------------------------ sweeps

@dataclass
class SweepSpec:
    variable: str
    grid: list[float]
    trials: int = 500
    classifier: str = "oracle"
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    seed: int = 0
    lambda_range: tuple[float, float] | None = None
    activity_prob: float = 1.0
    workers: int = 1

    def __post_init__(self):
        if self.variable not in SWEEP_VARIABLES:
            raise ValueError(f"variable must be one of {SWEEP_VARIABLES}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.grid:
            raise ValueError("grid must not be empty")


@dataclass
class ResultRow:
    grid_value: float
    mean_db: dict[str, float]
    se_db: dict[str, float]
    accuracy: float
    frac_all_on: float
    frac_all_off: float
    decision_time_us: float


@dataclass
class InstanceRecord:
    grid_value: float
    trial: int
    lambda_deg: float
    gamma_db: dict[str, float]
    isl_beta: tuple[int, ...]
    exhaustive_beta: tuple[int, ...]
    correct: bool


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list[ResultRow]
    instances: list[InstanceRecord]


def _grid_config(spec: SweepSpec, value: float) -> ScenarioConfig:
    cfg = spec.scenario
    if spec.variable == "K":
        return cfg.replace(n_ris=int(value))
    if spec.variable == "lambda":
        return cfg.replace(interferer_angles=[float(value)] * len(cfg.interferer_angles))
    return cfg.replace(interferer_powers_dbm=[float(value)] * len(cfg.interferer_powers_dbm))


def _trial(spec: SweepSpec, classifier: Classifier, gi: int, value: float, ti: int):
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, gi, ti]))
    cfg = _grid_config(spec, value)
    if spec.lambda_range is not None:
        lo, hi = spec.lambda_range
        cfg = cfg.replace(interferer_angles=[float(rng.uniform(lo, hi)) for _ in cfg.interferer_angles])
    scenario = place_scenario(cfg)
    channels = sample_channels(scenario, int(rng.integers(2 ** 63)))
    alpha = [1] + [int(rng.random() < spec.activity_prob) for _ in range(scenario.n_users - 1)]
    activity = ActivitySet(tuple(alpha), scenario.desired_user)
    res = _instance(scenario, channels, classifier, activity, rng)
    record = InstanceRecord(value, ti, cfg.interferer_angles[0], res.gamma_db, res.beta["isl"],
                            res.beta["exhaustive"], res.correct)
    return record, res.decision_time_us


def _se(values: list[float]) -> float:
    return statistics.stdev(values) / math.sqrt(len(values)) if len(values) > 1 else 0.0


def sweep(spec: SweepSpec, out_dir: str | Path | None = None,
          classifier: Classifier | None = None) -> SweepResult:
    """Monte-Carlo sweep; trial seeds depend only on (seed, grid index, trial)."""
    classifier = make_classifier(spec.classifier) if classifier is None else classifier
    rows, instances = [], []
    for gi, value in enumerate(spec.grid):
        def job(ti, gi=gi, value=value):
            return _trial(spec, classifier, gi, value, ti)
        if spec.workers > 1:
            with ThreadPoolExecutor(spec.workers) as pool:
                done = list(pool.map(job, range(spec.trials)))
        else:
            done = [job(ti) for ti in range(spec.trials)]
        recs = [r for r, _ in done]
        instances.extend(recs)
        K = len(recs[0].isl_beta)
        rows.append(ResultRow(
            grid_value=float(value),
            mean_db={p: statistics.fmean(r.gamma_db[p] for r in recs) for p in POLICIES},
            se_db={p: _se([r.gamma_db[p] for r in recs]) for p in POLICIES},
            accuracy=statistics.fmean(float(r.correct) for r in recs),
            frac_all_on=statistics.fmean(float(sum(r.isl_beta) == K) for r in recs),
            frac_all_off=statistics.fmean(float(sum(r.isl_beta) == 0) for r in recs),
            decision_time_us=statistics.fmean(t for _, t in done),
        ))
    result = SweepResult(spec, rows, instances)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        export(rows, out / "results.csv", "csv")
        export(rows, out / "results.json", "json", variable=spec.variable)
        export_instances(instances, out / "instances.csv")
    return result


# --------------------------------------------------------------- benchmark

@dataclass
class BenchRow:
    n_ris: int
    drbc_ms: float
    exhaustive_ms: float

    @property
    def speedup(self) -> float:
        return self.exhaustive_ms / self.drbc_ms


def _median_ms(fns: Sequence[Callable[[], object]], repetitions: int, warmup: int = 5) -> list[float]:
    """Median wall time per callable in ms.

    Repetitions are interleaved across callables and the garbage collector is
    paused, so background load spreads evenly instead of skewing one entry.
    """
    for fn in fns:
        for _ in range(warmup):
            fn()
    samples = [[] for _ in fns]
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(repetitions):
            for fn, out in zip(fns, samples):
                t0 = time.perf_counter_ns()
                fn()
                out.append(time.perf_counter_ns() - t0)
    finally:
        if was_enabled:
            gc.enable()
    return [statistics.median(s) / 1e6 for s in samples]


def bench_runtime(k_values: Sequence[int], repetitions: int = 100, seed: int = 0,
                  scenario: ScenarioConfig | None = None, lambda_deg: float = 60.0) -> list[BenchRow]:
    """Median wall time of the ON-OFF decision alone (phases precomputed)."""
    base = ScenarioConfig() if scenario is None else scenario
    base = base.replace(interferer_angles=[lambda_deg] * len(base.interferer_angles))
    fns = []
    for K in k_values:
        sc = place_scenario(base.replace(n_ris=int(K)))
        ch = sample_channels(sc, seed)
        powers, noise = _powers_noise(sc)
        inferred = frozenset(range(1, sc.n_users))
        phases = control.optimize_phases(ch, inferred, powers, noise)
        args = (ch, inferred, phases, powers, noise)
        fns.append(lambda args=args: control.drbc(*args))
        fns.append(lambda args=args: control.exhaustive_onoff(*args))
    ms = _median_ms(fns, repetitions)
    return [BenchRow(int(K), ms[2 * i], ms[2 * i + 1]) for i, K in enumerate(k_values)]


def linear_fit_r2(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares line through (x, y); returns (slope, intercept, R^2)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


# ------------------------------------------------------------------ export

def csv_columns() -> list[str]:
    cols = ["grid_value"]
    for p in POLICIES:
        cols += [f"{p}_mean_db", f"{p}_se_db"]
    return cols + ["accuracy", "isl_frac_all_on", "isl_frac_all_off", *TIMING_COLUMNS]


def _flat(row: ResultRow) -> dict[str, float]:
    d = {"grid_value": row.grid_value}
    for p in POLICIES:
        d[f"{p}_mean_db"] = row.mean_db[p]
        d[f"{p}_se_db"] = row.se_db[p]
    d.update(accuracy=row.accuracy, isl_frac_all_on=row.frac_all_on, isl_frac_all_off=row.frac_all_off,
             decision_time_us=row.decision_time_us)
    return d


def export(results: Sequence[ResultRow], path: str | Path, format: str = "csv", variable: str | None = None) -> None:
    if format == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=csv_columns(), lineterminator="\n")
            writer.writeheader()
            for row in results:
                writer.writerow({k: repr(float(v)) for k, v in _flat(row).items()})
    elif format == "json":
        doc = {
            "schema_version": SCHEMA_VERSION,
            "variable": variable,
            "columns": csv_columns(),
            "nondeterministic_columns": list(TIMING_COLUMNS),
            "rows": [_flat(r) for r in results],
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")
    else:
        raise ValueError(f"unknown export format {format!r}")


def read_results_csv(path: str | Path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def export_instances(instances: Sequence[InstanceRecord], path: str | Path) -> None:
    cols = ["grid_value", "trial", "lambda_deg", *[f"{p}_db" for p in POLICIES],
            "isl_beta", "exhaustive_beta", "correct"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in instances:
            w.writerow([repr(float(r.grid_value)), r.trial, repr(float(r.lambda_deg)),
                        *[repr(float(r.gamma_db[p])) for p in POLICIES],
                        "".join(map(str, r.isl_beta)), "".join(map(str, r.exhaustive_beta)), int(r.correct)])


def export_bench(rows: Sequence[BenchRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_ris", "drbc_ms", "exhaustive_ms", "speedup"])
        for r in rows:
            w.writerow([r.n_ris, f"{r.drbc_ms:.6f}", f"{r.exhaustive_ms:.6f}", f"{r.speedup:.1f}"])


@dataclass
class BenchSpec:
    k_values: list[int] = field(default_factory=lambda: list(range(2, 11)))
    repetitions: int = 100
    seed: int = 0
    lambda_deg: float = 60.0
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)


def load_bench_spec(path: str | Path) -> BenchSpec:
    """TOML with a ``[bench]`` table and an optional ``[scenario]`` table."""
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return BenchSpec(scenario=config_from_dict(data.get("scenario", {})), **data.get("bench", {}))


def load_sweep_spec(path: str | Path) -> SweepSpec:
    """TOML with a ``[sweep]`` table and an optional ``[scenario]`` table."""
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    sw = dict(data.get("sweep", {}))
    if "lambda_range" in sw:
        sw["lambda_range"] = tuple(sw["lambda_range"])
    return SweepSpec(scenario=config_from_dict(data.get("scenario", {})), **sw)
