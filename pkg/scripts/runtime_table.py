"""Decision-time comparison of the per-RIS rule and exhaustive ON-OFF search."""

import argparse
from pathlib import Path

from islris.experiments import bench_runtime, export_bench, linear_fit_r2, load_bench_spec

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--spec", type=Path, default=ROOT / "specs" / "table3.toml")
    ap.add_argument("--out", type=Path, default=Path("results"))
    args = ap.parse_args()
    spec = load_bench_spec(args.spec)
    rows = bench_runtime(spec.k_values, spec.repetitions, spec.seed, spec.scenario, spec.lambda_deg)
    args.out.mkdir(parents=True, exist_ok=True)
    export_bench(rows, args.out / "bench.csv")
    print(f"{'K':>3} {'drbc ms':>10} {'exhaustive ms':>14} {'ratio':>8}")
    for r in rows:
        print(f"{r.n_ris:>3} {r.drbc_ms:10.4f} {r.exhaustive_ms:14.4f} {r.speedup:8.1f}")
    slope, _, r2 = linear_fit_r2([r.n_ris for r in rows], [r.drbc_ms for r in rows])
    print(f"drbc slope {slope:.4f} ms per RIS, R^2 {r2:.3f}")


if __name__ == "__main__":
    main()
