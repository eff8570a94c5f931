"""SINR vs number of RISs at lambda = 0, lambda = 150 and lambda ~ U[30, 120]."""

import argparse
import dataclasses
from pathlib import Path

from islris.experiments import POLICIES, load_sweep_spec, sweep

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--trials", type=int, default=None)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    for name in ("fig4a", "fig4b", "fig4c"):
        base = load_sweep_spec(ROOT / "specs" / f"{name}.toml")
        spec = dataclasses.replace(base, trials=args.trials or base.trials, workers=args.workers)
        res = sweep(spec, out_dir=args.out / name)
        print(f"{name} -> {args.out / name}")
        for row in res.rows:
            cells = "  ".join(f"{p} {row.mean_db[p]:7.2f}" for p in POLICIES)
            print(f"  K={row.grid_value:.0f}  {cells}  all-ON {row.frac_all_on:.2f}  all-OFF {row.frac_all_off:.2f}")


if __name__ == "__main__":
    main()
