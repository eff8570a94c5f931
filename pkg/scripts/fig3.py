"""SINR vs incidence-angle difference for interferer powers 10, 15 and 20 dBm.

Runs specs/fig3a.toml (interferer 10 m from the RIS) and specs/fig3b.toml
(5 m) once per power and writes one results directory per run.
"""

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
    ap.add_argument("--powers", type=float, nargs="+", default=[10.0, 15.0, 20.0])
    args = ap.parse_args()
    for name in ("fig3a", "fig3b"):
        base = load_sweep_spec(ROOT / "specs" / f"{name}.toml")
        for pm in args.powers:
            spec = dataclasses.replace(
                base,
                trials=args.trials or base.trials,
                workers=args.workers,
                scenario=base.scenario.replace(interferer_powers_dbm=[pm]),
            )
            out = args.out / f"{name}_pm{pm:g}"
            res = sweep(spec, out_dir=out)
            print(f"{name} p_m={pm:g} dBm -> {out}")
            for row in res.rows:
                cells = "  ".join(f"{p} {row.mean_db[p]:7.2f}" for p in POLICIES)
                print(f"  lambda={row.grid_value:5.1f}  {cells}")


if __name__ == "__main__":
    main()
