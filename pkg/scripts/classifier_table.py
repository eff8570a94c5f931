"""Per-class activity-classifier accuracy for window sizes 32, 128 and 512.

Generates one dataset per window, trains with the default hyperparameters
and prints the class x window accuracy table. Window 512 takes a while.
"""

import argparse
from pathlib import Path

from islris.cnn import TrainConfig, save_model, train
from islris.waveform import WINDOW_SIZES, DatasetConfig, build_dataset, class_name, write_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("results/classifier"))
    ap.add_argument("--per-class", type=int, default=4000)
    ap.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    ap.add_argument("--windows", type=int, nargs="+", default=list(WINDOW_SIZES))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    reports = {}
    for w in args.windows:
        ds = build_dataset(DatasetConfig(per_class=args.per_class, window=w), seed=args.seed, workers=args.workers)
        write_dataset(args.out / f"dataset_w{w}.isld", ds)
        model, reports[w] = train(ds, TrainConfig(epochs=args.epochs, seed=args.seed))
        save_model(model, args.out / f"model_w{w}.islm")
    print(f"{'Class':<12}" + "".join(f"{'w=' + str(w):>10}" for w in args.windows))
    for c in sorted(reports[args.windows[0]].per_class_accuracy):
        print(f"{class_name(c, 2):<12}" + "".join(f"{100 * reports[w].per_class_accuracy[c]:9.2f}%"
                                                  for w in args.windows))
    print(f"{'Overall':<12}" + "".join(f"{100 * reports[w].overall_accuracy:9.2f}%" for w in args.windows))


if __name__ == "__main__":
    main()
