"""Run the synthetic comparison grid once and record the results.

The acceptance suite's margins were pinned from the output of this script
(see ``results/calibration.json`` and the README).

    python scripts/calibrate.py --out results/calibration.json
"""

import argparse
import json
import logging
import time

from gcgnet.experiments import GridConfig, run_grid, summarize


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/calibration.json")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=100)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = GridConfig(seeds=tuple(args.seeds), epochs=args.epochs)
    start = time.perf_counter()
    summary = summarize(run_grid(cfg))
    summary["wall_seconds"] = time.perf_counter() - start
    summary["grid"] = {"T": cfg.T, "F": cfg.F, "epochs": cfg.epochs, "patience": cfg.patience,
                       "seeds": list(cfg.seeds), "synth": vars(cfg.synth), "data_seed": cfg.data_seed}
    with open(args.out, "w") as fh:
        json.dump(summary, fh, indent=2, default=str)
    print(json.dumps(summary["mean"], indent=2))


if __name__ == "__main__":
    main()
