"""Sweep the polynomial degree K on synthetic data and export a plot-ready table.

    python scripts/degree_sweep.py --config scripts/configs/degree_sweep.yaml --out results/k.csv
"""

import argparse
import logging

from polynsd.bench import export_results, load_config, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default="scripts/configs/degree_sweep.yaml")
    ap.add_argument("--out", default=None)
    ap.add_argument("--format", choices=["csv", "json"], default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = load_config(args.config)
    table = run_experiment(cfg, progress=lambda r: print(
        f"K={r.axis_value} seed={r.seed} {r.status} acc={r.accuracy:.3f} params={r.params}", flush=True))
    print(table.summary())
    out = args.out or cfg.out
    if out:
        print("wrote", export_results(table, out, args.format or cfg.format))


if __name__ == "__main__":
    main()
