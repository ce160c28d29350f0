"""Command-line entry point: ``polynsd {train,sweep,synth-gen,validate,oracle-check}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import yaml

from .bench import (
    ExperimentConfig,
    ResultsTable,
    export_results,
    load_config,
    oracle_check,
    point_config,
    run_experiment,
    run_point,
)
from .data import homophily, load_dataset, save_dataset
from .errors import ConfigError, DatasetError, DomainError, StructuralError
from .synth import RewireDiagnostics, SyntheticSpec, gen_dataset, inter_class_fraction

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_DATASET = 3


def _experiment(args) -> ExperimentConfig:
    if args.config is None:
        raise ConfigError("--config is required")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.format is not None:
        cfg.format = args.format
    cfg.validate()
    return cfg


def _write(table: ResultsTable, cfg: ExperimentConfig) -> None:
    if cfg.out:
        path = export_results(table, cfg.out, cfg.format)
        print(f"wrote {path}")


def cmd_train(args) -> int:
    cfg = _experiment(args)
    if cfg.synthetic is not None:
        ds = gen_dataset(replace(cfg.synthetic, seed=cfg.seed))
    else:
        ds = load_dataset(cfg.data_path)
    value = cfg.points[0]
    model = point_config(cfg.model, cfg.sweep_axis, value)
    row = run_point(model, ds, value, cfg.seed, cfg.memory_budget_mb)
    print(f"{ds.name}: status={row.status} test_acc={row.accuracy:.4f} loss={row.loss:.4f} "
          f"params={row.params} runtime={row.runtime_s:.1f}s")
    _write(ResultsTable(cfg.sweep_axis, [row]), cfg)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _experiment(args)

    def progress(row):
        print(f"axis={row.axis_value} seed={row.seed} status={row.status} acc={row.accuracy:.4f}",
              flush=True)

    table = run_experiment(cfg, progress=progress)
    print(table.summary())
    _write(table, cfg)
    return EXIT_OK


def cmd_synth_gen(args) -> int:
    raw = {}
    if args.config is not None:
        try:
            raw = yaml.safe_load(Path(args.config).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read {args.config}: {exc}") from None
        if isinstance(raw, dict) and "synthetic" in raw:
            raw = raw["synthetic"]
        if not isinstance(raw, dict):
            raise ConfigError("synthetic config must be a mapping")
    spec = SyntheticSpec.from_dict(raw)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    if args.out is None:
        raise ConfigError("--out <directory> is required")
    diag = RewireDiagnostics()
    ds = gen_dataset(spec, diag)
    save_dataset(ds, args.out)
    (Path(args.out) / "spec.yaml").write_text(yaml.safe_dump(spec.to_dict(), sort_keys=False))
    print(f"wrote {args.out}: N={ds.num_nodes} E={ds.graph.num_edges} classes={ds.num_classes} "
          f"inter-class={inter_class_fraction(ds.graph, ds.labels):.3f} rewired={diag.rewired}/{diag.attempted} "
          f"skipped={diag.skipped_no_target}")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _experiment(args)
    print(yaml.safe_dump(cfg.to_dict(), sort_keys=False).rstrip())
    if cfg.data_path is not None:
        ds = load_dataset(cfg.data_path)
        print(f"dataset {ds.name}: N={ds.num_nodes} E={ds.graph.num_edges} classes={ds.num_classes} "
              f"homophily={homophily(ds.graph, ds.labels):.3f}")
    print("config OK")
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    opts = {"instances": 30, "degree": 8}
    if args.config is not None:
        try:
            raw = yaml.safe_load(Path(args.config).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read {args.config}: {exc}") from None
        if not isinstance(raw, dict) or set(raw) - set(opts):
            raise ConfigError(f"oracle-check config accepts only {sorted(opts)}")
        opts.update(raw)
    checks = oracle_check(opts["instances"], args.seed or 0, opts["degree"])
    if args.format == "json":
        text = json.dumps([asdict(c) for c in checks], indent=2)
    else:
        text = "\n".join(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<20} worst={c.worst:.3e} tol={c.tolerance:.0e}"
                         for c in checks)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_FAIL


COMMANDS = {
    "train": (cmd_train, "train one model on the configured dataset"),
    "sweep": (cmd_sweep, "run the configured sweep over seeds and export the results table"),
    "synth-gen": (cmd_synth_gen, "generate a synthetic heterophily dataset directory"),
    "validate": (cmd_validate, "check an experiment config and its dataset files"),
    "oracle-check": (cmd_oracle_check, "compare sparse operators against dense eigendecompositions"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polynsd", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML or JSON config file")
        p.add_argument("--seed", type=int, help="override the base seed")
        p.add_argument("--out", help="output path")
        p.add_argument("--format", choices=("csv", "json"), help="output format")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    fn = COMMANDS[args.command][0]
    try:
        return fn(args)
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, StructuralError) as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_DATASET


if __name__ == "__main__":
    sys.exit(main())
