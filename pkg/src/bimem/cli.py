"""Command-line interface: the whole pipeline as subcommands.

Exit codes: 0 success, 1 usage or configuration error, 2 data or runtime
error. Every subcommand prints the resolved configuration before doing any
work so a run can be reproduced exactly.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

from . import adapt, blackbox, config, data, metrics, model
from .errors import BimemError, ConfigError, DataError, InvalidArgumentError


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: A003 - argparse API
        raise _UsageError(message)


def _print_resolved(resolved: dict) -> None:
    print("resolved config:")
    print(json.dumps(resolved, indent=2, sort_keys=True))


def cmd_gen_data(args) -> int:
    resolved = config.resolve(args.config)
    _print_resolved(resolved)
    source, target = data.gen_shifted_gaussians(
        n_categories=resolved["n_categories"],
        feature_dim=resolved["dim"],
        n_per_class=resolved["n_per_class"],
        class_separation=resolved["class_separation"],
        target_shift=resolved["target_shift"],
        target_rotation_deg=resolved["target_rotation_deg"],
        noise_sigma=resolved["noise_sigma"],
        seed=resolved["seed"],
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data.write_dataset(source, out_dir / "source.csv")
    data.write_dataset(target, out_dir / "target.csv")
    print(f"wrote {out_dir / 'source.csv'} ({source.n_samples} rows)")
    print(f"wrote {out_dir / 'target.csv'} ({target.n_samples} rows)")
    return 0


def cmd_train_source(args) -> int:
    resolved = config.resolve(args.config)
    _print_resolved(resolved)
    source = data.read_dataset(args.source, n_categories=resolved["n_categories"])
    params = blackbox.train_source(
        source,
        epochs=resolved["source_epochs"],
        lr=resolved["source_lr"],
        seed=resolved["seed"],
        batch_size=resolved["source_batch_size"],
        hidden_dim=resolved["hidden_dim"],
        n_categories=resolved["n_categories"],
    )
    model.save_params(params, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_predict(args) -> int:
    resolved = config.resolve(args.config)
    _print_resolved(resolved)
    params = model.load_params(args.model)
    target = data.read_dataset(args.target, n_categories=params.layout.n_categories)
    preds = blackbox.export_predictions(params, target, args.out, hard_only=args.hard_only)
    print(f"wrote {args.out} ({preds.ids.shape[0]} records)")
    return 0


def cmd_adapt(args) -> int:
    overrides = {}
    if args.method is not None:
        overrides["method"] = args.method
    resolved = config.resolve(args.config, overrides)
    _print_resolved(resolved)
    cfg = config.adapt_config(resolved)
    target = data.read_dataset(args.target, n_categories=resolved["n_categories"])
    preds = blackbox.read_predictions(args.preds)
    _, trace = adapt.run(target, preds, cfg)
    trace.to_csv(args.out)
    final = trace.rows[-1]
    print(
        f"wrote {args.out}: final acc_all={final.acc_all:.4f} "
        f"pl_acc_denoised={final.pl_acc_denoised:.4f} "
        f"pl_acc_blackbox={final.pl_acc_blackbox:.4f}"
    )
    return 0


def cmd_ablate(args) -> int:
    resolved = config.resolve(args.config)
    _print_resolved(resolved)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    except ValueError:
        raise ConfigError(f"--seeds must be comma-separated integers, got {args.seeds!r}")
    if not seeds:
        raise ConfigError("--seeds must contain at least one seed")
    base_cfg = config.adapt_config({**resolved, "method": "bimem"})
    target = data.read_dataset(args.target, n_categories=resolved["n_categories"])
    preds = blackbox.read_predictions(args.preds)
    rows = adapt.run_ablation_suite(target, preds, base_cfg, seeds)
    adapt.write_ablation_table(rows, args.out)
    for row in rows:
        print(
            f"row {row['row']}: mean_final_acc={row['mean_final_acc']:.4f} "
            f"(+/- {row['std_final_acc']:.4f}) [{row['flows']}]"
        )
    print(f"wrote {args.out}")
    return 0


_TRACE_NAME = re.compile(r"^(?P<method>.+?)_seed(?P<seed>\d+)")


def trace_identity(path: str | Path) -> tuple[str, int | str]:
    """(method, seed) parsed from '<method>_seed<k>*.csv'; stem fallback."""
    stem = Path(path).stem
    match = _TRACE_NAME.match(stem)
    if match:
        return match.group("method"), int(match.group("seed"))
    return stem, ""


def cmd_report(args) -> int:
    resolved = config.resolve(args.config)
    _print_resolved(resolved)
    entries = []
    for path in args.traces:
        method, seed = trace_identity(path)
        entries.append((method, seed, adapt.RunTrace.from_csv(path)))
    rows = metrics.summary_rows(entries)
    metrics.write_summary(rows, args.out)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(
        prog="bimem",
        description="Memory-calibrated self-training lab for black-box domain shift.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic source/target benchmark")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--out-dir", required=True, help="directory for source.csv / target.csv")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-source", help="train the source model on source.csv")
    p.add_argument("source", help="source dataset CSV")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True, help="model checkpoint path (JSON)")
    p.set_defaults(func=cmd_train_source)

    p = sub.add_parser("predict", help="export black-box predictions for target.csv")
    p.add_argument("model", help="source model checkpoint")
    p.add_argument("target", help="target dataset CSV")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True, help="predictions CSV path")
    p.add_argument(
        "--hard-only",
        action="store_true",
        help="export smoothed one-hot probabilities instead of soft predictions",
    )
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("adapt", help="run adaptation on target.csv + preds.csv")
    p.add_argument("target", help="target dataset CSV")
    p.add_argument("preds", help="black-box predictions CSV")
    p.add_argument("--config", default=None)
    p.add_argument("--method", choices=adapt.METHODS, default=None, help="override config method")
    p.add_argument("--out", required=True, help="trace CSV path")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("ablate", help="run the seven-row flow ablation grid")
    p.add_argument("target")
    p.add_argument("preds")
    p.add_argument("--config", default=None)
    p.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated seeds")
    p.add_argument("--out", required=True, help="ablation table CSV path")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="aggregate trace CSVs into a summary CSV")
    p.add_argument(
        "traces",
        nargs="+",
        help="trace CSVs; name them <method>_seed<k>.csv to label summary rows",
    )
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True, help="summary CSV path")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, BimemError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
