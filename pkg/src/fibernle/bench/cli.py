"""Command-line entry point: ``fibernle <command> [options]``.

Commands
--------
simulate   transmit and receive one train and one test frame; write the
           token datasets, linear/DBP metrics and the CDC constellation
train      train an equalizer (``--arch``) and write its checkpoint
evaluate   score a checkpoint on a test dataset
sweep      run the pipeline over ``run.sweep_values``; write CSV and SVG
plot       render a sweep CSV as an SVG
selftest   run the analytic-oracle checks
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .. import metrics
from ..dataset import TokenDataset, bits_to_float, build_windows
from ..nn import ModelCheckpoint, predict
from .config import ConfigError, load_config
from .emit import EmitError, emit_constellation, emit_csv, emit_plot, read_csv
from .pipeline import PipelineError, score, simulate, train_equalizer, training_windows
from .selftest import run_selftest
from .sweeper import SweepResult, SweepRow, sweep

log = logging.getLogger("fibernle")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML experiment configuration (defaults if omitted)")
    p.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    p.add_argument("--out-dir", type=Path, default=Path("out"), help="output directory (default: ./out)")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key, e.g. run.n_symbols=4096 (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fibernle", description=__doc__.split("\n\n")[0],
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("simulate", help="simulate a train and a test transmission")
    _common(p)

    p = sub.add_parser("train", help="train an equalizer")
    _common(p)
    p.add_argument("--arch", choices=("transformer", "fcnn"), default="transformer")
    p.add_argument("--dataset", type=Path, help="training windows from `simulate` (simulated if omitted)")

    p = sub.add_parser("evaluate", help="score a checkpoint on test windows")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--dataset", type=Path, help="test windows from `simulate` (simulated if omitted)")

    p = sub.add_parser("sweep", help="sweep launch power or span count")
    _common(p)

    p = sub.add_parser("plot", help="render a sweep CSV as SVG")
    p.add_argument("csv", type=Path)
    p.add_argument("--output", type=Path, help="SVG path (default: CSV path with .svg suffix)")
    p.add_argument("--title")
    p.add_argument("--variable", choices=("launch_power_dbm", "n_spans"), default="launch_power_dbm",
                   help="swept quantity, used for the axis label")

    sub.add_parser("selftest", help="run analytic-oracle checks")
    return parser


def _config(args):
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    cfg = load_config(args.config, overrides)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    return cfg


def _sweep_value(cfg) -> float:
    return cfg.tx.launch_power_dbm if cfg.run.sweep_variable == "launch_power_dbm" else cfg.link.n_spans


def _row(value, method, report: metrics.MetricsReport, seed) -> SweepRow:
    return SweepRow(float(value), method, report.ber, report.ser, report.q_db, report.evm_pct,
                    report.ber_is_floor, float("nan"), seed)


def cmd_simulate(args) -> int:
    cfg = _config(args)
    seed, out = cfg.run.seed, args.out_dir
    test = simulate(cfg, seed, "test", ("linear-eq", "dbp"))
    tr = simulate(cfg, seed, "train", ("linear-eq",))
    train_ds = training_windows(cfg, tr, seed)
    test_ds = build_windows(test.received["linear-eq"], test.tx, cfg.model.window_n,
                            normalization=train_ds.normalization, source_seed=seed, polarization="x")
    train_ds.save(out / "train.nleq")
    test_ds.save(out / "test.nleq")
    n = cfg.model.window_n
    keep = slice(n, test.tx.size - n)
    result = SweepResult(cfg.run.sweep_variable)
    value = _sweep_value(cfg)
    for mode in ("linear-eq", "dbp"):
        report = score(test.tx[keep], test.received[mode][keep])
        result.rows.append(_row(value, mode, report, seed))
        print(f"{mode:<10} Q = {report.q_db:6.2f} dB  BER = {report.ber:.3e}  EVM = {report.evm_pct:.2f}%")
    emit_csv(result, out / "simulate.csv")
    emit_constellation(test.received["linear-eq"][keep], test.received["dbp"][keep],
                       out / "constellation_cdc_dbp.csv")
    (out / "config.yaml").write_text(cfg.to_yaml())
    print(f"wrote {out}/train.nleq, test.nleq, simulate.csv, constellation_cdc_dbp.csv")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    seed = cfg.run.seed
    if args.dataset is not None:
        ds = TokenDataset.load(args.dataset)
        if ds.n != cfg.model.window_n:
            raise ConfigError(f"{args.dataset} has window_n={ds.n}, config says {cfg.model.window_n}")
    else:
        ds = training_windows(cfg, simulate(cfg, seed, "train", ("linear-eq",)), seed)
    ckpt = train_equalizer(cfg, args.arch, ds, seed)
    path = args.out_dir / f"{args.arch}.ckpt"
    ckpt.save(path)
    meta = ckpt.metadata
    print(f"{args.arch}: best loss {meta['best_loss']:.5g} at epoch {meta['best_epoch']}; wrote {path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    seed = cfg.run.seed
    ckpt = ModelCheckpoint.load(args.checkpoint)
    n = int(ckpt.metadata.get("window_n", cfg.model.window_n))
    if args.dataset is not None:
        ds = TokenDataset.load(args.dataset)
    else:
        test = simulate(cfg, seed, "test", ("linear-eq",))
        ds = build_windows(test.received["linear-eq"], test.tx, n,
                           normalization=float(ckpt.metadata["normalization"]), source_seed=seed)
    if ds.n != n:
        raise ConfigError(f"checkpoint expects window_n={n}, dataset has {ds.n}")
    after = predict(ckpt.build(), ds.features())
    after = after[:, 0] + 1j * after[:, 1]
    centre = bits_to_float(ds.features()[:, 2 * n : 2 * n + 2, :])
    before = centre[:, 0] + 1j * centre[:, 1]
    tx = ds.targets[:, 0] + 1j * ds.targets[:, 1]
    report = score(tx, after)
    result = SweepResult(cfg.run.sweep_variable, [_row(_sweep_value(cfg), ckpt.arch, report, seed)])
    emit_csv(result, args.out_dir / "evaluate.csv")
    emit_constellation(before, after, args.out_dir / f"constellation_{ckpt.arch}.csv")
    print(json.dumps({"method": ckpt.arch, **report.as_dict()}, indent=2))
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    result = sweep(cfg)
    csv_path = emit_csv(result, args.out_dir / "sweep.csv")
    # plot from the CSV as written, so `plot` on that file reproduces the SVG
    emit_plot(read_csv(csv_path, result.variable), args.out_dir / "sweep.svg")
    for value, message in result.failures:
        print(f"point {result.variable}={value:g} failed: {message}", file=sys.stderr)
    print(f"wrote {csv_path} ({len(result.rows)} rows) and {args.out_dir / 'sweep.svg'}")
    return 1 if result.failures else 0


def cmd_plot(args) -> int:
    result = read_csv(args.csv, args.variable)
    path = emit_plot(result, args.output or args.csv.with_suffix(".svg"), args.title)
    print(f"wrote {path}")
    return 0


def cmd_selftest(args) -> int:
    return 0 if run_selftest() else 1


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "plot": cmd_plot,
    "selftest": cmd_selftest,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, EmitError, PipelineError, ValueError, OSError) as exc:
        print(f"fibernle {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
