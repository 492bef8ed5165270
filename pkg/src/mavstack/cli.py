"""Command line interface.

::

    mavstack sim run --config hover.ini [--seed N] [--out dir]
    mavstack sim sweep --config hover.ini --param wind.gust_sigma=0:0.8:5 [--out dir] [--jobs 4]
    mavstack sysid chirp --channel phi --out chirp.csv
    mavstack sysid fit --log chirp.csv --channel phi --order 2
    mavstack eval rms --log runlog.csv --kind control --window 10:60

Exit status is 0 on success, 2 for configuration or input errors and
3 when a run aborts numerically.
"""

from __future__ import annotations

import argparse
import csv
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config, read_parser, apply_overrides, config_from_parser
from .harness import (
    KINDS,
    NumericalAbort,
    RunLog,
    build_report,
    default_window,
    export,
    rms_metrics,
    run_scenario,
)
from .simulator import ActuatorModel, chirp_log
from .sysid import CHANNELS, FlightLog, IdentificationError, fit_channel

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 2, 3


class UsageError(Exception):
    pass


def _parse_window(text: str | None):
    if text is None:
        return None
    try:
        a, b = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise UsageError(f"window must be a:b, got {text!r}") from exc
    return a, b


def _print_kv(report: dict, out=None):
    out = out or sys.stdout
    for k, v in report.items():
        out.write(f"{k}={repr(float(v)) if isinstance(v, (float, np.floating)) else v}\n")


def _write_abort(exc: NumericalAbort, out_dir) -> None:
    sys.stderr.write(f"numerical abort: {exc}\n")
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        path = Path(out_dir) / "abort_dump.csv"
        path.write_text(exc.dump() + "\n", encoding="utf-8")
        sys.stderr.write(f"last {len(exc.records)} records written to {path}\n")
    else:
        sys.stderr.write(exc.dump() + "\n")


def cmd_sim_run(args) -> int:
    overrides = {"scenario.seed": args.seed} if args.seed is not None else None
    cfg = load_config(args.config, overrides)
    out = args.out or cfg.output
    try:
        log = run_scenario(cfg)
    except NumericalAbort as exc:
        _write_abort(exc, out)
        return EXIT_ABORT
    report = build_report(log, default_window(cfg) if cfg.scenario != "sysid-sweep" else None)
    if out is not None:
        csv_path, rep_path = export(log, report, out)
        sys.stderr.write(f"wrote {csv_path} and {rep_path}\n")
    _print_kv(report)
    return EXIT_OK


def parse_sweep(spec: str) -> tuple:
    """``section.key=lo:hi:n`` (linear) or ``section.key=v1,v2,...`` into (path, values)."""
    path, sep, rng = spec.partition("=")
    if not sep or "." not in path:
        raise UsageError(f"--param must look like section.key=lo:hi:n, got {spec!r}")
    try:
        if ":" in rng:
            lo, hi, n = rng.split(":")
            n = int(n)
            if n < 1:
                raise ValueError("n must be >= 1")
            values = tuple(float(v) for v in np.linspace(float(lo), float(hi), n))
        else:
            values = tuple(float(v) for v in rng.split(","))
    except ValueError as exc:
        raise UsageError(f"bad range in {spec!r}: {exc}") from exc
    return path.strip(), values


def cmd_sim_sweep(args) -> int:
    path, values = parse_sweep(args.param)
    base = read_parser(args.config)
    base_dir = str(Path(args.config).parent)
    cfgs = [config_from_parser(apply_overrides(base, {path: v}), base_dir) for v in values]
    out = Path(args.out or cfgs[0].output or "sweep")

    def one(cfg):
        try:
            return run_scenario(cfg)
        except NumericalAbort as exc:
            return exc

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        results = list(pool.map(one, cfgs))

    status = EXIT_OK
    rows = []
    for i, (value, cfg, res) in enumerate(zip(values, cfgs, results)):
        run_dir = out / f"run_{i:03d}"
        if isinstance(res, NumericalAbort):
            _write_abort(res, run_dir)
            status = EXIT_ABORT
            continue
        report = build_report(res, default_window(cfg))
        export(res, report, run_dir)
        rows.append({"index": i, path: value, **report})
    if rows:
        out.mkdir(parents=True, exist_ok=True)
        keys = list(rows[0])
        with (out / "sweep.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, keys, extrasaction="ignore", lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
        sys.stderr.write(f"wrote {out / 'sweep.csv'}\n")
    for row in rows:
        print(f"{path}={row[path]!r} control.pose={row['control.pose']!r} estimation.pose={row['estimation.pose']!r}")
    return status


def cmd_sysid_fit(args) -> int:
    try:
        log = FlightLog.from_csv(args.log)
    except OSError as exc:
        raise UsageError(f"cannot read {args.log}: {exc}") from exc
    except ValueError as exc:
        raise UsageError(f"{args.log}: {exc}") from exc
    model = fit_channel(log, args.channel, args.order, ActuatorModel().scales if args.default_scales else None)
    print(f"channel={args.channel}")
    print(f"order={args.order}")
    for name, value in vars(model).items():
        print(f"{name}={value!r}")
    return EXIT_OK


def cmd_sysid_chirp(args) -> int:
    log = chirp_log(ActuatorModel(vertical_mode="velocity"), args.channel, duration=args.duration, amplitude=args.amplitude,
                    noise=args.noise, seed=args.seed)
    log.to_csv(args.out)
    sys.stderr.write(f"wrote {args.out}\n")
    return EXIT_OK


def cmd_eval_rms(args) -> int:
    try:
        log = RunLog.from_csv(args.log)
    except OSError as exc:
        raise UsageError(f"cannot read {args.log}: {exc}") from exc
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    try:
        report = rms_metrics(log, args.kind, _parse_window(args.window))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _print_kv(report.as_dict())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mavstack", description=__doc__.split("\n\n")[0])
    groups = p.add_subparsers(dest="group", required=True)

    sim = groups.add_parser("sim", help="closed-loop simulation").add_subparsers(dest="cmd", required=True)
    run = sim.add_parser("run", help="run one scenario")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.set_defaults(func=cmd_sim_run)
    sweep = sim.add_parser("sweep", help="run a scenario over a range of one parameter")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--param", required=True, help="section.key=lo:hi:n or section.key=v1,v2")
    sweep.add_argument("--out")
    sweep.add_argument("--jobs", type=int, default=1)
    sweep.set_defaults(func=cmd_sim_sweep)

    sysid = groups.add_parser("sysid", help="system identification").add_subparsers(dest="cmd", required=True)
    fit = sysid.add_parser("fit", help="fit a channel model to a flight log")
    fit.add_argument("--log", required=True)
    fit.add_argument("--channel", required=True, choices=CHANNELS)
    fit.add_argument("--order", required=True, type=int, choices=(1, 2))
    fit.add_argument("--default-scales", action="store_true",
                     help="use the nominal command scales instead of estimating them")
    fit.set_defaults(func=cmd_sysid_fit)
    chirp = sysid.add_parser("chirp", help="record a simulated chirp flight log")
    chirp.add_argument("--channel", required=True, choices=CHANNELS)
    chirp.add_argument("--out", required=True)
    chirp.add_argument("--duration", type=float, default=60.0)
    chirp.add_argument("--amplitude", type=float, default=100.0)
    chirp.add_argument("--noise", type=float, default=0.0)
    chirp.add_argument("--seed", type=int, default=0)
    chirp.set_defaults(func=cmd_sysid_chirp)

    ev = groups.add_parser("eval", help="metrics on exported run logs").add_subparsers(dest="cmd", required=True)
    rms = ev.add_parser("rms", help="RMS error report")
    rms.add_argument("--log", required=True)
    rms.add_argument("--kind", required=True, choices=KINDS)
    rms.add_argument("--window")
    rms.set_defaults(func=cmd_eval_rms)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError, IdentificationError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    except NumericalAbort as exc:
        _write_abort(exc, None)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
