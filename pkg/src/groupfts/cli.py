"""Command-line interface: ``groupfts <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from groupfts import __version__
from groupfts.curves import AgeGrid, FunctionalTimeSeries, Scale, SmoothingConfig, log_transform, smooth_series, to_raw
from groupfts.data import FLOAT_FMT, _atomic_write, export, ingest, parse_shape, read_long_csv, simulate_dataset, write_long_csv
from groupfts.errors import ConfigError, DataError, NumericalError
from groupfts.evaluation import METHODS, BacktestConfig, expanding_window_backtest
from groupfts.forecast import forecast_curves, interval_forecast
from groupfts.fpca import decompose
from groupfts.group import bottom_up, forecast_exposure_ratios, ols_reconcile, reconcile_intervals
from groupfts.lrcov import KernelFamily, KernelSpec

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _ncomp(value):
    if value in ("auto", "cpv", "hk"):
        return value
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected auto, cpv, hk or an integer, got {value!r}") from None


def _add_scale(p):
    g = p.add_argument_group("working scale")
    g.add_argument("--log-base", choices=["10", "e"], default="10")
    g.add_argument("--floor", type=float, default=1e-6, help="rates below this are floored before the log")
    g.add_argument("--smooth", action="store_true", help="smooth each log-rate curve before modelling")
    g.add_argument("--penalty", type=float, default=None, help="smoothing penalty (default: GCV)")
    g.add_argument("--monotone-from-age", type=float, default=65.0)


def _add_model(p, modes=True):
    g = p.add_argument_group("model")
    if modes:
        g.add_argument("--mode", choices=["static", "dynamic", "both"], default="dynamic")
    g.add_argument("--kernel", choices=[k.value for k in KernelFamily], default="bartlett")
    g.add_argument("--bandwidth", type=float, default=None, help="fixed bandwidth (default: plug-in)")
    g.add_argument("--delta", type=float, default=0.85, help="CPV threshold in (0, 1]")
    g.add_argument("--ncomp", type=_ncomp, default="auto")
    g.add_argument("--family", default="auto", help="score model: auto, mean, random-walk-drift, ar, ar-<p>")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="groupfts", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write a synthetic rates/exposures/structure fixture")
    p.add_argument("--shape", default="2x2", help="'japan', '<regions>x<sexes>' or '<regions>x<areas>x<sexes>'")
    p.add_argument("--years", type=int, default=42)
    p.add_argument("--first-year", type=int, default=1975)
    p.add_argument("--max-age", type=int, default=100)
    p.add_argument("--factors", type=int, default=2)
    p.add_argument("--dynamics", choices=["ar1", "drift"], default="drift")
    p.add_argument("--phi", type=float, default=0.7)
    p.add_argument("--innovation-sd", type=float, default=0.05)
    p.add_argument("--drift", type=float, default=0.02)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("smooth", help="smooth log-rate curves and write them back as rates")
    p.add_argument("--rates", required=True)
    _add_scale(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("decompose", help="static/dynamic FPCA of each series")
    p.add_argument("--rates", required=True)
    p.add_argument("--series", nargs="*", default=None)
    _add_scale(p)
    _add_model(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("forecast", help="independent point and interval forecasts")
    p.add_argument("--rates", required=True)
    p.add_argument("--series", nargs="*", default=None)
    p.add_argument("--horizon", type=int, default=30)
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--no-intervals", action="store_true")
    p.add_argument("--calibration", choices=["scalar", "unit"], default="scalar")
    _add_scale(p)
    _add_model(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("reconcile", help="grouped forecasts reconciled by bottom-up or OLS")
    p.add_argument("--rates", required=True)
    p.add_argument("--exposures", required=True)
    p.add_argument("--structure", required=True)
    p.add_argument("--method", choices=["bottom-up", "ols"], default="ols")
    p.add_argument("--horizon", type=int, default=30)
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--no-intervals", action="store_true")
    p.add_argument("--calibration", choices=["scalar", "unit"], default="scalar")
    _add_scale(p)
    _add_model(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("backtest", help="expanding-window evaluation")
    p.add_argument("--rates", required=True)
    p.add_argument("--exposures", required=True)
    p.add_argument("--structure", required=True)
    p.add_argument("--initial-train", type=int, default=12)
    p.add_argument("--horizon", type=int, default=30, help="maximum point-forecast horizon")
    p.add_argument("--interval-horizon", type=int, default=15)
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--methods", nargs="+", choices=list(METHODS), default=list(METHODS))
    p.add_argument("--no-intervals", action="store_true")
    p.add_argument("--calibration", choices=["scalar", "unit"], default="scalar")
    p.add_argument("--workers", type=int, default=1)
    _add_scale(p)
    _add_model(p)
    p.set_defaults(mode="both")
    p.add_argument("--out", required=True)
    return parser


def _check(args):
    if hasattr(args, "delta") and not 0 < args.delta <= 1:
        raise ConfigError(f"--delta must lie in (0, 1], got {args.delta}")
    if hasattr(args, "alpha") and not 0 < args.alpha < 1:
        raise ConfigError(f"--alpha must lie in (0, 1), got {args.alpha}")
    if getattr(args, "bandwidth", None) is not None and not args.bandwidth > 0:
        raise ConfigError(f"--bandwidth must be positive, got {args.bandwidth}")
    if hasattr(args, "horizon") and args.horizon < 1:
        raise ConfigError(f"--horizon must be >= 1, got {args.horizon}")
    if hasattr(args, "floor") and not args.floor > 0:
        raise ConfigError(f"--floor must be positive, got {args.floor}")
    if getattr(args, "penalty", None) is not None and args.penalty < 0:
        raise ConfigError(f"--penalty must be >= 0, got {args.penalty}")


def _modes(args):
    return ["static", "dynamic"] if args.mode == "both" else [args.mode]


def _base(args):
    return 10.0 if args.log_base == "10" else float(np.e)


def _smoothing(args):
    if not args.smooth:
        return None
    return SmoothingConfig(penalty=args.penalty, monotone_from_age=args.monotone_from_age)


def _working(fts, args):
    out = log_transform(fts, _base(args), args.floor)
    cfg = _smoothing(args)
    return smooth_series(out, cfg) if cfg is not None else out


def _load_series(args):
    table = read_long_csv(args.rates, "rate")
    ids = list(table) if not getattr(args, "series", None) else args.series
    missing = [s for s in ids if s not in table]
    if missing:
        raise DataError(f"series not found in {args.rates}: {missing[:10]}")
    out = {}
    for sid in ids:
        years, ages, vals = table[sid]
        out[sid] = FunctionalTimeSeries(AgeGrid(ages), years, vals, Scale.RAW)
    return out


def _model_kwargs(args):
    return dict(
        ncomp=args.ncomp,
        family=args.family,
        kernel=KernelSpec(args.kernel),
        bandwidth=args.bandwidth,
        delta=args.delta,
    )


def _forecast_rows(sid, ages, point, lower, upper, alpha):
    for h in range(point.shape[0]):
        for i, a in enumerate(ages):
            lo = "" if lower is None else FLOAT_FMT % lower[h, i]
            up = "" if upper is None else FLOAT_FMT % upper[h, i]
            yield [sid, h + 1, FLOAT_FMT % a, FLOAT_FMT % point[h, i], lo, up, FLOAT_FMT % alpha]


def _write_forecast_csv(path, blocks):
    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series_id", "horizon", "age", "point", "lower", "upper", "alpha"])
        for block in blocks:
            w.writerows(block)

    _atomic_write(Path(path), write)


def _single_forecast(fts, mode, args, intervals):
    kw = _model_kwargs(args)
    point = forecast_curves(
        fts, mode, kw["ncomp"], args.horizon, kw["family"], kw["kernel"], kw["bandwidth"], kw["delta"]
    )
    if not intervals:
        return point.curves, None, None
    iv = interval_forecast(fts, point, args.alpha, args.family, args.calibration)
    return point.curves, iv.lower, iv.upper


def cmd_simulate(args, out):
    structure = parse_shape(args.shape)
    ds = simulate_dataset(
        structure,
        n_years=args.years,
        ages=np.arange(0, args.max_age + 1, dtype=float),
        n_factors=args.factors,
        dynamics=args.dynamics,
        phi=args.phi,
        innovation_sd=args.innovation_sd,
        drift=args.drift,
        noise=args.noise,
        first_year=args.first_year,
        seed=args.seed,
    )
    # only bottom rates are written; aggregates are derived on ingest
    paths = export(ds, out)
    nb = structure.n_bottom
    write_long_csv(paths["rates"], "rate", structure.bottom_ids, ds.years, ds.grid.points, ds.rates[-nb:])
    return {k: str(v) for k, v in paths.items()}


def cmd_smooth(args, out):
    series = _load_series(args)
    cfg = SmoothingConfig(penalty=args.penalty, monotone_from_age=args.monotone_from_age)
    ids = list(series)
    first = series[ids[0]]
    vals = []
    for sid in ids:
        w = log_transform(series[sid], _base(args), args.floor)
        vals.append(to_raw(smooth_series(w, cfg).values, w.scale))
    path = out / "smoothed_rates.csv"
    write_long_csv(path, "rate", ids, first.years, first.grid.points, np.array(vals))
    return {"smoothed": str(path)}


def cmd_decompose(args, out):
    series = _load_series(args)
    kw = _model_kwargs(args)
    written = {}
    for mode in _modes(args):
        payload = {}
        for sid, fts in series.items():
            dec = decompose(_working(fts, args), mode, kw["kernel"], kw["bandwidth"], kw["ncomp"], kw["delta"])
            payload[sid] = dec.to_dict()
        path = out / f"decomposition_{mode}.json"
        _atomic_write(path, lambda fh, pl=payload: fh.write(json.dumps(pl)))
        written[mode] = str(path)
    return written


def cmd_forecast(args, out):
    series = _load_series(args)
    written = {}
    for mode in _modes(args):
        blocks = []
        for sid, fts in series.items():
            work = _working(fts, args)
            pt, lo, up = _single_forecast(work, mode, args, not args.no_intervals)
            conv = lambda a: None if a is None else to_raw(a, work.scale)  # noqa: E731
            blocks.append(list(_forecast_rows(sid, fts.grid.points, conv(pt), conv(lo), conv(up), args.alpha)))
        path = out / f"forecast_{mode}.csv"
        _write_forecast_csv(path, blocks)
        written[mode] = str(path)
    return written


def cmd_reconcile(args, out):
    ds = ingest(args.rates, args.exposures, args.structure)
    st = ds.structure
    nb = st.n_bottom
    intervals = not args.no_intervals
    summing = forecast_exposure_ratios(st, ds.exposures, args.horizon, "auto")
    written = {}
    for mode in _modes(args):
        pts, los, ups = [], [], []
        for k in range(st.n_nodes):
            work = _working(ds.series(k), args)
            pt, lo, up = _single_forecast(work, mode, args, intervals)
            pts.append(to_raw(pt, work.scale))
            if intervals:
                los.append(to_raw(lo, work.scale))
                ups.append(to_raw(up, work.scale))
        ind = np.array(pts)
        if args.method == "bottom-up":
            fc = bottom_up(ind[-nb:], summing)
            bounds = reconcile_intervals(np.array(los)[-nb:], np.array(ups)[-nb:], summing, "bottom-up") if intervals else None
        else:
            fc = ols_reconcile(ind, summing)[0]
            bounds = reconcile_intervals(np.array(los), np.array(ups), summing, "ols") if intervals else None
        blocks = [
            list(
                _forecast_rows(
                    nid,
                    ds.grid.points,
                    fc[k],
                    None if bounds is None else bounds[0][k],
                    None if bounds is None else bounds[1][k],
                    args.alpha,
                )
            )
            for k, nid in enumerate(st.nodes)
        ]
        path = out / f"reconciled_{args.method}_{mode}.csv"
        _write_forecast_csv(path, blocks)
        written[mode] = str(path)
    return written


def cmd_backtest(args, out):
    ds = ingest(args.rates, args.exposures, args.structure)
    cfg = BacktestConfig(
        initial_train=args.initial_train,
        max_horizon_point=args.horizon,
        max_horizon_interval=args.interval_horizon,
        alpha=args.alpha,
        modes=tuple(_modes(args)),
        methods=tuple(args.methods),
        intervals=not args.no_intervals,
        kernel=args.kernel,
        bandwidth=args.bandwidth,
        ncomp=args.ncomp,
        delta=args.delta,
        family=args.family,
        log_base=_base(args),
        floor=args.floor,
        smoothing=_smoothing(args),
        calibration=args.calibration,
        workers=args.workers,
    )
    report = expanding_window_backtest(ds, cfg)
    return {k: str(v) for k, v in report.write(out).items()}


COMMANDS = {
    "simulate": cmd_simulate,
    "smooth": cmd_smooth,
    "decompose": cmd_decompose,
    "forecast": cmd_forecast,
    "reconcile": cmd_reconcile,
    "backtest": cmd_backtest,
}


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    effective = {k: v for k, v in vars(args).items()}
    try:
        _check(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore" if not sys.warnoptions else "default")
            artifacts = COMMANDS[args.command](args, out)
        record = {"command": args.command, "version": __version__, "config": effective, "artifacts": artifacts}
        _atomic_write(out / "config.json", lambda fh: fh.write(json.dumps(record, indent=1, default=str)))
        print(json.dumps(record, indent=1, default=str))
    except ConfigError as exc:
        print(f"groupfts: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"groupfts: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"groupfts: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        print(f"groupfts: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
