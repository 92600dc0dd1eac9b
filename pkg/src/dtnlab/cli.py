"""Command line entry point: ``dtnlab <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import contact, estimation, experiments, fitting, ode, sim
from .errors import ConfigError, DtnError, InvalidInput


def _values(text: str) -> list[float]:
    """``a:b:step`` (inclusive) or a comma-separated list."""
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise InvalidInput(f"range must be start:stop:step, got {text!r}")
        lo, hi, step = parts
        n = int(np.floor((hi - lo) / step + 1e-9)) + 1
        return [lo + k * step for k in range(n)]
    return [float(v) for v in text.split(",") if v.strip()]


def _pair(text: str) -> tuple[float, float]:
    lo, hi = (float(v) for v in text.split(","))
    return lo, hi


def _load_config(args) -> sim.SimConfig:
    cfg = sim.SimConfig.from_file(args.config) if args.config else sim.SimConfig(density=550.0)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_(seed=args.seed)
    return cfg


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> None:
    cfg = _load_config(args)
    out = _out_dir(args.out)
    stats, traces = sim.run_ensemble(cfg, args.runs, full=args.full, workers=args.workers)
    (out / "config.txt").write_text(cfg.to_text() + f"# M = {stats.M}\n# step = {stats.dt!r}\n")
    sim.write_traces(traces, out / "traces.csv")
    sim.write_deliveries(traces, out / "deliveries.csv")
    summary = (f"runs={stats.runs}; M={stats.M}; dt={stats.dt:g}; n0_mean={stats.n0_mean:.6g}; "
               f"p(horizon)={sim.ps(stats, cfg.horizon):.6f}")
    (out / "summary.txt").write_text(summary + "\n")
    if args.full:
        from .plotting import plot_mean_curve

        plot_mean_curve(stats.times, stats.mean_n_at, out / "mean_n.png", stats.M)
    print(summary)


def cmd_sweep(args) -> None:
    cfg = _load_config(args)
    runs = args.runs
    if args.preset:
        cfg, preset_runs = experiments.apply_preset(cfg, args.preset)
        runs = runs or preset_runs
    plan = experiments.ExperimentPlan(cfg, args.axis, _values(args.values), runs or 500,
                                      _values(args.deadlines), args.out, args.workers)
    table = experiments.sweep(plan)
    print(experiments.PS_HEADER)
    for v, T, p, lo, hi, n in table.rows:
        print(f"{v:g},{T:g},{p:.6f},{lo:.6f},{hi:.6f},{n}")


def _read_run_dir(path):
    d = Path(path)
    if not (d / "traces.csv").exists() or not (d / "config.txt").exists():
        raise ConfigError(f"{d} does not hold traces.csv and config.txt from 'simulate'")
    cfg = sim.SimConfig.from_file(d / "config.txt")
    traces = sim.read_traces(d / "traces.csv", cfg.step, cfg.M)
    return cfg, traces


def cmd_estimate(args) -> None:
    cfg, traces = _read_run_dir(args.traces)
    if args.kind == "beta-num":
        series = estimation.beta_num_from_traces(traces, cfg.M)
    else:
        stats = sim.aggregate(traces, cfg.horizon, cfg.stop_fraction)
        series = estimation.beta_time_estimate(stats, cfg.step, cfg.M, cfg.stop_fraction)
    target = args.out or (Path(args.traces) / f"{args.kind.replace('-', '_')}.csv")
    series.to_csv(target)
    print(f"wrote {len(series)} points to {target}")


def cmd_fit(args) -> None:
    series = estimation.RateSeries.from_csv(args.input)
    if args.min_support > 1:
        series = series.supported(args.min_support)
    trim = _pair(args.trim) if args.trim else None
    if trim is None and args.M:
        trim = fitting.default_trim(series, args.M, args.min_support)
    res = fitting.fit(series, args.family, trim)
    print(res.report())
    if args.plot:
        from .plotting import plot_rate_series

        plot_rate_series(series, res, args.plot)


def _model_from_args(args, kind=None, params=None) -> ode.OdeModel:
    p = params if params is not None else {k: getattr(args, k) for k in ("a", "b", "c", "beta")}
    return ode.OdeModel(kind or args.model, args.M, args.n0,
                        **{k: v for k, v in p.items() if v is not None})


def _parse_model_spec(spec: str, args) -> ode.OdeModel:
    """``kind:a=1e-5,b=0.1`` or ``kind`` with an optional ``@label``."""
    label = None
    if "@" in spec:
        spec, label = spec.split("@", 1)
    kind, _, rest = spec.partition(":")
    params = {}
    for item in filter(None, rest.split(",")):
        k, v = item.split("=")
        params[k.strip()] = float(v)
    return ode.OdeModel(kind, args.M, args.n0, label=label, **params)


def cmd_ode(args) -> None:
    if args.action == "eval":
        model = _model_from_args(args)
        t = np.arange(0.0, args.horizon + 0.5 * args.step, args.step)
        n = model.n(t)
        p = ode.ps_from_n(n, model.M)
        lines = ["t,N_mean,ps"] + [f"{a:.10g},{b:.10g},{c:.10g}" for a, b, c in zip(t, n, p)]
        _emit(lines, args.out)
    elif args.action == "recover":
        samples = ode.RecoverySamples.from_csv(args.input, args.M)
        a, b, c = ode.recover_pairwise_time_params(samples)
        print(f"a={a:.10g}; b={b:.10g}; c={c:.10g}")
    else:
        data = np.loadtxt(args.sim, delimiter=",", skiprows=1, ndmin=2)
        models = [_parse_model_spec(s, args) for s in args.candidate]
        scores = ode.compare_models(data[:, 0], data[:, 1], models)
        lines = ["model,rmse,params"]
        for s in scores:
            params = ";".join(f"{k}={v:.6g}" for k, v in s.model.params().items())
            lines.append(f"{s.name},{s.rmse:.6g},{params}")
        _emit(lines, args.out)


def _emit(lines, out):
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_percolation(args) -> None:
    summary = contact.percolation_scan(args.lam, args.R, args.L, args.trials, args.seed)
    lo, hi = contact.critical_density_bounds(args.R).per_km2()
    print(contact.PercolationSummary.header + ",lambda_c_low,lambda_c_high")
    print(summary.csv_row() + f",{lo:g},{hi:g}")


def cmd_pipeline(args) -> None:
    cfg = _load_config(args)
    runs = args.runs
    if args.preset:
        cfg, preset_runs = experiments.apply_preset(cfg, args.preset)
        runs = runs or preset_runs
    res = experiments.pipeline(cfg, args.regime, runs or 500, args.T_max, args.out, args.workers)
    print(f"regime={res.regime.value}; near_critical={res.near_critical}; M={res.M}; n0={res.n0:.6g}")
    print("model,rmse,params")
    print("\n".join(res.compare_rows()))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dtnlab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run an ensemble and write traces")
    p.add_argument("--config")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--full", action="store_true", help="continue past delivery to stop_fraction")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="p(T) over a parameter axis")
    p.add_argument("--config")
    p.add_argument("--axis", choices=[a.value for a in experiments.SweepAxis], required=True)
    p.add_argument("--values", required=True)
    p.add_argument("--deadlines", default="25")
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--preset", choices=sorted(experiments.PRESETS))
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("estimate", help="rate series from a simulate output directory")
    p.add_argument("kind", choices=["beta-num", "beta-time"])
    p.add_argument("--traces", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("fit", help="fit a curve family to a rate series CSV")
    p.add_argument("--family", choices=[f.value for f in fitting.CurveFamily], required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--trim")
    p.add_argument("--M", type=int, help="node count; enables the default by-count trim")
    p.add_argument("--min-support", type=int, default=1)
    p.add_argument("--plot")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("ode", help="evaluate, recover or compare mean-field models")
    p.add_argument("action", choices=["eval", "recover", "compare"])
    p.add_argument("--model", choices=[k.value for k in ode.OdeKind])
    p.add_argument("--M", type=float, required=True)
    p.add_argument("--n0", type=float, default=1.0)
    for k in ("a", "b", "c", "beta"):
        p.add_argument(f"--{k}", type=float)
    p.add_argument("--horizon", type=float, default=100.0)
    p.add_argument("--step", type=float, default=1.0)
    p.add_argument("--input", help="recover: CSV t,N with rows at 0, t1, 2 t1, 3 t1")
    p.add_argument("--sim", help="compare: CSV deadline,ps")
    p.add_argument("--candidate", action="append", default=[],
                   help="compare: kind:a=..,b=..[@label], repeatable")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ode)

    p = sub.add_parser("percolation", help="static cluster statistics")
    p.add_argument("--lambda", dest="lam", type=float, required=True, help="nodes/km^2")
    p.add_argument("--R", type=float, required=True)
    p.add_argument("--L", type=float, default=5000.0)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_percolation)

    p = sub.add_parser("pipeline", help="simulate, estimate, fit, model and compare")
    p.add_argument("--config")
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--preset", choices=sorted(experiments.PRESETS))
    p.add_argument("--regime", default="auto", choices=[r.value for r in experiments.Regime])
    p.add_argument("--T-max", dest="T_max", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_pipeline)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except DtnError as exc:
        print(f"dtnlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, OSError) as exc:
        print(f"dtnlab: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
