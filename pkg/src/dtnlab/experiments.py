"""Parameter sweeps and the simulate, estimate, fit, model, compare pipeline."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .contact import critical_density_bounds
from .errors import InvalidInput, NumericalError
from .estimation import (SUPPORT_FLOOR, RateSeries, beta_num_from_traces, beta_opt,
                         beta_time_estimate, mean_beta, r_time_estimate)
from .fitting import CurveFamily, FitResult, default_trim, fit
from .ode import OdeKind, OdeModel, compare_models
from .sim import SimConfig, run_ensemble

Z95 = 1.959963984540054

PRESETS = {
    "paper": {"L": 5000.0, "runs": 500},
    "ci": {"L": 2000.0, "runs": 100},
}


def apply_preset(cfg: SimConfig, name: str) -> tuple[SimConfig, int]:
    """Config with the preset side length, and the preset run count."""
    try:
        p = PRESETS[name]
    except KeyError:
        raise InvalidInput(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return cfg.with_(L=p["L"]), p["runs"]


class SweepAxis(str, enum.Enum):
    DENSITY = "density"
    RANGE = "range"
    DEADLINE = "deadline"
    SIDE_LENGTH = "side_length"


@dataclass
class ExperimentPlan:
    base: SimConfig
    axis: SweepAxis
    values: Sequence[float]
    runs: int = 500
    deadlines: Sequence[float] = (25.0,)
    outputs: Optional[Path] = None
    workers: int = 1

    def __post_init__(self):
        self.axis = SweepAxis(self.axis)
        self.values = [float(v) for v in self.values]
        self.deadlines = [float(v) for v in self.deadlines]
        if not self.values:
            raise InvalidInput("sweep needs at least one value")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise InvalidInput("sweep values must be strictly increasing")
        if self.runs < 1:
            raise InvalidInput("runs must be at least 1")
        if self.axis is not SweepAxis.DEADLINE and not self.deadlines:
            raise InvalidInput("need at least one deadline")


def wald_interval(successes: int, n: int, z: float = Z95) -> tuple[float, float]:
    p = successes / n
    half = z * math.sqrt(p * (1 - p) / n)
    return max(0.0, p - half), min(1.0, p + half)


PS_HEADER = "axis_value,deadline,ps,ci_low,ci_high,runs"


@dataclass
class SweepTable:
    axis: SweepAxis
    rows: list = field(default_factory=list)  # (axis_value, deadline, ps, lo, hi, runs)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(PS_HEADER + "\n")
            for v, T, p, lo, hi, n in self.rows:
                fh.write(f"{v:g},{T:g},{p:.6f},{lo:.6f},{hi:.6f},{n}\n")

    def ps_at(self, value: float, deadline: float) -> float:
        for v, T, p, *_ in self.rows:
            if v == value and T == deadline:
                return p
        raise KeyError((value, deadline))


def _config_for(base: SimConfig, axis: SweepAxis, value: float, horizon: float) -> SimConfig:
    if axis is SweepAxis.DENSITY:
        return base.with_(density=value, horizon=horizon)
    if axis is SweepAxis.RANGE:
        return base.with_(R=value, horizon=horizon)
    if axis is SweepAxis.SIDE_LENGTH:
        return base.with_(L=value, horizon=horizon)
    return base.with_(horizon=horizon)


def sweep(plan: ExperimentPlan) -> SweepTable:
    """p(T) with 95% Wald intervals for every axis value and deadline."""
    table = SweepTable(plan.axis)
    if plan.axis is SweepAxis.DEADLINE:
        cfg = _config_for(plan.base, plan.axis, 0, max(plan.values))
        stats, _ = run_ensemble(cfg, plan.runs, workers=plan.workers)
        for T in plan.values:
            k = stats.delivered_by(T)
            table.rows.append((T, T, k / plan.runs, *wald_interval(k, plan.runs), plan.runs))
    else:
        horizon = max(plan.deadlines)
        for v in plan.values:
            cfg = _config_for(plan.base, plan.axis, v, horizon)
            stats, _ = run_ensemble(cfg, plan.runs, workers=plan.workers)
            for T in plan.deadlines:
                k = stats.delivered_by(T)
                table.rows.append((v, T, k / plan.runs, *wald_interval(k, plan.runs), plan.runs))
    if plan.outputs is not None:
        from .plotting import plot_ps_table

        out = Path(plan.outputs)
        out.mkdir(parents=True, exist_ok=True)
        table.to_csv(out / "ps.csv")
        plot_ps_table([r[:5] for r in table.rows], plan.axis.value, out / "ps.png")
    return table


def crossing_value(xs, ps, level: float = 0.5) -> Optional[float]:
    """Axis value where a p(T) curve first crosses ``level`` (linear interpolation)."""
    xs = np.asarray(xs, float)
    ps = np.asarray(ps, float)
    above = np.flatnonzero(ps >= level)
    if not above.size:
        return None
    k = above[0]
    if k == 0:
        return float(xs[0])
    x0, x1, p0, p1 = xs[k - 1], xs[k], ps[k - 1], ps[k]
    return float(x0 + (level - p0) * (x1 - x0) / (p1 - p0))


class Regime(str, enum.Enum):
    SUBCRITICAL = "subcritical"
    SUPERCRITICAL = "supercritical"
    NEAR_CRITICAL = "near_critical"
    AUTO = "auto"


def classify_regime(density_km2: float, R: float) -> Regime:
    lo, hi = critical_density_bounds(R).per_km2()
    if density_km2 < lo:
        return Regime.SUBCRITICAL
    if density_km2 > hi:
        return Regime.SUPERCRITICAL
    return Regime.NEAR_CRITICAL


@dataclass
class PipelineResult:
    regime: Regime
    near_critical: bool
    series: dict
    fits: dict
    models: list
    comparison: list
    baselines: dict
    deadlines: np.ndarray
    sim_ps: np.ndarray
    n0: float
    M: int

    def compare_rows(self) -> list[str]:
        rows = []
        for s in self.comparison:
            params = ";".join(f"{k}={v:.6g}" for k, v in s.model.params().items())
            rows.append(f"{s.name},{s.rmse:.6g},{params}")
        return rows

    def rmse_of(self, name: str) -> float:
        for s in self.comparison:
            if s.name == name:
                return s.rmse
        raise KeyError(name)


def _try_fit(series: RateSeries, family, trim, fits: dict, key: str) -> Optional[FitResult]:
    try:
        res = fit(series, family, trim)
    except NumericalError as exc:  # keep the other fits going; record why this one failed
        fits[key] = exc
        return None
    fits[key] = res
    return res


def pipeline(scenario: SimConfig, regime="auto", runs: int = 500, T_max: Optional[float] = None,
             outputs: Optional[Path] = None, workers: int = 1, extra_betas: Optional[dict] = None,
             min_support: int = SUPPORT_FLOOR) -> PipelineResult:
    """Full-trace ensemble, rate series, regime-appropriate fits, models and their comparison.

    Baselines are logistic models with the pairwise meeting rate, the
    time-averaged rate and the ISE-optimal rate over ``[0, T_max]``
    (``T_max`` defaults to the span of the mean curve, at most the horizon).
    ``extra_betas`` adds
    logistic baselines with given rates, keyed by label.
    """
    regime = Regime(regime)
    if regime is Regime.AUTO:
        regime = classify_regime(scenario.density_km2, scenario.R)
    near = regime is Regime.NEAR_CRITICAL
    sub = regime in (Regime.SUBCRITICAL, Regime.NEAR_CRITICAL)
    sup = regime in (Regime.SUPERCRITICAL, Regime.NEAR_CRITICAL)

    stats, traces = run_ensemble(scenario, runs, full=True, record_contacts=True, workers=workers)
    M, dt = stats.M, stats.dt
    n0 = stats.cluster0_mean
    if T_max is None:
        T_max = min(scenario.horizon, (len(stats.mean_n_at) - 1) * dt)

    series = {
        "beta_num": beta_num_from_traces(traces, M),
        "beta_time": beta_time_estimate(stats, dt, M, scenario.stop_fraction),
        "R_time": r_time_estimate(stats, dt, M, scenario.stop_fraction),
    }
    num = series["beta_num"].supported(min_support)
    num_trim = default_trim(series["beta_num"], M, min_support)

    fits: dict = {}
    models: list[OdeModel] = []
    bt = _try_fit(series["beta_time"], CurveFamily.EXP_OF_T_OFFSET, None, fits, "beta_time")
    if bt is not None:
        models.append(OdeModel(OdeKind.PAIRWISE_BY_TIME, M, n0, a=bt.a, b=bt.b, c=bt.c))
    if sub:
        f = _try_fit(num, CurveFamily.POWER_LAW_OFFSET, num_trim, fits, "beta_num_power")
        if f is not None:
            models.append(OdeModel(OdeKind.SUBCRITICAL_BY_COUNT, M, n0, a=f.a, b=f.b, c=f.c))
    if sup:
        f = _try_fit(num, CurveFamily.EXP_OF_N, num_trim, fits, "beta_num_exp")
        if f is not None:
            models.append(OdeModel(OdeKind.SUPERCRITICAL_BY_COUNT, M, n0, a=f.a, b=f.b))
        f = _try_fit(series["R_time"], CurveFamily.EXP_OF_T, None, fits, "R_time")
        if f is not None:
            models.append(OdeModel(OdeKind.SUPERCRITICAL_BY_TIME, M, n0, b=f.b))

    K = int(round(T_max / dt))
    deadlines = np.arange(K + 1) * dt
    sim_ps = np.array([stats.delivered_by(T) for T in deadlines]) / stats.runs

    baselines = {"pmr": stats.pairwise_meeting_rate,
                 "beta_bar": mean_beta(stats, T_max, M),
                 "beta_opt": beta_opt(deadlines, sim_ps, M, n0).beta}
    baselines.update(extra_betas or {})
    for label, beta in baselines.items():
        models.append(OdeModel(OdeKind.STANDARD_LOGISTIC, M, n0, beta=beta, label=f"logistic_{label}"))

    comparison = compare_models(deadlines, sim_ps, models)
    result = PipelineResult(regime, near, series, fits, models, comparison, baselines,
                            deadlines, sim_ps, n0, M)
    if outputs is not None:
        write_pipeline_outputs(result, stats, Path(outputs))
    return result


def write_pipeline_outputs(result: PipelineResult, stats, out: Path) -> None:
    from .plotting import plot_mean_curve, plot_model_comparison, plot_rate_series

    out.mkdir(parents=True, exist_ok=True)
    result.series["beta_num"].to_csv(out / "beta_num.csv")
    result.series["beta_time"].to_csv(out / "beta_time.csv")
    with open(out / "compare.csv", "w") as fh:
        fh.write("model,rmse,params\n")
        fh.write("\n".join(result.compare_rows()) + "\n")
    with open(out / "fits.txt", "w") as fh:
        fh.write(f"regime={result.regime.value}; near_critical={result.near_critical}; "
                 f"M={result.M}; n0={result.n0:.6g}\n")
        for key, f in result.fits.items():
            text = f.report() if isinstance(f, FitResult) else f"failed: {type(f).__name__}: {f}"
            fh.write(f"{key}: {text}\n")
        for key, beta in result.baselines.items():
            fh.write(f"{key}: beta={beta:.6g}\n")
    with open(out / "ps.csv", "w") as fh:
        fh.write("deadline,ps\n")
        for T, p in zip(result.deadlines, result.sim_ps):
            fh.write(f"{T:g},{p:.6f}\n")
    fit_for = {"beta_num": result.fits.get("beta_num_power") or result.fits.get("beta_num_exp"),
               "beta_time": result.fits.get("beta_time")}
    for key, f in fit_for.items():
        plot_rate_series(result.series[key], f if isinstance(f, FitResult) else None,
                         out / f"{key}.png", ylabel=key)
    plot_model_comparison(result.deadlines, result.sim_ps, result.models, out / "compare.png")
    plot_mean_curve(stats.times, stats.mean_n_at, out / "mean_n.png", result.M)
