"""Infection-rate estimators built from simulation traces.

By infected count: for every count ``j`` a run passes through, the run
contributes the jump that ended its stay at ``j`` and the number of steps
it spent there. Pooling these over runs gives the average change of the
infected count per step while ``N = j``.

By time: first differences of the ensemble mean infected count.

Both are turned into pairwise rates by dividing by the number of
infected-uninfected pairs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize

from .errors import DegenerateWindow, InvalidInput
from .ode import logistic_p
from .sim import EnsembleStats, RunTrace

SUPPORT_FLOOR = 10


class DomainKind(str, enum.Enum):
    BY_COUNT = "by_count"
    BY_TIME = "by_time"


@dataclass
class RateSeries:
    kind: DomainKind
    x: np.ndarray
    value: np.ndarray
    support: np.ndarray
    extra: dict | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, float)
        self.value = np.asarray(self.value, float)
        self.support = np.asarray(self.support, np.int64)
        if not (len(self.x) == len(self.value) == len(self.support)):
            raise InvalidInput("series arrays differ in length")
        if np.any(np.diff(self.x) <= 0):
            raise InvalidInput("series abscissae must be strictly increasing")

    def __len__(self):
        return len(self.x)

    def supported(self, floor: int = SUPPORT_FLOOR) -> "RateSeries":
        keep = self.support >= floor
        extra = None if self.extra is None else {k: v[keep] for k, v in self.extra.items()}
        return RateSeries(self.kind, self.x[keep], self.value[keep], self.support[keep], extra)

    def window(self, lo: float, hi: float) -> "RateSeries":
        keep = (self.x >= lo) & (self.x <= hi)
        extra = None if self.extra is None else {k: v[keep] for k, v in self.extra.items()}
        return RateSeries(self.kind, self.x[keep], self.value[keep], self.support[keep], extra)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            if self.kind is DomainKind.BY_COUNT:
                fh.write("N,beta_num,support\n")
                for x, v, s in zip(self.x, self.value, self.support):
                    fh.write(f"{int(x)},{v:.12g},{s}\n")
            else:
                fh.write("t,beta_time,R_time,N_mean\n")
                r = self.extra["R_time"]
                n = self.extra["N_mean"]
                for k in range(len(self.x)):
                    fh.write(f"{self.x[k]:.10g},{self.value[k]:.12g},{r[k]:.12g},{n[k]:.12g}\n")

    @classmethod
    def from_csv(cls, path) -> "RateSeries":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if header[:2] == ["N", "beta_num"]:
            support = data[:, 2] if data.shape[1] > 2 else np.ones(len(data))
            return cls(DomainKind.BY_COUNT, data[:, 0], data[:, 1], support)
        if header[:2] == ["t", "beta_time"]:
            extra = {"R_time": data[:, 2], "N_mean": data[:, 3]} if data.shape[1] >= 4 else None
            return cls(DomainKind.BY_TIME, data[:, 0], data[:, 1], np.ones(len(data)), extra)
        if len(header) >= 2:
            # generic x,value[,support]
            kind = DomainKind.BY_TIME if header[0] == "t" else DomainKind.BY_COUNT
            support = data[:, 2] if data.shape[1] > 2 else np.ones(len(data))
            return cls(kind, data[:, 0], data[:, 1], support)
        raise InvalidInput(f"unrecognised series header {header}")


@dataclass
class CountSums:
    """Per-count sums over runs; adding two of these merges ensembles."""

    jump: np.ndarray
    steps: np.ndarray
    support: np.ndarray

    def __add__(self, other: "CountSums") -> "CountSums":
        return CountSums(self.jump + other.jump, self.steps + other.steps,
                         self.support + other.support)


def count_sums(traces: Iterable[RunTrace], M: int) -> CountSums:
    jump = np.zeros(M + 1, np.int64)
    steps = np.zeros(M + 1, np.int64)
    support = np.zeros(M + 1, np.int64)
    for tr in traces:
        if np.any(np.diff(tr.n_at) < 0):
            raise InvalidInput("infected count decreases inside a trace")
        values, first, last, following = tr.count_segments()
        done = following >= 0  # the final stay is censored
        j = values[done]
        np.add.at(jump, j, following[done] - j)
        np.add.at(steps, j, last[done] - first[done] + 1)
        np.add.at(support, j, 1)
    return CountSums(jump, steps, support)


def delta_n_by_count(traces, M: int) -> dict[int, float]:
    """Average change of N per step while N = j, for every j seen with a successor."""
    sums = traces if isinstance(traces, CountSums) else count_sums(traces, M)
    seen = np.flatnonzero(sums.support)
    return {int(j): sums.jump[j] / sums.steps[j] for j in seen}


def beta_num_estimate(deltas, dt: float, M: int, traces=None) -> RateSeries:
    """Pairwise infection rate by infected count.

    ``deltas`` is the output of :func:`delta_n_by_count` or a
    :class:`CountSums`; supports are filled in when available.
    """
    support_of = {}
    if isinstance(deltas, CountSums):
        sums = deltas
        deltas = delta_n_by_count(sums, M)
        support_of = {j: int(sums.support[j]) for j in deltas}
    js = np.array(sorted(j for j in deltas if 1 <= j <= M - 1), dtype=np.int64)
    dn = np.array([deltas[j] for j in js], float)
    if np.any(dn < 0):
        raise InvalidInput("negative average change of infected count")
    beta = dn / (dt * js * (M - js))
    support = np.array([support_of.get(int(j), 1) for j in js], np.int64)
    return RateSeries(DomainKind.BY_COUNT, js, beta, support,
                      {"R_num": beta * js * (M - js)})


def beta_num_from_traces(traces: Sequence[RunTrace], M: int | None = None) -> RateSeries:
    M = traces[0].M if M is None else M
    return beta_num_estimate(count_sums(traces, M), traces[0].dt, M)


def _mean_curve(stats_or_curve):
    if isinstance(stats_or_curve, EnsembleStats):
        if stats_or_curve.mean_n_at is None:
            raise InvalidInput("ensemble was run without full traces")
        return np.asarray(stats_or_curve.mean_n_at, float), stats_or_curve.runs
    return np.asarray(stats_or_curve, float), 1


def beta_time_estimate(stats, dt: float, M: int, stop_fraction: float = 0.99) -> RateSeries:
    """Pairwise infection rate by time from the ensemble mean curve.

    Points run from ``t = 0`` to the step before the mean first reaches
    ``stop_fraction * M``; a mean equal to ``M`` truncates the series. The
    infection rate itself is kept under ``extra["R_time"]``.
    """
    n, runs = _mean_curve(stats)
    reached = np.flatnonzero(n >= stop_fraction * M)
    end = int(reached[0]) if reached.size else len(n) - 1
    full = np.flatnonzero(n >= M)
    if full.size:
        end = min(end, int(full[0]))
    k = np.arange(end)
    r_time = (n[k + 1] - n[k]) / dt
    if np.any(r_time < 0):
        raise InvalidInput("mean infected count decreases")
    beta = r_time / (n[k] * (M - n[k]))
    return RateSeries(DomainKind.BY_TIME, k * dt, beta, np.full(len(k), runs),
                      {"R_time": r_time, "N_mean": n[k]})


def r_time_estimate(stats, dt: float, M: int, stop_fraction: float = 0.99) -> RateSeries:
    s = beta_time_estimate(stats, dt, M, stop_fraction)
    return RateSeries(DomainKind.BY_TIME, s.x, s.extra["R_time"], s.support, s.extra)


def mean_beta(stats, T_max: float, M: int, dt: float | None = None,
              difference: str = "central") -> float:
    """Time average of ``N'(t) / (N (M - N))`` over ``[0, T_max]`` by the trapezoid rule.

    ``difference="central"`` uses second-order differences (one-sided at
    the ends); ``"forward"`` uses plain forward differences.
    """
    n, _ = _mean_curve(stats)
    if dt is None:
        if not isinstance(stats, EnsembleStats):
            raise InvalidInput("dt is required for a bare curve")
        dt = stats.dt
    K = int(round(T_max / dt))
    if K < 2 or abs(K * dt - T_max) > 1e-9 * T_max:
        raise InvalidInput("T_max must be a multiple of dt spanning at least two steps")
    if len(n) < K + 1:
        raise InvalidInput(f"curve covers {(len(n) - 1) * dt} s, need {T_max} s")
    if difference == "central":
        seg = n[: min(len(n), K + 2)]
        deriv = np.gradient(seg, dt, edge_order=2)[: K + 1]
    elif difference == "forward":
        seg = n[: min(len(n), K + 2)]
        deriv = np.diff(seg) / dt
        if len(deriv) < K + 1:
            deriv = np.append(deriv, deriv[-1])
        deriv = deriv[: K + 1]
    else:
        raise InvalidInput(f"unknown difference scheme {difference!r}")
    w = n[: K + 1]
    if np.any(w >= M) or np.any(w <= 0):
        raise DegenerateWindow("mean infected count leaves (0, M) inside the window")
    integrand = deriv / (w * (M - w))
    return float(np.trapezoid(integrand, dx=dt) / T_max)


@dataclass(frozen=True)
class OptimumResult:
    beta: float
    ise: float
    at_boundary: bool


def _ise(beta, T, p, M, n0, dT):
    return float(np.sum((logistic_p(beta, M, n0, T) - p) ** 2) * dT)


def beta_opt(deadlines, sim_ps, M: int, n0: float, bounds: tuple[float, float] | None = None,
             grid: int = 121) -> OptimumResult:
    """Constant pairwise rate minimising the integrated squared error of the logistic p(T).

    The default search range spans ``1e-6 .. 1e3`` in units of
    ``1 / (M * T_max)``. A log-spaced grid brackets the minimum, which is
    then refined by golden-section search in ``log(beta)``.
    """
    T = np.asarray(deadlines, float)
    p = np.asarray(sim_ps, float)
    if len(T) < 2 or len(T) != len(p):
        raise InvalidInput("need matching deadline and probability samples")
    steps = np.diff(T)
    if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * steps.mean():
        raise InvalidInput("deadlines must lie on a uniform increasing grid")
    if not np.all(np.isfinite(p)):
        raise InvalidInput("non-finite probability samples")
    dT = float(steps.mean())
    if bounds is None:
        scale = 1.0 / (M * max(T[-1], dT))
        bounds = (1e-6 * scale, 1e3 * scale)
    lo, hi = np.log(bounds[0]), np.log(bounds[1])
    u = np.linspace(lo, hi, grid)
    f = np.array([_ise(np.exp(v), T, p, M, n0, dT) for v in u])
    if not np.all(np.isfinite(f)):
        raise InvalidInput("objective is not finite on the search grid")
    k = int(np.argmin(f))  # first minimum: ties go to the smaller rate
    if k == 0 or k == grid - 1:
        return OptimumResult(float(np.exp(u[k])), float(f[k]), True)
    obj = lambda v: _ise(np.exp(v), T, p, M, n0, dT)
    res = optimize.minimize_scalar(obj, bracket=(u[k - 1], u[k], u[k + 1]), method="golden",
                                   tol=1e-12)
    v = res.x if res.fun <= f[k] else u[k]
    return OptimumResult(float(np.exp(v)), float(min(res.fun, f[k])), False)
