"""Mean-field models of the infected count and the probabilities they imply.

Models (``N`` is the mean infected count, ``M`` the node count):

* standard logistic      dN/dt = beta N (M - N)
* subcritical by count   dN/dt = (a N^-b + c) N (M - N)
* supercritical by count dN/dt = a exp(-b N) N (M - N)
* supercritical by time  dN/dt = a exp(-b t), with a = b (M - n0) unless given
* pairwise by time       dN/dt = (a exp(-b t) + c) N (M - N)
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (DegenerateInitial, DegenerateSamples, InconsistentSamples, InvalidInput,
                     NoConvergence, StepTooLarge)


class OdeKind(str, enum.Enum):
    STANDARD_LOGISTIC = "standard_logistic"
    SUBCRITICAL_BY_COUNT = "subcritical_by_count"
    SUPERCRITICAL_BY_COUNT = "supercritical_by_count"
    SUPERCRITICAL_BY_TIME = "supercritical_by_time"
    PAIRWISE_BY_TIME = "pairwise_by_time"


class TruncationWarning(UserWarning):
    """The p(T) curve has not saturated by the end of the integration window."""


@dataclass(frozen=True)
class OdeModel:
    kind: OdeKind
    M: float
    n0: float
    a: Optional[float] = None
    b: Optional[float] = None
    c: Optional[float] = None
    beta: Optional[float] = None
    label: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", OdeKind(self.kind))
        if self.M < 2:
            raise InvalidInput(f"M must be at least 2, got {self.M}")
        if not 0 < self.n0 <= self.M:
            raise InvalidInput(f"n0 must lie in (0, M], got {self.n0}")
        need = {
            OdeKind.STANDARD_LOGISTIC: ("beta",),
            OdeKind.SUBCRITICAL_BY_COUNT: ("a", "b", "c"),
            OdeKind.SUPERCRITICAL_BY_COUNT: ("a", "b"),
            OdeKind.SUPERCRITICAL_BY_TIME: ("b",),
            OdeKind.PAIRWISE_BY_TIME: ("a", "b", "c"),
        }[self.kind]
        missing = [p for p in need if getattr(self, p) is None]
        if missing:
            raise InvalidInput(f"{self.kind.value} needs parameters {missing}")

    @property
    def name(self) -> str:
        return self.label or self.kind.value

    def params(self) -> dict:
        return {k: getattr(self, k) for k in ("a", "b", "c", "beta") if getattr(self, k) is not None}

    def rhs(self, t, n):
        M = self.M
        if self.kind is OdeKind.STANDARD_LOGISTIC:
            return self.beta * n * (M - n)
        if self.kind is OdeKind.SUBCRITICAL_BY_COUNT:
            return (self.a * n ** (-self.b) + self.c) * n * (M - n)
        if self.kind is OdeKind.SUPERCRITICAL_BY_COUNT:
            return self.a * np.exp(-self.b * n) * n * (M - n)
        if self.kind is OdeKind.SUPERCRITICAL_BY_TIME:
            a = self.b * (M - self.n0) if self.a is None else self.a
            return a * np.exp(-self.b * t) + 0.0 * n
        return (self.a * np.exp(-self.b * t) + self.c) * n * (M - n)

    def n(self, t):
        """Mean infected count at time(s) ``t``."""
        if self.kind is OdeKind.STANDARD_LOGISTIC:
            return logistic_n(self, t)
        if self.kind is OdeKind.SUPERCRITICAL_BY_TIME:
            return supercritical_time_n(self, t)
        if self.kind is OdeKind.PAIRWISE_BY_TIME:
            return pairwise_time_n(self, t)
        t = np.asarray(t, float)
        horizon = float(np.max(t)) if t.size else 0.0
        if horizon <= 0:
            return np.full(t.shape, float(self.n0))
        tt, nn = integrate_by_count(self, horizon)
        return np.interp(t, tt, nn)

    def p(self, T):
        return ps_from_n(self.n(T), self.M)


def logistic_n(model: OdeModel, t):
    M, n0, beta = model.M, model.n0, model.beta
    t = np.asarray(t, float)
    return M * n0 / ((M - n0) * np.exp(-beta * M * t) + n0)


def logistic_p(beta: float, M: float, n0: float, T):
    """Delivery probability of the standard logistic model with rate ``beta``."""
    T = np.asarray(T, float)
    n = M * n0 / ((M - n0) * np.exp(-beta * M * T) + n0)
    return np.clip((n - 1.0) / (M - 1.0), 0.0, 1.0)


def ps_standard(model: OdeModel, T):
    return logistic_p(model.beta, model.M, model.n0, T)


def ps_from_n(n, M: float):
    if M < 2:
        raise InvalidInput(f"M must be at least 2, got {M}")
    return np.clip((np.asarray(n, float) - 1.0) / (M - 1.0), 0.0, 1.0)


def rk4(rhs: Callable, y0: float, t_end: float, steps: int, t0: float = 0.0):
    """Classical fixed-step Runge-Kutta; returns the grid and the solution on it."""
    h = (t_end - t0) / steps
    t = t0 + h * np.arange(steps + 1)
    y = np.empty(steps + 1)
    y[0] = y0
    for k in range(steps):
        tk, yk = t[k], y[k]
        k1 = rhs(tk, yk)
        k2 = rhs(tk + h / 2, yk + h / 2 * k1)
        k3 = rhs(tk + h / 2, yk + h / 2 * k2)
        k4 = rhs(tk + h, yk + h * k3)
        y[k + 1] = yk + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return t, y


@dataclass
class CountTrajectory:
    t: np.ndarray
    n: np.ndarray
    clamped: int = 0

    def __iter__(self):
        return iter((self.t, self.n))


def _rk4_clamped(model: OdeModel, horizon: float, steps: int) -> CountTrajectory:
    M, n0 = float(model.M), float(model.n0)
    h = horizon / steps
    t = h * np.arange(steps + 1)
    n = np.empty(steps + 1)
    n[0] = n0
    f = model.rhs
    clamped = 0
    tol = 1e-6 * M
    for k in range(steps):
        tk, yk = t[k], n[k]
        k1 = f(tk, yk)
        k2 = f(tk + h / 2, min(yk + h / 2 * k1, M))
        k3 = f(tk + h / 2, min(yk + h / 2 * k2, M))
        k4 = f(tk + h, min(yk + h * k3, M))
        y = yk + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if y > M + tol:
            raise StepTooLarge(f"step {h} overshoots M by {y - M:.3g} at t={t[k + 1]:.6g}")
        if y > M or y < n0:
            clamped += 1
            y = min(max(y, n0), M)
        n[k + 1] = y
    return CountTrajectory(t, n, clamped)


def integrate_by_count(model: OdeModel, horizon: float, step: Optional[float] = None,
                       max_halvings: int = 8) -> CountTrajectory:
    """RK4 trajectory of a by-count model on ``[0, horizon]``.

    With an explicit ``step`` a single integration is done. Otherwise the
    step starts at ``horizon / 1e4`` and is halved until the end values of
    two successive integrations differ by less than ``1e-8 * M``.
    """
    if model.kind not in (OdeKind.SUBCRITICAL_BY_COUNT, OdeKind.SUPERCRITICAL_BY_COUNT):
        raise InvalidInput(f"{model.kind.value} is not a by-count model")
    if horizon <= 0:
        raise InvalidInput("horizon must be positive")
    if step is not None:
        if step <= 0:
            raise InvalidInput("step must be positive")
        return _rk4_clamped(model, horizon, max(1, int(math.ceil(horizon / step - 1e-9))))
    steps = 10_000
    prev = _rk4_clamped(model, horizon, steps)
    for _ in range(max_halvings):
        steps *= 2
        cur = _rk4_clamped(model, horizon, steps)
        if abs(cur.n[-1] - prev.n[-1]) < 1e-8 * model.M:
            return cur
        prev = cur
    raise NoConvergence("RK4 did not settle after repeated step halving")


def supercritical_time_n(model: OdeModel, t):
    """``n0 + (a/b)(1 - exp(-b t))``; with the default ``a = b (M - n0)`` this is
    ``(n0 - M) exp(-b t) + M``."""
    t = np.asarray(t, float)
    if model.a is None:
        return (model.n0 - model.M) * np.exp(-model.b * t) + model.M
    return model.n0 - model.a * np.expm1(-model.b * t) / model.b


def _pairwise_log_ratio(a, b, c, M, t):
    # Exponent of the closed form minus its value at t = 0.
    return a * M * np.expm1(-b * t) / b - c * M * t


def pairwise_time_n(model: OdeModel, t):
    """Closed-form solution of the pairwise-by-time model.

    Written relative to ``t = 0`` so the initial value is reproduced exactly.
    """
    M, n0 = model.M, model.n0
    if model.b == 0:
        raise InvalidInput("b must be nonzero")
    if n0 <= 0 or n0 >= M:
        raise DegenerateInitial(f"n0={n0} leaves the integration constant undefined")
    t = np.asarray(t, float)
    e = _pairwise_log_ratio(model.a, model.b, model.c, M, t)
    with np.errstate(over="ignore", invalid="ignore"):
        w = np.exp(e)
        out = n0 - n0 * (M - n0) * np.expm1(e) / (n0 + (M - n0) * w)
    return np.where(np.isinf(w), 0.0, out)


@dataclass(frozen=True)
class RecoverySamples:
    n0: float
    n1: float
    n2: float
    n3: float
    t1: float
    M: float

    def __post_init__(self):
        if self.t1 <= 0:
            raise InvalidInput("t1 must be positive")
        if not 0 < self.n0 < self.M:
            raise InvalidInput("need 0 < n0 < M")
        for v in (self.n1, self.n2, self.n3):
            if not self.n0 <= v < self.M:
                raise InvalidInput("samples must satisfy n0 <= n_i < M")

    @classmethod
    def from_csv(cls, path, M: float) -> "RecoverySamples":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[0] != 4:
            raise InvalidInput("recovery input needs exactly four rows t,N")
        t, n = data[:, 0], data[:, 1]
        t1 = t[1]
        if t[0] != 0 or not np.allclose(t[1:], [t1, 2 * t1, 3 * t1], rtol=1e-9, atol=0):
            raise InvalidInput("times must be 0, t1, 2 t1, 3 t1")
        return cls(n[0], n[1], n[2], n[3], t1, M)


def recover_pairwise_time_params(samples: RecoverySamples, tol: float = 1e-14):
    """``(a, b, c)`` of the pairwise-by-time model through four equally spaced samples.

    With ``f(t) = ln(n0 (M - N(t)) / (N(t) (M - n0))) / M`` the model gives
    ``f(t) = (a/b)(exp(-b t) - 1) - c t``. Three samples determine ``c``
    in closed form; ``z = exp(-b t1)`` then follows from two ratios, and
    the first one in ``(0, 1)`` is used.
    """
    s = samples
    M = s.M

    def f(n):
        return (math.log(s.n0) + math.log(M - n) - math.log(n) - math.log(M - s.n0)) / M

    f1, f2, f3 = f(s.n1), f(s.n2), f(s.n3)
    t1 = s.t1
    num = f1 * f1 + f2 * f2 - f1 * (f2 + f3)
    den = t1 * (3 * f1 - 3 * f2 + f3)
    scale = max(abs(f1), abs(f2), abs(f3))
    if abs(num) <= tol * scale * scale and abs(den) <= tol * scale * t1:
        raise DegenerateSamples("samples follow a pure logistic curve; a and b are not identifiable")
    if den == 0:
        raise DegenerateSamples("zero denominator in the rate-offset formula")
    c = num / den
    y = f1 + c * t1
    if y == 0:
        raise DegenerateSamples("zero first-step residual")
    candidates = [(f2 + 2 * c * t1) / y - 1]
    sq = (f3 - f2 + c * t1) / y
    if sq > 0:
        candidates.append(math.sqrt(sq))
    z = next((v for v in candidates if 0 < v < 1), None)
    if z is None:
        raise InconsistentSamples(f"no decay factor in (0, 1) among {candidates}")
    b = -math.log(z) / t1
    a = y * b / (z - 1)
    return a, b, c


@dataclass(frozen=True)
class DelayResult:
    mean: float
    truncation: float
    truncated: bool


def average_delivery_delay(ps_curve, horizon: float, points: int = 100_001) -> DelayResult:
    """Mean delivery delay ``integral_0^horizon (1 - p)`` by the trapezoid rule.

    ``ps_curve`` is a callable of time or a ``(t, p)`` pair of arrays. The
    undelivered mass ``1 - p(horizon)`` is not folded into ``mean``; it is
    reported as ``truncation`` and a :class:`TruncationWarning` is issued
    when ``p(horizon) < 0.99``.
    """
    if callable(ps_curve):
        t = np.linspace(0.0, horizon, points)
        p = np.asarray(ps_curve(t), float) * np.ones_like(t)
    else:
        t, p = (np.asarray(v, float) for v in ps_curve)
        keep = t <= horizon
        t, p = t[keep], p[keep]
    if np.any(np.diff(p) < -1e-12):
        raise InvalidInput("p(T) must be nondecreasing")
    mean = float(np.trapezoid(1.0 - p, t))
    tail = float(1.0 - p[-1])
    truncated = p[-1] < 0.99
    if truncated:
        warnings.warn(f"p(horizon)={p[-1]:.4f} < 0.99; mean delay is truncated", TruncationWarning)
    return DelayResult(mean, tail, truncated)


@dataclass(frozen=True)
class ModelScore:
    name: str
    rmse: float
    model: OdeModel


def compare_models(deadlines, sim_ps, candidates: Sequence[OdeModel]) -> list[ModelScore]:
    """RMSE of every candidate's p(T) against simulated p(T), best first."""
    T = np.asarray(deadlines, float)
    p = np.asarray(sim_ps, float)
    if len(T) != len(p) or len(T) == 0:
        raise InvalidInput("need matching deadline and probability samples")
    Ms = {m.M for m in candidates}
    if len(Ms) > 1:
        raise InvalidInput("candidates disagree on M")
    scores = [ModelScore(m.name, float(np.sqrt(np.mean((m.p(T) - p) ** 2))), m) for m in candidates]
    return sorted(scores, key=lambda s: s.rmse)
