"""Least-squares fits of decaying rate curves.

Four families are supported::

    power_law_offset   a * x**-b + c
    exp_of_n           a * exp(-b x)
    exp_of_t_offset    a * exp(-b t) + c
    exp_of_t           a * exp(-b t)

Fits use a Levenberg-Marquardt iteration on rescaled data (values divided
by their largest magnitude, abscissae by theirs) from a small fixed set of
starting points, and keep the result with the lowest RMSE.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidInput, NoConvergence, TooFewPoints
from .estimation import SUPPORT_FLOOR, DomainKind, RateSeries

MAX_ITER = 200
STEP_TOL = 1e-10


class CurveFamily(str, enum.Enum):
    POWER_LAW_OFFSET = "power_law_offset"
    EXP_OF_N = "exp_of_n"
    EXP_OF_T_OFFSET = "exp_of_t_offset"
    EXP_OF_T = "exp_of_t"

    @property
    def has_offset(self) -> bool:
        return self in (CurveFamily.POWER_LAW_OFFSET, CurveFamily.EXP_OF_T_OFFSET)

    @property
    def power_law(self) -> bool:
        return self is CurveFamily.POWER_LAW_OFFSET

    @property
    def n_params(self) -> int:
        return 3 if self.has_offset else 2

    def __call__(self, x, a, b, c=0.0):
        x = np.asarray(x, float)
        base = x ** (-b) if self.power_law else np.exp(-b * x)
        return a * base + (c if self.has_offset else 0.0)


@dataclass
class FitResult:
    family: CurveFamily
    a: float
    b: float
    c: Optional[float]
    rmse: float
    trimmed_domain: tuple[float, float]
    n_points: int
    flags: set = field(default_factory=set)
    iterations: int = 0

    def __call__(self, x):
        return self.family(x, self.a, self.b, self.c or 0.0)

    def report(self) -> str:
        c = "" if self.c is None else f"{self.c:.6g}"
        lo, hi = self.trimmed_domain
        text = (f"family={self.family.value}; a={self.a:.6g}; b={self.b:.6g}; c={c}; "
                f"rmse={self.rmse:.6g}; n_points={self.n_points}; trim=[{lo:g},{hi:g}]")
        if self.flags:
            text += "; flags=" + ",".join(sorted(self.flags))
        return text


def _model_and_jacobian(family, p, x, lx):
    a, b = p[0], p[1]
    base = np.exp(-b * lx) if family.power_law else np.exp(-b * x)
    f = a * base
    J = np.empty((len(x), len(p)))
    J[:, 0] = base
    J[:, 1] = -a * (lx if family.power_law else x) * base
    if family.has_offset:
        f = f + p[2]
        J[:, 2] = 1.0
    return f, J


def _lm(family, p0, x, lx, y):
    """Levenberg-Marquardt from ``p0``; returns (params, cost, converged, iterations)."""
    p = np.asarray(p0, float).copy()
    f, J = _model_and_jacobian(family, p, x, lx)
    r = f - y
    cost = r @ r
    mu = 1e-3
    for it in range(1, MAX_ITER + 1):
        g = J.T @ r
        A = J.T @ J
        diag = np.diag(A).copy()
        diag[diag == 0] = 1.0
        while True:
            try:
                step = np.linalg.solve(A + mu * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.all(np.isfinite(step)):
                trial = p + step
                with np.errstate(over="ignore", invalid="ignore"):
                    f_t, J_t = _model_and_jacobian(family, trial, x, lx)
                r_t = f_t - y
                cost_t = r_t @ r_t
                if np.isfinite(cost_t) and cost_t <= cost:
                    break
            mu *= 2.0
            if mu > 1e20:
                # no descent direction left: stationary to working precision
                return p, cost, True, it
        small = np.linalg.norm(step) <= STEP_TOL * (np.linalg.norm(p) + STEP_TOL)
        p, f, J, r, cost = trial, f_t, J_t, r_t, cost_t
        mu = max(mu / 3.0, 1e-12)
        if small or cost == 0.0:
            return p, cost, True, it
    return p, cost, False, MAX_ITER


def _starts(family, x, lx, y):
    # The tail-offset start goes first so a flat series keeps a = 0 on ties.
    offsets = [float(y[np.argmax(x)]), 0.0] if family.has_offset else [0.0]
    xs = lx if family.power_law else x
    span = float(np.ptp(xs)) or 1.0
    out = []
    for c0 in offsets:
        z = y - c0
        pos = z > 0
        if np.count_nonzero(pos) >= 2 and np.ptp(xs[pos]) > 0:
            slope = np.polyfit(xs[pos], np.log(z[pos]), 1)[0]
            b0 = -slope
        else:
            b0 = 0.0
        if not b0 > 0:
            b0 = 1.0 / span
        base = np.exp(-b0 * xs)
        a0 = float(base @ z / (base @ base))
        out.append([a0, b0, c0] if family.has_offset else [a0, b0])
    return out


def _prepare(series, trim):
    if isinstance(series, RateSeries):
        x, y = series.x, series.value
    else:
        x, y = (np.asarray(v, float) for v in series)
    if trim is not None:
        lo, hi = trim
        keep = (x >= lo) & (x <= hi)
        x, y = x[keep], y[keep]
    return x, y


def fit(series, family, trim: Optional[tuple[float, float]] = None) -> FitResult:
    """Best least-squares fit of ``family`` to ``series`` restricted to ``trim``.

    ``series`` is a :class:`RateSeries` or an ``(x, y)`` pair. Results carry
    the flags ``NonDecay`` (b <= 0) and ``Unidentifiable`` (the data do not
    pin down every parameter, e.g. a flat series).
    """
    family = CurveFamily(family)
    x, y = _prepare(series, trim)
    k = family.n_params
    if len(x) < 3 * k:
        raise TooFewPoints(f"{family.value} needs at least {3 * k} points, got {len(x)}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidInput("series contains non-finite values")
    if family.power_law and np.any(x <= 0):
        raise InvalidInput("power-law fit needs positive abscissae")

    # Rescale so both axes are of order one.
    sy = float(np.max(np.abs(y))) or 1.0
    sx = float(np.max(np.abs(x)))
    xn = x / sx
    lxn = np.log(xn) if family.power_law else xn
    yn = y / sy

    best = None
    for p0 in _starts(family, xn, lxn, yn):
        p, cost, ok, its = _lm(family, p0, xn, lxn, yn)
        if ok and np.all(np.isfinite(p)) and (best is None or cost < best[1]):
            best = (p, cost, its)
    if best is None:
        raise NoConvergence(f"{family.value} fit did not converge from any start")
    p, cost, its = best

    flags = set()
    _, J = _model_and_jacobian(family, p, xn, lxn)
    sv = np.linalg.svd(J, compute_uv=False)
    if sv[-1] <= 1e-7 * sv[0]:
        flags.add("Unidentifiable")

    # Undo the scaling.
    an, b = p[0], p[1]
    if family.power_law:
        a = an * sy * sx ** b
    else:
        a = an * sy
        b = b / sx
    c = p[2] * sy if family.has_offset else None
    if not b > 0:
        flags.add("NonDecay")
    rmse = float(np.sqrt(cost / len(x)) * sy)
    return FitResult(family, float(a), float(b), None if c is None else float(c), rmse,
                     (float(x.min()), float(x.max())), len(x), flags, its)


def default_trim(series: RateSeries, M: int, floor: int = SUPPORT_FLOOR):
    """Fitting window: by-count series drop the top 4% of the count range.

    The lower end is the first point whose support reaches ``floor``. By-time
    series are not trimmed.
    """
    if series.kind is DomainKind.BY_TIME:
        return float(series.x[0]), float(series.x[-1])
    ok = np.flatnonzero(series.support >= floor)
    lo = float(series.x[ok[0]]) if ok.size else float(series.x[0])
    return lo, 0.96 * M


def fit_report_fields(text: str) -> dict:
    """Parse a report line back into a dict of strings."""
    out = {}
    for part in text.split(";"):
        if "=" in part:
            k, v = part.split("=", 1)
            out[k.strip()] = v.strip()
    return out
