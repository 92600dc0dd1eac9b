"""Time-stepped epidemic routing of a single message.

The network is an ``L x L`` square with ``M`` mobile nodes and a fixed
contact range ``R``. One source holds the message at ``t = 0``; every
holder forwards it to every node it is in contact with.

Zero transfer delay: at ``t = 0`` and after each motion step, every cluster
of the contact graph that holds an infected node becomes fully infected.

Positive transfer delay ``d``: a hop completes once a link has lasted
``d`` seconds while the sender was infected. The contact graph sampled at
``t_k`` is held over ``[t_k, t_k + dt)``; several hops can complete inside
one step. A link that breaks aborts its transfer, which restarts from zero
at the next contact onset.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numba
import numpy as np

from .contact import cluster_labels, labels_from_pairs, neighbor_pairs
from .errors import ConfigError, EmptyNetwork, HorizonExceeded, InvalidInput
from .mobility import MobilityConfig, MobilityKind, TvcConfig, advance, init_fleet

_TIME_EPS = 1e-9


def node_count(density_km2: float, L: float) -> int:
    """``M = round(density * L^2)`` with halves rounded up; ``L`` in metres."""
    return int(math.floor(density_km2 * (L / 1000.0) ** 2 + 0.5))


@dataclass(frozen=True)
class SimConfig:
    L: float = 5000.0
    R: float = 50.0
    density: Optional[float] = None
    nodes: Optional[int] = None
    mobility: Optional[MobilityConfig] = None
    dt: Optional[float] = None
    transfer_delay: float = 0.0
    horizon: float = 50.0
    stop_fraction: float = 0.99
    seed: int = 0

    def __post_init__(self):
        if self.mobility is None:
            object.__setattr__(self, "mobility", MobilityConfig(L=self.L))
        elif self.mobility.L != self.L:
            object.__setattr__(self, "mobility", replace(self.mobility, L=self.L))
        if (self.density is None) == (self.nodes is None):
            raise ConfigError("give exactly one of density (nodes/km^2) or nodes")
        if self.R <= 0:
            raise ConfigError(f"R must be positive, got {self.R}")
        if self.dt is not None and self.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.transfer_delay < 0:
            raise ConfigError("transfer delay must be non-negative")
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        if not 0.0 < self.stop_fraction <= 1.0:
            raise ConfigError("stop_fraction must lie in (0, 1]")

    @property
    def M(self) -> int:
        if self.nodes is not None:
            return int(self.nodes)
        return node_count(self.density, self.L)

    @property
    def density_km2(self) -> float:
        if self.density is not None:
            return float(self.density)
        return self.nodes / (self.L / 1000.0) ** 2

    @property
    def step(self) -> float:
        """Time step; by default small enough that a pair closes at most R/10 per step."""
        if self.dt is not None:
            return float(self.dt)
        return min(1.0, 0.05 * self.R / self.mobility.v_max)

    @property
    def steps(self) -> int:
        return int(math.ceil(self.horizon / self.step - _TIME_EPS))

    def with_(self, **changes) -> "SimConfig":
        if "density" in changes and changes["density"] is not None:
            changes.setdefault("nodes", None)
        if "nodes" in changes and changes["nodes"] is not None:
            changes.setdefault("density", None)
        return replace(self, **changes)

    # flat ``key = value`` files

    _MOBILITY_KEYS = ("v_min", "v_max", "t_r")
    _TVC_KEYS = ("L_c", "mean_local", "mean_roam", "p_max", "p_l", "p_r")

    def to_text(self) -> str:
        mob = self.mobility
        lines = [
            f"L = {self.L!r}",
            f"R = {self.R!r}",
            f"density = {self.density!r}" if self.density is not None else f"nodes = {self.nodes}",
            f"mobility = {mob.kind.value}",
            f"v_min = {mob.v_min!r}",
            f"v_max = {mob.v_max!r}",
            f"t_r = {mob.t_r!r}",
        ]
        if mob.tvc is not None:
            lines += [f"{k} = {getattr(mob.tvc, k)!r}" for k in self._TVC_KEYS]
        if self.dt is not None:
            lines.append(f"dt = {self.dt!r}")
        lines += [
            f"transfer_delay = {self.transfer_delay!r}",
            f"horizon = {self.horizon!r}",
            f"stop_fraction = {self.stop_fraction!r}",
            f"seed = {self.seed}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SimConfig":
        raw = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            raw[key] = value

        def num(key, cast=float, default=None):
            if key not in raw:
                return default
            try:
                return cast(raw.pop(key))
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from None

        L = num("L", default=5000.0)
        kind = raw.pop("mobility", "random_direction")
        try:
            kind = MobilityKind(kind)
        except ValueError:
            raise ConfigError(f"unknown mobility model {kind!r}") from None
        mob_kw = {k: num(k) for k in cls._MOBILITY_KEYS if k in raw}
        tvc = None
        if kind is MobilityKind.TVC:
            missing = [k for k in cls._TVC_KEYS if k not in raw]
            if missing:
                raise ConfigError(f"TVC mobility needs keys {missing}")
            tvc = TvcConfig(**{k: num(k) for k in cls._TVC_KEYS})
        if "d" in raw:
            raw.setdefault("transfer_delay", raw.pop("d"))
        kw = dict(
            L=L,
            R=num("R", default=50.0),
            density=num("density"),
            nodes=num("nodes", int),
            dt=num("dt"),
            transfer_delay=num("transfer_delay", default=0.0),
            horizon=num("horizon", default=50.0),
            stop_fraction=num("stop_fraction", default=0.99),
            seed=num("seed", int, default=0),
        )
        if raw:
            raise ConfigError(f"unknown config keys: {sorted(raw)}")
        kw["mobility"] = MobilityConfig(kind=kind, L=L, tvc=tvc, **mob_kw)
        return cls(**kw)

    @classmethod
    def from_file(cls, path) -> "SimConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text)


@dataclass
class RunTrace:
    """Infected-count record of one run, sampled at ``t_j = j * dt``."""

    n_at: np.ndarray
    dt: float
    M: int
    source: int
    destination: int
    delivery_time: Optional[float]
    onsets: int = 0
    observed: float = 0.0
    cluster0: int = 0  # size of the source's cluster at t = 0

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.n_at)) * self.dt

    def count_segments(self):
        """Run-length view of ``n_at``.

        Returns ``(values, first, last, following)``: each distinct infected
        count, the first and last step index at which it was observed, and
        the count at the step after ``last`` (-1 if the run ended there).
        """
        n = self.n_at
        change = np.flatnonzero(np.diff(n)) + 1
        first = np.concatenate(([0], change))
        last = np.concatenate((change - 1, [len(n) - 1]))
        following = np.concatenate((n[change], [-1]))
        return n[first], first, last, following

    def _segment(self, N):
        values, first, last, following = self.count_segments()
        k = np.searchsorted(values, N)
        if k == len(values) or values[k] != N:
            return None
        return first[k], last[k], following[k]

    def first_time(self, N: int) -> Optional[float]:
        seg = self._segment(N)
        return None if seg is None else seg[0] * self.dt

    def last_time(self, N: int) -> Optional[float]:
        seg = self._segment(N)
        return None if seg is None else seg[1] * self.dt

    def next_count(self, N: int) -> Optional[int]:
        seg = self._segment(N)
        if seg is None or seg[2] < 0:
            return None
        return int(seg[2])


@numba.njit(cache=True)
def _relax_transfers(ei, ej, onset, inf_time, limit, delay):
    """Earliest completion times of delayed transfers over a fixed link set.

    A transfer along link e from an infected endpoint completes at
    ``max(infected_at, onset_e) + delay``; only completions not later than
    ``limit`` are accepted. Bellman-Ford style sweeps until stable.
    """
    changed = True
    while changed:
        changed = False
        for e in range(ei.shape[0]):
            a = ei[e]
            b = ej[e]
            ta = inf_time[a]
            tb = inf_time[b]
            if ta < tb:
                c = max(ta, onset[e]) + delay
                if c < tb and c <= limit:
                    inf_time[b] = c
                    changed = True
            elif tb < ta:
                c = max(tb, onset[e]) + delay
                if c < ta and c <= limit:
                    inf_time[a] = c
                    changed = True


class _LinkTracker:
    """Remembers when each currently-up link came up."""

    def __init__(self, M: int):
        self.M = M
        self.keys = np.empty(0, np.int64)
        self.onset = np.empty(0)

    def update(self, i, j, t):
        keys = i * self.M + j
        order = np.argsort(keys)
        keys = keys[order]
        if len(self.keys):
            pos = np.minimum(np.searchsorted(self.keys, keys), len(self.keys) - 1)
            seen = self.keys[pos] == keys
            onset = np.where(seen, self.onset[pos], t)
        else:
            seen = np.zeros(len(keys), bool)
            onset = np.full(len(keys), float(t))
        self.keys, self.onset = keys, onset
        new_links = int(len(keys) - np.count_nonzero(seen))
        return i[order], j[order], onset, new_links


class DelayedSpread:
    """Infection times under a per-hop transfer delay.

    Feed one link snapshot per step with :meth:`observe`; each snapshot is
    taken to hold over ``[t_k, t_k + dt)``.
    """

    def __init__(self, M: int, source: int, delay: float, dt: float):
        if not delay > 0:
            raise InvalidInput("transfer delay must be positive")
        self.links = _LinkTracker(M)
        self.delay = float(delay)
        self.dt = float(dt)
        self.inf_time = np.full(M, np.inf)
        self.inf_time[source] = 0.0

    def observe(self, k: int, i, j) -> int:
        """Process the snapshot of step ``k``; returns the number of links that came up."""
        t = k * self.dt
        i, j, onset, new_links = self.links.update(np.asarray(i, np.int64), np.asarray(j, np.int64), t)
        _relax_transfers(i, j, onset, self.inf_time, t + self.dt * (1 + _TIME_EPS), self.delay)
        return new_links

    def infected_by(self, t: float) -> int:
        return int(np.count_nonzero(self.inf_time <= t + _TIME_EPS * self.dt))


def run_once(cfg: SimConfig, rng: np.random.Generator, full: bool = False,
             record_contacts: bool = False,
             observer: Optional[Callable] = None) -> RunTrace:
    """Simulate one run.

    With ``full=False`` the run stops at delivery or at the horizon (enough
    for delivery probabilities). With ``full=True`` it continues until
    ``stop_fraction`` of the nodes and the destination are infected, or the
    horizon is reached, so that infection-rate estimators see the whole
    spreading curve.

    ``record_contacts`` counts link onsets after ``t = 0`` (links present in
    the first snapshot have no observed onset) for pairwise meeting rates.
    ``observer(step, t, fleet)`` is called after every snapshot.
    """
    M = cfg.M
    if M < 2:
        raise EmptyNetwork(f"need at least two nodes, got {M}")
    mob = cfg.mobility
    fleet = init_fleet(M, mob, rng)
    source, destination = (int(v) for v in rng.choice(M, size=2, replace=False))
    dt = cfg.step
    delay = float(cfg.transfer_delay)
    target = cfg.stop_fraction * M
    counts = []
    delivery = None
    onsets = 0
    if delay == 0:
        infected = np.zeros(M, bool)
        infected[source] = True
        tracker = _LinkTracker(M) if record_contacts else None
    else:
        spread = DelayedSpread(M, source, delay, dt)

    last_step = cfg.steps
    for k in range(last_step + 1):
        t = k * dt
        if k > 0:
            advance(fleet, dt, mob, rng)
        if observer is not None:
            observer(k, t, fleet)
        new_links = 0
        pairs = None
        if delay > 0 or tracker is not None:
            pairs = neighbor_pairs(fleet.x, fleet.y, cfg.R)
        if delay > 0:
            new_links = spread.observe(k, *pairs)
        elif tracker is not None:
            new_links = tracker.update(*pairs, t)[3]
        if k > 0:
            onsets += new_links

        if delay == 0 or k == 0:
            if pairs is None:
                labels = cluster_labels(fleet.x, fleet.y, cfg.R)
            else:
                labels = labels_from_pairs(pairs[0], pairs[1], M)
            if k == 0:
                cluster0 = int(np.count_nonzero(labels == labels[source]))
        if delay == 0:
            hit = np.zeros(M, bool)
            hit[labels[infected]] = True
            infected = hit[labels]
            n = int(np.count_nonzero(infected))
            if delivery is None and infected[destination]:
                delivery = t
        else:
            n = spread.infected_by(t)
            if delivery is None and np.isfinite(spread.inf_time[destination]):
                delivery = float(spread.inf_time[destination])
        counts.append(n)

        if full:
            if n >= M or (n >= target and delivery is not None):
                break
        elif delivery is not None:
            break

    return RunTrace(
        n_at=np.asarray(counts, dtype=np.int64),
        dt=dt,
        M=M,
        source=source,
        destination=destination,
        delivery_time=delivery,
        onsets=onsets,
        observed=(len(counts) - 1) * dt,
        cluster0=cluster0,
    )


def run_seed(base_seed: int, run_id: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(base_seed), int(run_id)])


@dataclass
class EnsembleStats:
    runs: int
    dt: float
    M: int
    horizon: float
    n0_mean: float
    delivery_times: np.ndarray
    mean_n_at: Optional[np.ndarray] = None
    stop_fraction: float = 0.99
    onsets: int = 0
    observed: float = 0.0
    cluster0_mean: float = 0.0

    def delivered_by(self, T: float) -> int:
        d = self.delivery_times
        return int(np.count_nonzero(d[~np.isnan(d)] <= T + _TIME_EPS * self.dt))

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.mean_n_at)) * self.dt

    @property
    def last_step(self) -> int:
        """Index of the first step with mean infected count >= stop_fraction * M."""
        reached = np.flatnonzero(self.mean_n_at >= self.stop_fraction * self.M)
        return int(reached[0]) if reached.size else len(self.mean_n_at) - 1

    @property
    def pairwise_meeting_rate(self) -> float:
        return estimate_pairwise_meeting_rate(self.onsets, self.M, self.observed)


def aggregate(traces: Sequence[RunTrace], horizon: float, stop_fraction: float = 0.99,
              full: bool = True) -> EnsembleStats:
    """Cross-run aggregates in run-index order.

    Traces that stopped early are carried forward at their final count.
    """
    if not traces:
        raise InvalidInput("no runs to aggregate")
    M = traces[0].M
    dt = traces[0].dt
    mean = None
    if full:
        length = max(len(tr.n_at) for tr in traces)
        total = np.zeros(length)
        for tr in traces:
            total[: len(tr.n_at)] += tr.n_at
            total[len(tr.n_at):] += tr.n_at[-1]
        mean = total / len(traces)
    delivery = np.array([np.nan if tr.delivery_time is None else tr.delivery_time for tr in traces])
    return EnsembleStats(
        runs=len(traces),
        dt=dt,
        M=M,
        horizon=horizon,
        n0_mean=float(np.mean([tr.n_at[0] for tr in traces])),
        delivery_times=delivery,
        mean_n_at=mean,
        stop_fraction=stop_fraction,
        onsets=sum(tr.onsets for tr in traces),
        observed=sum(tr.observed for tr in traces),
        cluster0_mean=float(np.mean([tr.cluster0 for tr in traces])),
    )


def _run_batch(cfg, base_seed, run_ids, full, record_contacts):
    return [run_once(cfg, np.random.default_rng(run_seed(base_seed, r)), full, record_contacts)
            for r in run_ids]


def run_ensemble(cfg: SimConfig, runs: int, base_seed: Optional[int] = None, full: bool = False,
                 record_contacts: bool = False, workers: int = 1):
    """Run ``runs`` independent replications; returns ``(stats, traces)``.

    Run ``r`` draws from ``SeedSequence([base_seed, r])`` so results do not
    depend on ``workers`` or on how many runs are requested.
    """
    if runs < 1:
        raise InvalidInput("need at least one run")
    seed = cfg.seed if base_seed is None else base_seed
    ids = list(range(runs))
    if workers > 1 and runs > 1:
        chunks = [ids[w::workers] for w in range(workers)]
        traces = [None] * runs
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_batch, cfg, seed, chunk, full, record_contacts)
                       for chunk in chunks]
            for chunk, fut in zip(chunks, futures):
                for r, tr in zip(chunk, fut.result()):
                    traces[r] = tr
    else:
        traces = _run_batch(cfg, seed, ids, full, record_contacts)
    return aggregate(traces, cfg.horizon, cfg.stop_fraction, full=full), traces


def ps(stats: EnsembleStats, T: float) -> float:
    """Fraction of runs that delivered within deadline ``T``."""
    if T > stats.horizon * (1 + _TIME_EPS):
        raise HorizonExceeded(f"deadline {T} s beyond simulated horizon {stats.horizon} s")
    return stats.delivered_by(T) / stats.runs


def onset_events(snapshots: Iterable[tuple[float, Iterable[tuple[int, int]]]],
                 include_initial: bool = True):
    """Contact-onset events ``(t, i, j)`` from a sequence of ``(t, links)`` snapshots.

    A link counts when it is present and was absent in the previous
    snapshot. Links of the first snapshot count unless
    ``include_initial`` is false.
    """
    previous = None
    for t, links in snapshots:
        current = {(min(a, b), max(a, b)) for a, b in links}
        if previous is None:
            if include_initial:
                for a, b in sorted(current):
                    yield t, a, b
        else:
            for a, b in sorted(current - previous):
                yield t, a, b
        previous = current


def estimate_pairwise_meeting_rate(onsets, M: int, duration: float) -> float:
    """Onsets per node pair per second; ``onsets`` is a count or an event list."""
    if duration <= 0:
        raise InvalidInput("observation duration must be positive")
    if M < 2:
        raise EmptyNetwork("need at least two nodes")
    count = onsets if isinstance(onsets, (int, np.integer)) else len(list(onsets))
    return count / (M * (M - 1) / 2 * duration)


def write_traces(traces: Sequence[RunTrace], path) -> None:
    """``run_id,t,N`` rows at every change of N plus the final step."""
    with open(path, "w") as fh:
        fh.write("run_id,t,N\n")
        for r, tr in enumerate(traces):
            n = tr.n_at
            keep = np.concatenate(([True], n[1:] != n[:-1]))
            keep[-1] = True
            for k in np.flatnonzero(keep):
                fh.write(f"{r},{k * tr.dt:.10g},{n[k]}\n")


def read_traces(path, dt: float, M: int) -> list[RunTrace]:
    """Rebuild per-step traces from a ``run_id,t,N`` file written by :func:`write_traces`."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    traces = []
    for r in np.unique(data[:, 0]).astype(int):
        rows = data[data[:, 0] == r]
        steps = np.rint(rows[:, 1] / dt).astype(int)
        n_at = np.empty(steps[-1] + 1, np.int64)
        for s, e, v in zip(steps, np.append(steps[1:], steps[-1] + 1), rows[:, 2]):
            n_at[s:e] = int(v)
        traces.append(RunTrace(n_at, dt, M, -1, -1, None))
    return traces


def write_deliveries(traces: Sequence[RunTrace], path) -> None:
    with open(path, "w") as fh:
        fh.write("run_id,delivery_time\n")
        for r, tr in enumerate(traces):
            fh.write(f"{r},{'' if tr.delivery_time is None else f'{tr.delivery_time:.10g}'}\n")


def read_deliveries(path) -> np.ndarray:
    out = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            _, value = line.rstrip("\n").split(",")
            out.append(float(value) if value else np.nan)
    return np.array(out)
