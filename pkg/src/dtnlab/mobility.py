"""Node placement and motion.

Two mobility processes are provided:

* random direction with specular reflection at the borders of an ``L x L``
  square: each travel has a uniform heading, a speed drawn from
  ``(v_min, v_max]`` and a duration drawn from ``(0, t_r)``;
* the time-variant community (TVC) model: nodes alternate exponentially
  distributed local epochs (random-direction travel confined to a private
  ``L_c x L_c`` community) and roaming epochs (over the whole square),
  separated by uniform pauses, with a transitional straight-line trip home
  whenever a node outside its community starts a local epoch.

The simulator advances whole fleets as structure-of-arrays
(:class:`Fleet`, :func:`advance`). The per-node functions
:func:`step_random_direction` and :func:`step_tvc` operate on
:class:`NodeKinematics` records and share the same kernel.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import EmptyNetwork, InvalidInput

TWO_PI = 2.0 * math.pi


class MobilityKind(str, enum.Enum):
    RANDOM_DIRECTION = "random_direction"
    TVC = "tvc"


class Mode(enum.IntEnum):
    TRAVEL = 0
    LOCAL = 1
    ROAM = 2
    PAUSE = 3
    TRANSITIONAL = 4


@dataclass(frozen=True)
class TvcConfig:
    L_c: float
    mean_local: float
    mean_roam: float
    p_max: float
    p_l: float
    p_r: float

    def __post_init__(self):
        if not self.L_c > 0:
            raise InvalidInput(f"community side must be positive, got {self.L_c}")
        if not (self.mean_local > 0 and self.mean_roam > 0):
            raise InvalidInput("mean epoch durations must be positive")
        if self.p_max < 0:
            raise InvalidInput("maximum pause must be non-negative")
        for p in (self.p_l, self.p_r):
            if not 0.0 <= p <= 1.0:
                raise InvalidInput(f"probability out of [0, 1]: {p}")

    @property
    def local_share(self) -> float:
        """Stationary probability that an epoch is local."""
        stay_away = 1.0 - self.p_r
        leave_home = 1.0 - self.p_l
        if stay_away + leave_home == 0.0:
            return 0.5
        return stay_away / (stay_away + leave_home)


@dataclass(frozen=True)
class MobilityConfig:
    kind: MobilityKind = MobilityKind.RANDOM_DIRECTION
    v_min: float = 0.0
    v_max: float = 1.0
    t_r: float = 120.0
    L: float = 5000.0
    tvc: Optional[TvcConfig] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", MobilityKind(self.kind))
        if not (0.0 <= self.v_min < self.v_max < math.inf):
            raise InvalidInput(f"need 0 <= v_min < v_max < inf, got ({self.v_min}, {self.v_max})")
        if not self.t_r > 0:
            raise InvalidInput(f"t_r must be positive, got {self.t_r}")
        if not self.L > 0:
            raise InvalidInput(f"L must be positive, got {self.L}")
        if self.kind is MobilityKind.TVC:
            if self.tvc is None:
                raise InvalidInput("TVC mobility needs a TvcConfig")
            if self.tvc.L_c > self.L:
                raise InvalidInput("community side exceeds the simulation area")


@dataclass
class NodeKinematics:
    position: tuple
    heading: float
    speed: float
    phase_remaining: float
    mode: Mode = Mode.TRAVEL
    community_origin: Optional[tuple] = None
    # Transitional epochs only: the point inside the community being approached.
    target: Optional[tuple] = None
    # Kind of the last finished epoch, drives the TVC mode chain.
    last_epoch: Mode = Mode.LOCAL


@dataclass
class Fleet:
    """Kinematic state of ``n`` nodes stored column-wise."""

    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    speed: np.ndarray
    remaining: np.ndarray
    mode: np.ndarray
    origin_x: np.ndarray = field(default=None)
    origin_y: np.ndarray = field(default=None)
    target_x: np.ndarray = field(default=None)
    target_y: np.ndarray = field(default=None)
    last_epoch: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.x)
        for name in ("origin_x", "origin_y", "target_x", "target_y"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(n))
        if self.last_epoch is None:
            self.last_epoch = np.full(n, int(Mode.LOCAL), dtype=np.int8)

    def __len__(self):
        return len(self.x)

    @property
    def positions(self) -> np.ndarray:
        return np.column_stack((self.x, self.y))

    def nodes(self, tvc: bool = False) -> list[NodeKinematics]:
        out = []
        for k in range(len(self)):
            mode = Mode(int(self.mode[k]))
            out.append(NodeKinematics(
                position=(float(self.x[k]), float(self.y[k])),
                heading=float(self.heading[k]),
                speed=float(self.speed[k]),
                phase_remaining=float(self.remaining[k]),
                mode=mode,
                community_origin=(float(self.origin_x[k]), float(self.origin_y[k])) if tvc else None,
                target=(float(self.target_x[k]), float(self.target_y[k]))
                if mode is Mode.TRANSITIONAL else None,
                last_epoch=Mode(int(self.last_epoch[k])),
            ))
        return out

    @classmethod
    def from_nodes(cls, nodes: list[NodeKinematics]) -> "Fleet":
        def col(get, dtype=float):
            return np.array([get(s) for s in nodes], dtype=dtype)

        return cls(
            x=col(lambda s: s.position[0]),
            y=col(lambda s: s.position[1]),
            heading=col(lambda s: s.heading),
            speed=col(lambda s: s.speed),
            remaining=col(lambda s: s.phase_remaining),
            mode=col(lambda s: int(s.mode), np.int8),
            origin_x=col(lambda s: (s.community_origin or (0.0, 0.0))[0]),
            origin_y=col(lambda s: (s.community_origin or (0.0, 0.0))[1]),
            target_x=col(lambda s: (s.target or (0.0, 0.0))[0]),
            target_y=col(lambda s: (s.target or (0.0, 0.0))[1]),
            last_epoch=col(lambda s: int(s.last_epoch), np.int8),
        )


def sample_speed(rng: np.random.Generator, n: int, v_min: float, v_max: float) -> np.ndarray:
    # 1 - U with U in [0, 1) lands in (0, 1], so speeds cover (v_min, v_max].
    return v_max - (v_max - v_min) * rng.random(n)


def _sample_travel_duration(rng, n, t_r):
    return t_r * (1.0 - rng.random(n))


def reflect(u: np.ndarray, lo, width):
    """Fold coordinates into ``[lo, lo + width]`` by repeated mirroring.

    Returns the folded coordinates and a boolean mask telling which entries
    went through an odd number of reflections (their velocity component
    must be negated).
    """
    rel = u - lo
    k = np.floor(rel / width)
    r = rel - k * width
    odd = (k.astype(np.int64) & 1) == 1
    folded = np.where(odd, width - r, r)
    return lo + folded, odd


def _move_reflecting(fleet, idx, seg, lo_x, lo_y, width):
    h = fleet.heading[idx]
    dist = fleet.speed[idx] * seg
    nx, flip_x = reflect(fleet.x[idx] + dist * np.cos(h), lo_x, width)
    ny, flip_y = reflect(fleet.y[idx] + dist * np.sin(h), lo_y, width)
    h = np.where(flip_x, math.pi - h, h)
    h = np.where(flip_y, -h, h)
    fleet.x[idx] = nx
    fleet.y[idx] = ny
    fleet.heading[idx] = np.mod(h, TWO_PI)


def init_fleet(count: int, cfg: MobilityConfig, rng: np.random.Generator) -> Fleet:
    """Place ``count`` nodes and give each one a motion phase already in progress."""
    if count < 1:
        raise EmptyNetwork("cannot place an empty network")
    L = cfg.L
    x = rng.uniform(0.0, L, count)
    y = rng.uniform(0.0, L, count)
    heading = rng.uniform(0.0, TWO_PI, count)
    speed = sample_speed(rng, count, cfg.v_min, cfg.v_max)
    if cfg.kind is MobilityKind.RANDOM_DIRECTION:
        # Residual of a fresh travel, so the population does not re-draw in lockstep.
        remaining = _sample_travel_duration(rng, count, cfg.t_r) * (1.0 - rng.random(count))
        return Fleet(x, y, heading, speed, remaining,
                     np.full(count, int(Mode.TRAVEL), dtype=np.int8))

    tvc = cfg.tvc
    span = L - tvc.L_c
    ox = rng.uniform(0.0, span, count)
    oy = rng.uniform(0.0, span, count)
    local = rng.random(count) < tvc.local_share
    # Nodes that start inside a local epoch sit in their own community.
    x = np.where(local, ox + rng.uniform(0.0, tvc.L_c, count), x)
    y = np.where(local, oy + rng.uniform(0.0, tvc.L_c, count), y)
    mode = np.where(local, int(Mode.LOCAL), int(Mode.ROAM)).astype(np.int8)
    means = np.where(local, tvc.mean_local, tvc.mean_roam)
    # Exponential epochs are memoryless: the residual is again exponential.
    remaining = rng.exponential(means)
    return Fleet(x, y, heading, speed, remaining, mode, ox, oy,
                 np.zeros(count), np.zeros(count), mode.copy())


def init_positions(count: int, L: float, rng: np.random.Generator,
                   cfg: Optional[MobilityConfig] = None) -> list[NodeKinematics]:
    if cfg is None:
        cfg = MobilityConfig(L=L)
    elif cfg.L != L:
        cfg = replace(cfg, L=L)
    fleet = init_fleet(count, cfg, rng)
    return fleet.nodes(tvc=cfg.kind is MobilityKind.TVC)


def _advance_random_direction(fleet: Fleet, dt: float, cfg: MobilityConfig, rng):
    left = np.full(len(fleet), float(dt))
    idx = np.arange(len(fleet))
    while idx.size:
        seg = np.minimum(left[idx], fleet.remaining[idx])
        _move_reflecting(fleet, idx, seg, 0.0, 0.0, cfg.L)
        fleet.remaining[idx] -= seg
        left[idx] -= seg
        done = idx[fleet.remaining[idx] <= 0.0]
        if done.size:
            fleet.heading[done] = rng.uniform(0.0, TWO_PI, done.size)
            fleet.speed[done] = sample_speed(rng, done.size, cfg.v_min, cfg.v_max)
            fleet.remaining[done] = _sample_travel_duration(rng, done.size, cfg.t_r)
        idx = done[left[done] > 0.0]


def _start_epochs(fleet, idx, mode, cfg, rng):
    tvc = cfg.tvc
    n = idx.size
    fleet.mode[idx] = int(mode)
    fleet.heading[idx] = rng.uniform(0.0, TWO_PI, n)
    fleet.speed[idx] = sample_speed(rng, n, cfg.v_min, cfg.v_max)
    mean = tvc.mean_local if mode is Mode.LOCAL else tvc.mean_roam
    fleet.remaining[idx] = rng.exponential(mean, n)


def _choose_next_mode(fleet, idx, cfg, rng):
    tvc = cfg.tvc
    was_local = fleet.last_epoch[idx] == int(Mode.LOCAL)
    u = rng.random(idx.size)
    go_local = np.where(was_local, u < tvc.p_l, u >= tvc.p_r)

    roam = idx[~go_local]
    if roam.size:
        _start_epochs(fleet, roam, Mode.ROAM, cfg, rng)

    local = idx[go_local]
    if local.size:
        ox, oy = fleet.origin_x[local], fleet.origin_y[local]
        px, py = fleet.x[local], fleet.y[local]
        inside = (px >= ox) & (px <= ox + tvc.L_c) & (py >= oy) & (py <= oy + tvc.L_c)
        home = local[inside]
        if home.size:
            _start_epochs(fleet, home, Mode.LOCAL, cfg, rng)
        away = local[~inside]
        if away.size:
            n = away.size
            tx = fleet.origin_x[away] + rng.uniform(0.0, tvc.L_c, n)
            ty = fleet.origin_y[away] + rng.uniform(0.0, tvc.L_c, n)
            speed = sample_speed(rng, n, cfg.v_min, cfg.v_max)
            dx, dy = tx - fleet.x[away], ty - fleet.y[away]
            fleet.mode[away] = int(Mode.TRANSITIONAL)
            fleet.target_x[away] = tx
            fleet.target_y[away] = ty
            fleet.heading[away] = np.mod(np.arctan2(dy, dx), TWO_PI)
            fleet.speed[away] = speed
            fleet.remaining[away] = np.hypot(dx, dy) / speed


def _advance_tvc(fleet: Fleet, dt: float, cfg: MobilityConfig, rng):
    tvc = cfg.tvc
    left = np.full(len(fleet), float(dt))
    idx = np.arange(len(fleet))
    while idx.size:
        seg = np.minimum(left[idx], fleet.remaining[idx])
        mode = fleet.mode[idx]

        loc = mode == int(Mode.LOCAL)
        if loc.any():
            sub = idx[loc]
            _move_reflecting(fleet, sub, seg[loc], fleet.origin_x[sub], fleet.origin_y[sub], tvc.L_c)
        roam = mode == int(Mode.ROAM)
        if roam.any():
            _move_reflecting(fleet, idx[roam], seg[roam], 0.0, 0.0, cfg.L)
        trans = mode == int(Mode.TRANSITIONAL)
        if trans.any():
            sub = idx[trans]
            step = fleet.speed[sub] * seg[trans]
            h = fleet.heading[sub]
            fleet.x[sub] += step * np.cos(h)
            fleet.y[sub] += step * np.sin(h)

        fleet.remaining[idx] -= seg
        left[idx] -= seg
        done = idx[fleet.remaining[idx] <= 0.0]
        if done.size:
            dmode = fleet.mode[done]
            epoch_end = done[(dmode == int(Mode.LOCAL)) | (dmode == int(Mode.ROAM))]
            if epoch_end.size:
                fleet.last_epoch[epoch_end] = fleet.mode[epoch_end]
                fleet.mode[epoch_end] = int(Mode.PAUSE)
                fleet.speed[epoch_end] = 0.0
                fleet.remaining[epoch_end] = rng.uniform(0.0, tvc.p_max, epoch_end.size)
            arrived = done[dmode == int(Mode.TRANSITIONAL)]
            if arrived.size:
                fleet.x[arrived] = fleet.target_x[arrived]
                fleet.y[arrived] = fleet.target_y[arrived]
                _start_epochs(fleet, arrived, Mode.LOCAL, cfg, rng)
            paused = done[dmode == int(Mode.PAUSE)]
            if paused.size:
                _choose_next_mode(fleet, paused, cfg, rng)
            # Zero-length pauses (p_max = 0) resolve within the same instant.
            instant = epoch_end[fleet.remaining[epoch_end] <= 0.0]
            if instant.size:
                _choose_next_mode(fleet, instant, cfg, rng)
        idx = done[left[done] > 0.0]


def advance(fleet: Fleet, dt: float, cfg: MobilityConfig, rng: np.random.Generator) -> None:
    """Advance every node of ``fleet`` by ``dt`` seconds, in place."""
    if not dt > 0:
        raise InvalidInput(f"time step must be positive, got {dt}")
    if cfg.kind is MobilityKind.RANDOM_DIRECTION:
        _advance_random_direction(fleet, dt, cfg, rng)
    else:
        _advance_tvc(fleet, dt, cfg, rng)


def step_random_direction(state: NodeKinematics, dt: float, cfg: MobilityConfig,
                          rng: np.random.Generator) -> NodeKinematics:
    fleet = Fleet.from_nodes([state])
    if not dt > 0:
        raise InvalidInput(f"time step must be positive, got {dt}")
    _advance_random_direction(fleet, dt, cfg, rng)
    return fleet.nodes()[0]


def step_tvc(state: NodeKinematics, dt: float, cfg: MobilityConfig,
             rng: np.random.Generator) -> NodeKinematics:
    if cfg.kind is not MobilityKind.TVC:
        raise InvalidInput("step_tvc needs a TVC mobility configuration")
    if not dt > 0:
        raise InvalidInput(f"time step must be positive, got {dt}")
    fleet = Fleet.from_nodes([state])
    _advance_tvc(fleet, dt, cfg, rng)
    return fleet.nodes(tvc=True)[0]


def trajectory_rows(run_id: int, t: float, fleet: Fleet):
    """Rows ``(run_id, t, node_id, x, y)`` for a trajectory dump."""
    for k in range(len(fleet)):
        yield run_id, t, k, float(fleet.x[k]), float(fleet.y[k])
