"""2-D particle world for the VIP escort scenarios.

Entity layout inside a world (entity ids): 0 is the VIP, ``1..N`` the
defenders, then the bystanders, then the landmarks. Agent-facing functions
(``observe``, ``local_reward``) take a defender index ``0..N-1`` instead.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields, replace
from enum import IntEnum

import numpy as np


class ScenarioKind(IntEnum):
    RANDOM_LANDMARKS = 0
    SHOPPING_MALL = 1
    STREET = 2
    PIE_IN_THE_FACE = 3

    @property
    def label(self) -> str:
        return _SCENARIO_LABELS[self]

    @classmethod
    def parse(cls, name) -> "ScenarioKind":
        if isinstance(name, cls):
            return name
        key = str(name).replace("-", "").replace("_", "").replace(" ", "").lower()
        for kind, label in _SCENARIO_LABELS.items():
            if key == label.lower():
                return kind
        raise ValueError(f"unknown scenario {name!r}; expected one of {list(_SCENARIO_LABELS.values())}")


_SCENARIO_LABELS = {
    ScenarioKind.RANDOM_LANDMARKS: "RandomLandmarks",
    ScenarioKind.SHOPPING_MALL: "ShoppingMall",
    ScenarioKind.STREET: "Street",
    ScenarioKind.PIE_IN_THE_FACE: "PieInTheFace",
}


class EntityKind(IntEnum):
    VIP = 0
    DEFENDER = 1
    BYSTANDER = 2
    LANDMARK = 3


class Mode(IntEnum):
    RANDOM_WAYPOINT = 0
    SHOP_HOP = 1
    STREET_FLOW = 2
    LINE_STANDER = 3
    ATTACKER = 4


@dataclass(frozen=True)
class WorldConfig:
    n_defenders: int = 4
    n_bystanders: int = 10
    n_landmarks: int = 6
    arena_half_width: float = 1.0
    dt: float = 0.1
    damping: float = 0.25
    accel_gain: float = 5.0
    defender_max_speed: float = 1.0
    bystander_max_speed: float = 0.6
    vip_speed: float = 0.4
    vip_radius: float = 0.05
    defender_radius: float = 0.05
    bystander_radius: float = 0.05
    landmark_radius: float = 0.08
    max_steps: int = 25
    nearest_m: int = 5
    spawn_radius: float = 0.3
    street_w_lane: float = 0.7
    street_w_align: float = 0.3
    street_radius: float = 0.3
    line_offset: float = 0.8
    attacker_trigger_min: int = 3
    attacker_trigger_max: int = 10

    def __post_init__(self):
        if self.n_defenders < 1:
            raise ValueError("n_defenders must be >= 1")
        if self.n_bystanders < 0 or self.nearest_m < 0:
            raise ValueError("n_bystanders and nearest_m must be >= 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")
        if self.dt <= 0 or self.arena_half_width <= 0:
            raise ValueError("dt and arena_half_width must be positive")
        if self.attacker_trigger_min > self.attacker_trigger_max:
            raise ValueError("attacker_trigger_min exceeds attacker_trigger_max")

    @property
    def obs_dim(self) -> int:
        return 4 + 4 * (1 + (self.n_defenders - 1) + self.nearest_m)

    @property
    def state_dim(self) -> int:
        return self.n_defenders * self.obs_dim

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def with_overrides(self, **kw) -> "WorldConfig":
        return replace(self, **kw)


@dataclass
class StepEvents:
    step_index: int
    vip_arrived: bool


class EpisodeFinished(RuntimeError):
    """Raised when stepping a world whose episode already ended."""


class WorldState:
    """Mutable simulation state, owned by a single rollout."""

    def __init__(self, config: WorldConfig, scenario: ScenarioKind, rng: np.random.Generator,
                 n_landmarks: int):
        self.config = config
        self.scenario = scenario
        self.rng = rng
        c = config
        self.n_defenders = c.n_defenders
        self.n_bystanders = c.n_bystanders
        self.n_landmarks = n_landmarks
        n = 1 + c.n_defenders + c.n_bystanders + n_landmarks
        self.pos = np.zeros((n, 2))
        self.vel = np.zeros((n, 2))
        self.kind = np.empty(n, dtype=np.int64)
        self.radius = np.empty(n)
        self.kind[0] = EntityKind.VIP
        self.radius[0] = c.vip_radius
        self.kind[self.defender_slice] = EntityKind.DEFENDER
        self.radius[self.defender_slice] = c.defender_radius
        self.kind[self.bystander_slice] = EntityKind.BYSTANDER
        self.radius[self.bystander_slice] = c.bystander_radius
        self.kind[self.landmark_slice] = EntityKind.LANDMARK
        self.radius[self.landmark_slice] = c.landmark_radius
        nb = c.n_bystanders
        self.mode = np.full(nb, Mode.LINE_STANDER, dtype=np.int64)
        self.waypoint = np.full(nb, -1, dtype=np.int64)  # landmark index, -1 if unused
        self.lane_dir = np.zeros((nb, 2))
        self.trigger_step = np.full(nb, -1, dtype=np.int64)
        self.engaged = np.zeros(nb, dtype=bool)
        self.vip_start = 0
        self.vip_goal = 1
        self.step_index = 0

    # index helpers
    @property
    def defender_slice(self) -> slice:
        return slice(1, 1 + self.n_defenders)

    @property
    def bystander_slice(self) -> slice:
        s = 1 + self.n_defenders
        return slice(s, s + self.n_bystanders)

    @property
    def landmark_slice(self) -> slice:
        s = 1 + self.n_defenders + self.n_bystanders
        return slice(s, s + self.n_landmarks)

    def defender_id(self, agent: int) -> int:
        if not 0 <= agent < self.n_defenders:
            raise IndexError(f"defender index {agent} out of range")
        return 1 + agent

    def bystander_ids(self) -> range:
        s = self.bystander_slice
        return range(s.start, s.stop)

    def landmark_id(self, landmark: int) -> int:
        return self.landmark_slice.start + landmark

    def _bystander_local(self, b: int) -> int:
        k = b - self.bystander_slice.start
        if not 0 <= k < self.n_bystanders:
            raise IndexError(f"entity {b} is not a bystander")
        return k

    @property
    def goal_position(self) -> np.ndarray:
        return self.pos[self.landmark_id(self.vip_goal)]

    @property
    def attacker_ids(self) -> list[int]:
        return [self.bystander_slice.start + k for k in np.flatnonzero(self.mode == Mode.ATTACKER)]

    def copy(self) -> "WorldState":
        other = WorldState.__new__(WorldState)
        other.__dict__.update(self.__dict__)
        for name in ("pos", "vel", "kind", "radius", "mode", "waypoint", "lane_dir",
                     "trigger_step", "engaged"):
            setattr(other, name, getattr(self, name).copy())
        rng = np.random.Generator(type(self.rng.bit_generator)())
        rng.bit_generator.state = self.rng.bit_generator.state
        other.rng = rng
        return other

    def snapshot(self) -> dict:
        """Plain-data view used for equality checks and trajectory dumps."""
        return {
            "pos": self.pos.copy(), "vel": self.vel.copy(), "mode": self.mode.copy(),
            "waypoint": self.waypoint.copy(), "trigger_step": self.trigger_step.copy(),
            "vip_goal": self.vip_goal, "step_index": self.step_index,
        }


def _uniform_in_disk(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    r = radius * np.sqrt(rng.random(n))
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)


def _perimeter_points(rng: np.random.Generator, n: int, half: float) -> np.ndarray:
    # uniform positions along the square boundary at half-width ``half``
    t = rng.uniform(0.0, 8.0 * half, n)
    side = (t // (2.0 * half)).astype(int)
    u = t - side * 2.0 * half - half
    pts = np.empty((n, 2))
    pts[side == 0] = np.stack([u[side == 0], np.full((side == 0).sum(), -half)], axis=1)
    pts[side == 1] = np.stack([np.full((side == 1).sum(), half), u[side == 1]], axis=1)
    pts[side == 2] = np.stack([-u[side == 2], np.full((side == 2).sum(), half)], axis=1)
    pts[side == 3] = np.stack([np.full((side == 3).sum(), -half), -u[side == 3]], axis=1)
    return pts


def scenario_init(kind, config: WorldConfig, rng: np.random.Generator) -> WorldState:
    kind = ScenarioKind.parse(kind)
    c = config
    inner = 0.9 * c.arena_half_width
    waypoint_scenario = kind in (ScenarioKind.RANDOM_LANDMARKS, ScenarioKind.SHOPPING_MALL)
    if waypoint_scenario:
        if c.n_landmarks < 2:
            raise ValueError(f"{kind.label} needs at least 2 landmarks, got {c.n_landmarks}")
        n_landmarks = c.n_landmarks
    else:
        n_landmarks = 2  # start and goal of the VIP's walk
    w = WorldState(c, kind, rng, n_landmarks)
    lm = w.landmark_slice
    by = w.bystander_slice
    nb = c.n_bystanders

    if kind == ScenarioKind.RANDOM_LANDMARKS:
        w.pos[lm] = rng.uniform(-inner, inner, size=(n_landmarks, 2))
    elif kind == ScenarioKind.SHOPPING_MALL:
        w.pos[lm] = _perimeter_points(rng, n_landmarks, inner)
    else:
        w.pos[lm] = [[-inner, 0.0], [inner, 0.0]]

    if waypoint_scenario:
        start, goal = rng.choice(n_landmarks, size=2, replace=False)
        w.vip_start, w.vip_goal = int(start), int(goal)
    else:
        w.vip_start, w.vip_goal = 0, 1
    w.pos[0] = w.pos[w.landmark_id(w.vip_start)]

    offsets = _uniform_in_disk(rng, c.n_defenders, c.spawn_radius)
    w.pos[w.defender_slice] = np.clip(w.pos[0] + offsets, -c.arena_half_width, c.arena_half_width)

    if kind in (ScenarioKind.RANDOM_LANDMARKS, ScenarioKind.SHOPPING_MALL):
        mode = Mode.RANDOM_WAYPOINT if kind == ScenarioKind.RANDOM_LANDMARKS else Mode.SHOP_HOP
        w.pos[by] = rng.uniform(-inner, inner, size=(nb, 2))
        w.mode[:] = mode
        w.waypoint[:] = rng.integers(0, n_landmarks, size=nb)
    elif kind == ScenarioKind.STREET:
        w.pos[by, 0] = rng.uniform(-inner, inner, size=nb)
        w.pos[by, 1] = rng.uniform(-0.5, 0.5, size=nb) * c.arena_half_width
        w.mode[:] = Mode.STREET_FLOW
        signs = np.where(np.arange(nb) % 2 == 0, 1.0, -1.0)
        w.lane_dir[:, 0] = signs
    else:
        # two rows flanking the VIP's path along y = 0
        per_row = (nb + 1) // 2
        xs = np.linspace(-inner, inner, max(per_row, 1))
        for k in range(nb):
            row = k % 2
            w.pos[by.start + k] = [xs[k // 2], c.line_offset if row == 0 else -c.line_offset]
        w.mode[:] = Mode.LINE_STANDER
        if nb > 0:
            attacker = int(rng.integers(0, nb))
            w.mode[attacker] = Mode.ATTACKER
            w.trigger_step[attacker] = int(rng.integers(c.attacker_trigger_min, c.attacker_trigger_max + 1))
    return w


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.hypot(v[0], v[1]))
    return v / n if n > 0.0 else np.zeros(2)


def bystander_command(world: WorldState, b: int) -> np.ndarray:
    """Desired velocity of bystander entity ``b``.

    Waypoint walkers resample their landmark on arrival (this consumes the
    world's RNG stream), so the call may mutate behaviour state.
    """
    k = world._bystander_local(b)
    c = world.config
    mode = world.mode[k]
    pos = world.pos[b]
    if mode in (Mode.RANDOM_WAYPOINT, Mode.SHOP_HOP):
        target = world.pos[world.landmark_id(world.waypoint[k])]
        if np.hypot(*(target - pos)) < c.landmark_radius:
            choices = [j for j in range(world.n_landmarks) if j != world.waypoint[k]]
            world.waypoint[k] = choices[int(world.rng.integers(0, len(choices)))]
            target = world.pos[world.landmark_id(world.waypoint[k])]
        return _unit(target - pos) * c.bystander_max_speed
    if mode == Mode.STREET_FLOW:
        by = world.bystander_slice
        others = world.pos[by] - pos
        near = np.hypot(others[:, 0], others[:, 1]) < c.street_radius
        near[k] = False
        align = world.vel[by][near].mean(axis=0) if near.any() else np.zeros(2)
        blend = c.street_w_lane * world.lane_dir[k] + c.street_w_align * align
        return _unit(blend) * c.bystander_max_speed
    if mode == Mode.ATTACKER and world.step_index >= world.trigger_step[k]:
        return _unit(world.pos[0] - pos) * c.bystander_max_speed
    return np.zeros(2)


def _clamp_speed(vel: np.ndarray, max_speed: float) -> np.ndarray:
    speed = np.hypot(vel[:, 0], vel[:, 1])
    scale = np.where(speed > max_speed, max_speed / np.maximum(speed, 1e-300), 1.0)
    return vel * scale[:, None]


def episode_done(world: WorldState) -> bool:
    return world.step_index >= world.config.max_steps


def step(world: WorldState, actions) -> tuple[WorldState, StepEvents]:
    """Advance the world one tick in place; returns the same world and events.

    Order: defenders integrate their forces, the scripted VIP walks toward its
    goal, then bystanders follow their commands (attackers aim at the VIP's
    updated position).
    """
    if episode_done(world):
        raise EpisodeFinished(f"episode finished after {world.step_index} steps")
    c = world.config
    acts = np.clip(np.asarray(actions, dtype=np.float64).reshape(world.n_defenders, 2), -1.0, 1.0)
    half = c.arena_half_width

    d = world.defender_slice
    vel = (1.0 - c.damping) * world.vel[d] + acts * c.accel_gain * c.dt
    vel = _clamp_speed(vel, c.defender_max_speed)
    world.vel[d] = vel
    world.pos[d] = np.clip(world.pos[d] + vel * c.dt, -half, half)

    to_goal = world.goal_position - world.pos[0]
    dist = float(np.hypot(*to_goal))
    stride = min(c.vip_speed * c.dt, dist)
    vip_disp = _unit(to_goal) * stride
    world.pos[0] = np.clip(world.pos[0] + vip_disp, -half, half)
    world.vel[0] = vip_disp / c.dt

    by = world.bystander_slice
    if world.n_bystanders:
        commands = np.stack([bystander_command(world, b) for b in world.bystander_ids()])
        bvel = (1.0 - c.damping) * world.vel[by] + commands * c.accel_gain * c.dt
        bvel = _clamp_speed(bvel, c.bystander_max_speed)
        bpos = world.pos[by] + bvel * c.dt
        if world.engaged.any():
            # an attacker that reached the VIP stays attached to it
            bvel[world.engaged] = world.vel[0]
            bpos[world.engaged] = world.pos[by][world.engaged] + vip_disp
        street = world.mode == Mode.STREET_FLOW
        if street.any():
            x = bpos[street, 0]
            x = np.where(x > half, x - 2.0 * half, np.where(x < -half, x + 2.0 * half, x))
            bpos[street, 0] = x
        world.vel[by] = bvel
        world.pos[by] = np.clip(bpos, -half, half)
        contact = c.vip_radius + c.bystander_radius
        attackers = world.mode == Mode.ATTACKER
        if attackers.any():
            gap = np.hypot(*(world.pos[by][attackers] - world.pos[0]).T)
            world.engaged[attackers] |= gap <= contact

    world.step_index += 1
    arrived = float(np.hypot(*(world.goal_position - world.pos[0]))) < c.landmark_radius
    return world, StepEvents(world.step_index, arrived)


def _relative_block(world: WorldState, agent: int, ids: np.ndarray) -> np.ndarray:
    me = world.defender_id(agent)
    dp = world.pos[ids] - world.pos[me]
    dv = world.vel[ids] - world.vel[me]
    return np.concatenate([dp, dv], axis=1).reshape(-1)


def nearest_bystanders(world: WorldState, agent: int) -> np.ndarray:
    """Entity ids of the ``nearest_m`` closest bystanders, ties by entity id."""
    by = world.bystander_slice
    if world.n_bystanders == 0:
        return np.zeros(0, dtype=np.int64)
    me = world.pos[world.defender_id(agent)]
    diff = world.pos[by] - me
    dist = np.hypot(diff[:, 0], diff[:, 1])
    order = np.argsort(dist, kind="stable")
    return (by.start + order[:world.config.nearest_m]).astype(np.int64)


def observe(world: WorldState, agent: int) -> np.ndarray:
    """Agent-centric observation; missing bystander slots are zero-padded."""
    c = world.config
    me = world.defender_id(agent)
    own = np.concatenate([world.vel[me], world.pos[me]])
    vip = _relative_block(world, agent, np.array([0]))
    mates = np.array([world.defender_id(j) for j in range(world.n_defenders) if j != agent], dtype=np.int64)
    team = _relative_block(world, agent, mates)
    near = nearest_bystanders(world, agent)
    crowd = np.zeros(4 * c.nearest_m)
    if near.size:
        crowd[:4 * near.size] = _relative_block(world, agent, near)
    return np.concatenate([own, vip, team, crowd])


def observe_all(world: WorldState) -> np.ndarray:
    """(n_defenders, obs_dim) stack of every defender's observation."""
    return np.stack([observe(world, i) for i in range(world.n_defenders)])


def global_state(world: WorldState) -> np.ndarray:
    return observe_all(world).reshape(-1)


TRAJECTORY_COLUMNS = ("step", "entity_id", "kind", "x", "y", "vx", "vy")


def write_trajectory_csv(path, frames: list[WorldState]) -> None:
    """Dump world snapshots as CSV rows (one per entity per frame)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAJECTORY_COLUMNS)
        for w in frames:
            for e in range(w.pos.shape[0]):
                writer.writerow([w.step_index, e, EntityKind(w.kind[e]).name.lower(),
                                 *(f"{v:.9g}" for v in (*w.pos[e], *w.vel[e]))])
