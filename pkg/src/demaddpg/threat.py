"""Line-of-sight threat model and the global, local and entangled rewards."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .env import WorldState


@dataclass(frozen=True)
class ThreatParams:
    """Threat constants in world units.

    With B = safe_dist / 3 the threat level has decayed to exp(-3) ~ 0.05 at
    the safe-distance cutoff, where it drops to zero.
    """

    A: float = 1.0
    B: float = 0.8 / 3.0
    safe_dist: float = 0.8
    block_radius: float = 0.05

    def __post_init__(self):
        for name in ("A", "B", "safe_dist", "block_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"ThreatParams.{name} must be strictly positive")


@dataclass(frozen=True)
class LocalBand:
    """Distance band [m, d] around the VIP that earns local reward 0."""

    m: float = 0.25
    d: float = 0.6

    def __post_init__(self):
        _check_band(self.m, self.d)


def _check_band(m: float, d: float) -> None:
    if not 0 < m < d:
        raise ValueError(f"local reward band needs 0 < m < d, got m={m}, d={d}")


@dataclass
class ThreatReport:
    bystander_ids: np.ndarray
    dist: np.ndarray
    tl: np.ndarray
    blocked: np.ndarray
    rt: np.ndarray
    r_global: float = field(default=0.0)

    def to_dict(self) -> dict:
        return {
            "r_global": float(self.r_global),
            "bystanders": [
                {"id": int(b), "dist": float(d), "tl": float(t), "blocked": bool(k), "rt": float(r)}
                for b, d, t, k, r in zip(self.bystander_ids, self.dist, self.tl, self.blocked, self.rt)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def segment_point_distance(a: np.ndarray, b: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Distance from point(s) ``p`` (..., 2) to the segment a-b."""
    ab = b - a
    denom = float(ab @ ab)
    ap = np.asarray(p, dtype=np.float64) - a
    if denom == 0.0:
        return np.hypot(ap[..., 0], ap[..., 1])
    t = np.clip((ap @ ab) / denom, 0.0, 1.0)
    closest = a + t[..., None] * ab
    diff = np.asarray(p) - closest
    return np.hypot(diff[..., 0], diff[..., 1])


def line_of_sight(world: WorldState, src: int, dst: int, block_radius: float) -> int:
    """1 if no defender (other than the endpoints) is within block_radius of src-dst."""
    if src == dst:
        raise ValueError("line_of_sight needs two distinct entities")
    d = world.defender_slice
    ids = np.arange(d.start, d.stop)
    keep = (ids != src) & (ids != dst)
    if not keep.any():
        return 1
    dist = segment_point_distance(world.pos[src], world.pos[dst], world.pos[ids[keep]])
    return 0 if bool(np.any(dist <= block_radius)) else 1


def threat_level(dist: float, params: ThreatParams) -> float:
    if dist < 0:
        raise ValueError("distance must be non-negative")
    if dist >= params.safe_dist:
        return 0.0
    return float(np.exp(-params.A * dist / params.B))


def residual_threat(world: WorldState, b: int, params: ThreatParams) -> float:
    world._bystander_local(b)
    dist = float(np.hypot(*(world.pos[b] - world.pos[0])))
    tl = threat_level(dist, params)
    if tl == 0.0:
        return 0.0
    return tl * line_of_sight(world, b, 0, params.block_radius)


def threat_report(world: WorldState, params: ThreatParams) -> ThreatReport:
    """Vectorised per-bystander threat evaluation for the current state."""
    by = world.bystander_slice
    ids = np.arange(by.start, by.stop)
    vip = world.pos[0]
    bpos = world.pos[by]
    diff = bpos - vip
    dist = np.hypot(diff[:, 0], diff[:, 1])
    tl = np.where(dist < params.safe_dist, np.exp(-params.A * dist / params.B), 0.0)
    blocked = np.zeros(ids.size, dtype=bool)
    defenders = world.pos[world.defender_slice]
    for k in np.flatnonzero(tl > 0.0):
        gap = segment_point_distance(bpos[k], vip, defenders)
        blocked[k] = bool(np.any(gap <= params.block_radius))
    rt = np.where(blocked, 0.0, tl)
    r_global = -1.0 + float(np.prod(1.0 - rt))
    return ThreatReport(ids, dist, tl, blocked, rt, r_global)


def global_reward(world: WorldState, params: ThreatParams) -> tuple[float, ThreatReport]:
    report = threat_report(world, params)
    return report.r_global, report


def local_reward(world: WorldState, agent: int, m: float, d: float) -> float:
    _check_band(m, d)
    dist = float(np.hypot(*(world.pos[world.defender_id(agent)] - world.pos[0])))
    return 0.0 if m <= dist <= d else -1.0


def local_rewards(world: WorldState, band: LocalBand) -> np.ndarray:
    return np.array([local_reward(world, i, band.m, band.d) for i in range(world.n_defenders)])


def entangled_reward(r_g, r_l, alpha: float):
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * r_g + (1.0 - alpha) * r_l


def cumulative_residual_threat(trajectory, dt: float) -> float:
    """Left-endpoint sum of (1 - prod(1 - rt)) * dt over a report sequence."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    total = 0.0
    for report in trajectory:
        total += 1.0 - float(np.prod(1.0 - np.asarray(report.rt)))
    return total * dt


def params_dict(params: ThreatParams, band: LocalBand) -> dict:
    return {**asdict(params), "m": band.m, "d": band.d}
