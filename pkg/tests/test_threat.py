import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from demaddpg import env, threat
from demaddpg.env import ScenarioKind, WorldConfig
from demaddpg.numkit import seeded_rng
from demaddpg.threat import LocalBand, ThreatParams

P = ThreatParams()


def world(n_bystanders=1, n_defenders=1, seed=0):
    w = env.scenario_init(ScenarioKind.RANDOM_LANDMARKS,
                          WorldConfig(n_defenders=n_defenders, n_bystanders=n_bystanders),
                          seeded_rng(seed, "env"))
    w.pos[:] = 0.0
    w.pos[w.defender_slice] = [0.9, 0.9]   # parked far from anything
    return w


def oracle_point_segment(a, b, p):
    # parametric closest point, written out independently of the library
    ax, ay = a
    bx, by = b
    px, py = p
    dx, dy = bx - ax, by - ay
    L2 = dx * dx + dy * dy
    t = 0.0 if L2 == 0 else max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / L2))
    cx, cy = ax + t * dx, ay + t * dy
    return math.hypot(px - cx, py - cy)


def test_params_validation():
    for field in ("A", "B", "safe_dist", "block_radius"):
        with pytest.raises(ValueError):
            ThreatParams(**{field: 0.0})
    with pytest.raises(ValueError):
        LocalBand(0.6, 0.25)


def test_line_of_sight_examples():
    w = world()
    b = w.bystander_slice.start
    w.pos[b] = [0.4, 0.0]
    assert threat.line_of_sight(w, b, 0, 0.05) == 1
    w.pos[1] = [0.2, 0.0]
    assert threat.line_of_sight(w, b, 0, 0.05) == 0
    w.pos[1] = [0.2, 0.1]
    assert threat.line_of_sight(w, b, 0, 0.05) == 1
    with pytest.raises(ValueError):
        threat.line_of_sight(w, b, b, 0.05)


def test_threat_level_examples():
    assert threat.threat_level(0.0, P) == 1.0
    assert threat.threat_level(0.8, P) == 0.0
    assert threat.threat_level(5.0, P) == 0.0
    p = ThreatParams(A=1.0, B=2.0, safe_dist=2.0)
    assert threat.threat_level(1.0, p) == pytest.approx(0.606531, abs=1e-6)
    with pytest.raises(ValueError):
        threat.threat_level(-0.1, P)


def test_threat_level_strictly_decreasing():
    d = np.linspace(0, 0.8, 200, endpoint=False)
    tl = np.array([threat.threat_level(x, P) for x in d])
    assert np.all(np.diff(tl) < 0)
    assert tl[-1] > 0.04  # close to exp(-3) just below the cutoff


def test_residual_threat_examples():
    w = world()
    b = w.bystander_slice.start
    w.pos[b] = [0.3, 0.0]
    assert threat.residual_threat(w, b, P) == threat.threat_level(0.3, P)
    w.pos[1] = [0.15, 0.0]
    assert threat.residual_threat(w, b, P) == 0.0
    w.pos[1] = [0.9, 0.9]
    w.pos[b] = [0.85, 0.0]
    assert threat.residual_threat(w, b, P) == 0.0
    with pytest.raises(IndexError):
        threat.residual_threat(w, 1, P)


def test_global_reward_examples():
    w = world(n_bystanders=2)
    b0, b1 = w.bystander_slice.start, w.bystander_slice.start + 1
    w.pos[b0] = [0.0, 0.9]
    w.pos[b1] = [0.0, -0.9]
    assert threat.global_reward(w, P)[0] == 0.0
    w.pos[b0] = [0.0, 0.0]
    assert threat.global_reward(w, P)[0] == -1.0
    # two bystanders with rt = 0.5: dist = B ln 2
    half = P.B * math.log(2.0)
    w.pos[b0] = [half, 0.0]
    w.pos[b1] = [-half, 0.0]
    r, rep = threat.global_reward(w, P)
    np.testing.assert_allclose(rep.rt, [0.5, 0.5])
    assert r == pytest.approx(-0.75, abs=1e-12)


def test_local_reward_examples():
    w = world()
    for dist, expected in [(0.4, 0.0), (0.1, -1.0), (0.25, 0.0), (0.6, 0.0), (0.61, -1.0)]:
        w.pos[1] = [dist, 0.0]
        assert threat.local_reward(w, 0, 0.25, 0.6) == expected
    with pytest.raises(ValueError):
        threat.local_reward(w, 0, 0.6, 0.6)


def test_entangled_reward_examples():
    assert threat.entangled_reward(-0.3, -1.0, 1.0) == -0.3
    assert threat.entangled_reward(-0.3, -1.0, 0.0) == -1.0
    assert threat.entangled_reward(-0.75, -1.0, 0.5) == -0.875
    with pytest.raises(ValueError):
        threat.entangled_reward(0, 0, 1.5)


def test_crt_examples():
    assert threat.cumulative_residual_threat([], 0.1) == 0.0
    zero = threat.ThreatReport(np.array([5]), np.array([1.0]), np.array([0.0]), np.array([False]), np.array([0.0]))
    assert threat.cumulative_residual_threat([zero] * 25, 0.1) == 0.0
    const = threat.ThreatReport(np.array([5]), np.array([0.1]), np.array([0.2]), np.array([False]),
                                np.array([0.2]), -0.2)
    assert threat.cumulative_residual_threat([const] * 25, 0.1) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ValueError):
        threat.cumulative_residual_threat([], 0.0)


def test_report_json_round_trip():
    w = world(n_bystanders=3, seed=4)
    w.pos[w.bystander_slice] = [[0.1, 0.0], [0.5, 0.5], [0.0, 0.3]]
    rep = threat.threat_report(w, P)
    data = json.loads(rep.to_json())
    assert data["r_global"] == pytest.approx(rep.r_global)
    assert [b["id"] for b in data["bystanders"]] == list(rep.bystander_ids)


points = st.tuples(st.floats(-1, 1), st.floats(-1, 1))


@settings(max_examples=200, deadline=None)
@given(points, points, points)
def test_segment_distance_matches_oracle(a, b, p):
    got = float(threat.segment_point_distance(np.array(a), np.array(b), np.array(p)))
    assert got == pytest.approx(oracle_point_segment(a, b, p), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_vectorised_report_matches_scalar_path(seed):
    rng = np.random.default_rng(seed)
    w = world(n_bystanders=6, n_defenders=4, seed=seed % 7)
    w.pos[: 1 + 4 + 6] = rng.uniform(-0.6, 0.6, size=(11, 2))
    rep = threat.threat_report(w, P)
    scalar = [threat.residual_threat(w, b, P) for b in w.bystander_ids()]
    np.testing.assert_array_equal(rep.rt, scalar)
    assert np.all(rep.rt <= rep.tl)
    assert -1.0 <= rep.r_global <= 0.0
