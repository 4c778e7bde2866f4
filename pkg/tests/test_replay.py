import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from demaddpg.numkit import seeded_rng
from demaddpg.replay import PRIORITIZED, UNIFORM, ReplayBuffer, SumTree, Transition


def tr(tag: float, n=2, obs_dim=3):
    return Transition(np.full((n, obs_dim), tag), np.full((n, 2), tag), tag, np.full(n, tag),
                      np.full((n, obs_dim), tag + 0.5), False)


def filled(mode, k, capacity=100, **kw):
    buf = ReplayBuffer(capacity, mode, **kw)
    for i in range(k):
        buf.push(tr(float(i)))
    return buf


def frequencies(buf, draws, seed=0):
    # batches can be no larger than the buffer, so draw in chunks of its size
    rng = seeded_rng(seed, "freq")
    batch = buf.size
    counts = np.zeros(buf.size)
    for _ in range(-(-draws // batch)):
        counts += np.bincount(buf.sample(batch, rng).indices, minlength=buf.size)
    return counts / counts.sum()


def test_first_push_priority_is_one():
    buf = filled(PRIORITIZED, 1)
    assert buf.priorities[0] == 1.0


def test_ring_overwrite_capacity_two():
    buf = filled(UNIFORM, 3, capacity=2)
    assert len(buf) == 2
    assert sorted(buf.get(i).r_global for i in range(2)) == [1.0, 2.0]


def test_size_saturates_at_capacity():
    buf = filled(UNIFORM, 50, capacity=16)
    assert len(buf) == 16
    assert [buf.get(i).r_global for i in buf.oldest_first()] == list(map(float, range(34, 50)))


def test_shape_mismatch_rejected():
    buf = filled(UNIFORM, 1)
    with pytest.raises(ValueError):
        buf.push(tr(0.0, n=3))


def test_refuses_small_sample():
    buf = filled(UNIFORM, 3)
    with pytest.raises(ValueError):
        buf.sample(4, seeded_rng(0, "r"))


def test_uniform_weights_are_one():
    b = filled(UNIFORM, 10).sample(8, seeded_rng(0, "r"))
    np.testing.assert_array_equal(b.weights, 1.0)
    assert b.obs.shape == (8, 2, 3) and b.states.shape == (8, 6)


def test_equal_priorities_give_uniform():
    buf = filled(PRIORITIZED, 4)
    f = frequencies(buf, 100_000)
    np.testing.assert_allclose(f, 0.25, atol=0.01)


def test_alpha_zero_is_uniform():
    buf = filled(PRIORITIZED, 2, per_alpha=0.0)
    buf.update_priorities([0, 1], [1.0, 9.0])
    np.testing.assert_allclose(frequencies(buf, 100_000), 0.5, atol=0.01)


def test_proportional_alpha_one():
    buf = filled(PRIORITIZED, 2, per_alpha=1.0, per_epsilon=0.0)
    buf.update_priorities([0, 1], [1.0, 3.0])
    np.testing.assert_allclose(frequencies(buf, 100_000), [0.25, 0.75], atol=0.01)


def test_chi_square_proportionality():
    pr = np.array([0.5, 1.0, 2.0, 4.0, 0.1])
    buf = filled(PRIORITIZED, 5, per_epsilon=0.0)
    buf.update_priorities(np.arange(5), pr)
    draws = 200_000
    f = frequencies(buf, draws, seed=3)
    expected = pr ** 0.6 / np.sum(pr ** 0.6)
    n = -(-draws // 5) * 5
    chi2 = float(np.sum(n * (f - expected) ** 2 / expected))
    assert chi2 < 18.47   # chi-square critical value, 4 dof, p = 1e-3


def test_update_priorities_examples():
    buf = filled(PRIORITIZED, 3)
    buf.update_priorities([0, 1], [0.0, -2.0])
    assert buf.priorities[0] == 1e-6
    assert buf.priorities[1] == 2.0 + 1e-6
    assert buf.priorities[2] == 1.0
    with pytest.raises(ValueError):
        filled(UNIFORM, 2).update_priorities([0], [1.0])


def test_new_entries_take_running_max():
    buf = filled(PRIORITIZED, 2)
    buf.update_priorities([0], [5.0])
    buf.push(tr(9.0))
    assert buf.priorities[2] == buf.max_priority == 5.0 + 1e-6


def test_beta_schedule():
    buf = filled(PRIORITIZED, 2)
    assert buf.beta_at() == 0.4
    buf.sample_count = 5000
    assert buf.beta_at() == pytest.approx(0.7, abs=1e-15)
    buf.sample_count = 10_000
    assert buf.beta_at() == 1.0
    buf.sample_count = 20_000
    assert buf.beta_at() == 1.0
    with pytest.raises(ValueError):
        filled(UNIFORM, 1).beta_at()


def test_weights_match_oracle():
    pr = np.array([1.0, 2.0, 3.0])
    buf = filled(PRIORITIZED, 3, per_epsilon=0.0)
    buf.update_priorities([0, 1, 2], pr)
    batch = buf.sample(3, seeded_rng(0, "w"))
    P = pr ** 0.6 / np.sum(pr ** 0.6)
    w = (3 * P) ** -0.4
    w /= w.max()
    np.testing.assert_allclose(batch.weights, w[batch.indices], rtol=1e-12)
    assert buf.sample_count == 1


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(1e-3, 100.0), min_size=2, max_size=20), st.integers(0, 20_000))
def test_weights_in_unit_interval(pr, count):
    buf = filled(PRIORITIZED, len(pr))
    buf.update_priorities(np.arange(len(pr)), pr)
    buf.sample_count = count
    w = buf.sample(len(pr), seeded_rng(count, "w")).weights
    assert np.all(w > 0) and np.all(w <= 1.0 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 30_000), st.integers(0, 30_000))
def test_beta_monotone(a, b):
    buf = filled(PRIORITIZED, 1)
    buf.sample_count = min(a, b)
    lo = buf.beta_at()
    buf.sample_count = max(a, b)
    assert buf.beta_at() >= lo


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(0, 40))
def test_fifo_order_under_wraparound(capacity, pushes):
    buf = filled(UNIFORM, pushes, capacity=capacity)
    ages = [buf.get(i).r_global for i in buf.oldest_first()]
    assert ages == list(map(float, range(max(0, pushes - capacity), pushes)))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=33))
def test_sum_tree_total(values):
    t = SumTree(len(values))
    t.update(np.arange(len(values)), values)
    assert t.total == pytest.approx(sum(values), rel=1e-12, abs=1e-12)
