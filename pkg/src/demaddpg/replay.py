"""Ring-buffer transition storage with uniform and proportional prioritized sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UNIFORM = "uniform"
PRIORITIZED = "prioritized"


@dataclass
class Transition:
    obs: np.ndarray            # (N, obs_dim); the global state is obs.reshape(-1)
    actions: np.ndarray        # (N, action_dim)
    r_global: float
    r_local: np.ndarray        # (N,)
    next_obs: np.ndarray       # (N, obs_dim)
    done: bool
    scenario: int = 0

    @property
    def state(self) -> np.ndarray:
        return np.asarray(self.obs).reshape(-1)

    @property
    def next_state(self) -> np.ndarray:
        return np.asarray(self.next_obs).reshape(-1)


@dataclass
class SampleBatch:
    indices: np.ndarray
    weights: np.ndarray
    obs: np.ndarray            # (S, N, obs_dim)
    actions: np.ndarray        # (S, N, action_dim)
    r_global: np.ndarray       # (S,)
    r_local: np.ndarray        # (S, N)
    next_obs: np.ndarray
    done: np.ndarray           # (S,) float 0/1
    scenario: np.ndarray       # (S,) int

    def __len__(self) -> int:
        return int(self.indices.size)

    @property
    def states(self) -> np.ndarray:
        return self.obs.reshape(self.obs.shape[0], -1)

    @property
    def next_states(self) -> np.ndarray:
        return self.next_obs.reshape(self.next_obs.shape[0], -1)


class SumTree:
    """Array-backed binary sum tree over ``capacity`` leaves.

    Internal node ``i`` has children ``2i+1`` and ``2i+2``; leaves start at
    ``capacity - 1``. Capacity is rounded up to a power of two so all leaves
    sit on the same level.
    """

    def __init__(self, capacity: int):
        size = 1
        while size < capacity:
            size *= 2
        self.capacity = size
        self.tree = np.zeros(2 * size - 1)

    @property
    def total(self) -> float:
        return float(self.tree[0])

    @property
    def leaves(self) -> np.ndarray:
        return self.tree[self.capacity - 1:]

    def update(self, indices, values) -> None:
        idx = np.atleast_1d(np.asarray(indices, dtype=np.int64)) + self.capacity - 1
        self.tree[idx] = np.atleast_1d(values)
        if self.capacity == 1:
            return
        parents = np.unique((idx - 1) // 2)
        while True:
            self.tree[parents] = self.tree[2 * parents + 1] + self.tree[2 * parents + 2]
            if parents[0] == 0:
                break
            parents = np.unique((parents - 1) // 2)

    def find(self, values: np.ndarray) -> np.ndarray:
        """Leaf index whose cumulative-sum interval contains each value."""
        v = np.array(values, dtype=np.float64)
        node = np.zeros(v.size, dtype=np.int64)
        while True:
            left = 2 * node + 1
            if left[0] >= self.tree.size:
                break
            left_sum = self.tree[left]
            go_right = v >= left_sum
            # never descend into an empty subtree due to rounding at the top end
            go_right &= self.tree[left + 1] > 0.0
            v = np.where(go_right, v - left_sum, v)
            node = np.where(go_right, left + 1, left)
        return node - (self.capacity - 1)


class ReplayBuffer:
    def __init__(self, capacity: int = 1_000_000, mode: str = UNIFORM, per_alpha: float = 0.6,
                 per_beta0: float = 0.4, per_epsilon: float = 1e-6, beta_decay_steps: int = 10_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if mode not in (UNIFORM, PRIORITIZED):
            raise ValueError(f"unknown replay mode {mode!r}")
        self.capacity = capacity
        self.mode = mode
        self.per_alpha = per_alpha
        self.per_beta0 = per_beta0
        self.per_epsilon = per_epsilon
        self.beta_decay_steps = beta_decay_steps
        self.sample_count = 0
        self.size = 0
        self.next_idx = 0
        self.max_priority = 1.0
        self._store: dict[str, np.ndarray] | None = None
        self._allocated = 0
        if mode == PRIORITIZED:
            self.tree = SumTree(capacity)
            self.priorities = np.zeros(capacity)

    def __len__(self) -> int:
        return self.size

    @property
    def prioritized(self) -> bool:
        return self.mode == PRIORITIZED

    # storage grows by doubling so a 10^6-slot buffer only costs what it holds
    def _ensure(self, t: Transition) -> None:
        shapes = {
            "obs": np.shape(t.obs), "actions": np.shape(t.actions), "r_global": (),
            "r_local": np.shape(t.r_local), "next_obs": np.shape(t.next_obs),
            "done": (), "scenario": (),
        }
        if self._store is None:
            self._shapes = shapes
            self._allocated = min(self.capacity, 1024)
            self._store = {
                k: np.zeros((self._allocated, *s), dtype=np.int64 if k == "scenario" else np.float64)
                for k, s in shapes.items()
            }
        elif shapes != self._shapes:
            raise ValueError(f"transition shapes {shapes} differ from buffer layout {self._shapes}")
        if self.next_idx >= self._allocated:
            new = min(self.capacity, 2 * self._allocated)
            for k, arr in self._store.items():
                grown = np.zeros((new, *arr.shape[1:]), dtype=arr.dtype)
                grown[:self._allocated] = arr
                self._store[k] = grown
            self._allocated = new

    def push(self, t: Transition) -> int:
        self._ensure(t)
        i = self.next_idx
        s = self._store
        s["obs"][i] = t.obs
        s["actions"][i] = t.actions
        s["r_global"][i] = t.r_global
        s["r_local"][i] = t.r_local
        s["next_obs"][i] = t.next_obs
        s["done"][i] = float(t.done)
        s["scenario"][i] = t.scenario
        if self.prioritized:
            self._set_priority(np.array([i]), np.array([self.max_priority]))
        self.next_idx = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return i

    def get(self, i: int) -> Transition:
        if not 0 <= i < self.size:
            raise IndexError(i)
        s = self._store
        return Transition(s["obs"][i].copy(), s["actions"][i].copy(), float(s["r_global"][i]),
                          s["r_local"][i].copy(), s["next_obs"][i].copy(), bool(s["done"][i]),
                          int(s["scenario"][i]))

    def oldest_first(self) -> list[int]:
        """Slot indices ordered from oldest to newest entry."""
        start = self.next_idx if self.size == self.capacity else 0
        return [(start + k) % self.capacity for k in range(self.size)]

    def _set_priority(self, idx: np.ndarray, p: np.ndarray) -> None:
        self.priorities[idx] = p
        self.tree.update(idx, p ** self.per_alpha)

    def beta_at(self) -> float:
        if not self.prioritized:
            raise ValueError("beta schedule only applies to a prioritized buffer")
        frac = self.sample_count / self.beta_decay_steps
        return min(1.0, self.per_beta0 + (1.0 - self.per_beta0) * frac)

    def _gather(self, idx: np.ndarray, weights: np.ndarray) -> SampleBatch:
        s = self._store
        return SampleBatch(idx, weights, s["obs"][idx], s["actions"][idx], s["r_global"][idx],
                           s["r_local"][idx], s["next_obs"][idx], s["done"][idx], s["scenario"][idx])

    def sample_uniform(self, batch_size: int, rng: np.random.Generator) -> SampleBatch:
        """I.i.d. uniform draw with unit weights, regardless of mode."""
        self._check_size(batch_size)
        idx = rng.integers(0, self.size, size=batch_size)
        return self._gather(idx, np.ones(batch_size))

    def sample(self, batch_size: int, rng: np.random.Generator) -> SampleBatch:
        self._check_size(batch_size)
        if not self.prioritized:
            return self.sample_uniform(batch_size, rng)
        beta = self.beta_at()
        total = self.tree.total
        idx = self.tree.find(rng.random(batch_size) * total)
        idx = np.minimum(idx, self.size - 1)
        probs = self.tree.leaves[idx] / total
        # normalise by the largest possible weight, i.e. the least likely entry
        p_min = float(np.min(self.tree.leaves[:self.size])) / total
        weights = (self.size * probs) ** (-beta) / (self.size * p_min) ** (-beta)
        self.sample_count += 1
        return self._gather(idx, weights)

    def update_priorities(self, indices, td_errors) -> None:
        if not self.prioritized:
            raise ValueError("update_priorities requires a prioritized buffer")
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.size):
            raise IndexError("priority update for an empty slot")
        p = np.abs(np.asarray(td_errors, dtype=np.float64)) + self.per_epsilon
        # duplicate indices in a batch: the last occurrence wins, as with sequential writes
        _, last = np.unique(idx[::-1], return_index=True)
        keep = idx.size - 1 - last
        self._set_priority(idx[keep], p[keep])
        self.max_priority = max(self.max_priority, float(p.max(initial=0.0)))

    def _check_size(self, batch_size: int) -> None:
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} transitions, cannot sample {batch_size}")
