"""DDPG / MADDPG baselines and the decomposed dual-critic learner.

Critic input layouts (``goal`` is the scenario one-hot, present only in
UVFA mode):

* local critic:    [o_i, a_i, goal]
* central critic:  [s, a_1, ..., a_N, goal]   with s = concat(o_1..o_N)

The decomposed learner stores r_g and every r_l^i separately and never
mixes them; only the baselines see ``alpha_entangled``.
"""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import env as envmod
from .env import ScenarioKind, WorldConfig
from .numkit import (
    UNIFORM_SMALL,
    AdamState,
    MlpSpec,
    NonFiniteError,
    ParamStore,
    ShapeError,
    adam_step,
    mlp_backward,
    mlp_init,
    mlp_trace,
    seeded_rng,
    soft_update,
)
from .replay import PRIORITIZED, UNIFORM, ReplayBuffer, SampleBatch, Transition
from .threat import LocalBand, ThreatParams, cumulative_residual_threat, entangled_reward, global_reward, local_rewards

DDPG = "DDPG"
MADDPG = "MADDPG"
DE_MADDPG = "DE_MADDPG"
FAMILIES = (DDPG, MADDPG, DE_MADDPG)
N_SCENARIOS = len(ScenarioKind)
ACTION_DIM = 2


@dataclass(frozen=True)
class AlgoVariant:
    family: str = DE_MADDPG
    use_td3_global: bool = False
    use_per: bool = False
    uvfa: bool = False
    alpha_entangled: float = 0.5

    def __post_init__(self):
        fam = str(self.family).upper().replace("-", "_")
        if fam not in FAMILIES:
            raise ValueError(f"unknown algorithm family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "family", fam)
        if not 0.0 <= self.alpha_entangled <= 1.0:
            raise ValueError("alpha_entangled must lie in [0, 1]")

    @property
    def decomposed(self) -> bool:
        return self.family == DE_MADDPG

    @property
    def name(self) -> str:
        base = "DE-MADDPG" if self.decomposed else self.family
        if self.uvfa:
            base = {"DE-MADDPG": "DE-MAUPG", MADDPG: "MAUPG", DDPG: "UVFA-DDPG"}[base]
        tags = []
        if self.decomposed and self.use_td3_global:
            tags.append("TD3")
        if self.decomposed and self.use_per:
            tags.append("PER")
        return f"{base}({'+'.join(tags)})" if tags else base

    @classmethod
    def from_name(cls, name: str, **kw) -> "AlgoVariant":
        """Parse names such as ``DE-MADDPG(TD3+PER)``, ``MADDPG`` or ``DE-MAUPG(TD3)``."""
        text = name.strip().upper().replace(" ", "")
        tags = set()
        if "(" in text:
            text, _, rest = text.partition("(")
            tags = {t for t in rest.rstrip(")").split("+") if t}
            if not tags <= {"TD3", "PER"}:
                raise ValueError(f"unknown variant tags in {name!r}")
        text = text.replace("_", "-")
        table = {
            "DE-MADDPG": (DE_MADDPG, False), "DEMADDPG": (DE_MADDPG, False),
            "DE-MAUPG": (DE_MADDPG, True), "MADDPG": (MADDPG, False), "MAUPG": (MADDPG, True),
            "DDPG": (DDPG, False),
        }
        if text not in table:
            raise ValueError(f"unknown variant {name!r}")
        family, uvfa = table[text]
        return cls(family=family, use_td3_global="TD3" in tags, use_per="PER" in tags,
                   uvfa=uvfa or kw.pop("uvfa", False), **kw)


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.95
    tau: float = 0.01
    policy_delay: int = 2
    steps_per_train_global: int = 4
    steps_per_train_local: int = 2
    batch_size: int = 2048
    buffer_capacity: int = 1_000_000
    critic_lr: float = 1e-3
    policy_lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    noise_start: float = 0.1
    noise_end: float = 0.02
    noise_decay_fraction: float = 0.5
    smoothing_sigma: float = 0.2
    smoothing_clip: float = 0.5
    per_alpha: float = 0.6
    per_beta0: float = 0.4
    per_epsilon: float = 1e-6
    per_beta_decay: int = 10_000
    hidden_dims: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be >= 1")
        if self.batch_size < 1 or self.buffer_capacity < 1:
            raise ValueError("batch_size and buffer_capacity must be >= 1")
        if self.steps_per_train_global < 1 or self.steps_per_train_local < 1:
            raise ValueError("steps_per_train_* must be >= 1")

    def noise_sigma(self, episode: int, episodes: int) -> float:
        """Exploration sigma for a 0-based episode: linear decay, then flat."""
        horizon = max(1.0, self.noise_decay_fraction * episodes)
        frac = min(1.0, episode / horizon)
        return self.noise_start + (self.noise_end - self.noise_start) * frac

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


# --- scenario conditioning -----------------------------------------------------

def scenario_goal(kind) -> np.ndarray:
    goal = np.zeros(N_SCENARIOS)
    goal[int(ScenarioKind.parse(kind))] = 1.0
    return goal


def uvfa_augment(x, goal) -> np.ndarray:
    """Append the scenario one-hot to one input vector or to each batch row."""
    x = np.asarray(x, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    if goal.shape[-1] != N_SCENARIOS:
        raise ShapeError(f"scenario goal must have {N_SCENARIOS} entries")
    if x.ndim == 1:
        return np.concatenate([x, goal])
    if goal.ndim == 1:
        goal = np.broadcast_to(goal, (x.shape[0], N_SCENARIOS))
    return np.concatenate([x, goal], axis=1)


def local_input(obs_i: np.ndarray, act_i: np.ndarray, goal=None) -> np.ndarray:
    x = np.concatenate([obs_i, act_i], axis=-1)
    return x if goal is None else uvfa_augment(x, goal)


def central_input(states: np.ndarray, actions: np.ndarray, goal=None) -> np.ndarray:
    """states (S, state_dim), actions (S, N, A) -> (S, state_dim + N*A [+4])."""
    x = np.concatenate([states, actions.reshape(actions.shape[0], -1)], axis=1)
    return x if goal is None else uvfa_augment(x, goal)


def _goals(batch: SampleBatch, uvfa: bool):
    if not uvfa:
        return None
    return np.eye(N_SCENARIOS)[batch.scenario]


# --- networks ------------------------------------------------------------------

@dataclass
class AgentNets:
    """Policy and per-agent critic of one defender, with targets and optimizers.

    ``critic_kind`` is ``"local"`` for DDPG and the decomposed learner and
    ``"central"`` for MADDPG's per-agent centralized critic.
    """

    policy: ParamStore
    policy_target: ParamStore
    critic: ParamStore
    critic_target: ParamStore
    policy_opt: AdamState
    critic_opt: AdamState
    critic_kind: str = "local"


@dataclass
class GlobalCritics:
    mains: list[ParamStore]
    targets: list[ParamStore]
    opts: list[AdamState]

    @property
    def twin(self) -> bool:
        return len(self.mains) == 2


def policy_spec(obs_dim: int, hidden=(64, 64)) -> MlpSpec:
    return MlpSpec(obs_dim, ACTION_DIM, hidden, output_activation="tanh")


def local_critic_spec(obs_dim: int, uvfa: bool = False, hidden=(64, 64)) -> MlpSpec:
    return MlpSpec(obs_dim + ACTION_DIM + (N_SCENARIOS if uvfa else 0), 1, hidden)


def central_critic_spec(n_agents: int, obs_dim: int, uvfa: bool = False, hidden=(64, 64)) -> MlpSpec:
    return MlpSpec(n_agents * (obs_dim + ACTION_DIM) + (N_SCENARIOS if uvfa else 0), 1, hidden)


def _critic_pair(spec: MlpSpec, seed: int, *stream) -> tuple[ParamStore, ParamStore]:
    # target critics share the main hidden layers but get a small uniform output layer
    main = mlp_init(spec, seeded_rng(seed, "init", *stream))
    target = main.copy()
    small = mlp_init(spec, seeded_rng(seed, "init", *stream, "target"), UNIFORM_SMALL)
    w, b = target.layers[-1]
    w[...], b[...] = small.layers[-1]
    return main, target


def build_agents(variant: AlgoVariant, n_agents: int, obs_dim: int, cfg: TrainConfig,
                 seed: int) -> list[AgentNets]:
    agents = []
    for i in range(n_agents):
        pol = mlp_init(policy_spec(obs_dim, cfg.hidden_dims), seeded_rng(seed, "init", "policy", i))
        if variant.family == MADDPG:
            spec = central_critic_spec(n_agents, obs_dim, variant.uvfa, cfg.hidden_dims)
            kind = "central"
        else:
            spec = local_critic_spec(obs_dim, variant.uvfa, cfg.hidden_dims)
            kind = "local"
        critic, critic_t = _critic_pair(spec, seed, "critic", i)
        agents.append(AgentNets(
            policy=pol, policy_target=pol.copy(), critic=critic, critic_target=critic_t,
            policy_opt=_adam(pol, cfg.policy_lr, cfg), critic_opt=_adam(critic, cfg.critic_lr, cfg),
            critic_kind=kind,
        ))
    return agents


def build_global_critics(variant: AlgoVariant, n_agents: int, obs_dim: int, cfg: TrainConfig,
                         seed: int) -> GlobalCritics:
    spec = central_critic_spec(n_agents, obs_dim, variant.uvfa, cfg.hidden_dims)
    mains, targets = [], []
    for k in range(2 if variant.use_td3_global else 1):
        m, t = _critic_pair(spec, seed, "global", k)
        mains.append(m)
        targets.append(t)
    return GlobalCritics(mains, targets, [_adam(m, cfg.critic_lr, cfg) for m in mains])


def _adam(params: ParamStore, lr: float, cfg: TrainConfig) -> AdamState:
    return AdamState.for_params(params, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon)


# --- acting --------------------------------------------------------------------

def select_action(agent: AgentNets, obs, noise_sigma: float, rng: np.random.Generator) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape != (agent.policy.spec.input_dim,):
        raise ShapeError(f"observation shape {obs.shape} does not match policy input "
                         f"{agent.policy.spec.input_dim}")
    a = agent.policy.forward(obs)
    if noise_sigma > 0:
        a = a + rng.normal(0.0, noise_sigma, size=a.shape)
    return np.clip(a, -1.0, 1.0)


def _target_actions(target_policies: list[ParamStore], next_obs: np.ndarray) -> np.ndarray:
    return np.stack([p.forward(next_obs[:, j]) for j, p in enumerate(target_policies)], axis=1)


# --- critic targets and updates --------------------------------------------------

def global_target(critics: GlobalCritics, batch: SampleBatch, target_policies: list[ParamStore],
                  cfg: TrainConfig, rng: np.random.Generator | None = None,
                  smoothing: bool | None = None, uvfa: bool = False) -> np.ndarray:
    """y_g = r_g + gamma * (1 - done) * min_k Q'_k(s', a'), a' from target policies.

    Target-policy smoothing noise is applied when the twin critics are in use
    (or when ``smoothing`` forces it); with ``smoothing_sigma == 0`` no draws occur.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    smoothing = critics.twin if smoothing is None else smoothing
    next_a = _target_actions(target_policies, batch.next_obs)
    if smoothing and cfg.smoothing_sigma > 0:
        if rng is None:
            raise ValueError("target smoothing needs an rng")
        eps = np.clip(rng.normal(0.0, cfg.smoothing_sigma, size=next_a.shape),
                      -cfg.smoothing_clip, cfg.smoothing_clip)
        next_a = np.clip(next_a + eps, -1.0, 1.0)
    x = central_input(batch.next_states, next_a, _goals(batch, uvfa))
    q = np.min(np.stack([t.forward(x)[:, 0] for t in critics.targets]), axis=0)
    return batch.r_global + cfg.gamma * (1.0 - batch.done) * q


def _regress(params: ParamStore, opt: AdamState, x: np.ndarray, y: np.ndarray,
             weights: np.ndarray | None = None) -> np.ndarray:
    # one Adam step on mean(w * (y - Q(x))^2); returns the pre-update TD errors
    acts = mlp_trace(params, x)
    td = y - acts[-1][:, 0]
    w = np.ones_like(td) if weights is None else weights
    loss = float(np.mean(w * td * td))
    if not np.isfinite(loss):
        raise NonFiniteError(f"non-finite critic loss {loss}")
    out_grad = (-2.0 / td.size) * (w * td)
    grads = mlp_backward(params, x, out_grad[:, None], activations=acts).param_grads
    adam_step(opt, params, grads)
    return td


def update_global_critics(critics: GlobalCritics, batch: SampleBatch, y_g: np.ndarray,
                          per_weights: np.ndarray | None = None, uvfa: bool = False) -> np.ndarray:
    """Descend each global critic on the (weighted) squared TD error; TD errors of the first."""
    y_g = np.asarray(y_g, dtype=np.float64)
    if y_g.shape != (len(batch),):
        raise ShapeError("targets are not aligned with the batch")
    x = central_input(batch.states, batch.actions, _goals(batch, uvfa))
    tds = [_regress(m, opt, x, y_g, per_weights) for m, opt in zip(critics.mains, critics.opts)]
    return tds[0]


def _agent_rewards(variant: AlgoVariant, batch: SampleBatch, i: int) -> np.ndarray:
    if variant.decomposed:
        return batch.r_local[:, i]
    return entangled_reward(batch.r_global, batch.r_local[:, i], variant.alpha_entangled)


def _agent_critic_input(agent: AgentNets, batch_obs: np.ndarray, actions: np.ndarray, i: int, goal):
    if agent.critic_kind == "central":
        return central_input(batch_obs.reshape(batch_obs.shape[0], -1), actions, goal)
    return local_input(batch_obs[:, i], actions[:, i], goal)


def local_target(agents: list[AgentNets], i: int, batch: SampleBatch, cfg: TrainConfig,
                 variant: AlgoVariant | None = None) -> np.ndarray:
    """Per-agent critic target r + gamma * (1 - done) * Q'_i(., a') without smoothing.

    For the decomposed learner r is r_l^i; for the baselines it is the
    entangled reward and a central critic sees every agent's target action.
    """
    variant = variant or AlgoVariant()
    if len(batch) == 0:
        raise ValueError("empty batch")
    agent = agents[i]
    goal = _goals(batch, variant.uvfa)
    if agent.critic_kind == "central":
        next_a = _target_actions([a.policy_target for a in agents], batch.next_obs)
    else:
        next_a = np.zeros(batch.actions.shape)
        next_a[:, i] = agent.policy_target.forward(batch.next_obs[:, i])
    q = agent.critic_target.forward(_agent_critic_input(agent, batch.next_obs, next_a, i, goal))[:, 0]
    return _agent_rewards(variant, batch, i) + cfg.gamma * (1.0 - batch.done) * q


def update_local_critic(agent: AgentNets, i: int, batch: SampleBatch, y_l: np.ndarray,
                        uvfa: bool = False) -> np.ndarray:
    y_l = np.asarray(y_l, dtype=np.float64)
    if y_l.shape != (len(batch),):
        raise ShapeError("targets are not aligned with the batch")
    x = _agent_critic_input(agent, batch.obs, batch.actions, i, _goals(batch, uvfa))
    return _regress(agent.critic, agent.critic_opt, x, y_l)


# --- policy update ---------------------------------------------------------------

def _action_grad(critic, x: np.ndarray, start: int) -> np.ndarray:
    # dQ/da_i averaged over the batch (each row's output grad is 1/S)
    s = x.shape[0]
    g = critic.backward(x, np.full((s, 1), 1.0 / s)).input_grads
    return g[:, start:start + ACTION_DIM]


def policy_action_gradient(i: int, agents: list[AgentNets], batch: SampleBatch,
                           global_critic=None, use_global: bool = True, use_local: bool = True,
                           uvfa: bool = False, actions: np.ndarray | None = None) -> np.ndarray:
    """dJ/da_i for every batch row, with a_i recomputed from the current policy.

    ``global_critic`` (the first global critic) enables the team term of the
    decomposed gradient; the agent's own critic supplies the other term. For
    the baselines the agent critic is the single entangled critic.
    """
    agent = agents[i]
    obs_i = batch.obs[:, i]
    a_i = agent.policy.forward(obs_i) if actions is None else actions
    joint = batch.actions.copy()
    joint[:, i] = a_i
    goal = _goals(batch, uvfa)
    n, obs_dim = batch.obs.shape[1], batch.obs.shape[2]
    grad = np.zeros_like(a_i)
    if global_critic is not None and use_global:
        x = central_input(batch.states, joint, goal)
        grad += _action_grad(global_critic, x, n * obs_dim + i * ACTION_DIM)
    if use_local:
        x = _agent_critic_input(agent, batch.obs, joint, i, goal)
        start = n * obs_dim + i * ACTION_DIM if agent.critic_kind == "central" else obs_dim
        grad += _action_grad(agent.critic, x, start)
    return grad


def update_policy(i: int, agents: list[AgentNets], batch: SampleBatch, global_critic=None,
                  use_global: bool = True, use_local: bool = True, uvfa: bool = False) -> np.ndarray:
    """One Adam ascent step on agent ``i``'s policy; returns the parameter gradient used."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    agent = agents[i]
    obs_i = batch.obs[:, i]
    acts = mlp_trace(agent.policy, obs_i)
    dq_da = policy_action_gradient(i, agents, batch, global_critic, use_global, use_local,
                                   uvfa, actions=acts[-1])
    grads = mlp_backward(agent.policy, obs_i, dq_da, activations=acts).param_grads
    adam_step(agent.policy_opt, agent.policy, grads, maximize=True)
    return grads


def update_all_targets(agents: list[AgentNets], critics: GlobalCritics | None, tau: float) -> None:
    for a in agents:
        soft_update(a.policy_target, a.policy, tau)
        soft_update(a.critic_target, a.critic, tau)
    if critics is not None:
        for t, m in zip(critics.targets, critics.mains):
            soft_update(t, m, tau)


# --- training loop -----------------------------------------------------------------

LOG_COLUMNS = ("episode", "cum_global_reward", "sum_local_reward", "crt", "wall_ms")


@dataclass
class EpisodeRecord:
    episode: int
    cum_global_reward: float
    sum_local_reward: float
    crt: float
    wall_ms: float
    steps: int = 0

    def row(self) -> list[str]:
        return [str(self.episode), f"{self.cum_global_reward:.9g}", f"{self.sum_local_reward:.9g}",
                f"{self.crt:.9g}", f"{self.wall_ms:.3f}"]


@dataclass
class TrainingLog:
    records: list[EpisodeRecord] = field(default_factory=list)
    agents: list[AgentNets] = field(default_factory=list)
    critics: GlobalCritics | None = None
    config: dict = field(default_factory=dict)
    transitions: int = 0
    policy_updates: int = 0

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


class TrainingError(RuntimeError):
    def __init__(self, message: str, record: dict):
        super().__init__(message)
        self.record = record


@dataclass
class _Run:
    variant: AlgoVariant
    cfg: TrainConfig
    agents: list[AgentNets]
    critics: GlobalCritics | None
    buffer: ReplayBuffer
    replay_rng: np.random.Generator
    smooth_rng: np.random.Generator

    def train_global(self) -> None:
        v, cfg = self.variant, self.cfg
        batch = self.buffer.sample(cfg.batch_size, self.replay_rng)
        y = global_target(self.critics, batch, [a.policy_target for a in self.agents], cfg,
                          self.smooth_rng, uvfa=v.uvfa)
        weights = batch.weights if self.buffer.prioritized else None
        td = update_global_critics(self.critics, batch, y, weights, uvfa=v.uvfa)
        if self.buffer.prioritized:
            self.buffer.update_priorities(batch.indices, td)

    def train_agent_critics(self) -> None:
        for i, agent in enumerate(self.agents):
            batch = self.buffer.sample_uniform(self.cfg.batch_size, self.replay_rng)
            y = local_target(self.agents, i, batch, self.cfg, self.variant)
            update_local_critic(agent, i, batch, y, uvfa=self.variant.uvfa)

    def train_policies(self) -> None:
        g = self.critics.mains[0] if self.critics is not None else None
        for i in range(len(self.agents)):
            batch = self.buffer.sample_uniform(self.cfg.batch_size, self.replay_rng)
            update_policy(i, self.agents, batch, g, uvfa=self.variant.uvfa)
        update_all_targets(self.agents, self.critics, self.cfg.tau)


def train(variant: AlgoVariant, scenarios, cfg: TrainConfig | None = None,
          world_cfg: WorldConfig | None = None, threat_cfg: ThreatParams | None = None,
          episodes: int = 1, seed: int = 0, band: LocalBand | None = None,
          csv_path=None, on_episode=None, record_transitions: list | None = None) -> TrainingLog:
    """Run one seeded training campaign and return its per-episode log.

    Scenarios rotate round-robin per episode in UVFA mode. ``on_episode`` is
    called as ``on_episode(record, log)`` after each episode (checkpoint hook);
    ``record_transitions`` collects every stored Transition when given.
    """
    cfg = cfg or TrainConfig()
    world_cfg = world_cfg or WorldConfig()
    threat_cfg = threat_cfg or ThreatParams()
    band = band or LocalBand()
    kinds = [ScenarioKind.parse(s) for s in scenarios]
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if not kinds:
        raise ValueError("at least one scenario is required")
    if not variant.uvfa and len(kinds) != 1:
        raise ValueError("multi-scenario training requires uvfa=True")

    n, obs_dim = world_cfg.n_defenders, world_cfg.obs_dim
    agents = build_agents(variant, n, obs_dim, cfg, seed)
    critics = build_global_critics(variant, n, obs_dim, cfg, seed) if variant.decomposed else None
    use_per = variant.decomposed and variant.use_per
    buffer = ReplayBuffer(cfg.buffer_capacity, PRIORITIZED if use_per else UNIFORM, cfg.per_alpha,
                          cfg.per_beta0, cfg.per_epsilon, cfg.per_beta_decay)
    run = _Run(variant, cfg, agents, critics, buffer, seeded_rng(seed, "replay"),
               seeded_rng(seed, "smoothing"))
    env_rng = seeded_rng(seed, "env")
    noise_rng = seeded_rng(seed, "noise")
    log = TrainingLog(agents=agents, critics=critics, config={
        "variant": asdict(variant), "variant_name": variant.name,
        "scenarios": [k.label for k in kinds], "train": asdict(cfg), "world": asdict(world_cfg),
        "threat": asdict(threat_cfg), "band": asdict(band), "episodes": episodes, "seed": seed,
    })

    writer = fh = None
    if csv_path is not None:
        fh = open(csv_path, "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        fh.flush()
    total_steps = 0
    try:
        for ep in range(episodes):
            t0 = time.perf_counter()
            kind = kinds[ep % len(kinds)]
            sigma = cfg.noise_sigma(ep, episodes)
            phase = "rollout"
            try:
                world = envmod.scenario_init(kind, world_cfg, env_rng)
                obs = envmod.observe_all(world)
                reports = []
                cum_g = cum_l = 0.0
                while not envmod.episode_done(world):
                    phase = "rollout"
                    actions = np.stack([select_action(a, obs[i], sigma, noise_rng)
                                        for i, a in enumerate(agents)])
                    envmod.step(world, actions)
                    next_obs = envmod.observe_all(world)
                    r_g, report = global_reward(world, threat_cfg)
                    r_l = local_rewards(world, band)
                    reports.append(report)
                    t = Transition(obs, actions, r_g, r_l, next_obs, envmod.episode_done(world), int(kind))
                    buffer.push(t)
                    if record_transitions is not None:
                        record_transitions.append(t)
                    cum_g += r_g
                    cum_l += float(r_l.sum())
                    obs = next_obs
                    total_steps += 1
                    enough = len(buffer) >= cfg.batch_size
                    if enough and critics is not None and total_steps % cfg.steps_per_train_global == 0:
                        phase = "global critic update"
                        run.train_global()
                    if enough and total_steps % cfg.steps_per_train_local == 0:
                        phase = "agent critic update"
                        run.train_agent_critics()
                if (ep + 1) % cfg.policy_delay == 0 and len(buffer) >= cfg.batch_size:
                    phase = "policy update"
                    run.train_policies()
                    log.policy_updates += 1
            except Exception as exc:
                raise TrainingError(f"training aborted in episode {ep + 1} during {phase}: {exc}", {
                    "episode": ep + 1, "phase": phase, "steps": total_steps,
                    "error": f"{type(exc).__name__}: {exc}",
                }) from exc
            rec = EpisodeRecord(ep + 1, cum_g, cum_l,
                                cumulative_residual_threat(reports, world_cfg.dt),
                                1000.0 * (time.perf_counter() - t0), len(reports))
            log.records.append(rec)
            if writer is not None:
                writer.writerow(rec.row())
                fh.flush()
            if on_episode is not None:
                on_episode(rec, log)
    finally:
        if fh is not None:
            fh.close()
    log.transitions = total_steps
    return log


def zero_policy(obs: np.ndarray) -> np.ndarray:
    """The static do-nothing escort: zero force for every defender."""
    return np.zeros((np.shape(obs)[0], ACTION_DIM))


def rollout(policy_fn, scenario, world_cfg: WorldConfig, threat_cfg: ThreatParams, band: LocalBand,
            rng: np.random.Generator) -> EpisodeRecord:
    """One noise-free episode; ``policy_fn`` maps (N, obs_dim) -> (N, 2) actions."""
    world = envmod.scenario_init(scenario, world_cfg, rng)
    obs = envmod.observe_all(world)
    reports = []
    cum_g = cum_l = 0.0
    while not envmod.episode_done(world):
        envmod.step(world, policy_fn(obs))
        obs = envmod.observe_all(world)
        r_g, report = global_reward(world, threat_cfg)
        reports.append(report)
        cum_g += r_g
        cum_l += float(local_rewards(world, band).sum())
    return EpisodeRecord(0, cum_g, cum_l, cumulative_residual_threat(reports, world_cfg.dt), 0.0,
                         len(reports))


def greedy_policy_fn(policies: list[ParamStore]):
    def act(obs: np.ndarray) -> np.ndarray:
        return np.stack([np.clip(p.forward(obs[i]), -1.0, 1.0) for i, p in enumerate(policies)])
    return act


def with_overrides(cfg: TrainConfig, **kw) -> TrainConfig:
    return replace(cfg, **kw)
