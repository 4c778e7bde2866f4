"""Experiment orchestration: config files, seeded campaigns, evaluation and reports.

Config files are flat ``key = value`` text. Top-level keys are ``scenarios``,
``seeds``, ``episodes``, ``output_dir``, ``eval_episodes`` and
``checkpoint_interval``; everything else lives under a dotted section:
``variant.*`` (AlgoVariant), ``train.*`` (TrainConfig), ``world.*``
(WorldConfig), ``threat.*`` (ThreatParams) and ``reward.*`` (LocalBand).
Lists are comma separated, booleans are ``true``/``false``, ``#`` starts a
comment.
"""

from __future__ import annotations

import csv
import json
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import algo
from .algo import AlgoVariant, TrainConfig
from .env import ScenarioKind, WorldConfig
from .numkit import MlpSpec, ParamStore, load_params, save_params, seeded_rng
from .threat import LocalBand, ThreatParams

OUTPUT_DIR_ENV = "DEMADDPG_OUTPUT_DIR"
CONFIDENCE_Z = 1.96


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


class CheckpointError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    variant: AlgoVariant = field(default_factory=AlgoVariant)
    scenarios: list = field(default_factory=lambda: ["ShoppingMall"])
    seeds: list = field(default_factory=lambda: [0])
    episodes: int = 20_000
    train: TrainConfig = field(default_factory=TrainConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    threat: ThreatParams = field(default_factory=ThreatParams)
    reward: LocalBand = field(default_factory=LocalBand)
    output_dir: str = "runs"
    eval_episodes: int = 1000
    checkpoint_interval: int = 0   # 0 keeps only the final checkpoint

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.episodes < 1:
            raise ConfigError("episodes", f"must be >= 1, got {self.episodes}")
        if not self.seeds:
            raise ConfigError("seeds", "at least one seed is required")
        for s in self.seeds:
            if not 0 <= int(s) < 2 ** 64:
                raise ConfigError("seeds", f"seed {s} is not a 64-bit unsigned integer")
        if not self.scenarios:
            raise ConfigError("scenarios", "at least one scenario is required")
        for s in self.scenarios:
            try:
                ScenarioKind.parse(s)
            except ValueError as exc:
                raise ConfigError("scenarios", str(exc)) from None
        if len(self.scenarios) > 1 and not self.variant.uvfa:
            raise ConfigError("scenarios", "several scenarios need a UVFA variant (variant.uvfa = true)")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes", "must be >= 1")
        if self.checkpoint_interval < 0:
            raise ConfigError("checkpoint_interval", "must be >= 0")

    def resolved(self) -> dict:
        """Every setting, defaults included, as plain JSON-able data."""
        return {
            "variant": {**asdict(self.variant), "name": self.variant.name},
            "scenarios": [ScenarioKind.parse(s).label for s in self.scenarios],
            "seeds": [int(s) for s in self.seeds],
            "episodes": self.episodes,
            "train": asdict(self.train),
            "world": asdict(self.world),
            "threat": asdict(self.threat),
            "reward": asdict(self.reward),
            "output_dir": str(self.output_dir),
            "eval_episodes": self.eval_episodes,
            "checkpoint_interval": self.checkpoint_interval,
        }


_SECTIONS = {"variant": AlgoVariant, "train": TrainConfig, "world": WorldConfig,
             "threat": ThreatParams, "reward": LocalBand}
_TOP_LEVEL = {"scenarios", "seeds", "episodes", "output_dir", "eval_episodes", "checkpoint_interval"}


def _parse_bool(key: str, text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(key, f"expected true/false, got {text!r}")


def _coerce(key: str, text: str, like):
    try:
        if isinstance(like, bool):
            return _parse_bool(key, text)
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        if isinstance(like, tuple):
            return tuple(int(t) for t in _split_list(text))
        return text
    except ValueError:
        raise ConfigError(key, f"invalid value {text!r} (expected {type(like).__name__})") from None


def _split_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _build_section(name: str, cls, raw: dict, base=None):
    base = base if base is not None else cls()
    values = {}
    known = {f.name: getattr(base, f.name) for f in fields(cls)}
    for key, text in raw.items():
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown key")
        values[key] = _coerce(f"{name}.{key}", text, known[key])
    try:
        return replace(base, **values)
    except ValueError as exc:
        raise ConfigError(name, str(exc)) from None


def parse_config_text(text: str, source: str = "<string>") -> ExperimentConfig:
    sections: dict[str, dict] = {s: {} for s in _SECTIONS}
    top: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("", f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if "." in key:
            section, sub = key.split(".", 1)
            if section not in sections:
                raise ConfigError(key, "unknown section")
            sections[section][sub] = value
        elif key in _TOP_LEVEL:
            top[key] = value
        else:
            raise ConfigError(key, "unknown key")

    defaults = ExperimentConfig()
    kw = {name: _build_section(name, cls, sections[name]) for name, cls in _SECTIONS.items()}
    if "scenarios" in top:
        kw["scenarios"] = _split_list(top["scenarios"])
    if "seeds" in top:
        kw["seeds"] = [_coerce("seeds", s, 0) for s in _split_list(top["seeds"])]
    for key in ("episodes", "eval_episodes", "checkpoint_interval"):
        if key in top:
            kw[key] = _coerce(key, top[key], getattr(defaults, key))
    if "output_dir" in top:
        kw["output_dir"] = top["output_dir"]
    return ExperimentConfig(**kw)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("", f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


def resolve_output_dir(config: ExperimentConfig) -> Path:
    return Path(os.environ.get(OUTPUT_DIR_ENV) or config.output_dir)


# --- training campaigns ---------------------------------------------------------

def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", text).strip("_")


def run_dir(config: ExperimentConfig, root: Path | None = None) -> Path:
    root = resolve_output_dir(config) if root is None else Path(root)
    scen = "+".join(ScenarioKind.parse(s).label for s in config.scenarios)
    return root / _slug(config.variant.name) / _slug(scen)


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def save_checkpoint(directory, log: algo.TrainingLog, meta: dict) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, agent in enumerate(log.agents):
        save_params(directory / f"policy_{i}.mlpk", agent.policy, {**meta, "role": "policy", "agent": i})
        save_params(directory / f"critic_{i}.mlpk", agent.critic, {**meta, "role": "critic", "agent": i})
    if log.critics is not None:
        for k, m in enumerate(log.critics.mains):
            save_params(directory / f"global_{k}.mlpk", m, {**meta, "role": "global", "index": k})
    return directory


@dataclass
class SeedResult:
    seed: int
    status: str
    csv_path: str
    checkpoints: list = field(default_factory=list)
    error: dict | None = None


def _train_one(config: ExperimentConfig, seed: int, out: Path) -> SeedResult:
    seed_dir = out / f"seed_{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    csv_path = seed_dir / "log.csv"
    resolved = config.resolved()
    _write_json(seed_dir / "config.json", {**resolved, "seed": seed})
    saved: list[str] = []
    meta = {"variant": config.variant.name, "seed": seed, "world": resolved["world"]}

    def on_episode(rec, log):
        interval = config.checkpoint_interval
        if (interval and rec.episode % interval == 0) or rec.episode == config.episodes:
            d = save_checkpoint(seed_dir / "checkpoints" / f"ep_{rec.episode:07d}", log,
                                {**meta, "episode": rec.episode})
            saved.append(str(d))

    try:
        algo.train(config.variant, config.scenarios, config.train, config.world, config.threat,
                   config.episodes, seed, band=config.reward, csv_path=csv_path, on_episode=on_episode)
    except Exception as exc:
        record = getattr(exc, "record", {"error": f"{type(exc).__name__}: {exc}"})
        _write_json(seed_dir / "error.json", record)
        return SeedResult(seed, "failed", str(csv_path), saved, record)
    return SeedResult(seed, "ok", str(csv_path), saved)


def run_training(config: ExperimentConfig, workers: int = 1, root=None) -> dict[int, SeedResult]:
    """Train one campaign per seed; a failing seed is recorded without stopping the others."""
    out = run_dir(config, root)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", config.resolved())
    seeds = [int(s) for s in config.seeds]
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_one, [config] * len(seeds), seeds, [out] * len(seeds)))
    else:
        results = [_train_one(config, s, out) for s in seeds]
    summary = {r.seed: r for r in results}
    _write_json(out / "summary.json", {str(k): asdict(v) for k, v in sorted(summary.items())})
    return summary


# --- evaluation -------------------------------------------------------------------

@dataclass
class EvalReport:
    variant: str
    scenario: str
    seeds: list
    episodes_per_seed: int
    per_seed: list                  # one dict of means per seed
    mean_global: float
    mean_local: float
    mean_crt: float
    ci_global: float                # 95% half-width over seed means (nan for one seed)
    ci_local: float
    ci_crt: float
    config: dict = field(default_factory=dict)

    @property
    def episode_count(self) -> int:
        return self.episodes_per_seed * len(self.seeds)

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, list):
                return [clean(x) for x in v]
            return v
        return clean({**asdict(self), "episode_count": self.episode_count})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def confidence_half_width(values) -> float:
    """Normal-approximation 95% half-width of the mean: 1.96 * s / sqrt(n)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return float("nan")
    return float(CONFIDENCE_Z * v.std(ddof=1) / math.sqrt(v.size))


def check_policies(policies: list[ParamStore], world: WorldConfig) -> None:
    expected = (world.obs_dim, algo.ACTION_DIM)
    if len(policies) != world.n_defenders:
        raise CheckpointError(f"expected {world.n_defenders} policies, found {len(policies)}")
    for i, p in enumerate(policies):
        found = (p.spec.input_dim, p.spec.output_dim)
        if found != expected:
            raise CheckpointError(f"policy {i}: expected (input, output) shape {expected}, found {found}")


def evaluate(policies, scenario, eval_episodes: int, seeds, world: WorldConfig | None = None,
             threat: ThreatParams | None = None, band: LocalBand | None = None,
             variant_name: str = "policy") -> EvalReport:
    """Noise-free rollouts per seed, then the mean and 95% CI over seed means.

    ``policies`` maps each seed to a list of policy ParamStores or to a
    callable (N, obs_dim) -> (N, 2); a single list or callable is shared by
    all seeds. Episode draws come from the seed's own ``eval`` stream.
    """
    world = world or WorldConfig()
    threat = threat or ThreatParams()
    band = band or LocalBand()
    kind = ScenarioKind.parse(scenario)
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("at least one seed is required")
    if eval_episodes < 1:
        raise ValueError("eval_episodes must be >= 1")
    per_seed = []
    for seed in seeds:
        pol = policies[seed] if isinstance(policies, dict) else policies
        if not callable(pol):
            check_policies(pol, world)
            pol = algo.greedy_policy_fn(pol)
        rng = seeded_rng(seed, "eval", kind.label)
        recs = [algo.rollout(pol, kind, world, threat, band, rng) for _ in range(eval_episodes)]
        per_seed.append({
            "seed": seed,
            "global": float(np.mean([r.cum_global_reward for r in recs])),
            "local": float(np.mean([r.sum_local_reward for r in recs])),
            "crt": float(np.mean([r.crt for r in recs])),
        })
    col = {k: [p[k] for p in per_seed] for k in ("global", "local", "crt")}
    return EvalReport(
        variant=variant_name, scenario=kind.label, seeds=seeds, episodes_per_seed=eval_episodes,
        per_seed=per_seed, mean_global=float(np.mean(col["global"])),
        mean_local=float(np.mean(col["local"])), mean_crt=float(np.mean(col["crt"])),
        ci_global=confidence_half_width(col["global"]), ci_local=confidence_half_width(col["local"]),
        ci_crt=confidence_half_width(col["crt"]),
        config={"world": asdict(world), "threat": asdict(threat), "reward": asdict(band)},
    )


def load_policies(checkpoint_dir) -> tuple[list[ParamStore], dict]:
    """Policies ``policy_0.mlpk .. policy_{N-1}.mlpk`` and the header meta of the first."""
    d = Path(checkpoint_dir)
    files = sorted(d.glob("policy_*.mlpk"), key=lambda p: int(p.stem.split("_")[1]))
    if not files:
        raise CheckpointError(f"no policy checkpoints in {d}")
    loaded = [load_params(f) for f in files]
    return [p for p, _ in loaded], loaded[0][1].get("meta", {})


def latest_checkpoints(run_root) -> dict[int, Path]:
    """seed -> newest checkpoint directory, for a run dir holding ``seed_*`` folders."""
    root = Path(run_root)
    if list(root.glob("policy_*.mlpk")):
        return {0: root}
    found = {}
    for seed_dir in sorted(root.glob("seed_*")):
        eps = sorted((seed_dir / "checkpoints").glob("ep_*"))
        if eps:
            found[int(seed_dir.name.split("_", 1)[1])] = eps[-1]
    if not found:
        raise CheckpointError(f"no checkpoints found under {root}")
    return found


def evaluate_checkpoints(run_root, scenario, eval_episodes: int, world: WorldConfig | None = None,
                         threat: ThreatParams | None = None, band: LocalBand | None = None) -> EvalReport:
    dirs = latest_checkpoints(run_root)
    policies, name = {}, "policy"
    for seed, d in dirs.items():
        pols, meta = load_policies(d)
        policies[seed] = pols
        name = meta.get("variant", name)
        if world is None and "world" in meta:
            world = WorldConfig(**meta["world"])
    return evaluate(policies, scenario, eval_episodes, sorted(dirs), world, threat, band, name)


# --- parameter counts ---------------------------------------------------------------

@dataclass
class ParamCountReport:
    n_agents: list
    maddpg: list
    de_maddpg: list
    de_maddpg_td3: list
    exponent_maddpg: float
    exponent_de_maddpg: float
    exponent_de_maddpg_td3: float
    obs_dim: int
    action_dim: int
    hidden_dims: list

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def loglog_exponent(ns, counts) -> float:
    slope, _ = np.polyfit(np.log(np.asarray(ns, dtype=np.float64)),
                          np.log(np.asarray(counts, dtype=np.float64)), 1)
    return float(slope)


def count_parameters(n_agents, obs_dim: int = 40, action_dim: int = 2,
                     arch: MlpSpec | None = None) -> ParamCountReport:
    """Main-critic parameter totals, counted from instantiated ParamStores.

    ``arch`` supplies the hidden layers and activations; its input and output
    sizes are ignored. MADDPG has one centralized critic per agent; DE-MADDPG
    has one centralized global critic (two with TD3) plus one local critic
    per agent.
    """
    ns = [int(n) for n in n_agents]
    if not ns or min(ns) < 1:
        raise ValueError("n_agents must be a nonempty range of positive integers")
    hidden = tuple(arch.hidden_dims) if arch is not None else (64, 64)

    def critic(in_dim: int) -> int:
        return ParamStore(MlpSpec(in_dim, 1, hidden)).total_count

    local = critic(obs_dim + action_dim)
    mad, de, de2 = [], [], []
    for n in ns:
        central = critic(n * (obs_dim + action_dim))
        mad.append(n * central)
        de.append(central + n * local)
        de2.append(2 * central + n * local)
    fit = len(set(ns)) > 1
    return ParamCountReport(
        n_agents=ns, maddpg=mad, de_maddpg=de, de_maddpg_td3=de2,
        exponent_maddpg=loglog_exponent(ns, mad) if fit else float("nan"),
        exponent_de_maddpg=loglog_exponent(ns, de) if fit else float("nan"),
        exponent_de_maddpg_td3=loglog_exponent(ns, de2) if fit else float("nan"),
        obs_dim=obs_dim, action_dim=action_dim, hidden_dims=list(hidden),
    )


# --- learning curves --------------------------------------------------------------------

CURVE_COLUMNS = ("episode", "global_mean", "global_std", "local_mean", "local_std", "n_seeds")


def moving_average(x, window: int) -> np.ndarray:
    """Centred moving average; edge windows are truncated rather than padded."""
    x = np.asarray(x, dtype=np.float64)
    if window < 1:
        raise ValueError("window must be >= 1")
    if window == 1 or x.size == 0:
        return x.copy()
    left, right = window // 2, (window - 1) // 2
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(x.size)
    lo = np.maximum(idx - left, 0)
    hi = np.minimum(idx + right + 1, x.size)
    return (csum[hi] - csum[lo]) / (hi - lo)


def read_log_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {c: np.array([float(r[c]) for r in rows]) for c in algo.LOG_COLUMNS}


def learning_curves(logs, window: int = 1) -> dict[str, np.ndarray]:
    """Cross-seed mean and population std per episode, smoothing each seed first."""
    logs = list(logs)
    if not logs:
        raise ValueError("no logs given")
    episodes = np.asarray(logs[0]["episode"])
    for lg in logs[1:]:
        if len(lg["episode"]) != len(episodes) or not np.array_equal(lg["episode"], episodes):
            raise ValueError("logs are not aligned on episode index")
    g = np.stack([moving_average(lg["cum_global_reward"], window) for lg in logs])
    loc = np.stack([moving_average(lg["sum_local_reward"], window) for lg in logs])
    return {
        "episode": episodes, "global_mean": g.mean(axis=0), "global_std": g.std(axis=0),
        "local_mean": loc.mean(axis=0), "local_std": loc.std(axis=0),
        "n_seeds": np.full(episodes.shape, len(logs)),
    }


def emit_learning_curves(logs, smoothing_window: int = 1, out=None) -> str:
    """Learning-curve CSV text; also written to ``out`` when given."""
    cols = learning_curves(logs, smoothing_window)
    lines = [",".join(CURVE_COLUMNS)]
    for k in range(len(cols["episode"])):
        lines.append(",".join([
            str(int(cols["episode"][k])),
            *(f"{cols[c][k]:.9g}" for c in CURVE_COLUMNS[1:5]),
            str(int(cols["n_seeds"][k])),
        ]))
    text = "\n".join(lines) + "\n"
    if out is not None:
        Path(out).write_text(text, encoding="utf-8", newline="\n")
    return text


def load_run_logs(run_root) -> list[dict[str, np.ndarray]]:
    paths = sorted(Path(run_root).glob("seed_*/log.csv"))
    if not paths:
        raise FileNotFoundError(f"no seed_*/log.csv files under {run_root}")
    return [read_log_csv(p) for p in paths]
