import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from demaddpg import algo, harness
from demaddpg.env import WorldConfig
from demaddpg.harness import CheckpointError, ConfigError, ExperimentConfig
from demaddpg.numkit import MlpSpec, ParamStore, mlp_init, seeded_rng

SMALL = WorldConfig(n_defenders=2, n_bystanders=3)


def small_config(tmp_path, **kw):
    base = dict(scenarios=["PieInTheFace"], seeds=[1, 2], episodes=3, world=SMALL,
                train=algo.TrainConfig(batch_size=16), output_dir=str(tmp_path / "runs"),
                checkpoint_interval=2)
    base.update(kw)
    return ExperimentConfig(**base)


def csv_without_timing(path):
    rows = path.read_text().splitlines()
    return [",".join(r.split(",")[:4]) for r in rows]


def test_empty_config_gives_defaults(tmp_path):
    p = tmp_path / "empty.cfg"
    p.write_text("")
    cfg = harness.load_config(p)
    assert cfg == ExperimentConfig()
    assert cfg.episodes == 20_000 and cfg.eval_episodes == 1000 and cfg.seeds == [0]


def test_episodes_zero_names_key(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("episodes = 0\n")
    with pytest.raises(ConfigError) as info:
        harness.load_config(p)
    assert info.value.key == "episodes" and "episodes" in str(info.value)


def test_full_variant_from_config(tmp_path):
    p = tmp_path / "v.cfg"
    p.write_text("variant.family = DE_MADDPG\nvariant.use_td3_global = true\nvariant.use_per = true\n")
    assert harness.load_config(p).variant.name == "DE-MADDPG(TD3+PER)"


@pytest.mark.parametrize("line,key", [
    ("episods = 3", "episods"),
    ("train.gama = 0.9", "train.gama"),
    ("optim.lr = 1", "optim.lr"),
    ("train.gamma = fast", "train.gamma"),
    ("variant.use_per = maybe", "variant.use_per"),
])
def test_bad_keys_and_values(tmp_path, line, key):
    p = tmp_path / "c.cfg"
    p.write_text(line + "\n")
    with pytest.raises(ConfigError) as info:
        harness.load_config(p)
    assert info.value.key == key


def test_missing_file_and_section_validation(tmp_path):
    with pytest.raises(ConfigError):
        harness.load_config(tmp_path / "nope.cfg")
    p = tmp_path / "c.cfg"
    p.write_text("train.gamma = 1.5\n")
    with pytest.raises(ConfigError) as info:
        harness.load_config(p)
    assert info.value.key == "train"


def test_config_round_trip_of_sections(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text(
        "# desk run\nscenarios = Street, ShoppingMall\nseeds = 3, 4\nvariant.uvfa = true\n"
        "train.batch_size = 128\ntrain.hidden_dims = 32, 32\nworld.n_bystanders = 6\n"
        "threat.safe_dist = 0.7\nreward.m = 0.2\ncheckpoint_interval = 50\n")
    cfg = harness.load_config(p)
    assert cfg.scenarios == ["Street", "ShoppingMall"] and cfg.seeds == [3, 4]
    assert cfg.train.batch_size == 128 and cfg.train.hidden_dims == (32, 32)
    assert cfg.world.n_bystanders == 6 and cfg.threat.safe_dist == 0.7 and cfg.reward.m == 0.2
    r = cfg.resolved()
    assert r["train"]["gamma"] == 0.95 and r["variant"]["name"] == "DE-MAUPG"


def test_multi_scenario_without_uvfa_rejected():
    with pytest.raises(ConfigError):
        ExperimentConfig(scenarios=["Street", "ShoppingMall"])


def test_run_training_outputs(tmp_path):
    cfg = small_config(tmp_path)
    res = harness.run_training(cfg)
    assert {r.status for r in res.values()} == {"ok"}
    out = harness.run_dir(cfg)
    for seed in (1, 2):
        lines = (out / f"seed_{seed}" / "log.csv").read_text().splitlines()
        assert lines[0] == "episode,cum_global_reward,sum_local_reward,crt,wall_ms"
        assert len(lines) == 4
        ck = sorted(p.name for p in (out / f"seed_{seed}" / "checkpoints").iterdir())
        assert ck == ["ep_0000002", "ep_0000003"]
        resolved = json.loads((out / f"seed_{seed}" / "config.json").read_text())
        assert resolved["seed"] == seed and resolved["train"]["batch_size"] == 16


def test_rerun_and_seed_order_are_identical(tmp_path):
    a = small_config(tmp_path, output_dir=str(tmp_path / "a"))
    b = small_config(tmp_path, output_dir=str(tmp_path / "b"), seeds=[2, 1])
    harness.run_training(a)
    harness.run_training(b)
    ra, rb = harness.run_dir(a), harness.run_dir(b)
    for seed in (1, 2):
        assert csv_without_timing(ra / f"seed_{seed}" / "log.csv") == csv_without_timing(rb / f"seed_{seed}" / "log.csv")
        for f in (ra / f"seed_{seed}" / "checkpoints" / "ep_0000003").iterdir():
            assert f.read_bytes() == (rb / f"seed_{seed}" / "checkpoints" / "ep_0000003" / f.name).read_bytes()


def test_seed_failure_is_isolated(tmp_path, monkeypatch):
    real = algo.train

    def flaky(variant, scenarios, cfg, world, threat, episodes, seed, **kw):
        if seed == 2:
            raise algo.TrainingError("boom", {"episode": 1, "phase": "rollout"})
        return real(variant, scenarios, cfg, world, threat, episodes, seed, **kw)

    monkeypatch.setattr(algo, "train", flaky)
    res = harness.run_training(small_config(tmp_path))
    assert res[1].status == "ok" and res[2].status == "failed"
    assert res[2].error["phase"] == "rollout"


def test_output_dir_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv(harness.OUTPUT_DIR_ENV, str(tmp_path / "elsewhere"))
    cfg = small_config(tmp_path, seeds=[1], episodes=1)
    harness.run_training(cfg)
    assert (harness.run_dir(cfg) / "seed_1" / "log.csv").is_file()
    assert str(harness.run_dir(cfg)).startswith(str(tmp_path / "elsewhere"))


def test_evaluate_do_nothing_on_pie_is_negative():
    rep = harness.evaluate(algo.zero_policy, "PieInTheFace", 20, [0, 1])
    assert rep.mean_global < 0
    assert rep.episode_count == 40 and rep.episodes_per_seed == 20


def test_evaluate_deterministic_and_counts():
    pols = [mlp_init(MlpSpec(40, 2, output_activation="tanh"), seeded_rng(0, "p", i)) for i in range(4)]
    r1 = harness.evaluate(pols, "Street", 5, range(8))
    r2 = harness.evaluate(pols, "Street", 5, range(8))
    assert r1.to_json() == r2.to_json()
    assert len(r1.per_seed) == 8 and r1.episode_count == 40
    means = [p["global"] for p in r1.per_seed]
    assert r1.ci_global == pytest.approx(1.96 * np.std(means, ddof=1) / np.sqrt(8))


def test_evaluate_rejects_incompatible_policies():
    bad = [ParamStore(MlpSpec(38, 2)) for _ in range(4)]
    with pytest.raises(CheckpointError) as info:
        harness.evaluate(bad, "Street", 1, [0])
    assert "(40, 2)" in str(info.value) and "(38, 2)" in str(info.value)


def test_evaluate_checkpoints_from_run(tmp_path):
    cfg = small_config(tmp_path)
    harness.run_training(cfg)
    rep = harness.evaluate_checkpoints(harness.run_dir(cfg), "PieInTheFace", 3)
    assert rep.seeds == [1, 2] and rep.variant == cfg.variant.name


def test_param_count_n1_difference():
    rep = harness.count_parameters([1])
    local = ParamStore(MlpSpec(42, 1)).total_count
    assert rep.de_maddpg[0] == rep.maddpg[0] + local


def test_param_count_exponents():
    rep = harness.count_parameters(range(4, 33))
    assert 1.7 <= rep.exponent_maddpg <= 2.0
    assert 0.9 <= rep.exponent_de_maddpg <= 1.2
    assert rep.de_maddpg_td3[0] - rep.de_maddpg[0] == ParamStore(MlpSpec(4 * 42, 1)).total_count


def test_param_count_first_layer_linear_in_input():
    a = harness.count_parameters([5], obs_dim=40, action_dim=2)
    b = harness.count_parameters([5], obs_dim=80, action_dim=4)
    hidden_rest = (64 + 1) * 64 + 64 + 65   # everything but the first-layer weights
    first_a = a.maddpg[0] / 5 - hidden_rest
    first_b = b.maddpg[0] / 5 - hidden_rest
    assert first_b == 2 * first_a


def test_moving_average_examples():
    np.testing.assert_array_equal(harness.moving_average([0, 3, 6], 3), [1.5, 3.0, 4.5])
    np.testing.assert_array_equal(harness.moving_average([1, 2], 1), [1, 2])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=40), st.integers(1, 9))
def test_moving_average_matches_loop(xs, window):
    left, right = window // 2, (window - 1) // 2
    expected = [np.mean(xs[max(0, i - left):i + right + 1]) for i in range(len(xs))]
    np.testing.assert_allclose(harness.moving_average(xs, window), expected, atol=1e-9)


def _log(values, local=None):
    n = len(values)
    return {"episode": np.arange(1, n + 1), "cum_global_reward": np.asarray(values, float),
            "sum_local_reward": np.asarray(local if local is not None else values, float),
            "crt": np.zeros(n), "wall_ms": np.zeros(n)}


def test_curves_single_seed_identity():
    cols = harness.learning_curves([_log([1.0, -2.0, 0.5])], 1)
    np.testing.assert_array_equal(cols["global_mean"], [1.0, -2.0, 0.5])
    np.testing.assert_array_equal(cols["global_std"], 0.0)


def test_curves_constant_across_seeds(tmp_path):
    text = harness.emit_learning_curves([_log([-1.0] * 4), _log([-1.0] * 4)], 1, tmp_path / "c.csv")
    lines = text.splitlines()
    assert lines[0] == "episode,global_mean,global_std,local_mean,local_std,n_seeds"
    assert lines[1] == "1,-1,0,-1,0,2"
    assert (tmp_path / "c.csv").read_text() == text


def test_curves_reject_misaligned():
    with pytest.raises(ValueError):
        harness.learning_curves([_log([0.0, 1.0]), _log([0.0, 1.0, 2.0])])
