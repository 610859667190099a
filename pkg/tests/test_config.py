import pytest

from rtrrl.config import TrainConfig, dotted_fields, load_config, parse_scalar
from rtrrl.errors import ConfigError


def test_defaults_match_hyperparameter_table():
    c = TrainConfig()
    assert c.hidden == 32
    assert c.gamma == 0.99
    assert c.lr_actor == c.lr_critic == c.lr_rnn == 1e-4
    assert c.eta_actor == 1.0
    assert c.eta_entropy == 1e-5
    assert c.lambda_actor == c.lambda_critic == c.lambda_rnn == 0.9
    assert c.dt == 1.0
    assert c.patience == 20
    assert c.max_steps == 50_000_000
    assert c.clip == 1.0
    assert (c.mode, c.feedback, c.optimizer) == ("rflo", "fa", "adam")


def test_three_layer_precedence(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("alg:\n  gamma: 0.95\n  lr_actor: 1e-3\nmodel:\n  hidden: 16\n")
    environ = {"RTRRL_ALG__LR_ACTOR": "2e-3", "RTRRL_MODEL__HIDDEN": "8"}
    c = load_config(cfg, {"model.hidden": "4"}, environ=environ)
    assert c.gamma == 0.95          # file over default
    assert c.lr_actor == 2e-3       # env var over file
    assert c.hidden == 4            # flag over env var
    assert c.lr_critic == 1e-4      # untouched default


def test_file_over_default_without_env(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("seed: 7\nenv: bernoulli_bandit\n")
    c = load_config(cfg, environ={})
    assert (c.seed, c.env) == (7, "bernoulli_bandit")


def test_env_params_are_free_form(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("env:\n  name: memory_chain\n  length: 8\n")
    c = load_config(cfg, {"env.noise": "0.5"}, environ={})
    assert c.env == "memory_chain"
    assert c.env_params == {"length": 8, "noise": 0.5}


def test_bare_field_names_accepted():
    c = load_config(None, {"gamma": "0.5"}, environ={})
    assert c.gamma == 0.5


@pytest.mark.parametrize("overrides", [{"alg.nope": 1}, {"model.hidden": "abc"},
                                       {"train.max_steps": "1.5"}, {"alg.mode": "bptt"},
                                       {"model.train_tau": "maybe"}])
def test_bad_values_raise(overrides):
    with pytest.raises(ConfigError):
        load_config(None, overrides, environ={})


def test_unknown_env_var_raises():
    with pytest.raises(ConfigError):
        load_config(None, environ={"RTRRL_ALG__BOGUS": "1"})


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml", environ={})
    bad = tmp_path / "list.yaml"
    bad.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(bad, environ={})


def test_lru_requires_diag_rtrl():
    with pytest.raises(ConfigError):
        TrainConfig(cell="lru", mode="rflo")
    TrainConfig(cell="lru", mode="diag_rtrl")


def test_scalar_parsing():
    assert parse_scalar("1e-4") == 1e-4
    assert parse_scalar("true") is True
    assert parse_scalar("rflo") == "rflo"
    assert parse_scalar("5e7") == 5e7
    assert load_config(None, {"train.max_steps": "5e6"}, environ={}).max_steps == 5_000_000


def test_every_field_has_a_dotted_path():
    paths = dotted_fields()
    assert paths["alg.mode"] == "mode"
    assert paths["train.patience"] == "patience"
    assert "env_params" not in paths.values()
