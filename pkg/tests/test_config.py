import pytest

from ontotemporal.config import ConfigError, TrainConfig, dump_config, load_config, parse_overrides, read_config_text


def test_defaults_documented():
    cfg = TrainConfig()
    assert (cfg.alpha1, cfg.alpha2, cfg.window, cfg.channels, cfg.kernel_width, cfg.lr, cfg.epochs) == (
        0.1, 0.1, 3, 16, 3, 1e-3, 30)


def test_dump_read_round_trip():
    cfg = TrainConfig(hops=None, op="corr", fusion="sum", random_init=True, K=0.75)
    assert TrainConfig(**read_config_text(dump_config(cfg))) == cfg


def test_override_precedence(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("dim = 16\nepochs = 5  # short\n")
    cfg = load_config(p, {"epochs": "7", "hops": "max"})
    assert (cfg.dim, cfg.epochs, cfg.hops) == (16, 7, None)


def test_unknown_key():
    with pytest.raises(ConfigError):
        parse_overrides({"learning_rate": "1"})


@pytest.mark.parametrize("pair", [{"dim": "x"}, {"select_best": "maybe"}, {"op": "add"}, {"K": "-1"},
                                  {"fusion": "concat"}, {"kernel_width": "2"}])
def test_bad_values(pair):
    with pytest.raises(ConfigError):
        load_config(None, pair)


def test_malformed_line():
    with pytest.raises(ConfigError):
        read_config_text("dim 16")
