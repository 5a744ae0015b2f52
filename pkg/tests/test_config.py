import pytest

from sfdm.config import SCHEMA, Config, ConfigError, load_config, parse_config


def test_defaults_cover_schema():
    cfg = Config()
    assert cfg["train.batch"] == 128
    assert cfg["train.lr"] == 0.0002
    assert cfg["train.max_epochs"] == 200 and cfg["train.patience"] == 20
    assert cfg["diffusion.T"] == 50
    assert cfg["denoiser.channels"] == [32, 64, 128]
    assert set(cfg.raw) == set(SCHEMA)


def test_parse_comments_and_blank_lines():
    cfg = parse_config("# desk\n\ntrain.batch = 8\ncond.mode=class-onehot\n")
    assert cfg["train.batch"] == 8
    assert cfg["cond.mode"] == "class-onehot"


@pytest.mark.parametrize("text", ["nope.key=1", "train.batch=eight", "train.batch", "diffusion.cumulative=maybe"])
def test_rejects(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_text_round_trip():
    cfg = Config({"train.batch": "16", "experiment.proportions": "0.2,1.0"})
    back = parse_config(cfg.to_text())
    assert back.raw == cfg.raw
    assert back.fingerprint() == cfg.fingerprint()


def test_fingerprint_stable_and_sensitive():
    a, b = Config(), Config()
    assert a.fingerprint() == b.fingerprint()
    assert len(a.fingerprint()) == 16
    assert a.with_(train__batch=64).fingerprint() != a.fingerprint()


def test_diff_names_changed_keys():
    a = Config()
    b = a.with_(cond__mode="class-onehot")
    assert a.diff(b) == ["cond.mode"]
    assert a.diff(a.copy()) == []


def test_stage_epochs_inherit():
    cfg = Config({"train.max_epochs": "40", "pretrain.max_epochs": "0"})
    assert cfg.stage_epochs("dm") == 40
    assert cfg.stage_epochs("pretrain") == 0


def test_typed_views():
    cfg = Config({"data.window": "64", "denoiser.channels": "4,8,8"})
    assert cfg.denoiser_config(3, "class-onehot").cond_channels == 3
    assert cfg.denoiser_config().cond_channels == 4
    assert cfg.classifier_config(5).n_classes == 5
    assert cfg.schedule().at(50) == 0.05


def test_invalid_views_raise_config_error():
    with pytest.raises(ConfigError):
        Config({"train.patience": "300"}).train_config()
    with pytest.raises(ConfigError):
        Config({"diffusion.beta_max": "0.00001"}).schedule()


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "none.cfg")
