"""Config loading, validation, canonical serialization, and hashing."""

import pytest

from ppg2ecg.config import (
    DEFAULT_BINARY_LABELS,
    DEFAULT_CVD4_LABELS,
    config_hash,
    load_config,
    model_hash,
    resolved_text,
)
from ppg2ecg.errors import ConfigError


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_empty_file_yields_defaults(tmp_path):
    cfg = load_config(write(tmp_path, ""))
    assert cfg.model.d_model == 64
    assert cfg.model.depths == (2, 2, 6, 6, 2)
    assert cfg.model.patch_sizes == (32, 64, 128, 256, 512)
    assert cfg.train.lr == 0.0001
    assert cfg.train.epochs == 50
    assert cfg.data.source == "synth"
    assert cfg.task.kind == "reconstruct"


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(write(tmp_path, "[model]\nwidth = 3\n"))
    with pytest.raises(ConfigError, match="unknown config section"):
        load_config(write(tmp_path, "[extras]\nfoo = 1\n"))


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.ini")


def test_invalid_model_geometry_rejected(tmp_path):
    with pytest.raises(ConfigError, match="model"):
        load_config(write(tmp_path, "[model]\nd_model = 30\nheads = 4\n"))
    with pytest.raises(ConfigError, match="model"):
        load_config(write(tmp_path, "[model]\ndepths = 2,3\npatch_sizes = 32,64\n"))


def test_bad_values_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "[train]\nlr = fast\n"))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "[data]\nclasses = 3\n"))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "[data]\nsplit = 0.5,0.5\n"))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "[task]\nkind = dance\n"))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "[data]\nsource = ftp\n"))


def test_default_labels_per_class_count(tmp_path):
    cfg2 = load_config(write(tmp_path, "[data]\nclasses = 2\n", "two.ini"))
    assert cfg2.task.labels == DEFAULT_BINARY_LABELS
    cfg4 = load_config(write(tmp_path, "[data]\nclasses = 4\n", "four.ini"))
    assert cfg4.task.labels == DEFAULT_CVD4_LABELS


def test_explicit_labels_must_match_class_count(tmp_path):
    text = "[data]\nclasses = 2\n\n[task]\nlabels = a,b,c\n"
    with pytest.raises(ConfigError, match="labels"):
        load_config(write(tmp_path, text))
    ok = load_config(write(tmp_path, "[data]\nclasses = 2\n\n[task]\nlabels = a,b\n", "ok.ini"))
    assert ok.task.labels == ("a", "b")


def test_hash_is_deterministic_and_sensitive(tmp_path):
    a = load_config(write(tmp_path, "[model]\nd_model = 32\n", "a.ini"))
    b = load_config(write(tmp_path, "[model]\nd_model = 32\n", "b.ini"))
    c = load_config(write(tmp_path, "[model]\nd_model = 64\n", "c.ini"))
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(c)
    assert len(config_hash(a)) == 64


def test_model_hash_ignores_data_section(tmp_path):
    a = load_config(write(tmp_path, "[data]\nsubjects = 5\n", "a.ini"))
    b = load_config(write(tmp_path, "[data]\nsubjects = 50\n", "b.ini"))
    assert model_hash(a) == model_hash(b)
    assert config_hash(a) != config_hash(b)


def test_resolved_text_covers_all_sections(tmp_path):
    cfg = load_config(write(tmp_path, ""))
    text = resolved_text(cfg)
    for section in ("[model]", "[train]", "[data]", "[task]"):
        assert section in text
    assert "d_model = 64" in text
    assert "lr = 0.0001" in text
