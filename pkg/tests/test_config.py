"""Config parsing, defaults, and canonical-text round trips."""

import math

import pytest

from heeg.config import (
    RunConfig,
    config_hash,
    config_to_text,
    default_config,
    load_config,
    parse_config_text,
    save_config,
    with_run_overrides,
)
from heeg.errors import ValidationError


def test_default_constants_snapshot():
    cfg = default_config()
    assert cfg.sampler.way_cap == 10
    assert cfg.sampler.support_cap == 100
    assert cfg.sampler.min_span == 5
    assert cfg.sampler.i_val == 5
    assert cfg.sampler.i_test == 10
    assert cfg.sampler.alpha_low == math.log(0.5)
    assert cfg.sampler.alpha_high == math.log(2.0)
    assert cfg.adapt.inner_lr == 0.01
    assert cfg.adapt.inner_steps == 5
    assert cfg.adapt.outer_lr == 3e-4
    assert cfg.adapt.meta_batch == 4
    assert cfg.dropout == 0.05
    assert cfg.balanced is False
    assert cfg.broad_threshold == 45
    assert cfg.min_occurrences == 23
    assert cfg.span_bins == ((5, 15), (17, 36), (49, 82), (111, 119))


def test_round_trip_file(tmp_path):
    cfg = default_config()
    path = tmp_path / "run.cfg"
    save_config(str(path), cfg)
    loaded = load_config(str(path))
    assert loaded == cfg
    assert config_to_text(loaded) == config_to_text(cfg)


def test_partial_override_keeps_other_defaults():
    cfg = parse_config_text("[sampler]\nway_cap = 6\n")
    assert cfg.sampler.way_cap == 6
    assert cfg.sampler.support_cap == 100
    assert cfg.adapt.inner_lr == 0.01


def test_unknown_key_rejected():
    with pytest.raises(ValidationError, match=r"unknown key \[sampler\] walrus"):
        parse_config_text("[sampler]\nwalrus = 3\n")


def test_unknown_section_rejected():
    with pytest.raises(ValidationError, match=r"unknown section \[extras\]"):
        parse_config_text("[extras]\nx = 1\n")


def test_key_outside_section_rejected():
    with pytest.raises(ValidationError):
        parse_config_text("stray = 1\n[run]\nseed = 0\n")


def test_bad_int_reported_with_location():
    with pytest.raises(ValidationError, match=r"\[run\] seed"):
        parse_config_text("[run]\nseed = seven\n")


def test_bad_bool_rejected():
    with pytest.raises(ValidationError, match="bool"):
        parse_config_text("[metric]\nbalanced = maybe\n")


def test_bool_words_accepted():
    assert parse_config_text("[metric]\nbalanced = yes\n").balanced is True
    assert parse_config_text("[metric]\nbalanced = 0\n").balanced is False


def test_span_bins_parse_and_validation():
    cfg = parse_config_text("[analysis]\nspan_bins = 2-4, 6-9\n")
    assert cfg.span_bins == ((2, 4), (6, 9))
    with pytest.raises(ValidationError, match="bad span bin"):
        parse_config_text("[analysis]\nspan_bins = 5-15, 10-20\n")
    with pytest.raises(ValidationError, match="must not be empty"):
        parse_config_text("[analysis]\nspan_bins =\n")


def test_excluded_nodes_parse():
    cfg = parse_config_text("[hierarchy]\nexcluded_nodes = a.n.01, b.n.02\n")
    assert cfg.sampler.excluded_nodes == ("a.n.01", "b.n.02")
    assert parse_config_text("[hierarchy]\nexcluded_nodes =\n").sampler.excluded_nodes == ()


def test_config_hash_tracks_content():
    base = default_config()
    changed = parse_config_text("[sampler]\nway_cap = 6\n")
    assert config_hash(base) == config_hash(default_config())
    assert config_hash(base) != config_hash(changed)


def test_run_overrides_flow_into_synth_seed():
    cfg = with_run_overrides(default_config(), seed=42, jobs=2)
    assert cfg.seed == 42
    assert cfg.synth.seed == 42
    assert cfg.jobs == 2
    untouched = with_run_overrides(default_config())
    assert untouched == default_config()


def test_validation_of_direct_fields():
    with pytest.raises(ValidationError):
        RunConfig(dropout=1.0)
    with pytest.raises(ValidationError):
        RunConfig(val_fraction=0.0)
    with pytest.raises(ValidationError):
        RunConfig(jobs=-1)


def test_missing_file_is_validation_error(tmp_path):
    with pytest.raises(ValidationError, match="cannot read config"):
        load_config(str(tmp_path / "absent.cfg"))


def test_float_render_round_trips_exactly():
    cfg = default_config()
    text = config_to_text(cfg)
    assert f"alpha_low = {math.log(0.5)!r}" in text
    assert parse_config_text(text).sampler.alpha_low == math.log(0.5)
