"""Tests for run configuration loading and resolution."""

import json

import pytest

from fre_seg.config import (
    SEED_NAMES,
    derive_seed,
    expand_seeds,
    load_config,
    parse_override,
    resolve,
    set_path,
)
from fre_seg.errors import ConfigError
from fre_seg.models import FREMode, ModelVariant


class TestSeeds:
    """Tests for seed expansion."""

    def test_all_names(self):
        seeds = expand_seeds(7)
        assert set(seeds) == set(SEED_NAMES)
        assert len(set(seeds.values())) == len(SEED_NAMES)

    def test_stable(self):
        assert derive_seed(7, "fre") == derive_seed(7, "fre")
        assert derive_seed(7, "fre") != derive_seed(8, "fre")

    def test_explicit_override(self):
        assert expand_seeds(7, {"fre": 99})["fre"] == 99

    def test_unknown_name(self):
        with pytest.raises(ConfigError):
            expand_seeds(0, {"colour": 1})


class TestOverrides:
    """Tests for key.path=value overrides."""

    def test_parse_json_value(self):
        assert parse_override("fre.B=162") == ("fre.B", 162)
        assert parse_override("model.variant=fre") == ("model.variant", "fre")
        assert parse_override("train.stat_channels=[1, 2]") == ("train.stat_channels", [1, 2])

    def test_missing_equals(self):
        with pytest.raises(ConfigError):
            parse_override("fre.B")

    def test_set_path_creates_sections(self):
        raw = {}
        set_path(raw, "data.synthetic.image_size", 32)
        assert raw == {"data": {"synthetic": {"image_size": 32}}}

    def test_set_path_through_value(self):
        with pytest.raises(ConfigError):
            set_path({"seed": 1}, "seed.x", 2)


class TestResolve:
    """Tests for resolve and load_config."""

    def test_defaults(self):
        cfg = load_config()
        assert cfg.model.variant is ModelVariant.BASELINE
        assert cfg.model.bottleneck_width == 512
        assert cfg.model.fre.mode is FREMode.OFF
        assert cfg.train.stat_hooks == ("means", "channel_sums")

    def test_fre_defaults(self):
        cfg = load_config(overrides=["model.variant=fre"])
        assert cfg.model.fre.mode is FREMode.RANDOM
        assert (cfg.model.fre.B, cfg.model.fre.X) == (162, 632.0)
        assert cfg.model.fre.seed == cfg.seeds["fre"]

    def test_fre_nested_under_model(self):
        cfg = resolve({"model": {"variant": "fre", "fre": {"B": 10, "X": 50}}})
        assert (cfg.model.fre.B, cfg.model.fre.X) == (10, 50.0)

    def test_dropout_auto(self):
        cfg = load_config(overrides=["model.variant=dropout", "dropout_rate=\"auto\""])
        assert cfg.model.dropout_rate == pytest.approx(162 / 512)

    def test_supervision_default(self):
        cfg = load_config(overrides=["model.variant=supervision"])
        assert cfg.model.supervision.lam == 0.3257

    def test_seeds_flow_into_components(self):
        cfg = load_config(overrides=["seed=11"])
        assert cfg.model.weight_seed == cfg.seeds["weights"]
        assert cfg.train.seed == cfg.seeds["shuffle"]
        assert cfg.data.synthetic.seed == cfg.seeds["data"]

    def test_to_dict_reloads(self, tmp_path):
        cfg = load_config(overrides=["model.variant=dropout", "dropout_rate=\"auto\"", "seed=3"])
        path = tmp_path / "config.json"
        path.write_text(json.dumps(cfg.to_dict()))
        assert load_config(path) == cfg

    def test_with_params(self):
        cfg = load_config(overrides=["model.variant=fre"])
        tuned = cfg.with_params({"B": 40.0, "X": 300.0})
        assert (tuned.model.fre.B, tuned.model.fre.X) == (40, 300.0)
        assert tuned.seeds == cfg.seeds

    def test_with_params_trial_seed(self):
        cfg = load_config(overrides=["model.variant=supervision"])
        tuned = cfg.with_params({"lambda": 0.5}, trial_seed=1234)
        assert tuned.model.supervision.lam == 0.5
        assert tuned.seeds["data"] == cfg.seeds["data"]
        assert tuned.seeds["weights"] != cfg.seeds["weights"]
        assert tuned.model.weight_seed == tuned.seeds["weights"]

    def test_search_space_follows_width(self):
        cfg = load_config(overrides=["model.base_width=4", "model.depth=2"])
        space = cfg.search.resolved_space(cfg.model)
        assert space.dimensions[0].high == 16

    @pytest.mark.parametrize(
        "overrides",
        [
            ["model.variant=transformer"],
            ["model.variant=fre", "fre.B=600"],
            ["model.variant=fre", "fre.X=0.5"],
            ["fre.mode=random"],
            ["model.variant=dropout"],
            ["model.variant=dropout", "dropout_rate=\"half\""],
            ["model.variant=dropout", "dropout_rate=1.0"],
            ["model.variant=supervision", "supervision.lambda=1.5"],
            ["train.epochs=0"],
            ["train.optimizer=rmsprop"],
            ["train.stat_hooks=[\"histogram\"]"],
            ["model.colour=1"],
            ["data.synthetic.image_size=20"],
            ["data.synthetic.class_scheme=four_class"],
            ["search.target=everything"],
            ["seeds.colour=1"],
        ],
    )
    def test_invalid(self, overrides):
        with pytest.raises(ConfigError):
            load_config(overrides=overrides)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "absent.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_four_class_model(self):
        cfg = load_config(overrides=["model.classes=4", "data.synthetic.class_scheme=four_class"])
        assert cfg.class_names == ("background", "membrane", "mitochondria", "synapse")
