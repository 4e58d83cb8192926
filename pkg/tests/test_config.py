import pytest

import retrocast as rc


class TestValidation:
    def test_defaults_are_valid(self):
        cfg = rc.ExperimentConfig().validate()
        assert cfg.lookback == 96
        assert cfg.periods == (1, 2, 4)
        assert cfg.metric == "pearson"
        assert cfg.seeds == (0, 1, 2)

    @pytest.mark.parametrize("field,value", [
        ("lookback", 0),
        ("horizon", -1),
        ("periods", ()),
        ("periods", (0,)),
        ("m", 0),
        ("tau", 0.0),
        ("tau", -1.0),
        ("metric", "dtw"),
        ("channel_reduce", "sum"),
        ("embed_dim", 0),
        ("stride", 0),
        ("learning_rate", -0.1),
        ("batch_size", 0),
        ("max_epochs", 0),
        ("patience", -1),
        ("optimizer", "lbfgs"),
        ("seeds", ()),
        ("variant", "half"),
        ("jobs", 0),
        ("split", "fractional"),
    ])
    def test_each_invalid_field_is_named(self, field, value):
        cfg = rc.ExperimentConfig(**{field: value})
        with pytest.raises(ValueError, match=f"invalid {field}"):
            cfg.validate()

    def test_period_exceeding_windows_rejected(self):
        cfg = rc.ExperimentConfig(lookback=8, horizon=4, periods=(1, 8))
        with pytest.raises(ValueError, match="invalid periods"):
            cfg.validate()

    def test_borders_split_accepted(self):
        rc.ExperimentConfig(split="borders:100,200").validate()
        rc.ExperimentConfig(split="borders:100,200,300").validate()


class TestFromFile:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text(
            "[data]\n"
            "data_path = data/x.csv\n"
            "target = OT\n"
            "split = etth\n"
            "lookback_overlap = yes\n"
            "[model]\n"
            "lookback = 336\n"
            "horizon = 192\n"
            "periods = 1 2\n"
            "[retrieval]\n"
            "m = 20\n"
            "tau = 0.5\n"
            "metric = cosine\n"
            "[train]\n"
            "learning_rate = 0.01\n"
            "max_epochs = 4\n"
            "[run]\n"
            "seeds = 3, 4\n"
            "variant = no_attention\n"
        )
        cfg = rc.ExperimentConfig.from_file(path)
        assert cfg.data_path == "data/x.csv"
        assert cfg.target == "OT"
        assert cfg.split == "etth"
        assert cfg.lookback_overlap is True
        assert cfg.lookback == 336 and cfg.horizon == 192
        assert cfg.periods == (1, 2)
        assert cfg.m == 20 and cfg.tau == 0.5 and cfg.metric == "cosine"
        assert cfg.learning_rate == 0.01 and cfg.max_epochs == 4
        assert cfg.seeds == (3, 4)
        assert cfg.variant == "no_attention"
        # everything not set keeps its default
        assert cfg.batch_size == 32 and cfg.stride == 1

    def test_unknown_section_names_it(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[modle]\nlookback = 8\n")
        with pytest.raises(ValueError, match=r"unknown config section \[modle\]"):
            rc.ExperimentConfig.from_file(path)

    def test_unknown_key_names_it(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[model]\nlookbck = 8\n")
        with pytest.raises(ValueError, match="unknown key 'lookbck'"):
            rc.ExperimentConfig.from_file(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            rc.ExperimentConfig.from_file(tmp_path / "nope.ini")

    def test_invalid_value_fails_validation(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[retrieval]\nm = 0\n")
        with pytest.raises(ValueError, match="invalid m"):
            rc.ExperimentConfig.from_file(path)

    def test_bad_boolean(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[data]\nlookback_overlap = maybe\n")
        with pytest.raises(ValueError, match="not a boolean"):
            rc.ExperimentConfig.from_file(path)


class TestOverride:
    def test_non_none_values_win(self):
        cfg = rc.ExperimentConfig(m=10, tau=0.1)
        out = cfg.override(m=25, tau=None, lookback=48)
        assert out.m == 25
        assert out.tau == 0.1
        assert out.lookback == 48

    def test_override_validates(self):
        with pytest.raises(ValueError, match="invalid m"):
            rc.ExperimentConfig().override(m=-3)

    def test_to_dict_is_json_friendly(self):
        d = rc.ExperimentConfig().to_dict()
        assert d["periods"] == [1, 2, 4]
        assert d["seeds"] == [0, 1, 2]
        assert d["metric"] == "pearson"
        import json
        json.dumps(d)
