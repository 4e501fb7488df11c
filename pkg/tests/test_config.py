import json

import pytest

from equityhpo.config import RunConfig, config_from_mapping, load_config
from equityhpo.errors import ConfigError


class TestDefaults:
    def test_defaults_validate(self):
        cfg = load_config()
        assert cfg.sampler == "tpe" and cfg.budget == 50 and cfg.seeds == 5 and cfg.epochs == 200
        assert cfg.ohlcv_path.exists() and cfg.fundamentals_path.exists()

    def test_default_oos_echoed(self):
        d = load_config(None, {"experiments": ["Exp1", "Exp4"]}).to_dict()
        assert d["windows"]["Exp1"]["oos_start"] == 200406
        assert d["windows"]["Exp4"]["oos_start"] == 199206
        assert d["shap"]["background"] == 100 and d["ohlcv"].startswith("<bundled>")
        json.dumps(d)

    def test_cells(self):
        cfg = load_config(None, {"experiments": ["Exp1", "Exp2", "Exp3", "Exp4"],
                                 "features": ["technical", "fundamental"],
                                 "regularizers": ["dropout", "batch_norm"]})
        assert len(cfg.cells()) == 16 == len(set(cfg.cells()))


class TestFile:
    def test_nested_keys(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("data:\n  ohlcv_columns: {Close: close}\nshap: {background: 7}\n"
                        "features: fundamental\noos_start: {Exp2: '200101'}\n")
        cfg = load_config(path)
        assert cfg.ohlcv_columns == {"Close": "close"} and cfg.shap.background == 7
        assert cfg.features == ["fundamental"] and cfg.oos_start == {"Exp2": 200101}

    def test_overrides_win(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("budget: 9\nseed: 3\n")
        cfg = load_config(path, {"budget": 4, "seed": None})
        assert cfg.budget == 4 and cfg.seed == 3

    @pytest.mark.parametrize("text", [
        "bogus: 1\n",
        "data: {prices: x.csv}\n",
        "shap: {colour: red}\n",
        "[1, 2]\n",
        "budget: [\n",
        "sampler: grid\n",
        "budget: 0\n",
        "features: [sentiment]\n",
        "regularizers: [l2]\n",
        "experiments: [Exp9]\n",
        "oos_start: {Exp1: 190001}\n",
        "benchmark_origin: yesterday\n",
        "shap: {rows: all}\n",
        "data: {ohlcv: /no/such/file.csv}\n",
    ])
    def test_invalid(self, tmp_path, text):
        path = tmp_path / "c.yaml"
        path.write_text(text)
        with pytest.raises(ConfigError):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.yaml")

    def test_bad_space_choice(self, tmp_path):
        space = tmp_path / "s.yaml"
        space.write_text("n_units: [0]\n")
        with pytest.raises(ConfigError):
            load_config(None, {"space": str(space)})
        space.write_text("optimizer: [LBFGS]\n")
        with pytest.raises(ConfigError):
            load_config(None, {"space": str(space)})

    def test_mapping_round_trip(self):
        cfg = config_from_mapping({"budget": 3, "shap": {"exact": True}})
        assert isinstance(cfg, RunConfig) and cfg.shap.exact is True
