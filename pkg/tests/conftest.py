import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

HEADER = "Date,Open,High,Low,Close,Adj Close,Volume\n"


def ohlcv_text(rows):
    """rows: (date, price, volume); open=high=low=close=adj close=price."""
    lines = [f"{d},{p},{p},{p},{p},{p},{v}\n" for d, p, v in rows]
    return HEADER + "".join(lines)


@pytest.fixture
def write_csv(tmp_path):
    def _write(text, name="data.csv"):
        path = tmp_path / name
        path.write_text(text)
        return path
    return _write


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


TINY_SPACE = "n_units: [2]\nbatch_size: [128]\nn_hidden_layers: [2]\noptimizer: [ADAM, SGD]\n"


@pytest.fixture
def tiny_config(tmp_path):
    """Write a fast run configuration; keyword overrides replace top-level keys."""
    def _make(**overrides):
        import yaml

        space = tmp_path / "space.yaml"
        space.write_text(TINY_SPACE)
        doc = {"budget": 2, "seeds": 2, "epochs": 2, "space": str(space),
               "shap": {"background": 5, "n_coalitions": 64, "exact": False}}
        doc.update(overrides)
        path = tmp_path / "run.yaml"
        path.write_text(yaml.safe_dump(doc))
        return path
    return _make


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.RESULTS[number])
