"""Tests for run configuration loading."""

import json

import numpy as np
import pytest

from evslide.config import (
    ConfigManager,
    GraphConfig,
    RunConfig,
    SensorGeometry,
    WindowSpec,
    config_digest,
)
from evslide.errors import ConfigError
from evslide.models import Precision


@pytest.fixture
def manager(tmp_path):
    m = ConfigManager()
    m.config_file = tmp_path / "missing" / "config.toml"
    return m


DOCUMENTS = {
    "run.json": json.dumps({"mini_batch": 10, "graph": {"radius": 3.0}}),
    "run.toml": "mini_batch = 10\n\n[graph]\nradius = 3.0\n",
    "run.yaml": "mini_batch: 10\ngraph:\n  radius: 3.0\n",
}


class TestLoadConfig:
    def test_defaults(self, manager):
        config = manager.load_config()
        assert config.mini_batch == 1
        assert config.refresh_interval == 4096
        assert config.precision is Precision.F64
        assert config.graph.window.by_time_us == 50_000

    @pytest.mark.parametrize("name", sorted(DOCUMENTS))
    def test_formats(self, manager, tmp_path, name):
        path = tmp_path / name
        path.write_text(DOCUMENTS[name])
        config = manager.load_config(path)
        assert config.mini_batch == 10
        assert config.graph.radius == 3.0
        assert config.graph.max_degree == 16

    def test_unknown_suffix(self, manager, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[graph]\n")
        with pytest.raises(ConfigError, match="unsupported"):
            manager.load_config(path)

    def test_unparsable(self, manager, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            manager.load_config(path)

    def test_invalid_values(self, manager, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"graph": {"radius": -1}}))
        with pytest.raises(ConfigError, match="invalid run configuration"):
            manager.load_config(path)

    def test_missing_file(self, manager, tmp_path):
        with pytest.raises(ConfigError):
            manager.load_config(tmp_path / "nope.json")

    def test_user_defaults_then_document_then_overrides(self, manager, tmp_path):
        manager.config_file.parent.mkdir(parents=True)
        manager.config_file.write_text(
            "seed = 4\nmini_batch = 3\n\n[graph]\nmax_degree = 8\n"
        )
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"mini_batch": 5}))
        config = manager.load_config(path, {"graph": {"radius": 2.0}, "seed": None})
        assert config.seed == 4
        assert config.mini_batch == 5
        assert config.graph.max_degree == 8
        assert config.graph.radius == 2.0

    def test_environment(self, manager, monkeypatch):
        monkeypatch.setenv("EVSLIDE_MINI_BATCH", "7")
        monkeypatch.setenv("EVSLIDE_GRAPH__RADIUS", "2.5")
        config = manager.load_config()
        assert config.mini_batch == 7
        assert config.graph.radius == 2.5


class TestSaveConfig:
    @pytest.mark.parametrize("suffix", [".json", ".toml", ".yaml"])
    def test_round_trip(self, manager, tmp_path, suffix):
        config = RunConfig(
            geometry=SensorGeometry(width=32, height=24),
            graph=GraphConfig(radius=2.0, window=WindowSpec(by_count=500)),
            mini_batch=10,
        )
        path = tmp_path / f"run{suffix}"
        manager.save_config(config, path)
        assert config_digest(manager.load_config(path)) == config_digest(config)

    def test_unknown_suffix(self, manager, tmp_path):
        with pytest.raises(ConfigError):
            manager.save_config(RunConfig(), tmp_path / "run.cfg")


class TestDigest:
    def test_stable(self):
        assert config_digest(RunConfig()) == config_digest(RunConfig())

    def test_ignores_output(self, tmp_path):
        a = RunConfig()
        b = RunConfig(output={"directory": tmp_path, "step_reports": False})
        assert config_digest(a) == config_digest(b)

    def test_tracks_run_fields(self):
        assert config_digest(RunConfig(mini_batch=2)) != config_digest(RunConfig())


class TestGeometry:
    def test_diagonal(self):
        assert SensorGeometry(width=3, height=4).diagonal == 5.0

    def test_contains(self):
        geometry = SensorGeometry(width=4, height=2)
        assert geometry.contains(3, 1)
        assert not geometry.contains(4, 0)
        assert not geometry.contains(0, -1)


class TestPrecision:
    @pytest.mark.parametrize(
        ("precision", "dtype"), [("f32", np.float32), ("f64", np.float64)]
    )
    def test_dtype(self, precision, dtype):
        assert Precision(precision).dtype is dtype
        assert RunConfig(precision=precision).precision.dtype is dtype
