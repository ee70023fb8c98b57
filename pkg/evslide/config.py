"""Run configuration with XDG-compliant user defaults."""

import hashlib
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import platformdirs
import toml
import yaml
from pydantic import BaseModel, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigError
from .models import EdgeMode, Precision


class SensorGeometry(BaseModel):
    """Sensor size and the temporal-to-spatial scale used for distances."""

    width: int = Field(128, ge=1)
    height: int = Field(128, ge=1)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def contains(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height


class WindowSpec(BaseModel):
    """Sliding window bound; exactly one of the two fields is set."""

    by_time_us: Optional[int] = Field(None, gt=0)
    by_count: Optional[int] = Field(None, gt=0)

    @model_validator(mode="after")
    def _exactly_one(self) -> "WindowSpec":
        if (self.by_time_us is None) == (self.by_count is None):
            raise ValueError("window needs exactly one of by_time_us / by_count")
        return self

    @property
    def kind(self) -> str:
        return "by_time" if self.by_time_us is not None else "by_count"


class GraphConfig(BaseModel):
    """Radius-neighborhood graph parameters."""

    radius: float = Field(5.0, gt=0)
    temporal_scale: Optional[float] = Field(None, gt=0)  # alpha; None = derive
    max_degree: int = Field(16, ge=1)
    window: WindowSpec = Field(default_factory=lambda: WindowSpec(by_time_us=50_000))
    edge_mode: EdgeMode = EdgeMode.SYMMETRIC

    @property
    def alpha(self) -> float:
        if self.temporal_scale is None:
            raise ConfigError(
                "temporal_scale is unresolved; call with_temporal_scale() first"
            )
        return self.temporal_scale

    def with_temporal_scale(
        self, geometry: SensorGeometry, rate_hz: Optional[float] = None
    ) -> "GraphConfig":
        """Default alpha: the window's time extent spans the sensor diagonal."""
        if self.temporal_scale is not None:
            return self
        if self.window.by_time_us is not None:
            extent_us = float(self.window.by_time_us)
        elif rate_hz:
            extent_us = self.window.by_count / rate_hz * 1e6
        else:
            raise ConfigError(
                "count windows need an explicit temporal_scale "
                "or a stream rate to derive one"
            )
        return self.model_copy(update={"temporal_scale": geometry.diagonal / extent_us})


class NetworkConfig(BaseModel):
    """Where network weights come from."""

    weights: Optional[Path] = None  # JSON weights document
    widths: List[int] = Field(default_factory=lambda: [1, 32, 32, 32, 32])
    num_classes: int = Field(10, ge=1)
    state_hidden: int = Field(16, ge=1)
    readout: Literal["mean", "max", "mean_max"] = "mean_max"
    pool_after: Optional[int] = None  # index of the conv layer followed by a voxel pool
    voxel: Tuple[float, float, float] = (4.0, 4.0, 10_000.0)
    pool_aggr: Literal["mean", "max"] = "mean"
    pool_radius: Optional[float] = None
    seed: int = 0


class PolicyConfig(BaseModel):
    """Early-stop policy."""

    threshold: float = Field(0.5, ge=0.0, le=1.0)
    stride: int = Field(1, ge=1)
    min_events: int = Field(0, ge=0)


class BenchConfig(BaseModel):
    """Benchmark sweep sizes."""

    mini_batch_sizes: List[int] = Field(default_factory=lambda: [1, 10, 100])
    window_sizes: List[int] = Field(default_factory=lambda: [10_000, 20_000, 50_000])
    steps: int = Field(200, ge=1)
    warmup: int = Field(10, ge=0)
    index_window: int = Field(100_000, ge=1)
    index_slide: int = Field(100, ge=1)
    index_repeats: int = Field(1_000, ge=1)


class OutputConfig(BaseModel):
    """Output locations (not part of the config digest)."""

    directory: Optional[Path] = None
    step_reports: bool = True


class RunConfig(BaseSettings):
    """Everything that determines a run given an input stream."""

    geometry: SensorGeometry = Field(default_factory=SensorGeometry)
    graph: GraphConfig = Field(default_factory=GraphConfig)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    policy: PolicyConfig = Field(default_factory=PolicyConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    mini_batch: int = Field(1, ge=1)
    refresh_interval: int = Field(4096, ge=0)  # 0 disables refresh
    precision: Precision = Precision.F64
    seed: int = 0

    model_config = SettingsConfigDict(
        env_prefix="EVSLIDE_",
        env_nested_delimiter="__",
        case_sensitive=False,
    )


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_digest(config: RunConfig) -> str:
    """SHA-256 over the canonical JSON of everything except output paths."""
    payload = config.model_dump(mode="json", exclude={"output"})
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        elif value is not None:
            merged[key] = value
    return merged


class ConfigManager:
    """Loads run documents and user defaults following the XDG layout."""

    def __init__(self, app_name: str = "evslide"):
        self.app_name = app_name
        self.config_dir = Path(platformdirs.user_config_dir(self.app_name))
        self.data_dir = Path(platformdirs.user_data_dir(self.app_name))

        # Optional user-level defaults
        self.config_file = self.config_dir / "config.toml"

    def runs_dir(self) -> Path:
        """Default directory for run outputs."""
        path = self.data_dir / "runs"
        path.mkdir(parents=True, exist_ok=True)
        return path

    @staticmethod
    def load_document(path: Path) -> Dict[str, Any]:
        """Read a JSON, TOML or YAML document into a dict."""
        path = Path(path)
        suffix = path.suffix.lower()
        try:
            text = path.read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e

        try:
            if suffix == ".json":
                data = json.loads(text)
            elif suffix == ".toml":
                data = toml.loads(text)
            elif suffix in (".yaml", ".yml"):
                data = yaml.safe_load(text)
            else:
                raise ConfigError(f"unsupported config format '{suffix}' ({path})")
        except (json.JSONDecodeError, toml.TomlDecodeError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot parse config {path}: {e}") from e

        if data is None:
            return {}
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a mapping at top level")
        return data

    def load_config(
        self,
        path: Optional[Path] = None,
        overrides: Optional[Dict[str, Any]] = None,
    ) -> RunConfig:
        """Resolve user defaults, then the run document, then CLI overrides."""
        data: Dict[str, Any] = {}

        if self.config_file.exists():
            data = _deep_merge(data, self.load_document(self.config_file))
        if path is not None:
            data = _deep_merge(data, self.load_document(path))
        if overrides:
            data = _deep_merge(data, overrides)

        try:
            return RunConfig(**data)
        except ValidationError as e:
            raise ConfigError(f"invalid run configuration:\n{e}") from e

    @staticmethod
    def save_config(config: RunConfig, path: Path) -> None:
        """Write a run document; the format follows the file suffix."""
        path = Path(path)
        data = config.model_dump(mode="json", exclude_none=True)
        suffix = path.suffix.lower()

        if suffix == ".json":
            path.write_text(json.dumps(data, indent=2, sort_keys=True))
        elif suffix == ".toml":
            path.write_text(toml.dumps(data))
        elif suffix in (".yaml", ".yml"):
            path.write_text(yaml.safe_dump(data, sort_keys=True))
        else:
            raise ConfigError(f"unsupported config format '{suffix}' ({path})")


# Global config manager instance
config_manager = ConfigManager()
