"""Pipeline configuration and its TOML-style key/value file format.

The file is flat ``key = value`` lines: strings quoted, booleans
``true``/``false``, numbers bare, lists in brackets. ``#`` starts a
comment. Example::

    # rendering
    seed = 7
    image_size = 512
    angles = [0, 72, 144, 216, 288]
    coloring = "nv"
    smoothing = true

Command-line flags override file values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .normals import NormalParams
from .preprocess import SorParams
from .projection import RenderConfig


class ConfigError(ValueError):
    pass


def _parse_scalar(text: str, path, lineno: int):
    text = text.strip()
    if text.startswith('"') and text.endswith('"') and len(text) >= 2:
        return text[1:-1]
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{path}: line {lineno}: cannot parse value {text!r}") \
            from None


def load_config_file(path) -> dict:
    """Parse a flat TOML-style key/value file into a dict."""
    values: dict = {}
    with open(path, "r") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if '"' not in line:
                line = line.split("#", 1)[0].strip()
            elif line.startswith("#"):
                line = ""
            if not line:
                continue
            if line.startswith("["):
                raise ConfigError(
                    f"{path}: line {lineno}: sections are not supported; "
                    f"use flat keys"
                )
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if value.startswith("[") and value.endswith("]"):
                inner = value[1:-1].strip()
                items = [v.strip() for v in inner.split(",")] if inner else []
                values[key] = [_parse_scalar(v, path, lineno) for v in items]
            else:
                values[key] = _parse_scalar(value, path, lineno)
    return values


_KNOWN_KEYS = {
    "seed", "sor_k", "sor_n", "spacing", "normal_neighbors",
    "image_size", "angles", "slice_offset", "coloring", "channels",
    "smoothing", "test_fraction", "downsample", "jobs", "threshold",
    "input_root", "output_root",
}


@dataclass
class PipelineConfig:
    """Union of the per-stage parameter sets; seed is mandatory."""

    seed: int
    sor: SorParams = field(default_factory=SorParams)
    spacing: float = 0.02
    normal_params: NormalParams = field(default_factory=NormalParams)
    render: RenderConfig = field(default_factory=RenderConfig)
    test_fraction: float = 0.2
    downsample: int = 32
    jobs: int = 1
    threshold: float = 3.0
    input_root: str | None = None
    output_root: str | None = None

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("seed is mandatory for reproducible runs")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    @classmethod
    def from_mapping(cls, values: dict) -> "PipelineConfig":
        unknown = set(values) - _KNOWN_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "seed" not in values:
            raise ConfigError("seed is mandatory for reproducible runs")
        sor = SorParams(k_neighbors=int(values.get("sor_k", 8)),
                        n_sigma=float(values.get("sor_n", 1.0)))
        normal_params = NormalParams(
            n_neighbors=int(values.get("normal_neighbors", 20)))
        render = RenderConfig(
            image_size=int(values.get("image_size", 1024)),
            angles_deg=tuple(values.get("angles", RenderConfig().angles_deg)),
            slice_offset=float(values.get("slice_offset", 0.7)),
            coloring=str(values.get("coloring", "wop")),
            channels=tuple(values.get("channels", (1,))),
            smoothing=bool(values.get("smoothing", True)),
        )
        return cls(
            seed=int(values["seed"]),
            sor=sor,
            spacing=float(values.get("spacing", 0.02)),
            normal_params=normal_params,
            render=render,
            test_fraction=float(values.get("test_fraction", 0.2)),
            downsample=int(values.get("downsample", 32)),
            jobs=int(values.get("jobs", 1)),
            threshold=float(values.get("threshold", 3.0)),
            input_root=values.get("input_root"),
            output_root=values.get("output_root"),
        )

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        if not Path(path).is_file():
            raise ConfigError(f"{path}: config file not found")
        return cls.from_mapping(load_config_file(path))
