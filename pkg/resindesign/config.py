# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Run settings, loaded from TOML or JSON with command-line overrides."""
import json
import logging
import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable

from resindesign.errors import InvalidParameters
from resindesign.util.homogenization import PhaseMaterials
from resindesign.util.phase_field import NucleationParams, PhaseParams

logger = logging.getLogger(__name__)

CONFIG_ENV = "RESINDESIGN_CONFIG"


@dataclass(frozen=True)
class HomogenizationConfig:
    diagonal: str = "both"
    # Physical edge of the cell (mm); only scales reported stresses.
    length: float = 63.0
    stress_dump: bool = False

    def spacing(self, nodes: int) -> float:
        return self.length / (nodes - 1)


@dataclass(frozen=True)
class DiffusionConfig:
    """
    Denoiser and training defaults, sized for desk-scale runs.

    Full-scale reference: minibatch 15 for 1189 epochs; the 320-pixel
    demonstration model used minibatch 5 for 549 epochs.
    """

    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    image_size: int = 64
    channels: int = 2
    base_channels: int = 32
    channel_mults: tuple[int, ...] = (1, 2, 4)
    groups: int = 8
    embed_dim: int = 256
    learning_rate: float = 2e-4
    batch_size: int = 8
    epochs: int = 100
    patience: int = 10
    seed: int = 0
    progress: bool = True

    def __post_init__(self):
        if not 0 < self.beta_start <= self.beta_end < 1:
            raise InvalidParameters("Need 0 < beta_start <= beta_end < 1")
        if self.timesteps < 1:
            raise InvalidParameters("timesteps must be >= 1")
        if self.image_size % 2 ** (len(self.channel_mults) - 1):
            raise InvalidParameters(
                "image_size must be divisible by the U-Net downsampling"
            )


@dataclass(frozen=True)
class DataConfig:
    temps: tuple[float, ...] = (160.0, 180.0, 200.0)
    per_temp: int = 4
    grid: int = 320
    steps: int = 5000
    compress_factor: int = 5
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    workers: int = 1
    previews: bool = True
    progress: bool = True


@dataclass(frozen=True)
class ValidationConfig:
    candidates: tuple[float, ...] = (160.0, 180.0, 200.0)
    samples_per_condition: int = 1
    source: str = "test"
    threshold: float = 0.5
    min_confidence: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.source not in ("test", "interpolated"):
            raise InvalidParameters(
                f"Unknown condition source {self.source!r}"
            )


@dataclass(frozen=True)
class Settings:
    phase_field: PhaseParams = field(default_factory=PhaseParams)
    nucleation: NucleationParams = field(default_factory=NucleationParams)
    materials: PhaseMaterials = field(default_factory=PhaseMaterials)
    homogenization: HomogenizationConfig = field(
        default_factory=HomogenizationConfig
    )
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    data: DataConfig = field(default_factory=DataConfig)
    validation: ValidationConfig = field(default_factory=ValidationConfig)

    def to_dict(self) -> dict:
        return asdict(self)


SECTIONS = tuple(f.name for f in fields(Settings))


def _coerce(value):
    """Lists become tuples for tuple-typed fields so settings stay hashable."""
    if isinstance(value, list):
        return tuple(value)
    return value


def apply_section(settings: Settings, section: str, values: dict) -> Settings:
    if section not in SECTIONS:
        raise InvalidParameters(f"Unknown config section [{section}]")
    current = getattr(settings, section)
    known = {f.name for f in fields(current)}
    unknown = set(values) - known
    if unknown:
        raise InvalidParameters(
            f"Unknown key(s) in [{section}]: {', '.join(sorted(unknown))}"
        )
    coerced = {k: _coerce(v) for k, v in values.items()}
    try:
        return replace(settings, **{section: replace(current, **coerced)})
    except TypeError as e:
        raise InvalidParameters(f"Bad value in [{section}]: {e}") from e


def parse_override(text: str) -> tuple[str, str, object]:
    """Split `section.key=value`; the value is JSON when it parses."""
    target, sep, raw = text.partition("=")
    section, dot, key = target.strip().partition(".")
    if not (sep and dot and section and key):
        raise InvalidParameters(
            f"Override {text!r} is not of the form section.key=value"
        )
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return section, key, value


def read_config_file(path: Path) -> dict:
    path = Path(path)
    if path.suffix == ".toml":
        with path.open("rb") as f:
            return tomllib.load(f)
    if path.suffix == ".json":
        return json.loads(path.read_text())
    raise InvalidParameters(f"Config must be .toml or .json: {path}")


def load_settings(
    path: Path | str | None = None, overrides: Iterable[str] = ()
) -> Settings:
    """
    Defaults, then the config file (or $RESINDESIGN_CONFIG), then
    `section.key=value` overrides in order.
    """
    settings = Settings()
    if path is None:
        path = os.getenv(CONFIG_ENV) or None
    if path is not None:
        logger.info("Loading settings from %s", path)
        for section, values in read_config_file(Path(path)).items():
            if not isinstance(values, dict):
                raise InvalidParameters(
                    f"Top-level key {section!r} is not a section"
                )
            settings = apply_section(settings, section, values)
    for text in overrides:
        section, key, value = parse_override(text)
        settings = apply_section(settings, section, {key: value})
    return settings
