# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Records passed between the simulation, dataset and model stages."""
from dataclasses import dataclass, field, replace

import numpy as np

from resindesign.errors import InvalidParameters, ShapeError

CONDITION_KEYS = ("d1111", "d2222", "d1212")


@dataclass(frozen=True, eq=False)
class Microstructure:
    """Thresholded crystal (1) / amorphous (0) raster with provenance."""

    cells: np.ndarray
    Tc: float
    seed: int
    phi: np.ndarray | None = None
    steps: int = 0
    crystal_fraction: float = field(init=False)

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.uint8)
        if cells.ndim != 2:
            raise ShapeError(f"Expected a 2D raster, got shape {cells.shape}")
        if np.any(cells > 1):
            raise InvalidParameters("Microstructure cells must be 0 or 1")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "crystal_fraction", float(cells.mean()))

    @classmethod
    def from_phi(cls, phi: np.ndarray, Tc: float, seed: int, steps: int = 0):
        """Threshold an order-parameter field at 0.5."""
        return cls(
            cells=(phi >= 0.5).astype(np.uint8),
            Tc=Tc,
            seed=seed,
            phi=phi,
            steps=steps,
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def metadata(self) -> dict:
        return {
            "Tc": self.Tc,
            "seed": self.seed,
            "grid": list(self.shape),
            "steps": self.steps,
            "crystal_fraction": self.crystal_fraction,
        }

    def __str__(self):
        return f"Microstructure {self.shape} Tc={self.Tc} seed={self.seed}"


@dataclass(frozen=True)
class ElasticityMatrix:
    """Voigt-notation stiffness relating (s11, s22, t12) to (e11, e22, g12).

    All entries in MPa.
    """

    d1111: float
    d1122: float
    d1112: float
    d2222: float
    d2212: float
    d1212: float

    @classmethod
    def from_array(cls, d: np.ndarray) -> "ElasticityMatrix":
        """Build from a 3x3 array, symmetrizing by (D + D^T) / 2."""
        d = 0.5 * (np.asarray(d, dtype=float) + np.asarray(d).T)
        return cls(
            d1111=float(d[0, 0]),
            d1122=float(d[0, 1]),
            d1112=float(d[0, 2]),
            d2222=float(d[1, 1]),
            d2212=float(d[1, 2]),
            d1212=float(d[2, 2]),
        )

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                [self.d1111, self.d1122, self.d1112],
                [self.d1122, self.d2222, self.d2212],
                [self.d1112, self.d2212, self.d1212],
            ]
        )

    def condition(self) -> np.ndarray:
        """The (D1111, D2222, D1212) vector the diffusion model is fed."""
        return np.array([self.d1111, self.d2222, self.d1212])

    def to_dict(self) -> dict[str, float]:
        return {
            "d1111": self.d1111,
            "d1122": self.d1122,
            "d1112": self.d1112,
            "d2222": self.d2222,
            "d2212": self.d2212,
            "d1212": self.d1212,
        }


@dataclass(frozen=True)
class NormStats:
    """Per-component min/max of the training conditions (MPa)."""

    minimum: tuple[float, float, float]
    maximum: tuple[float, float, float]

    def __post_init__(self):
        if len(self.minimum) != 3 or len(self.maximum) != 3:
            raise InvalidParameters("NormStats needs three components")
        for lo, hi in zip(self.minimum, self.maximum):
            if not hi > lo:
                raise InvalidParameters(
                    f"NormStats max must exceed min, got {lo} >= {hi}"
                )

    def to_dict(self) -> dict:
        return {"min": list(self.minimum), "max": list(self.maximum)}

    @classmethod
    def from_dict(cls, data: dict) -> "NormStats":
        return cls(
            minimum=tuple(float(v) for v in data["min"]),
            maximum=tuple(float(v) for v in data["max"]),
        )


@dataclass(frozen=True)
class IpptImage:
    """Sinusoidal stripe image encoding a crystallization temperature."""

    pixels: np.ndarray
    Tc: float


@dataclass(frozen=True, eq=False)
class TrainingSample:
    """Two-channel image (microstructure, IPPT) with its condition.

    `image` is (2, H, W) float32, channel-first as the network consumes it.
    `condition` stays None until normalization statistics exist.
    """

    sample_id: str
    image: np.ndarray
    raw_condition: np.ndarray
    Tc: float
    seed: int
    condition: np.ndarray | None = None
    augmentation: str = "identity"
    thickness: float | None = None

    @property
    def crystal_fraction(self) -> float:
        return float(self.image[0].mean())

    def with_condition(self, condition: np.ndarray) -> "TrainingSample":
        return replace(self, condition=np.asarray(condition, dtype=float))

    def record(self) -> dict:
        """Manifest entry; the image itself is stored separately."""
        return {
            "id": self.sample_id,
            "Tc": self.Tc,
            "seed": self.seed,
            "augmentation": self.augmentation,
            "condition": (
                None
                if self.condition is None
                else [float(v) for v in self.condition]
            ),
            "raw_condition": [float(v) for v in self.raw_condition],
            "thickness": self.thickness,
        }
