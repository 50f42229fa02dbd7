# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""
Inverse design: sample structures for target stiffness, decode their
processing temperature, re-homogenize, and report how close they came.
"""
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist
from scipy.stats import pearsonr

from resindesign.config import Settings
from resindesign.errors import (
    InvalidParameters,
    PoissonLimit,
    ResinDesignError,
)
from resindesign.models import CONDITION_KEYS, NormStats
from resindesign.util import export
from resindesign.util.checks import same_image_shape
from resindesign.util.dataset import normalize
from resindesign.util.diffusion import p_sample_loop
from resindesign.util.homogenization import homogenize, isotropic_dmat
from resindesign.util.ippt import decode_ippt
from resindesign.util.training import TrainState

logger = logging.getLogger(__name__)

POISSON_MARGIN = 1e-9
ROW_COLUMNS = [
    "id",
    "condition",
    *(f"input_{k}" for k in CONDITION_KEYS),
    "decoded_tc",
    "confidence",
    "low_confidence",
    "crystal_fraction",
    *CONDITION_KEYS,
    "E",
    "nu",
    "nearest_distance",
    "failed",
    "error",
]


def dmat_from_constants(E: float, nu: float) -> np.ndarray:
    """(D1111, D2222, D1212) of an isotropic plane-strain solid."""
    if nu >= 0.5 - POISSON_MARGIN:
        raise PoissonLimit(f"Poisson's ratio {nu} at the incompressible limit")
    if not E > 0 or nu <= -1:
        raise InvalidParameters(f"Invalid elastic constants E={E}, nu={nu}")
    return isotropic_dmat(E, nu, "plane-strain").condition()


@dataclass(frozen=True)
class DemoRequest:
    E_target: float
    nu_target: float

    def __post_init__(self):
        if not self.E_target > 0:
            raise InvalidParameters("Target Young's modulus must be positive")
        if self.nu_target >= 0.5 - POISSON_MARGIN:
            raise PoissonLimit(
                f"Target Poisson's ratio {self.nu_target} is too close to 0.5"
            )
        if not self.nu_target > 0:
            raise InvalidParameters("Target Poisson's ratio must be positive")


def pearson(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Pearson r, or None when it is undefined."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if len(x) < 3 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return None
    return float(pearsonr(x, y).statistic)


def pairwise_distances(
    generated: np.ndarray, training: np.ndarray
) -> np.ndarray:
    """Mean squared pixel distance between every generated/training pair."""
    generated = np.asarray(generated, dtype=float)
    training = np.asarray(training, dtype=float)
    same_image_shape(generated, training)
    pixels = int(np.prod(generated.shape[1:]))
    return (
        cdist(
            generated.reshape(len(generated), -1),
            training.reshape(len(training), -1),
            "sqeuclidean",
        )
        / pixels
    )


def distribution(values: Sequence[float]) -> dict | None:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return None
    q = np.quantile(values, [0, 0.25, 0.5, 0.75, 1])
    return {
        "count": int(values.size),
        "min": float(q[0]),
        "q1": float(q[1]),
        "median": float(q[2]),
        "q3": float(q[3]),
        "max": float(q[4]),
    }


@dataclass(frozen=True, eq=False)
class NeighborReport:
    distances: np.ndarray
    nearest: np.ndarray

    def summary(self) -> dict | None:
        return distribution(self.distances)


def report_neighbors(
    generated: np.ndarray, training: np.ndarray
) -> NeighborReport:
    """Distance from each generated image to its nearest training image."""
    generated = np.asarray(generated)
    if len(generated) == 0:
        return NeighborReport(np.zeros(0), np.zeros(0, dtype=int))
    if len(training) == 0:
        raise InvalidParameters("No training images to compare against")
    pairs = pairwise_distances(generated, training)
    return NeighborReport(
        distances=pairs.min(axis=1), nearest=pairs.argmin(axis=1)
    )


@dataclass(eq=False)
class ValidationReport:
    rows: list[dict]
    images: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def ok_rows(self) -> list[dict]:
        return [r for r in self.rows if not r["failed"]]

    @property
    def failed(self) -> int:
        return sum(bool(r["failed"]) for r in self.rows)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=ROW_COLUMNS)

    def correlations(self) -> dict[str, float | None]:
        ok = self.ok_rows
        return {
            key: pearson([r[f"input_{key}"] for r in ok], [r[key] for r in ok])
            for key in CONDITION_KEYS
        }

    def per_temperature(self) -> dict[str, dict]:
        groups: dict[float, list[dict]] = {}
        for r in self.ok_rows:
            groups.setdefault(r["decoded_tc"], []).append(r)
        return {
            f"{Tc:g}": {
                key: distribution([r[key] for r in groups[Tc]])
                for key in CONDITION_KEYS
            }
            for Tc in sorted(groups)
        }

    def summary(self) -> dict:
        ok = self.ok_rows
        return {
            "samples": len(self.rows),
            "failed": self.failed,
            "low_confidence": sum(bool(r["low_confidence"]) for r in ok),
            "correlations": self.correlations(),
            "per_temperature": self.per_temperature(),
            "scatter_d1111_d2222": [
                [r["d1111"] for r in ok],
                [r["d2222"] for r in ok],
            ],
            "nearest_distance": distribution(
                [
                    r["nearest_distance"]
                    for r in ok
                    if r["nearest_distance"] is not None
                ]
            ),
        }

    def write(self, directory: Path, plot: bool = True):
        directory = Path(directory)
        (directory / "images").mkdir(parents=True, exist_ok=True)
        export.write_csv(directory / "report.csv", self.rows, ROW_COLUMNS)
        export.write_json(directory / "summary.json", self.summary())
        for sample_id, image in self.images.items():
            export.save_png(
                directory / "images" / f"{sample_id}-micro.png", image[0]
            )
            export.save_png(
                directory / "images" / f"{sample_id}-ippt.png", image[1]
            )
        if plot and self.ok_rows:
            export.plot_validation(self.frame(), directory / "scatter.png")


def interpolated_conditions(raw: np.ndarray) -> np.ndarray:
    """Midpoints between consecutive conditions sorted by D1111."""
    raw = np.asarray(raw, dtype=float)
    ordered = raw[np.argsort(raw[:, 0], kind="stable")]
    return (ordered[1:] + ordered[:-1]) / 2


def evaluate_image(
    image: np.ndarray,
    settings: Settings,
    training: np.ndarray | None = None,
) -> dict:
    """Threshold, decode and re-homogenize one generated image."""
    v = settings.validation
    micro = (image[0] >= v.threshold).astype(np.uint8)
    decoded = decode_ippt(image[1], v.candidates, v.min_confidence)
    result = homogenize(
        micro,
        settings.materials,
        diagonal=settings.homogenization.diagonal,
        spacing=settings.homogenization.spacing(micro.shape[0]),
    )
    nearest = None
    if training is not None and len(training):
        nearest = float(report_neighbors(micro[None], training).distances[0])
    return {
        "decoded_tc": decoded.Tc,
        "confidence": decoded.confidence,
        "low_confidence": decoded.low_confidence,
        "crystal_fraction": float(micro.mean()),
        **{key: getattr(result.D, key) for key in CONDITION_KEYS},
        "E": result.E,
        "nu": result.nu,
        "nearest_distance": nearest,
    }


def _failed_row(error: Exception) -> dict:
    logger.warning("Sample failed: %s", error)
    return {
        "decoded_tc": None,
        "confidence": None,
        "low_confidence": None,
        "crystal_fraction": None,
        **{key: None for key in CONDITION_KEYS},
        "E": None,
        "nu": None,
        "nearest_distance": None,
        "failed": True,
        "error": str(error),
    }


def generate(
    state: TrainState,
    condition: np.ndarray,
    n: int,
    seed: int,
    progress: bool = False,
) -> np.ndarray:
    """n images for one normalized condition, as (n, C, H, W) in [0, 1]."""
    config = state.config
    shape = (n, config.channels, config.image_size, config.image_size)
    return p_sample_loop(
        state.model, condition, state.schedule, seed, shape, progress
    ).numpy()


def validate(
    state: TrainState,
    stats: NormStats,
    conditions: np.ndarray,
    n: int,
    seed: int,
    settings: Settings,
    training: np.ndarray | None = None,
    images: np.ndarray | None = None,
) -> ValidationReport:
    """
    Generate n structures per raw condition and compare the stiffness
    recomputed from each with the condition that asked for it.

    Passing `images` (one per condition) skips generation, which checks
    the decode and homogenization path on known structures.
    """
    conditions = np.asarray(conditions, dtype=float).reshape(-1, 3)
    report = ValidationReport(rows=[])
    if n == 0 and images is None:
        return report
    for i, raw in enumerate(conditions):
        if images is None:
            batch = generate(
                state,
                normalize(raw, stats),
                n,
                seed + i,
                settings.diffusion.progress,
            )
        else:
            batch = images[i : i + 1]
        for j, image in enumerate(batch):
            sample_id = f"c{i:04d}-n{j:03d}"
            row = {
                "id": sample_id,
                "condition": i,
                **{
                    f"input_{key}": float(v)
                    for key, v in zip(CONDITION_KEYS, raw)
                },
            }
            try:
                row |= evaluate_image(image, settings, training)
                row |= {"failed": False, "error": None}
            except ResinDesignError as e:
                row |= _failed_row(e)
            report.rows.append(row)
            report.images[sample_id] = image
    logger.info(
        "Validated %d samples, %d failed", len(report.rows), report.failed
    )
    return report


@dataclass(frozen=True, eq=False)
class DemoResult:
    request: DemoRequest
    target: np.ndarray
    condition: np.ndarray
    rows: list[dict]
    images: np.ndarray

    @property
    def proposed_tc(self) -> float | None:
        """Most frequent decoded temperature; ties go to the lowest."""
        decoded = [r["decoded_tc"] for r in self.rows if not r["failed"]]
        if not decoded:
            return None
        counts = Counter(decoded)
        top = max(counts.values())
        return min(tc for tc, c in counts.items() if c == top)

    def record(self) -> dict:
        ok = [r for r in self.rows if not r["failed"]]
        achieved = (
            {
                "E": float(np.median([r["E"] for r in ok])),
                "nu": float(np.median([r["nu"] for r in ok])),
            }
            if ok
            else None
        )
        return {
            "target": {
                "E": self.request.E_target,
                "nu": self.request.nu_target,
                **dict(zip(CONDITION_KEYS, self.target.tolist())),
            },
            "condition": self.condition.tolist(),
            "proposed_tc": self.proposed_tc,
            "confidence": (
                float(np.mean([r["confidence"] for r in ok])) if ok else None
            ),
            "achieved": achieved,
            "samples": self.rows,
        }


def demo(
    req: DemoRequest,
    state: TrainState,
    stats: NormStats,
    settings: Settings,
    seed: int,
    n: int = 1,
) -> DemoResult:
    """Propose a processing temperature and structure for target E, nu."""
    target = dmat_from_constants(req.E_target, req.nu_target)
    condition = normalize(target, stats)
    logger.info(
        "Target E=%g nu=%g -> D=%s, normalized %s",
        req.E_target,
        req.nu_target,
        target.round(3).tolist(),
        condition.round(4).tolist(),
    )
    images = generate(state, condition, n, seed, settings.diffusion.progress)
    rows = []
    for j, image in enumerate(images):
        row = {"id": f"demo-{j:03d}"}
        try:
            row |= evaluate_image(image, settings)
            row |= {"failed": False, "error": None}
        except ResinDesignError as e:
            row |= _failed_row(e)
        rows.append(row)
    return DemoResult(
        request=req,
        target=target,
        condition=condition,
        rows=rows,
        images=images,
    )
