# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Training samples: compression, augmentation, normalization, splits."""
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from tqdm import tqdm

from resindesign.config import Settings
from resindesign.errors import InvalidParameters, OutOfRange, ShapeError
from resindesign.models import Microstructure, NormStats, TrainingSample
from resindesign.util import export
from resindesign.util.homogenization import homogenize
from resindesign.util.ippt import make_ippt
from resindesign.util.phase_field import run, thickness

logger = logging.getLogger(__name__)

DATASET_VERSION = 1
SPLITS = ("train", "val", "test")

# The four raster symmetries that keep D1111, D2222 and D1212 unchanged.
# Rows run along x2, so reflecting x2 flips rows.
AUGMENTATIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda a: a,
    "rot180": lambda a: np.flip(a, axis=(-2, -1)),
    "flip_x1": lambda a: np.flip(a, axis=-2),
    "flip_x1_rot180": lambda a: np.flip(a, axis=-1),
}


def compress(field: np.ndarray, factor: int = 5) -> np.ndarray:
    """Mean-pool non-overlapping blocks, then binarize (ties -> crystal)."""
    field = np.asarray(field, dtype=float)
    height, width = field.shape
    if height % factor or width % factor:
        raise ShapeError(
            f"Field {field.shape} is not divisible into {factor}x{factor} "
            "blocks"
        )
    pooled = field.reshape(
        height // factor, factor, width // factor, factor
    ).mean(axis=(1, 3))
    return (pooled >= 0.5).astype(np.uint8)


def augment(s: TrainingSample) -> list[TrainingSample]:
    base = s.sample_id
    return [
        replace(
            s,
            sample_id=f"{base}-{tag}",
            image=np.ascontiguousarray(transform(s.image)),
            augmentation=tag,
        )
        for tag, transform in AUGMENTATIONS.items()
    ]


def fit_norm_stats(raw: np.ndarray) -> NormStats:
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    return NormStats(
        minimum=tuple(float(v) for v in raw.min(axis=0)),
        maximum=tuple(float(v) for v in raw.max(axis=0)),
    )


def normalize(raw: np.ndarray, stats: NormStats) -> np.ndarray:
    lo, hi = np.array(stats.minimum), np.array(stats.maximum)
    scaled = (np.asarray(raw, dtype=float) - lo) / (hi - lo)
    if np.any((scaled < 0) | (scaled > 1)):
        message = (
            f"Condition {np.asarray(raw).tolist()} outside the training "
            "range; clamped"
        )
        logger.warning(message)
        warnings.warn(message, OutOfRange)
        scaled = np.clip(scaled, 0.0, 1.0)
    return scaled


def denormalize(condition: np.ndarray, stats: NormStats) -> np.ndarray:
    lo, hi = np.array(stats.minimum), np.array(stats.maximum)
    return lo + np.asarray(condition, dtype=float) * (hi - lo)


def make_sample(
    m: Microstructure, settings: Settings, sample_id: str | None = None
) -> TrainingSample:
    """Compress, homogenize and pair a simulated structure with its IPPT."""
    source = m.phi if m.phi is not None else m.cells
    cells = compress(source, settings.data.compress_factor)
    result = homogenize(
        cells,
        settings.materials,
        diagonal=settings.homogenization.diagonal,
        spacing=settings.homogenization.spacing(cells.shape[0]),
    )
    image = np.stack(
        [cells.astype(np.float32), make_ippt(m.Tc, cells.shape[1]).pixels]
    ).astype(np.float32)
    return TrainingSample(
        sample_id=sample_id or f"tc{m.Tc:g}-s{m.seed}",
        image=image,
        raw_condition=result.D.condition(),
        Tc=m.Tc,
        seed=m.seed,
        thickness=thickness(m),
    )


def simulate_sample(job: tuple[float, int, Settings]) -> TrainingSample:
    """Pool worker: grow one structure and turn it into a sample."""
    Tc, seed, settings = job
    m = run(
        Tc,
        (settings.data.grid, settings.data.grid),
        settings.data.steps,
        settings.phase_field,
        replace(settings.nucleation, rng_seed=seed),
    )
    return make_sample(m, settings)


def generate_samples(
    settings: Settings,
    temps: Sequence[float] | None = None,
    per_temp: int | None = None,
    seed: int | None = None,
    workers: int | None = None,
) -> list[TrainingSample]:
    """Simulate per_temp structures at each temperature, ordered by id."""
    data = settings.data
    temps = data.temps if temps is None else temps
    per_temp = data.per_temp if per_temp is None else per_temp
    seed = data.seed if seed is None else seed
    workers = data.workers if workers is None else workers

    jobs = [
        (float(Tc), seed + k, settings)
        for Tc in temps
        for k in range(per_temp)
    ]
    logger.info(
        "Simulating %d structures on %d worker(s)", len(jobs), workers
    )
    progress = dict(
        total=len(jobs), desc="Simulating", disable=not data.progress
    )
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            samples = list(tqdm(pool.map(simulate_sample, jobs), **progress))
    else:
        samples = [simulate_sample(job) for job in tqdm(jobs, **progress)]
    return sorted(samples, key=lambda s: s.sample_id)


@dataclass(frozen=True, eq=False)
class Splits:
    train: list[TrainingSample]
    val: list[TrainingSample]
    test: list[TrainingSample]
    stats: NormStats

    def items(self):
        return (("train", self.train), ("val", self.val), ("test", self.test))

    def counts(self) -> dict[str, int]:
        return {name: len(samples) for name, samples in self.items()}

    def all(self) -> list[TrainingSample]:
        return self.train + self.val + self.test


def build_splits(
    samples: Sequence[TrainingSample],
    ratios: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> Splits:
    """
    Shuffle base samples into train/val/test, fit normalization on the
    training split, then augment train and val. Test stays un-augmented.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise InvalidParameters("Need three non-negative split ratios")
    if abs(sum(ratios) - 1) > 1e-9:
        raise InvalidParameters(f"Split ratios sum to {sum(ratios)}, not 1")
    ids = [s.sample_id for s in samples]
    if len(set(ids)) != len(ids):
        raise InvalidParameters("Sample ids must be unique")

    ordered = sorted(samples, key=lambda s: s.sample_id)
    order = np.random.default_rng(seed).permutation(len(ordered))
    n_train = int(round(ratios[0] * len(ordered)))
    n_val = int(round(ratios[1] * len(ordered)))
    n_val = min(n_val, len(ordered) - n_train)
    train = [ordered[i] for i in order[:n_train]]
    val = [ordered[i] for i in order[n_train : n_train + n_val]]
    test = [ordered[i] for i in order[n_train + n_val :]]
    if not train:
        raise InvalidParameters("Training split is empty")

    stats = fit_norm_stats([s.raw_condition for s in train])

    def finish(group, augmented):
        out = []
        for s in group:
            s = s.with_condition(normalize(s.raw_condition, stats))
            out += augment(s) if augmented else [s]
        return out

    splits = Splits(
        train=finish(train, True),
        val=finish(val, True),
        test=finish(test, False),
        stats=stats,
    )
    logger.info("Built splits %s", splits.counts())
    return splits


def summarize(samples: Sequence[TrainingSample]) -> dict:
    """Per-temperature counts and medians of D1111 and thickness."""
    by_tc: dict[float, list[TrainingSample]] = {}
    for s in samples:
        if s.augmentation == "identity":
            by_tc.setdefault(float(s.Tc), []).append(s)
    summary = {}
    for Tc in sorted(by_tc):
        group = by_tc[Tc]
        thick = [s.thickness for s in group if s.thickness is not None]
        summary[f"{Tc:g}"] = {
            "count": len(group),
            "median_d1111": float(
                np.median([s.raw_condition[0] for s in group])
            ),
            "median_thickness": (
                float(np.median(thick)) if thick else None
            ),
            "mean_crystal_fraction": float(
                np.mean([s.crystal_fraction for s in group])
            ),
        }
    return summary


def write_dataset(directory: Path, splits: Splits, previews: bool = True):
    """Tensors under samples/, previews under previews/, one manifest."""
    directory = Path(directory)
    (directory / "samples").mkdir(parents=True, exist_ok=True)
    if previews:
        (directory / "previews").mkdir(exist_ok=True)
    manifest = {
        "version": DATASET_VERSION,
        "norm_stats": splits.stats.to_dict(),
        "counts": splits.counts(),
        "summary": summarize(splits.all()),
        "splits": {},
    }
    for name, group in splits.items():
        manifest["splits"][name] = [s.record() for s in group]
        for s in group:
            export.save_tensor(
                directory / "samples" / f"{s.sample_id}{export.TENSOR_SUFFIX}",
                s.image,
            )
            if previews and s.augmentation == "identity":
                export.save_png(
                    directory / "previews" / f"{s.sample_id}.png",
                    np.hstack([s.image[0], s.image[1]]),
                )
    export.write_json(directory / "manifest.json", manifest)
    logger.info("Wrote %s to %s", splits.counts(), directory)


def read_dataset(directory: Path) -> Splits:
    directory = Path(directory)
    manifest = export.read_json(directory / "manifest.json")
    if manifest.get("version") != DATASET_VERSION:
        raise InvalidParameters(
            f"Unsupported dataset version {manifest.get('version')}"
        )
    groups = {}
    for name in SPLITS:
        groups[name] = [
            TrainingSample(
                sample_id=record["id"],
                image=export.load_tensor(
                    directory
                    / "samples"
                    / f"{record['id']}{export.TENSOR_SUFFIX}"
                ),
                raw_condition=np.array(record["raw_condition"]),
                Tc=record["Tc"],
                seed=record["seed"],
                condition=(
                    None
                    if record["condition"] is None
                    else np.array(record["condition"])
                ),
                augmentation=record["augmentation"],
                thickness=record["thickness"],
            )
            for record in manifest["splits"].get(name, [])
        ]
    return Splits(
        stats=NormStats.from_dict(manifest["norm_stats"]), **groups
    )
