# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
import logging
from pathlib import Path

import numpy as np

from resindesign.cli import Context, check, cli, option
from resindesign.errors import InvalidParameters
from resindesign.util import export
from resindesign.util.checks import has_checkpoint, has_dataset
from resindesign.util.dataset import read_dataset
from resindesign.util.design import (
    DemoRequest,
    demo as run_demo,
    interpolated_conditions,
    report_neighbors as nearest_neighbors,
    validate as run_validation,
)
from resindesign.util.training import load_checkpoint

logger = logging.getLogger(__name__)


def training_microstructures(splits) -> tuple[np.ndarray, list[str]]:
    """Channel 0 of every training image, with ids."""
    if not splits.train:
        raise InvalidParameters("Dataset has no training images")
    return (
        np.stack([s.image[0] for s in splits.train]),
        [s.sample_id for s in splits.train],
    )


@cli.command()
@check(has_checkpoint)
@check(has_dataset)
@option("--ckpt", type=Path, required=True, help="trained checkpoint")
@option("--data", type=Path, required=True, help="dataset directory")
@option("--out", type=Path, required=True, help="report directory")
@option("--n", type=int, help="samples per condition")
@option("--source", choices=("test", "interpolated"), help="conditions")
@option("--limit", type=int, help="use at most this many conditions")
@option(
    "--real",
    action="store_true",
    help="run the stored test images instead of generated ones",
)
def validate(ctx: Context) -> int:
    """Re-homogenize generated structures and compare with their targets."""
    v = ctx.settings.validation
    splits = read_dataset(ctx.args.data)
    state, stats = load_checkpoint(ctx.args.ckpt)
    stats = stats or splits.stats
    source = ctx.args.source or v.source
    test = splits.test[: ctx.args.limit]
    if not test:
        raise InvalidParameters("Dataset has no test rows")
    conditions = np.stack([s.raw_condition for s in test])
    images = None
    if ctx.args.real:
        if source != "test":
            raise InvalidParameters("--real only applies to test conditions")
        images = np.stack([s.image for s in test])
    elif source == "interpolated":
        conditions = interpolated_conditions(conditions)

    training, _ = training_microstructures(splits)
    report = run_validation(
        state,
        stats,
        conditions,
        v.samples_per_condition if ctx.args.n is None else ctx.args.n,
        ctx.seed(v.seed),
        ctx.settings,
        training=training,
        images=images,
    )
    report.write(ctx.args.out)
    for key, r in report.correlations().items():
        logger.info(
            "Pearson %s: %s", key, "undefined" if r is None else f"{r:.4f}"
        )
    return report.failed


@cli.command()
@check(has_checkpoint)
@option("--ckpt", type=Path, required=True, help="trained checkpoint")
@option("--E", dest="E", type=float, nargs="+", required=True, help="MPa")
@option("--nu", type=float, nargs="+", required=True, help="Poisson's ratio")
@option("--n", type=int, default=1, help="samples per request")
@option("--out", type=Path, required=True, help="output directory")
def demo(ctx: Context) -> int:
    """Propose a processing temperature for target E and nu."""
    if len(ctx.args.E) != len(ctx.args.nu):
        raise InvalidParameters("Give one --nu per --E")
    requests = [DemoRequest(E, nu) for E, nu in zip(ctx.args.E, ctx.args.nu)]
    state, stats = load_checkpoint(ctx.args.ckpt)
    if stats is None:
        raise InvalidParameters("Checkpoint has no normalization statistics")
    out = ctx.args.out
    out.mkdir(parents=True, exist_ok=True)
    seed = ctx.seed(ctx.settings.validation.seed)
    failed = 0
    for k, req in enumerate(requests):
        result = run_demo(
            req, state, stats, ctx.settings, seed + k, ctx.args.n
        )
        record = result.record()
        export.write_json(out / f"demo-{k:02d}.json", record)
        for j, image in enumerate(result.images):
            export.save_png(out / f"demo-{k:02d}-{j:03d}-micro.png", image[0])
            export.save_png(out / f"demo-{k:02d}-{j:03d}-ippt.png", image[1])
        failed += sum(r["failed"] for r in result.rows)
        logger.info(
            "E=%g nu=%g: proposed Tc %s, achieved %s",
            req.E_target,
            req.nu_target,
            record["proposed_tc"],
            record["achieved"],
        )
    return failed


def load_generated(directory: Path, threshold: float):
    files = sorted(directory.glob(f"*{export.TENSOR_SUFFIX}"))
    if not files:
        raise InvalidParameters(f"No generated tensors in {directory}")
    images = []
    for path in files:
        data = export.load_tensor(path)
        images.append((data[0] if data.ndim == 3 else data) >= threshold)
    return np.stack(images).astype(float), [p.stem for p in files]


@cli.command(name="report-neighbors")
@check(has_dataset)
@option("--generated", type=Path, required=True, help="generated tensors")
@option("--data", type=Path, required=True, help="dataset directory")
@option("--out", type=Path, required=True, help="report directory")
def report_neighbors(ctx: Context):
    """Distance from each generated structure to its nearest training one."""
    generated, ids = load_generated(
        ctx.args.generated, ctx.settings.validation.threshold
    )
    training, train_ids = training_microstructures(
        read_dataset(ctx.args.data)
    )
    result = nearest_neighbors(generated, training)
    out = ctx.args.out
    out.mkdir(parents=True, exist_ok=True)
    export.write_csv(
        out / "neighbors.csv",
        [
            {"id": i, "nearest": train_ids[k], "distance": float(d)}
            for i, k, d in zip(ids, result.nearest, result.distances)
        ],
        ["id", "nearest", "distance"],
    )
    export.write_json(out / "neighbors.json", result.summary())
    logger.info("Nearest-neighbor distances: %s", result.summary())
