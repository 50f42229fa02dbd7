# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from resindesign.cli import Context, check, cli, option
from resindesign.errors import InvalidParameters
from resindesign.models import CONDITION_KEYS
from resindesign.util import export
from resindesign.util.checks import has_checkpoint, has_dataset
from resindesign.util.dataset import normalize, read_dataset
from resindesign.util.design import generate
from resindesign.util.training import fit, load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)


@cli.command()
@check(has_dataset)
@option("--data", type=Path, required=True, help="dataset directory")
@option("--out", type=Path, required=True, help="checkpoint file")
@option("--resume", type=Path, help="continue from this checkpoint")
def train(ctx: Context):
    """Train the conditional denoiser on a dataset."""
    splits = read_dataset(ctx.args.data)
    config = ctx.settings.diffusion
    config = replace(config, seed=ctx.seed(config.seed))
    state = None
    if ctx.args.resume:
        state, _ = load_checkpoint(ctx.args.resume)
        logger.info("Resuming from epoch %d", state.epoch)
    image_size = splits.train[0].image.shape[-1]
    if image_size != config.image_size:
        raise InvalidParameters(
            f"Dataset images are {image_size} px, config says "
            f"{config.image_size}"
        )
    state = fit(splits.train, splits.val, config, state)
    ctx.args.out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ctx.args.out, state, splits.stats)
    export.write_csv(
        ctx.args.out.with_suffix(".history.csv"),
        state.history,
        ["epoch", "train", "val"],
    )


@cli.command()
@check(has_checkpoint)
@option("--ckpt", type=Path, required=True, help="trained checkpoint")
@option("--d1111", type=float, required=True, help="target D1111 (MPa)")
@option("--d2222", type=float, required=True, help="target D2222 (MPa)")
@option("--d1212", type=float, required=True, help="target D1212 (MPa)")
@option("--n", type=int, default=1, help="images to draw")
@option("--out", type=Path, required=True, help="output directory")
def sample(ctx: Context):
    """Draw structures for a target stiffness."""
    state, stats = load_checkpoint(ctx.args.ckpt)
    if stats is None:
        raise InvalidParameters("Checkpoint has no normalization statistics")
    raw = np.array([ctx.args.d1111, ctx.args.d2222, ctx.args.d1212])
    condition = normalize(raw, stats)
    seed = ctx.seed(ctx.settings.validation.seed)
    images = generate(
        state, condition, ctx.args.n, seed, ctx.settings.diffusion.progress
    )
    out = ctx.args.out
    out.mkdir(parents=True, exist_ok=True)
    for j, image in enumerate(images):
        stem = out / f"sample-{j:03d}"
        export.save_tensor(stem.with_suffix(export.TENSOR_SUFFIX), image)
        export.save_png(out / f"{stem.name}-micro.png", image[0])
        export.save_png(out / f"{stem.name}-ippt.png", image[1])
    export.write_json(
        out / "samples.json",
        {
            "checkpoint": str(ctx.args.ckpt),
            "seed": seed,
            "raw_condition": dict(zip(CONDITION_KEYS, raw.tolist())),
            "condition": condition.tolist(),
            "count": len(images),
        },
    )
    logger.info("Wrote %d samples to %s", len(images), out)
