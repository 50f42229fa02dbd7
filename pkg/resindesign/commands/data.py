# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
import logging
from pathlib import Path

from resindesign.cli import Context, cli, option
from resindesign.errors import InvalidParameters
from resindesign.util.dataset import (
    build_splits,
    generate_samples,
    write_dataset,
)

logger = logging.getLogger(__name__)


def parse_temps(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError as e:
        raise InvalidParameters(f"Bad temperature list {text!r}") from e


@cli.command(name="gen-data")
@option("--temps", help="comma-separated temperatures, e.g. 160,180,200")
@option("--per-temp", type=int, help="structures per temperature")
@option("--workers", type=int, help="simulation processes")
@option("--out", type=Path, required=True, help="dataset directory")
def gen_data(ctx: Context):
    """Build a training dataset from fresh simulations."""
    data = ctx.settings.data
    temps = parse_temps(ctx.args.temps) if ctx.args.temps else data.temps
    if not temps:
        raise InvalidParameters("No temperatures given")
    seed = ctx.seed(data.seed)
    samples = generate_samples(
        ctx.settings,
        temps=temps,
        per_temp=ctx.args.per_temp,
        seed=seed,
        workers=ctx.args.workers,
    )
    splits = build_splits(samples, data.ratios, seed)
    write_dataset(ctx.args.out, splits, previews=data.previews)
