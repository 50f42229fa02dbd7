# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
import logging
from dataclasses import fields, replace
from pathlib import Path

from resindesign.cli import Context, check, cli, option
from resindesign.config import apply_section, read_config_file
from resindesign.errors import InvalidParameters, ResinDesignError
from resindesign.models import ElasticityMatrix
from resindesign.util import export
from resindesign.util.checks import has_input
from resindesign.util.homogenization import homogenize as homogenize_raster
from resindesign.util.phase_field import run

logger = logging.getLogger(__name__)

RASTER_SUFFIXES = (".png", export.TENSOR_SUFFIX)
REPORT_COLUMNS = [
    "id",
    "Tc",
    "seed",
    "crystal_fraction",
    *(f.name for f in fields(ElasticityMatrix)),
    "E",
    "nu",
    "phase_fraction",
    "asymmetry",
    "bounds_ok",
    "perturbed_nodes",
    "merged_slivers",
    "failed",
    "error",
]


@cli.command()
@option("--tc", type=float, required=True, help="crystallization temp (C)")
@option("--grid", type=int, help="grid edge in cells")
@option("--steps", type=int, help="time steps")
@option("--out", type=Path, required=True, help="output file stem")
def simulate(ctx: Context):
    """Grow one microstructure and write it as PNG plus metadata."""
    s = ctx.settings
    grid = ctx.args.grid or s.data.grid
    steps = s.data.steps if ctx.args.steps is None else ctx.args.steps
    nucleation = replace(
        s.nucleation, rng_seed=ctx.seed(s.nucleation.rng_seed)
    )
    m = run(
        ctx.args.tc,
        (grid, grid),
        steps,
        s.phase_field,
        nucleation,
        progress=s.data.progress,
    )
    ctx.args.out.parent.mkdir(parents=True, exist_ok=True)
    path = export.save_microstructure(m, ctx.args.out)
    logger.info("Wrote %s", m)
    logger.info("Saved to %s", path)


def raster_files(source: Path) -> list[Path]:
    if source.is_file():
        return [source]
    files = sorted(
        p for p in source.iterdir() if p.suffix in RASTER_SUFFIXES
    )
    if not files:
        raise InvalidParameters(f"No rasters found in {source}")
    return files


@cli.command()
@check(has_input)
@option("--input", required=True, help="raster file or directory")
@option("--materials", type=Path, help="file with a [materials] section")
@option("--out", type=Path, required=True, help="CSV report")
@option("--stress-dir", type=Path, help="where to dump nodal stresses")
def homogenize(ctx: Context) -> int:
    """Homogenized stiffness of saved rasters, one CSV row each."""
    settings = ctx.settings
    if ctx.args.materials:
        data = read_config_file(ctx.args.materials)
        settings = apply_section(
            settings, "materials", data.get("materials", data)
        )
    h = settings.homogenization
    dump = h.stress_dump or ctx.args.stress_dir is not None
    stress_dir = ctx.args.stress_dir or ctx.args.out.parent / "stresses"
    if dump:
        stress_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for path in raster_files(Path(ctx.args.input)):
        row = {"id": path.stem}
        try:
            m = export.load_raster(path)
            result = homogenize_raster(
                m,
                settings.materials,
                diagonal=h.diagonal,
                spacing=h.spacing(m.shape[0]),
                with_stresses=dump,
            )
        except ResinDesignError as e:
            logger.warning("%s failed: %s", path.name, e)
            rows.append(row | {"failed": True, "error": str(e)})
            continue
        rows.append(
            row
            | {
                "Tc": m.Tc,
                "seed": m.seed,
                "crystal_fraction": m.crystal_fraction,
            }
            | result.row()
            | {"failed": False, "error": None}
        )
        if dump:
            export.save_tensor(
                stress_dir / f"{path.stem}{export.TENSOR_SUFFIX}",
                result.stresses,
            )
    ctx.args.out.parent.mkdir(parents=True, exist_ok=True)
    export.write_csv(ctx.args.out, rows, REPORT_COLUMNS)
    failed = sum(r["failed"] for r in rows)
    logger.info("Homogenized %d rasters, %d failed", len(rows), failed)
    return failed
