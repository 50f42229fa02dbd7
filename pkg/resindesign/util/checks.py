# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from resindesign.errors import InvalidParameters, ShapeError

if TYPE_CHECKING:
    from resindesign.cli import Context
    from resindesign.util.phase_field import NucleationParams


def tc_supported(Tc: float, n: "NucleationParams") -> bool:
    """Check that Tc lies in the configured temperature support."""
    if not n.tc_min <= Tc <= n.tc_max:
        raise InvalidParameters(
            f"Tc = {Tc} outside the supported range "
            f"[{n.tc_min}, {n.tc_max}]"
        )
    return True


def same_image_shape(a: np.ndarray, b: np.ndarray) -> bool:
    """Check that two image stacks hold images of one shape."""
    if np.shape(a)[1:] != np.shape(b)[1:]:
        raise ShapeError(
            f"Image shapes differ: {np.shape(a)[1:]} vs {np.shape(b)[1:]}"
        )
    return True


def has_dataset(ctx: "Context") -> bool:
    """Check that --data points at a written dataset."""
    manifest = Path(ctx.args.data) / "manifest.json"
    if not manifest.is_file():
        raise InvalidParameters(f"No dataset manifest at {manifest}")
    return True


def has_checkpoint(ctx: "Context") -> bool:
    """Check that --ckpt points at an existing checkpoint file."""
    if not Path(ctx.args.ckpt).is_file():
        raise InvalidParameters(f"Checkpoint not found: {ctx.args.ckpt}")
    return True


def has_input(ctx: "Context") -> bool:
    """Check that --input exists."""
    if not Path(ctx.args.input).exists():
        raise InvalidParameters(f"Input not found: {ctx.args.input}")
    return True
