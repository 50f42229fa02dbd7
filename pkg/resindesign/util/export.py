# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Reading and writing rasters, tensors, records and reports."""
import json
import struct
from io import BytesIO
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.image as mpimg  # noqa: E402
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np
import pandas as pd

from resindesign.errors import InvalidParameters, ShapeError
from resindesign.models import Microstructure

TENSOR_MAGIC = b"RDT1"
TENSOR_SUFFIX = ".f32"


def write_tensor(array: np.ndarray, buffer: BytesIO):
    """Magic, ndim and dims as little-endian uint32, then float32 data."""
    array = np.ascontiguousarray(array, dtype="<f4")
    buffer.write(TENSOR_MAGIC)
    buffer.write(struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape))
    buffer.write(array.tobytes())


def read_tensor(buffer: BytesIO) -> np.ndarray:
    if buffer.read(4) != TENSOR_MAGIC:
        raise ShapeError("Not a tensor file")
    (ndim,) = struct.unpack("<I", buffer.read(4))
    shape = struct.unpack(f"<{ndim}I", buffer.read(4 * ndim))
    data = np.frombuffer(buffer.read(), dtype="<f4")
    if data.size != int(np.prod(shape)):
        raise ShapeError(
            f"Tensor payload has {data.size} values, header says {shape}"
        )
    return data.reshape(shape).astype(np.float32)


def save_tensor(path: Path, array: np.ndarray):
    buffer = BytesIO()
    write_tensor(array, buffer)
    Path(path).write_bytes(buffer.getvalue())


def load_tensor(path: Path) -> np.ndarray:
    return read_tensor(BytesIO(Path(path).read_bytes()))


def write_json(path: Path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def read_json(path: Path):
    return json.loads(Path(path).read_text())


def save_png(path: Path, image: np.ndarray):
    """Grayscale, 0 black and 1 white; values outside [0, 1] are clipped."""
    mpimg.imsave(
        path, np.clip(image, 0.0, 1.0), vmin=0.0, vmax=1.0, cmap="gray"
    )


def load_png(path: Path) -> np.ndarray:
    image = mpimg.imread(path)
    # imsave writes RGBA; any colour channel carries the gray level.
    return np.asarray(image[..., 0] if image.ndim == 3 else image, float)


def save_microstructure(m: Microstructure, path: Path) -> Path:
    """Write `<path>.png` and its `<path>.json` metadata sidecar."""
    path = Path(path).with_suffix("")
    save_png(path.with_suffix(".png"), m.cells)
    write_json(path.with_suffix(".json"), m.metadata())
    return path.with_suffix(".png")


def load_raster(path: Path) -> Microstructure:
    """Read a PNG or tensor raster, with Tc and seed from a sidecar."""
    path = Path(path)
    if path.suffix == ".png":
        cells = load_png(path) >= 0.5
    elif path.suffix == TENSOR_SUFFIX:
        data = load_tensor(path)
        # Dataset samples stack (microstructure, IPPT).
        cells = (data[0] if data.ndim == 3 else data) >= 0.5
    else:
        raise InvalidParameters(f"Unsupported raster format: {path.name}")
    sidecar = path.with_suffix(".json")
    meta = read_json(sidecar) if sidecar.exists() else {}
    return Microstructure(
        cells=cells,
        Tc=float(meta.get("Tc", float("nan"))),
        seed=int(meta.get("seed", -1)),
        steps=int(meta.get("steps", 0)),
    )


def write_csv(path: Path, rows: list[dict], columns: list[str] | None = None):
    frame = pd.DataFrame(rows, columns=columns)
    frame.to_csv(path, index=False, float_format="%.10g")


def read_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path)


def plot_validation(frame: pd.DataFrame, path: Path):
    """Scatter of input vs recomputed stiffness, one panel per component."""
    components = ("d1111", "d2222", "d1212")
    fig, axes = plt.subplots(1, 3, figsize=(12, 4))
    ok = frame[~frame["failed"]] if "failed" in frame else frame
    for ax, key in zip(axes, components):
        ax.scatter(ok[f"input_{key}"], ok[key], s=8)
        if len(ok):
            lo = min(ok[f"input_{key}"].min(), ok[key].min())
            hi = max(ok[f"input_{key}"].max(), ok[key].max())
            ax.plot([lo, hi], [lo, hi], "k--", linewidth=0.8)
        ax.set_xlabel(f"{key.upper()} input (MPa)")
        ax.set_ylabel(f"{key.upper()} recomputed (MPa)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
