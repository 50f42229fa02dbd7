# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Triangulation of a raster with a level-set interface."""
import logging
from dataclasses import dataclass, field

import numpy as np

from resindesign.errors import InvalidParameters, ShapeError
from resindesign.models import Microstructure

logger = logging.getLogger(__name__)

PERTURBATION = 1e-12
SLIVER_RATIO = 1e-14
DIAGONALS = ("/", "\\")


@dataclass(frozen=True, eq=False)
class LevelSetField:
    """Nodal psi = 2 * phi - 1; crystal where psi > 0."""

    psi: np.ndarray
    perturbed: np.ndarray = field(
        default_factory=lambda: np.zeros(0, dtype=int)
    )

    @classmethod
    def from_phi(cls, phi: np.ndarray) -> "LevelSetField":
        psi = 2.0 * np.asarray(phi, dtype=float).ravel() - 1.0
        perturbed = np.flatnonzero(psi == 0.0)
        if perturbed.size:
            logger.warning(
                "Level set vanishes at %d node(s); shifted by %g",
                perturbed.size,
                PERTURBATION,
            )
            psi[perturbed] += PERTURBATION
        return cls(psi=psi, perturbed=perturbed)


@dataclass(frozen=True, eq=False)
class CutElement:
    """A triangle crossed by psi = 0, split into three subtriangles."""

    element: int
    segment: np.ndarray
    subtriangles: np.ndarray
    crystal: np.ndarray


@dataclass(frozen=True, eq=False)
class Mesh:
    shape: tuple[int, int]
    spacing: float
    diagonal: str
    nodes: np.ndarray
    tris: np.ndarray
    cut_elements: list[CutElement]
    enriched_nodes: np.ndarray
    element_crystal: np.ndarray
    merged_slivers: int = 0

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_enriched_dofs(self) -> int:
        return 2 * len(self.enriched_nodes)

    @property
    def area(self) -> float:
        height, width = self.shape
        return (height - 1) * (width - 1) * self.spacing**2

    def boundary_nodes(self) -> np.ndarray:
        return boundary_nodes(self.shape)


def boundary_nodes(shape: tuple[int, int]) -> np.ndarray:
    """Nodes on the outer edge of the periodic cell."""
    height, width = shape
    rows, cols = np.divmod(np.arange(height * width), width)
    return np.flatnonzero(
        (rows == 0) | (cols == 0) | (rows == height - 1) | (cols == width - 1)
    )


def signed_area(tri: np.ndarray) -> float:
    (x0, y0), (x1, y1), (x2, y2) = tri
    return 0.5 * ((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))


def shape_gradients(tri: np.ndarray) -> tuple[np.ndarray, float]:
    """Constant gradients of the three linear shape functions, and area."""
    area = signed_area(tri)
    (x0, y0), (x1, y1), (x2, y2) = tri
    grads = np.array(
        [[y1 - y2, x2 - x1], [y2 - y0, x0 - x2], [y0 - y1, x1 - x0]]
    ) / (2 * area)
    return grads, area


def barycentric(tri: np.ndarray, point: np.ndarray) -> np.ndarray:
    """Linear shape function values of `tri` at `point`."""
    grads, _ = shape_gradients(tri)
    values = grads @ (np.asarray(point) - tri[0])
    values[0] = 1.0 - values[1] - values[2]
    return values


def ramp(point: np.ndarray, tri: np.ndarray, psi: np.ndarray) -> float:
    """Enrichment R(x) = sum |psi_I| N_I(x) - |sum psi_I N_I(x)|."""
    shape = barycentric(tri, point)
    return float(np.abs(psi) @ shape - abs(psi @ shape))


def _triangles(shape: tuple[int, int], diagonal: str) -> np.ndarray:
    height, width = shape
    rows, cols = np.meshgrid(
        np.arange(height - 1), np.arange(width - 1), indexing="ij"
    )
    n00 = (rows * width + cols).ravel()
    n01 = n00 + 1
    n10 = n00 + width
    n11 = n10 + 1
    if diagonal == "/":
        pairs = (np.stack([n00, n01, n11], 1), np.stack([n00, n11, n10], 1))
    else:
        pairs = (np.stack([n00, n01, n10], 1), np.stack([n01, n11, n10], 1))
    # Two triangles per square, interleaved square by square.
    return np.stack(pairs, 1).reshape(-1, 3)


def _split(tri: np.ndarray, psi: np.ndarray):
    """Interface segment and three subtriangles of a cut triangle."""
    positive = psi > 0
    lone = int(np.flatnonzero(positive == (positive.sum() == 1))[0])
    a, b = (lone + 1) % 3, (lone + 2) % 3

    def crossing(i, j):
        t = psi[i] / (psi[i] - psi[j])
        return tri[i] + t * (tri[j] - tri[i])

    p = crossing(lone, a)
    q = crossing(lone, b)
    subs = np.array(
        [[tri[lone], p, q], [p, tri[a], tri[b]], [p, tri[b], q]]
    )
    return np.array([p, q]), subs


def _centroid_psi(tri: np.ndarray, psi: np.ndarray, sub: np.ndarray) -> float:
    return float(psi @ barycentric(tri, sub.mean(axis=0)))


def build_mesh(
    source: Microstructure | np.ndarray,
    diagonal: str = "/",
    spacing: float = 1.0,
) -> tuple[Mesh, LevelSetField]:
    """
    Triangulate a raster whose cells become nodes.

    Each square between four nodes is split along `diagonal` into two
    triangles. Triangles crossed by the interface carry a three-piece
    subtriangulation; subtriangles thinner than SLIVER_RATIO of their
    parent are merged back into the parent.
    """
    if diagonal not in DIAGONALS:
        raise InvalidParameters(f"Unknown diagonal {diagonal!r}")
    if spacing <= 0:
        raise InvalidParameters("spacing must be positive")
    phi = source.cells if isinstance(source, Microstructure) else source
    phi = np.asarray(phi, dtype=float)
    if phi.ndim != 2 or min(phi.shape) < 2:
        raise ShapeError(f"Need at least a 2x2 field, got {phi.shape}")

    shape = (int(phi.shape[0]), int(phi.shape[1]))
    levelset = LevelSetField.from_phi(phi)
    psi = levelset.psi
    rows, cols = np.divmod(np.arange(phi.size), shape[1])
    nodes = np.column_stack([cols, rows]).astype(float) * spacing
    tris = _triangles(shape, diagonal)

    tri_psi = psi[tris]
    n_positive = (tri_psi > 0).sum(axis=1)
    element_crystal = tri_psi.sum(axis=1) > 0
    cut = np.flatnonzero((n_positive > 0) & (n_positive < 3))

    cut_elements = []
    merged = 0
    for e in cut:
        coords = nodes[tris[e]]
        segment, subs = _split(coords, tri_psi[e])
        parent = abs(signed_area(coords))
        areas = np.array([abs(signed_area(s)) for s in subs])
        if areas.min() < SLIVER_RATIO * parent:
            merged += 1
            element_crystal[e] = (
                _centroid_psi(coords, tri_psi[e], coords) > 0
            )
            continue
        crystal = np.array(
            [_centroid_psi(coords, tri_psi[e], s) > 0 for s in subs]
        )
        cut_elements.append(CutElement(int(e), segment, subs, crystal))
    if merged:
        logger.warning("Merged %d sliver subelement(s)", merged)

    # Boundary nodes stay unenriched so the fluctuation is exactly periodic.
    enriched = np.setdiff1d(
        tris[[c.element for c in cut_elements]].ravel(),
        boundary_nodes(shape),
    )
    mesh = Mesh(
        shape=shape,
        spacing=spacing,
        diagonal=diagonal,
        nodes=nodes,
        tris=tris,
        cut_elements=cut_elements,
        enriched_nodes=enriched.astype(int),
        element_crystal=element_crystal,
        merged_slivers=merged,
    )
    return mesh, levelset
