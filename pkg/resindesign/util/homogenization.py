# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""
Effective elasticity of a periodic two-phase cell.

Linear triangles with ramp enrichment on the nodes of interface-cut
elements. The displacement is split as u = T w + G e: G carries the affine
field of the macro strain e, T folds each periodic slave node onto its
master and drops the pinned origin, and w is the free fluctuation.
"""
import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import splu

from resindesign.errors import (
    BoundsViolation,
    DegenerateModuli,
    InvalidParameters,
    SingularElement,
    SolveFailure,
)
from resindesign.models import ElasticityMatrix, Microstructure
from resindesign.util.mesh import (
    DIAGONALS,
    CutElement,
    LevelSetField,
    Mesh,
    barycentric,
    build_mesh,
    shape_gradients,
    signed_area,
)

logger = logging.getLogger(__name__)

FORMULATIONS = ("plane-strain", "plane-stress")
RESIDUAL_TOLERANCE = 1e-8
BOUNDS_TOLERANCE = 1e-3

# Three-point rule, interior points, exact for quadratics.
_GAUSS_BARY = np.array(
    [[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]
)


@dataclass(frozen=True)
class PhaseMaterials:
    """Isotropic constants of the two phases (MPa)."""

    E_crystal: float = 28000.0
    nu_crystal: float = 0.2
    E_amorph: float = 150.0
    nu_amorph: float = 0.4
    formulation: str = "plane-strain"

    def __post_init__(self):
        for E, nu in (
            (self.E_crystal, self.nu_crystal),
            (self.E_amorph, self.nu_amorph),
        ):
            if not E > 0:
                raise InvalidParameters("Young's modulus must be positive")
            if not 0 < nu < 0.5:
                raise InvalidParameters("Poisson's ratio must lie in (0, 0.5)")
        if self.formulation not in FORMULATIONS:
            raise InvalidParameters(
                f"Unknown formulation {self.formulation!r}"
            )

    def stiffness(self, crystal: bool) -> np.ndarray:
        if crystal:
            E, nu = self.E_crystal, self.nu_crystal
        else:
            E, nu = self.E_amorph, self.nu_amorph
        return isotropic_dmat(E, nu, self.formulation).as_array()


@dataclass(frozen=True, eq=False)
class StiffnessSystem:
    """Global stiffness over standard then enriched DOFs."""

    K: sps.csr_matrix
    mesh: Mesh
    levelset: LevelSetField
    enriched_index: dict[int, int]

    @property
    def n_dofs(self) -> int:
        return self.K.shape[0]

    def enriched_dof(self, node: int, component: int) -> int:
        return (
            2 * self.mesh.n_nodes
            + 2 * self.enriched_index[node]
            + component
        )


@dataclass(frozen=True, eq=False)
class Homogenized:
    D: ElasticityMatrix
    E: float
    nu: float
    phase_fraction: float
    asymmetry: float
    bounds_ok: bool
    perturbed_nodes: int
    merged_slivers: int
    stresses: np.ndarray | None = None

    def row(self) -> dict:
        return {
            **self.D.to_dict(),
            "E": self.E,
            "nu": self.nu,
            "phase_fraction": self.phase_fraction,
            "asymmetry": self.asymmetry,
            "bounds_ok": self.bounds_ok,
            "perturbed_nodes": self.perturbed_nodes,
            "merged_slivers": self.merged_slivers,
        }


def isotropic_dmat(
    E: float, nu: float, formulation: str = "plane-strain"
) -> ElasticityMatrix:
    if formulation == "plane-strain":
        lam = E * nu / ((1 + nu) * (1 - 2 * nu))
        mu = E / (2 * (1 + nu))
        c11, c12 = lam + 2 * mu, lam
    elif formulation == "plane-stress":
        c11 = E / (1 - nu**2)
        c12 = nu * c11
        mu = E / (2 * (1 + nu))
    else:
        raise InvalidParameters(f"Unknown formulation {formulation!r}")
    return ElasticityMatrix(
        d1111=c11, d1122=c12, d1112=0.0, d2222=c11, d2212=0.0, d1212=mu
    )


def effective_constants(D: ElasticityMatrix) -> tuple[float, float]:
    """Young's modulus and Poisson's ratio of the isotropic part of D."""
    M = (D.d1111 + D.d2222) / 2
    G = D.d1212
    if not M > G > 0:
        raise DegenerateModuli(
            f"Need (D1111 + D2222)/2 > D1212 > 0, got M={M}, D1212={G}"
        )
    E = G * (3 * M - 4 * G) / (M - G)
    nu = (M - 2 * G) / (2 * (M - G))
    return E, nu


def hill_bounds(
    fraction: float, materials: PhaseMaterials
) -> tuple[np.ndarray, np.ndarray]:
    """Reuss and Voigt mixtures of the diagonal (D1111, D2222, D1212)."""
    crystal = np.diag(materials.stiffness(True))
    amorph = np.diag(materials.stiffness(False))
    voigt = fraction * crystal + (1 - fraction) * amorph
    reuss = 1 / (fraction / crystal + (1 - fraction) / amorph)
    return reuss, voigt


def _strain_operator(grads: np.ndarray) -> np.ndarray:
    """Voigt B matrix (3 x 2n) from shape gradients (n x 2)."""
    B = np.zeros((3, 2 * len(grads)))
    B[0, 0::2] = grads[:, 0]
    B[1, 1::2] = grads[:, 1]
    B[2, 0::2] = grads[:, 1]
    B[2, 1::2] = grads[:, 0]
    return B


def _element_dofs(tris: np.ndarray) -> np.ndarray:
    return np.stack([2 * tris, 2 * tris + 1], axis=-1).reshape(
        len(tris), -1
    )


def _uncut_matrices(mesh: Mesh, materials: PhaseMaterials):
    """Stiffness of every triangle with one material, vectorized."""
    X = mesh.nodes[mesh.tris]
    x, y = X[..., 0], X[..., 1]
    area = 0.5 * (
        (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0])
        - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    )
    if np.any(area <= 0):
        raise SingularElement("Mesh contains a non-positive element area")
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], 1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], 1)
    b = b / (2 * area[:, None])
    c = c / (2 * area[:, None])

    B = np.zeros((len(X), 3, 6))
    B[:, 0, 0::2] = b
    B[:, 1, 1::2] = c
    B[:, 2, 0::2] = c
    B[:, 2, 1::2] = b
    C = np.where(
        mesh.element_crystal[:, None, None],
        materials.stiffness(True),
        materials.stiffness(False),
    )
    Ke = np.einsum("e,eki,ekl,elj->eij", area, B, C, B)
    return 0.5 * (Ke + Ke.transpose(0, 2, 1)), B


def _cut_quadrature(
    mesh: Mesh,
    psi: np.ndarray,
    cut: CutElement,
    enriched_index: dict[int, int],
):
    """
    Yield (dofs, B, weight, crystal, subtriangle) per Gauss point of a cut
    element, with the ramp-enriched columns appended to B.
    """
    nodes = mesh.tris[cut.element]
    coords = mesh.nodes[nodes]
    grads, _ = shape_gradients(coords)
    psi_e = psi[nodes]
    enriched = [k for k, node in enumerate(nodes) if node in enriched_index]
    n_std = 2 * mesh.n_nodes
    dofs = list(_element_dofs(nodes[None, :])[0])
    for k in enriched:
        base = n_std + 2 * enriched_index[nodes[k]]
        dofs += [base, base + 1]

    for s, (sub, crystal) in enumerate(zip(cut.subtriangles, cut.crystal)):
        weight = abs(signed_area(sub)) / 3
        side = 1.0 if crystal else -1.0
        for bary in _GAUSS_BARY:
            shape = barycentric(coords, bary @ sub)
            R = np.abs(psi_e) @ shape - abs(psi_e @ shape)
            grad_R = (np.abs(psi_e) - side * psi_e) @ grads
            enriched_grads = np.array(
                [grads[k] * R + shape[k] * grad_R for k in enriched]
            ).reshape(-1, 2)
            B = _strain_operator(np.vstack([grads, enriched_grads]))
            yield np.array(dofs), B, weight, bool(crystal), s


def assemble(
    mesh: Mesh, materials: PhaseMaterials, levelset: LevelSetField
) -> StiffnessSystem:
    """
    Global stiffness with standard DOFs first, then two enriched DOFs per
    enriched node. Cut elements are integrated subtriangle by subtriangle
    with that subtriangle's material.
    """
    enriched_index = {
        int(node): k for k, node in enumerate(mesh.enriched_nodes)
    }
    n_dofs = 2 * mesh.n_nodes + mesh.n_enriched_dofs
    Ke, _ = _uncut_matrices(mesh, materials)
    dofs = _element_dofs(mesh.tris)

    is_cut = np.zeros(len(mesh.tris), dtype=bool)
    is_cut[[c.element for c in mesh.cut_elements]] = True
    rows = [np.repeat(dofs[~is_cut], 6, axis=1).ravel()]
    cols = [np.tile(dofs[~is_cut], (1, 6)).ravel()]
    data = [Ke[~is_cut].ravel()]

    stiffness = {
        True: materials.stiffness(True),
        False: materials.stiffness(False),
    }
    for cut in mesh.cut_elements:
        local = None
        for edofs, B, weight, crystal, _ in _cut_quadrature(
            mesh, levelset.psi, cut, enriched_index
        ):
            contribution = weight * B.T @ stiffness[crystal] @ B
            local = contribution if local is None else local + contribution
        local = 0.5 * (local + local.T)
        n = len(edofs)
        rows.append(np.repeat(edofs, n))
        cols.append(np.tile(edofs, n))
        data.append(local.ravel())

    K = sps.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_dofs, n_dofs),
    ).tocsr()
    logger.debug(
        "Assembled %d DOFs (%d enriched) over %d cut elements",
        n_dofs,
        mesh.n_enriched_dofs,
        len(mesh.cut_elements),
    )
    return StiffnessSystem(
        K=K, mesh=mesh, levelset=levelset, enriched_index=enriched_index
    )


def periodic_maps(
    system: StiffnessSystem,
) -> tuple[sps.csr_matrix, np.ndarray]:
    """
    Fluctuation map T (all DOFs x free DOFs) and affine macro-strain
    map G (all DOFs x 3, columns e11, e22, g12).
    """
    mesh = system.mesh
    height, width = mesh.shape
    rows, cols = np.divmod(np.arange(mesh.n_nodes), width)
    master = (rows % (height - 1)) * width + cols % (width - 1)

    independent = np.flatnonzero(
        (rows < height - 1)
        & (cols < width - 1)
        & (np.arange(mesh.n_nodes) > 0)
    )
    reduced = np.full(mesh.n_nodes, -1)
    reduced[independent] = np.arange(len(independent))

    keep = reduced[master] >= 0
    node_ids = np.flatnonzero(keep)
    t_rows = np.concatenate([2 * node_ids, 2 * node_ids + 1])
    t_cols = np.concatenate(
        [2 * reduced[master[keep]], 2 * reduced[master[keep]] + 1]
    )
    n_free_std = 2 * len(independent)
    n_enr = mesh.n_enriched_dofs
    t_rows = np.concatenate([t_rows, 2 * mesh.n_nodes + np.arange(n_enr)])
    t_cols = np.concatenate([t_cols, n_free_std + np.arange(n_enr)])
    T = sps.csr_matrix(
        (np.ones(len(t_rows)), (t_rows, t_cols)),
        shape=(system.n_dofs, n_free_std + n_enr),
    )

    x1, x2 = mesh.nodes[:, 0], mesh.nodes[:, 1]
    G = np.zeros((system.n_dofs, 3))
    G[0 : 2 * mesh.n_nodes : 2, 0] = x1
    G[1 : 2 * mesh.n_nodes : 2, 1] = x2
    G[0 : 2 * mesh.n_nodes : 2, 2] = 0.5 * x2
    G[1 : 2 * mesh.n_nodes : 2, 2] = 0.5 * x1
    return T, G


def solve_unit_strains(system: StiffnessSystem) -> np.ndarray:
    """Full displacement vectors for the three unit macro strains."""
    T, G = periodic_maps(system)
    K_red = (T.T @ system.K @ T).tocsc()
    rhs = -(T.T @ (system.K @ G))
    if K_red.shape[0] == 0:
        # every node is pinned or a periodic image
        return G
    try:
        lu = splu(K_red)
    except RuntimeError as e:
        raise SolveFailure(f"Reduced stiffness is singular: {e}") from e
    w = lu.solve(rhs)

    scale = abs(K_red).max()
    for case in range(3):
        residual = np.linalg.norm(K_red @ w[:, case] - rhs[:, case])
        reference = scale * np.linalg.norm(w[:, case]) + np.linalg.norm(
            rhs[:, case]
        )
        if reference > 0 and residual > RESIDUAL_TOLERANCE * reference:
            raise SolveFailure(
                f"Load case {case}: relative residual "
                f"{residual / reference:.3g} exceeds {RESIDUAL_TOLERANCE}"
            )
    return T @ w + G


def phase_fraction(mesh: Mesh) -> float:
    """Crystal share of the cell area, exact over subtriangles."""
    X = mesh.nodes[mesh.tris]
    areas = np.abs(
        0.5
        * (
            (X[:, 1, 0] - X[:, 0, 0]) * (X[:, 2, 1] - X[:, 0, 1])
            - (X[:, 2, 0] - X[:, 0, 0]) * (X[:, 1, 1] - X[:, 0, 1])
        )
    )
    crystal = mesh.element_crystal.copy()
    cut_area = 0.0
    for cut in mesh.cut_elements:
        crystal[cut.element] = False
        cut_area += sum(
            abs(signed_area(sub))
            for sub, is_crystal in zip(cut.subtriangles, cut.crystal)
            if is_crystal
        )
    return float((areas[crystal].sum() + cut_area) / areas.sum())


def nodal_stresses(
    system: StiffnessSystem,
    displacements: np.ndarray,
    materials: PhaseMaterials,
) -> np.ndarray:
    """
    Area-weighted nodal average of element stresses per load case,
    shape (3 cases, 3 components, H, W).
    """
    mesh = system.mesh
    _, B = _uncut_matrices(mesh, materials)
    dofs = _element_dofs(mesh.tris)
    C = np.where(
        mesh.element_crystal[:, None, None],
        materials.stiffness(True),
        materials.stiffness(False),
    )
    X = mesh.nodes[mesh.tris]
    areas = np.array([abs(signed_area(t)) for t in X])
    # (cases, elements, components)
    sigma = np.einsum("ekl,elj,ej...->...ek", C, B, displacements[dofs])

    stiffness = {
        True: materials.stiffness(True),
        False: materials.stiffness(False),
    }
    for cut in mesh.cut_elements:
        total = np.zeros((3, 3))
        for edofs, Bq, weight, crystal, _ in _cut_quadrature(
            mesh, system.levelset.psi, cut, system.enriched_index
        ):
            sigma_q = stiffness[crystal] @ Bq @ displacements[edofs]
            total += weight * sigma_q.T
        sigma[:, cut.element] = total / areas[cut.element]

    sums = np.zeros((3, mesh.n_nodes, 3))
    weights = np.zeros(mesh.n_nodes)
    for k in range(3):
        np.add.at(sums, (slice(None), mesh.tris[:, k]), sigma * areas[:, None])
        np.add.at(weights, mesh.tris[:, k], areas)
    nodal = sums / weights[None, :, None]
    return nodal.transpose(0, 2, 1).reshape(3, 3, *mesh.shape)


def homogenize_mesh(
    mesh: Mesh,
    levelset: LevelSetField,
    materials: PhaseMaterials,
    with_stresses: bool = False,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Unsymmetrized D of one triangulation, plus optional stresses."""
    system = assemble(mesh, materials, levelset)
    u = solve_unit_strains(system)
    _, G = periodic_maps(system)
    # G^T K u is the cell-averaged stress of each load case.
    D = (G.T @ (system.K @ u)) / mesh.area
    stresses = nodal_stresses(system, u, materials) if with_stresses else None
    return D, stresses


def homogenize(
    m: Microstructure | np.ndarray,
    materials: PhaseMaterials,
    diagonal: str = "both",
    spacing: float = 1.0,
    with_stresses: bool = False,
) -> Homogenized:
    """
    Effective elasticity matrix from three unit macro strains under
    periodic boundary conditions.

    `diagonal="both"` averages the two triangulation orientations so the
    result is exactly covariant under quarter turns of the raster.
    """
    orientations = DIAGONALS if diagonal == "both" else (diagonal,)
    results = []
    for orientation in orientations:
        mesh, levelset = build_mesh(m, diagonal=orientation, spacing=spacing)
        D, stresses = homogenize_mesh(mesh, levelset, materials, with_stresses)
        results.append((mesh, levelset, D, stresses))

    D_raw = np.mean([r[2] for r in results], axis=0)
    scale = np.abs(D_raw).max()
    asymmetry = float(np.abs(D_raw - D_raw.T).max() / scale)
    D = ElasticityMatrix.from_array(D_raw)
    fraction = float(np.mean([phase_fraction(r[0]) for r in results]))

    reuss, voigt = hill_bounds(fraction, materials)
    diagonal_entries = np.array([D.d1111, D.d2222, D.d1212])
    low = diagonal_entries < reuss * (1 - BOUNDS_TOLERANCE)
    high = diagonal_entries > voigt * (1 + BOUNDS_TOLERANCE)
    bounds_ok = not (low.any() or high.any())
    if not bounds_ok:
        message = (
            f"Stiffness {diagonal_entries.round(3).tolist()} outside "
            f"Reuss {reuss.round(3).tolist()} / "
            f"Voigt {voigt.round(3).tolist()} at fraction {fraction:.4f}"
        )
        logger.warning(message)
        warnings.warn(message, BoundsViolation)

    E, nu = effective_constants(D)
    stresses = None
    if with_stresses:
        stresses = np.mean([r[3] for r in results], axis=0)
    return Homogenized(
        D=D,
        E=E,
        nu=nu,
        phase_fraction=fraction,
        asymmetry=asymmetry,
        bounds_ok=bounds_ok,
        perturbed_nodes=int(results[0][1].perturbed.size),
        merged_slivers=sum(r[0].merged_slivers for r in results),
        stresses=stresses,
    )
