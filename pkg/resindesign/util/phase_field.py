# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""
Isothermal crystal growth of a thermoplastic resin.

Allen-Cahn order parameter coupled to heat conduction on a periodic grid,
with temperature-dependent stochastic nucleation. Arrays are indexed
[row, column]; x1 runs along columns and x2 along rows.
"""
import logging
from dataclasses import dataclass, replace

import numpy as np
from tqdm import tqdm

from resindesign.errors import (
    DegenerateRange,
    InvalidParameters,
    NumericBlowup,
)
from resindesign.models import Microstructure
from resindesign.util.checks import tc_supported

logger = logging.getLogger(__name__)

# SeedSequence stream tags keep placement and per-step draws independent.
_PLACEMENT_STREAM = 0
_NUCLEATION_STREAM = 1


@dataclass(frozen=True)
class PhaseParams:
    """Allen-Cahn and heat-conduction constants, in simulation units."""

    mobility: float = 300.0
    barrier_height: float = 1.0
    grad_coeff: float = 0.005
    thermal_diffusivity: float = 1.0
    latent_ratio: float = 20.0
    a_k: float = 0.9
    gamma: float = 10.0
    anisotropy_strength: float = 0.0
    anisotropy_mode: int = 4
    dx: float = 0.03
    dt: float = 1e-4

    def __post_init__(self):
        for name in ("mobility", "barrier_height", "grad_coeff", "dx", "dt"):
            if not getattr(self, name) > 0:
                raise InvalidParameters(f"{name} must be positive")
        if self.thermal_diffusivity < 0:
            raise InvalidParameters("thermal_diffusivity must be >= 0")
        if self.dt > self.stable_dt:
            raise InvalidParameters(
                f"dt = {self.dt} exceeds the explicit stability bound "
                f"{self.stable_dt:.3g}"
            )

    @property
    def stable_dt(self) -> float:
        """Largest dt the explicit scheme tolerates."""
        rate = max(
            self.thermal_diffusivity, self.mobility * self.grad_coeff**2
        )
        return self.dx**2 / (4 * rate)


@dataclass(frozen=True)
class NucleationParams:
    """Nucleation-rate constants (temperatures in degrees C)."""

    prefactor: float = 1.4e8
    c1: float = 880.0
    c2: float = 5e4
    t_inf: float = 70.0
    hw_slope: float = 0.0948
    hw_intercept: float = 253.7
    initial_nuclei: int = 2
    rng_seed: int = 0
    tc_min: float = 150.0
    tc_max: float = 210.0

    def __post_init__(self):
        for name in ("prefactor", "c1", "c2", "initial_nuclei", "rng_seed"):
            if getattr(self, name) < 0:
                raise InvalidParameters(f"{name} must be >= 0")
        if not 0 < self.hw_slope < 1:
            raise InvalidParameters("hw_slope must lie in (0, 1)")
        if self.tc_min > self.tc_max:
            raise InvalidParameters("tc_min must not exceed tc_max")
        # Tm - Tc is linear in Tc, so the endpoints decide.
        for tc in (self.tc_min, self.tc_max):
            if not melting_point(tc, self) > tc:
                raise InvalidParameters(
                    f"Melting point does not exceed Tc = {tc}"
                )


@dataclass(frozen=True, eq=False)
class PhaseState:
    phi: np.ndarray
    temp: np.ndarray
    step: int
    Tc: float

    def __post_init__(self):
        if self.phi.shape != self.temp.shape or self.phi.ndim != 2:
            raise InvalidParameters(
                "phi and temp must be 2D arrays of equal shape"
            )

    @classmethod
    def initial(cls, Tc: float, grid: tuple[int, int]) -> "PhaseState":
        """Amorphous melt held uniformly at Tc."""
        return cls(
            phi=np.zeros(grid),
            temp=np.full(grid, float(Tc)),
            step=0,
            Tc=float(Tc),
        )


def melting_point(Tc, n: NucleationParams):
    """Hoffman-Weeks line."""
    return n.hw_slope * Tc + n.hw_intercept


def chemical_driving_force(T_hat, p: PhaseParams):
    return (p.a_k / np.pi) * np.arctan(p.gamma * (1 - T_hat))


def dimensionless_temp(T, Tc: float, Tm: float):
    if Tm == Tc:
        raise DegenerateRange(f"Melting point equals Tc = {Tc}")
    return (T - Tc) / (Tm - Tc)


def laplacian(field: np.ndarray, dx: float) -> np.ndarray:
    """Periodic 5-point Laplacian."""
    return (
        np.roll(field, 1, 0)
        + np.roll(field, -1, 0)
        + np.roll(field, 1, 1)
        + np.roll(field, -1, 1)
        - 4 * field
    ) / dx**2


def _central(field: np.ndarray, axis: int, dx: float) -> np.ndarray:
    return (np.roll(field, -1, axis) - np.roll(field, 1, axis)) / (2 * dx)


def _anisotropic_gradient_term(phi: np.ndarray, p: PhaseParams):
    """Gradient-energy force with a j-fold anisotropic coefficient."""
    phi_x = _central(phi, 1, p.dx)
    phi_y = _central(phi, 0, p.dx)
    theta = np.arctan2(phi_y, phi_x)
    eps = p.grad_coeff * (
        1 + p.anisotropy_strength * np.cos(p.anisotropy_mode * theta)
    )
    eps_prime = (
        -p.grad_coeff
        * p.anisotropy_strength
        * p.anisotropy_mode
        * np.sin(p.anisotropy_mode * theta)
    )
    flat = phi_x**2 + phi_y**2 < 1e-12
    eps_prime = np.where(flat, 0.0, eps_prime)
    eps2 = eps**2
    return (
        _central(eps * eps_prime * phi_x, 0, p.dx)
        - _central(eps * eps_prime * phi_y, 1, p.dx)
        + _central(eps2, 1, p.dx) * phi_x
        + _central(eps2, 0, p.dx) * phi_y
        + eps2 * laplacian(phi, p.dx)
    )


def nucleation_rate(T, Tm, n: NucleationParams) -> np.ndarray:
    """
    Nuclei per unit area per unit time at temperature T.

    Zero outside the open interval (t_inf, Tm). Evaluated in log space so
    the huge prefactor does not overflow.
    """
    T = np.asarray(T, dtype=float)
    Tm = np.broadcast_to(np.asarray(Tm, dtype=float), T.shape)
    live = (T > n.t_inf) & (T < Tm) & (T != 0)
    rate = np.zeros(T.shape)
    if n.prefactor == 0 or not live.any():
        return rate
    t = T[live]
    tm = Tm[live]
    log_rate = (
        np.log(n.prefactor)
        - n.c1 / (t - n.t_inf)
        - n.c2 * (t + tm) / (t**2 * (tm - t))
    )
    with np.errstate(under="ignore", over="ignore"):
        rate[live] = np.exp(log_rate)
    return rate


def nucleate(
    state: PhaseState, n: NucleationParams, dt: float, dx: float
) -> PhaseState:
    """
    Turn amorphous cells into single-cell nuclei with the thinned
    per-cell probability min(1, rate * dt * dx**2).

    The uniform draws come from a generator keyed on (seed, step), one full
    field per step, so the outcome is independent of sweep order.
    """
    if n.prefactor == 0:
        return state
    Tm = melting_point(state.Tc, n)
    prob = np.minimum(1.0, nucleation_rate(state.temp, Tm, n) * dt * dx**2)
    prob[state.phi >= 0.5] = 0.0
    if not prob.any():
        return state
    rng = np.random.default_rng(
        [n.rng_seed, _NUCLEATION_STREAM, state.step]
    )
    hits = rng.random(state.phi.shape) < prob
    if not hits.any():
        return state
    logger.debug("Step %d: %d new nuclei", state.step, int(hits.sum()))
    phi = state.phi.copy()
    phi[hits] = 1.0
    return replace(state, phi=phi)


def step(
    state: PhaseState, p: PhaseParams, n: NucleationParams
) -> PhaseState:
    """Advance both fields by one explicit step, then nucleate."""
    phi, temp = state.phi, state.temp
    Tm = melting_point(state.Tc, n)
    m = chemical_driving_force(dimensionless_temp(temp, state.Tc, Tm), p)
    if p.anisotropy_strength == 0:
        gradient_force = p.grad_coeff**2 * laplacian(phi, p.dx)
    else:
        gradient_force = _anisotropic_gradient_term(phi, p)
    reaction = p.barrier_height * phi * (0.5 - phi - m) * (1 - phi)
    new_phi = phi + p.dt * p.mobility * (gradient_force - reaction)
    new_temp = (
        temp
        + p.dt * p.thermal_diffusivity * laplacian(temp, p.dx)
        + p.latent_ratio * (new_phi - phi)
    )

    new_state = nucleate(
        replace(state, phi=new_phi, temp=new_temp), n, p.dt, p.dx
    )
    if not (
        np.isfinite(new_state.phi).all() and np.isfinite(new_state.temp).all()
    ):
        raise NumericBlowup(
            f"Non-finite field at step {state.step + 1}; reduce dt "
            f"(currently {p.dt})"
        )
    return replace(
        new_state,
        phi=np.clip(new_state.phi, 0.0, 1.0),
        step=state.step + 1,
    )


def place_nuclei(
    grid: tuple[int, int], count: int, seed: int
) -> list[tuple[int, int]]:
    """Distinct seeded-random single-cell nucleus positions."""
    height, width = grid
    if count > height * width:
        raise InvalidParameters(
            f"Cannot place {count} nuclei on a {height}x{width} grid"
        )
    rng = np.random.default_rng([seed, _PLACEMENT_STREAM])
    flat = rng.choice(height * width, size=count, replace=False)
    return [(int(i // width), int(i % width)) for i in flat]


def run(
    Tc: float,
    grid: tuple[int, int],
    steps: int,
    p: PhaseParams,
    n: NucleationParams,
    nuclei: list[tuple[int, int]] | None = None,
    progress: bool = False,
) -> Microstructure:
    """Grow a microstructure at a fixed crystallization temperature."""
    tc_supported(Tc, n)
    if steps < 0:
        raise InvalidParameters("steps must be >= 0")
    grid = (int(grid[0]), int(grid[1]))
    if nuclei is None:
        nuclei = place_nuclei(grid, n.initial_nuclei, n.rng_seed)

    state = PhaseState.initial(Tc, grid)
    for row, col in nuclei:
        state.phi[row % grid[0], col % grid[1]] = 1.0

    logger.info(
        "Growing %dx%d at Tc=%s for %d steps (seed %d)",
        *grid,
        Tc,
        steps,
        n.rng_seed,
    )
    for _ in tqdm(
        range(steps),
        desc=f"Tc={Tc:g} seed={n.rng_seed}",
        disable=not progress,
        leave=False,
    ):
        state = step(state, p, n)

    return Microstructure.from_phi(
        state.phi, Tc=Tc, seed=n.rng_seed, steps=steps
    )


def free_energy(state: PhaseState, p: PhaseParams, n: NucleationParams):
    """
    Discrete total free energy: double well plus gradient energy, summed
    over cells. Forward differences make its gradient the 5-point
    Laplacian the stepper uses.
    """
    phi = state.phi
    Tm = melting_point(state.Tc, n)
    m = chemical_driving_force(
        dimensionless_temp(state.temp, state.Tc, Tm), p
    )
    c = 0.5 - m
    double_well = p.barrier_height * (
        c * phi**2 / 2 - (1 + c) * phi**3 / 3 + phi**4 / 4
    )
    grad_sq = (
        (np.roll(phi, -1, 0) - phi) ** 2 + (np.roll(phi, -1, 1) - phi) ** 2
    ) / p.dx**2
    return float(
        np.sum(double_well + 0.5 * p.grad_coeff**2 * grad_sq) * p.dx**2
    )


def thickness(m: Microstructure) -> float:
    """
    Mean crystal-branch thickness in cells: crystal area over the number
    of crystal/amorphous cell faces on the periodic grid.
    """
    cells = m.cells
    faces = int(np.count_nonzero(cells != np.roll(cells, 1, 0))) + int(
        np.count_nonzero(cells != np.roll(cells, 1, 1))
    )
    if faces == 0:
        return float("inf")
    return float(cells.sum()) / faces
