# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""
Conditional denoising diffusion: noise schedule, forward noising,
epsilon-prediction training step and ancestral sampling.

Timesteps are 1-based: t = 1 .. T_d. Images live in [0, 1] outside this
module and in [-1, 1] inside the diffusion process.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from tqdm import tqdm

from resindesign.errors import InvalidParameters, NonFiniteLoss

logger = logging.getLogger(__name__)

EMBED_DIM = 256
CONDITION_SIZE = 3


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    betas: np.ndarray

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size == 0:
            raise InvalidParameters("betas must be a non-empty 1D sequence")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise InvalidParameters("Every beta must lie in (0, 1)")
        if np.any(np.diff(betas) < 0):
            raise InvalidParameters("betas must be non-decreasing")
        alpha_bars = np.cumprod(1.0 - betas)
        if alpha_bars[-1] >= 0.01:
            raise InvalidParameters(
                f"Terminal alpha_bar {alpha_bars[-1]:.4f} must be < 0.01; "
                "raise beta_end or the step count"
            )
        object.__setattr__(self, "betas", betas)

    @classmethod
    def linear(
        cls, timesteps: int = 1000, beta_start: float = 1e-4, beta_end=0.02
    ) -> "NoiseSchedule":
        return cls(np.linspace(beta_start, beta_end, timesteps))

    @property
    def timesteps(self) -> int:
        return len(self.betas)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    def gather(self, values: np.ndarray, t: torch.Tensor, x: torch.Tensor):
        """Coefficient at each item's timestep, shaped to broadcast over x."""
        table = torch.as_tensor(values, dtype=x.dtype, device=x.device)
        out = table[t.long().to(x.device) - 1]
        return out.reshape(-1, *([1] * (x.ndim - 1)))

    def to_dict(self) -> dict:
        return {"betas": self.betas.tolist()}


def embed_time(t: torch.Tensor, dim: int = EMBED_DIM) -> torch.Tensor:
    """Sinusoidal positional encoding, sin half then cos half."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000) * torch.arange(half, dtype=torch.float64) / (half - 1)
    )
    angles = torch.as_tensor(t, dtype=torch.float64).reshape(-1, 1) * freqs
    return torch.cat([angles.sin(), angles.cos()], dim=-1).float()


def embed_condition(c: torch.Tensor, dim: int = EMBED_DIM) -> torch.Tensor:
    """
    Tile the three condition values over the embedding; entries past the
    last full repeat are zero.
    """
    c = torch.as_tensor(c, dtype=torch.float32).reshape(-1, CONDITION_SIZE)
    filled = CONDITION_SIZE * (dim // CONDITION_SIZE)
    tiled = c[:, torch.arange(filled) % CONDITION_SIZE]
    return F.pad(tiled, (0, dim - filled))


def to_model_range(images: torch.Tensor) -> torch.Tensor:
    return 2 * images - 1


def from_model_range(x: torch.Tensor) -> torch.Tensor:
    return (x + 1) / 2


def q_sample(
    x0: torch.Tensor,
    t: torch.Tensor,
    noise: torch.Tensor,
    sched: NoiseSchedule,
) -> torch.Tensor:
    """Closed-form marginal x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise."""
    abar = sched.gather(sched.alpha_bars, t, x0)
    return abar.sqrt() * x0 + (1 - abar).sqrt() * noise


def q_step(
    x_prev: torch.Tensor,
    t: torch.Tensor,
    noise: torch.Tensor,
    sched: NoiseSchedule,
) -> torch.Tensor:
    """One forward transition x_{t-1} -> x_t."""
    beta = sched.gather(sched.betas, t, x_prev)
    return (1 - beta).sqrt() * x_prev + beta.sqrt() * noise


def train_step(
    model: torch.nn.Module,
    optimizer: torch.optim.Optimizer,
    images: torch.Tensor,
    conditions: torch.Tensor,
    sched: NoiseSchedule,
    generator: torch.Generator,
) -> float:
    """
    One optimizer update on the epsilon-prediction MSE.

    `images` are in [0, 1]; they are mapped to [-1, 1] here.
    """
    model.train()
    x0 = to_model_range(images)
    t = torch.randint(
        1, sched.timesteps + 1, (len(x0),), generator=generator
    )
    noise = torch.randn(x0.shape, generator=generator)
    x_t = q_sample(x0, t, noise, sched)
    loss = F.mse_loss(model(x_t, t, conditions), noise)
    if not torch.isfinite(loss):
        raise NonFiniteLoss(
            f"Loss became {loss.item()} (batch of {len(x0)}, "
            f"t in [{int(t.min())}, {int(t.max())}])"
        )
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.item())


@torch.no_grad()
def p_sample_loop(
    model: torch.nn.Module,
    condition,
    sched: NoiseSchedule,
    seed: int,
    shape: tuple[int, ...],
    progress: bool = False,
) -> torch.Tensor:
    """
    Ancestral sampling from pure noise with sigma_t^2 = beta_t and no
    noise on the final step.

    `condition` is one 3-vector or one per item of `shape`'s batch.
    Returns images mapped back by (x + 1) / 2, unclamped.
    """
    model.eval()
    generator = torch.Generator().manual_seed(seed)
    batch = shape[0]
    condition = torch.as_tensor(condition, dtype=torch.float32).reshape(
        -1, CONDITION_SIZE
    )
    if len(condition) == 1:
        condition = condition.expand(batch, CONDITION_SIZE)
    x = torch.randn(shape, generator=generator)
    betas, alphas, alpha_bars = sched.betas, sched.alphas, sched.alpha_bars
    for t in tqdm(
        range(sched.timesteps, 0, -1),
        desc="Sampling",
        disable=not progress,
        leave=False,
    ):
        t_batch = torch.full((batch,), t, dtype=torch.long)
        eps = model(x, t_batch, condition)
        coef = betas[t - 1] / math.sqrt(1 - alpha_bars[t - 1])
        x = (x - coef * eps) / math.sqrt(alphas[t - 1])
        if t > 1:
            z = torch.randn(shape, generator=generator)
            x = x + math.sqrt(betas[t - 1]) * z
    return from_model_range(x)
