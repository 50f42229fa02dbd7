# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Training loop with early stopping, and checkpoint files."""
import copy
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from tqdm import tqdm

from resindesign.config import DiffusionConfig
from resindesign.errors import InvalidParameters
from resindesign.models import NormStats, TrainingSample
from resindesign.util.diffusion import (
    CONDITION_SIZE,
    NoiseSchedule,
    q_sample,
    to_model_range,
    train_step,
)
from resindesign.util.unet import DenoiserNet

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(eq=False)
class TrainState:
    model: DenoiserNet
    optimizer: torch.optim.Optimizer
    schedule: NoiseSchedule
    config: DiffusionConfig
    seed: int
    generator: torch.Generator
    epoch: int = 0
    history: list[dict] = field(default_factory=list)

    @classmethod
    def create(cls, config: DiffusionConfig) -> "TrainState":
        torch.manual_seed(config.seed)
        model = build_model(config)
        return cls(
            model=model,
            optimizer=torch.optim.Adam(
                model.parameters(), lr=config.learning_rate
            ),
            schedule=NoiseSchedule.linear(
                config.timesteps, config.beta_start, config.beta_end
            ),
            config=config,
            seed=config.seed,
            generator=torch.Generator().manual_seed(config.seed),
        )


def build_model(config: DiffusionConfig) -> DenoiserNet:
    return DenoiserNet(
        channels=config.channels,
        base_channels=config.base_channels,
        channel_mults=tuple(config.channel_mults),
        groups=config.groups,
        embed_dim=config.embed_dim,
    )


def to_tensors(
    samples: Sequence[TrainingSample],
) -> tuple[torch.Tensor, torch.Tensor]:
    if any(s.condition is None for s in samples):
        raise InvalidParameters("Samples must be normalized before training")
    images = torch.from_numpy(
        np.stack([s.image for s in samples]).astype(np.float32)
    )
    conditions = torch.from_numpy(
        np.stack([s.condition for s in samples]).astype(np.float32)
    )
    return images, conditions


@torch.no_grad()
def evaluate(
    state: TrainState, images: torch.Tensor, conditions: torch.Tensor
) -> float:
    """
    Validation loss with noise and timesteps drawn from a fixed seed, so
    epochs are compared on the same draws.
    """
    state.model.eval()
    generator = torch.Generator().manual_seed(state.seed + 1)
    sched = state.schedule
    t = torch.randint(
        1, sched.timesteps + 1, (len(images),), generator=generator
    )
    noise = torch.randn(images.shape, generator=generator)
    x_t = q_sample(to_model_range(images), t, noise, sched)
    return float(F.mse_loss(state.model(x_t, t, conditions), noise))


def run_epoch(
    state: TrainState, images: torch.Tensor, conditions: torch.Tensor
) -> float:
    order = torch.randperm(len(images), generator=state.generator)
    losses = []
    for start in range(0, len(images), state.config.batch_size):
        batch = order[start : start + state.config.batch_size]
        losses.append(
            train_step(
                state.model,
                state.optimizer,
                images[batch],
                conditions[batch],
                state.schedule,
                state.generator,
            )
        )
    return float(np.mean(losses))


def fit(
    train: Sequence[TrainingSample],
    val: Sequence[TrainingSample],
    config: DiffusionConfig,
    state: TrainState | None = None,
) -> TrainState:
    """
    Train until `config.epochs` or until the validation loss has not
    improved for `config.patience` epochs; the best weights are restored.
    """
    if not train:
        raise InvalidParameters("Empty training split")
    state = state or TrainState.create(config)
    images, conditions = to_tensors(train)
    val_tensors = to_tensors(val) if val else None

    best = float("inf")
    best_weights = copy.deepcopy(state.model.state_dict())
    stale = 0
    for _ in tqdm(
        range(config.epochs), desc="Training", disable=not config.progress
    ):
        train_loss = run_epoch(state, images, conditions)
        state.epoch += 1
        val_loss = (
            evaluate(state, *val_tensors) if val_tensors else train_loss
        )
        state.history.append(
            {"epoch": state.epoch, "train": train_loss, "val": val_loss}
        )
        logger.info(
            "Epoch %d: train %.5f val %.5f", state.epoch, train_loss, val_loss
        )
        if val_loss < best:
            best, stale = val_loss, 0
            best_weights = copy.deepcopy(state.model.state_dict())
        else:
            stale += 1
            if stale >= config.patience:
                logger.info(
                    "Validation loss flat for %d epochs; stopping", stale
                )
                break
    state.model.load_state_dict(best_weights)
    return state


def save_checkpoint(
    path: Path, state: TrainState, stats: NormStats | None = None
):
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "weights": state.model.state_dict(),
            "optimizer": state.optimizer.state_dict(),
            "epoch": state.epoch,
            "history": state.history,
            "seed": state.seed,
            "config": asdict(state.config),
            "schedule": state.schedule.to_dict(),
            "embedding": {
                "dim": state.config.embed_dim,
                "condition_size": CONDITION_SIZE,
                "layout": "tiled",
            },
            "norm_stats": stats.to_dict() if stats else None,
        },
        path,
    )
    logger.info("Saved checkpoint to %s (epoch %d)", path, state.epoch)


def load_checkpoint(path: Path) -> tuple[TrainState, NormStats | None]:
    data = torch.load(path, map_location="cpu", weights_only=False)
    if data.get("version") != CHECKPOINT_VERSION:
        raise InvalidParameters(
            f"Unsupported checkpoint version {data.get('version')}"
        )
    config = DiffusionConfig(
        **{
            key: tuple(value) if isinstance(value, list) else value
            for key, value in data["config"].items()
        }
    )
    state = TrainState.create(config)
    state.model.load_state_dict(data["weights"])
    state.optimizer.load_state_dict(data["optimizer"])
    state.schedule = NoiseSchedule(np.array(data["schedule"]["betas"]))
    state.seed = data["seed"]
    state.epoch = data["epoch"]
    state.history = list(data["history"])
    stats = data["norm_stats"]
    return state, NormStats.from_dict(stats) if stats else None
