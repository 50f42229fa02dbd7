# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Noise-predicting U-Net conditioned on timestep and stiffness."""
import torch
import torch.nn.functional as F
from torch import nn

from resindesign.util.diffusion import EMBED_DIM, embed_condition, embed_time


class ResidualBlock(nn.Module):
    """GroupNorm-SiLU-conv twice, with the embedding added in between."""

    def __init__(self, in_channels, out_channels, embed_dim, groups):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, in_channels)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.embed = nn.Linear(embed_dim, out_channels)
        self.norm2 = nn.GroupNorm(groups, out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        if in_channels == out_channels:
            self.skip = nn.Identity()
        else:
            self.skip = nn.Conv2d(in_channels, out_channels, 1)

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.embed(F.silu(emb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class DenoiserNet(nn.Module):
    """
    Encoder/decoder with one residual block per resolution and skip
    connections. Timestep and condition embeddings are summed, passed
    through an MLP and injected into every block. The output convolution
    starts at zero, so an untrained net predicts no noise.
    """

    def __init__(
        self,
        channels: int = 2,
        base_channels: int = 32,
        channel_mults: tuple[int, ...] = (1, 2, 4),
        groups: int = 8,
        embed_dim: int = EMBED_DIM,
    ):
        super().__init__()
        self.embed_dim = embed_dim
        self.embed_mlp = nn.Sequential(
            nn.Linear(embed_dim, embed_dim),
            nn.SiLU(),
            nn.Linear(embed_dim, embed_dim),
        )
        self.stem = nn.Conv2d(channels, base_channels, 3, padding=1)

        widths = [base_channels * m for m in channel_mults]
        self.down = nn.ModuleList()
        self.downsample = nn.ModuleList()
        width = base_channels
        for i, w in enumerate(widths):
            self.down.append(ResidualBlock(width, w, embed_dim, groups))
            width = w
            last = i == len(widths) - 1
            self.downsample.append(
                nn.Identity()
                if last
                else nn.Conv2d(w, w, 3, stride=2, padding=1)
            )

        self.middle = nn.ModuleList(
            [
                ResidualBlock(width, width, embed_dim, groups),
                ResidualBlock(width, width, embed_dim, groups),
            ]
        )

        self.up = nn.ModuleList()
        self.upsample = nn.ModuleList()
        for i in reversed(range(len(widths))):
            self.up.append(
                ResidualBlock(width + widths[i], widths[i], embed_dim, groups)
            )
            width = widths[i]
            self.upsample.append(
                nn.Identity()
                if i == 0
                else nn.Sequential(
                    nn.Upsample(scale_factor=2, mode="nearest"),
                    nn.Conv2d(width, width, 3, padding=1),
                )
            )

        self.head = nn.Sequential(
            nn.GroupNorm(groups, width),
            nn.SiLU(),
            nn.Conv2d(width, channels, 3, padding=1),
        )
        nn.init.zeros_(self.head[-1].weight)
        nn.init.zeros_(self.head[-1].bias)

    def forward(self, x, t, condition):
        emb = embed_time(t, self.embed_dim) + embed_condition(
            condition, self.embed_dim
        )
        emb = self.embed_mlp(emb.to(x.device))

        h = self.stem(x)
        skips = []
        for block, down in zip(self.down, self.downsample):
            h = block(h, emb)
            skips.append(h)
            h = down(h)
        for block in self.middle:
            h = block(h, emb)
        for block, up in zip(self.up, self.upsample):
            h = block(torch.cat([h, skips.pop()], dim=1), emb)
            h = up(h)
        return self.head(h)
