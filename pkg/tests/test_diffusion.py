# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
from dataclasses import replace

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from resindesign.config import DiffusionConfig
from resindesign.errors import InvalidParameters
from resindesign.models import TrainingSample
from resindesign.util.diffusion import (
    NoiseSchedule,
    embed_condition,
    embed_time,
    p_sample_loop,
    q_sample,
    q_step,
)
from resindesign.util.training import (
    TrainState,
    evaluate,
    fit,
    load_checkpoint,
    run_epoch,
    save_checkpoint,
    to_tensors,
)
from resindesign.util.unet import DenoiserNet


class ZeroNet(torch.nn.Module):
    def forward(self, x, t, condition):
        return torch.zeros_like(x)


def normalized(samples):
    return [s.with_condition(np.linspace(0, 1, 3)) for s in samples]


def test_schedule_validation():
    sched = NoiseSchedule.linear()
    assert sched.timesteps == 1000
    assert sched.alpha_bars[-1] < 0.01
    with pytest.raises(InvalidParameters):
        NoiseSchedule.linear(10, 1e-4, 0.02)
    with pytest.raises(InvalidParameters):
        NoiseSchedule(np.array([0.5, 0.4, 0.9]))
    with pytest.raises(InvalidParameters):
        NoiseSchedule(np.array([0.0, 0.5]))
    with pytest.raises(InvalidParameters):
        DiffusionConfig(beta_start=0.1, beta_end=0.01)


def test_time_embedding():
    emb = embed_time(torch.tensor([0, 1, 500]))
    assert emb.shape == (3, 256)
    np.testing.assert_allclose(emb[0, :128], 0.0)
    np.testing.assert_allclose(emb[0, 128:], 1.0)
    assert not torch.equal(emb[1], emb[2])


def test_condition_embedding_tiles_values():
    emb = embed_condition(torch.tensor([[0.1, 0.2, 0.3]]))
    assert emb.shape == (1, 256)
    np.testing.assert_allclose(emb[0, :6], [0.1, 0.2, 0.3] * 2)
    np.testing.assert_allclose(emb[0, 252:255], [0.1, 0.2, 0.3])
    assert emb[0, 255] == 0.0


@pytest.mark.parametrize("t", [1, 10, 40, 50])
def test_closed_form_marginal_matches_chain(t):
    sched = NoiseSchedule.linear(50, 1e-4, 0.2)
    torch.manual_seed(0)
    n = 200_000
    x0 = torch.full((n,), 0.3, dtype=torch.float64)
    chain = x0
    for s in range(1, t + 1):
        noise = torch.randn(n, dtype=torch.float64)
        chain = q_step(chain, torch.full((n,), s), noise, sched)
    direct = q_sample(
        x0, torch.full((n,), t), torch.randn(n, dtype=torch.float64), sched
    )
    abar = sched.alpha_bars[t - 1]
    for x in (chain, direct):
        assert float(x.mean()) == pytest.approx(0.3 * abar**0.5, abs=0.01)
        assert float(x.var()) == pytest.approx(1 - abar, abs=0.01)


def test_terminal_marginal_is_near_standard_normal():
    sched = NoiseSchedule.linear()
    x0 = torch.ones(100_000)
    torch.manual_seed(1)
    x = q_sample(x0, torch.full((len(x0),), 1000), torch.randn_like(x0), sched)
    assert float(x.mean()) == pytest.approx(0.0, abs=0.1)
    assert 0.97 <= float(x.var()) <= 1.03


def test_untrained_net_loss_is_one():
    torch.manual_seed(0)
    model = DenoiserNet(base_channels=8, channel_mults=(1, 2), groups=4)
    sched = NoiseSchedule.linear()
    x0 = torch.rand(8, 2, 64, 64)
    t = torch.randint(1, 1001, (8,))
    noise = torch.randn_like(x0)
    with torch.no_grad():
        x_t = q_sample(2 * x0 - 1, t, noise, sched)
        pred = model(x_t, t, torch.rand(8, 3))
    assert float(F.mse_loss(pred, noise)) == pytest.approx(1.0, abs=0.03)


@pytest.mark.parametrize("size", [16, 32])
def test_output_shape_matches_input(size):
    model = DenoiserNet(base_channels=8, channel_mults=(1, 2, 2), groups=4)
    x = torch.randn(3, 2, size, size)
    out = model(x, torch.tensor([1, 5, 9]), torch.rand(3, 3))
    assert out.shape == x.shape


def test_sampling_variance_follows_recursion():
    sched = NoiseSchedule.linear(50, 1e-4, 0.2)
    out = p_sample_loop(ZeroNet(), [0.5, 0.5, 0.5], sched, 0, (4000, 1, 4, 4))
    var = 1.0
    for t in range(50, 1, -1):
        var = var / sched.alphas[t - 1] + sched.betas[t - 1]
    var /= sched.alphas[0]
    assert float(out.mean()) == pytest.approx(0.5, abs=0.05 * var**0.5)
    assert float(out.var()) == pytest.approx(var / 4, rel=0.03)


def test_sampling_is_seeded(small_diffusion):
    state = TrainState.create(small_diffusion)
    shape = (2, 2, 16, 16)
    a = p_sample_loop(state.model, [0.2, 0.4, 0.6], state.schedule, 5, shape)
    b = p_sample_loop(state.model, [0.2, 0.4, 0.6], state.schedule, 5, shape)
    c = p_sample_loop(state.model, [0.2, 0.4, 0.6], state.schedule, 6, shape)
    assert torch.equal(a, b)
    assert not torch.equal(a, c)


def test_training_lowers_loss(small_diffusion, toy_samples):
    config = replace(small_diffusion, learning_rate=1e-3)
    state = TrainState.create(config)
    images, conditions = to_tensors(normalized(toy_samples))
    before = evaluate(state, images, conditions)
    for _ in range(15):
        run_epoch(state, images, conditions)
    assert evaluate(state, images, conditions) < before


def test_fit_is_reproducible(small_diffusion, toy_samples):
    samples = normalized(toy_samples)
    a = fit(samples[:9], samples[9:], small_diffusion)
    b = fit(samples[:9], samples[9:], small_diffusion)
    assert a.history == b.history
    assert len(a.history) == small_diffusion.epochs
    for key, value in a.model.state_dict().items():
        assert torch.equal(value, b.model.state_dict()[key])


def test_fit_requires_normalized_samples(small_diffusion, toy_samples):
    with pytest.raises(InvalidParameters):
        fit(toy_samples, [], small_diffusion)
    with pytest.raises(InvalidParameters):
        fit([], [], small_diffusion)


def test_checkpoint_round_trip(
    tmp_path, small_diffusion, toy_samples, norm_stats
):
    state = fit(normalized(toy_samples), [], small_diffusion)
    path = tmp_path / "model.pt"
    save_checkpoint(path, state, norm_stats)
    loaded, stats = load_checkpoint(path)

    assert stats == norm_stats
    assert loaded.epoch == state.epoch
    assert loaded.history == state.history
    assert loaded.config == state.config
    np.testing.assert_array_equal(loaded.schedule.betas, state.schedule.betas)
    shape = (1, 2, 16, 16)
    condition = [0.3, 0.3, 0.3]
    assert torch.equal(
        p_sample_loop(state.model, condition, state.schedule, 1, shape),
        p_sample_loop(loaded.model, condition, loaded.schedule, 1, shape),
    )


def test_checkpoint_records_configured_embedding(tmp_path, small_diffusion):
    config = replace(small_diffusion, embed_dim=64)
    path = tmp_path / "narrow.pt"
    save_checkpoint(path, TrainState.create(config))
    data = torch.load(path, map_location="cpu", weights_only=False)
    assert data["embedding"]["dim"] == 64
    loaded, stats = load_checkpoint(path)
    assert loaded.config.embed_dim == 64
    assert loaded.model.embed_dim == 64
    assert stats is None


def two_class_samples(n):
    """Bright left half for condition 0, bright right half for 1."""
    samples = []
    for k in range(n):
        label = k % 2
        image = np.zeros((1, 8, 8), dtype=np.float32)
        image[0, :, 4 * label : 4 * label + 4] = 1.0
        samples.append(
            TrainingSample(
                sample_id=f"toy{k:03d}",
                image=image,
                raw_condition=np.full(3, float(label)),
                Tc=160.0,
                seed=k,
                condition=np.full(3, float(label)),
            )
        )
    return samples


@pytest.mark.slow
def test_conditional_generation_follows_condition():
    config = DiffusionConfig(
        timesteps=100,
        beta_end=0.1,
        image_size=8,
        channels=1,
        base_channels=16,
        channel_mults=(1, 2),
        groups=4,
        learning_rate=1e-3,
        batch_size=16,
        epochs=500,
        patience=500,
        progress=False,
    )
    state = fit(two_class_samples(64), [], config)
    correct = 0
    for label in (0, 1):
        out = p_sample_loop(
            state.model, [label] * 3, state.schedule, label, (20, 1, 8, 8)
        )
        left = out[:, 0, :, :4].mean(dim=(1, 2))
        right = out[:, 0, :, 4:].mean(dim=(1, 2))
        correct += int(((right > left) == bool(label)).sum())
    assert correct >= 38
