# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
import numpy as np
import pytest

from resindesign.config import Settings
from resindesign.errors import InvalidParameters, OutOfRange, ShapeError
from resindesign.models import Microstructure, NormStats, TrainingSample
from resindesign.util.dataset import (
    AUGMENTATIONS,
    augment,
    build_splits,
    compress,
    denormalize,
    fit_norm_stats,
    make_sample,
    normalize,
    read_dataset,
    write_dataset,
)
from resindesign.util.homogenization import homogenize

from .conftest import blob_raster


def fake_samples(n):
    rng = np.random.default_rng(42)
    return [
        TrainingSample(
            sample_id=f"s{k:03d}",
            image=rng.random((2, 8, 8)).astype(np.float32),
            raw_condition=rng.uniform(100, 3000, 3),
            Tc=160.0,
            seed=k,
        )
        for k in range(n)
    ]


def test_compress_matches_block_vote():
    phi = np.random.default_rng(0).random((20, 30))
    out = compress(phi, 5)
    assert out.shape == (4, 6)
    for i in range(4):
        for j in range(6):
            block = phi[5 * i : 5 * i + 5, 5 * j : 5 * j + 5]
            assert out[i, j] == int(block.mean() >= 0.5)


def test_compress_majority():
    block = np.zeros(25)
    block[:13] = 1
    assert compress(block.reshape(5, 5))[0, 0] == 1
    block[12] = 0
    assert compress(block.reshape(5, 5))[0, 0] == 0
    with pytest.raises(ShapeError):
        compress(np.ones((12, 10)), 5)


def test_augmentations_form_a_group():
    img = np.random.default_rng(1).random((2, 6, 6))
    images = [t(img) for t in AUGMENTATIONS.values()]
    for f in AUGMENTATIONS.values():
        for a in images:
            assert any(np.array_equal(f(a), b) for b in images)


def test_augment_keeps_condition(toy_samples):
    out = augment(toy_samples[0])
    assert [s.augmentation for s in out] == list(AUGMENTATIONS)
    assert len({s.sample_id for s in out}) == 4
    for s in out:
        np.testing.assert_array_equal(
            s.raw_condition, toy_samples[0].raw_condition
        )
    np.testing.assert_array_equal(out[0].image, toy_samples[0].image)


def test_augmentations_preserve_stiffness(materials):
    cells = blob_raster((16, 16), seed=3, sigma=2.0)
    expected = homogenize(cells, materials).D.condition()
    for transform in AUGMENTATIONS.values():
        D = homogenize(transform(cells), materials).D
        np.testing.assert_allclose(D.condition(), expected, rtol=1e-6)


def test_normalize_round_trip(norm_stats):
    raw = np.array([1000.0, 2500.0, 151.0])
    scaled = normalize(raw, norm_stats)
    assert np.all((scaled >= 0) & (scaled <= 1))
    np.testing.assert_allclose(denormalize(scaled, norm_stats), raw)


def test_normalize_clamps_with_warning(norm_stats):
    with pytest.warns(OutOfRange):
        scaled = normalize(np.array([100.0, 4000.0, 200.0]), norm_stats)
    assert scaled[0] == 0.0
    assert scaled[1] == 1.0


def test_norm_stats_reject_flat_component():
    with pytest.raises(InvalidParameters):
        fit_norm_stats(np.array([[1.0, 2.0, 3.0], [1.0, 5.0, 6.0]]))
    with pytest.raises(InvalidParameters):
        NormStats(minimum=(0.0, 0.0), maximum=(1.0, 1.0))


def test_splits_sizes_and_augmentation():
    splits = build_splits(fake_samples(40), seed=3)
    assert splits.counts() == {"train": 128, "val": 16, "test": 4}
    assert {s.augmentation for s in splits.test} == {"identity"}

    def base(group):
        return {s.sample_id.split("-")[0] for s in group}

    assert len(base(splits.train)) == 32
    assert not base(splits.train) & base(splits.val)
    assert not base(splits.train) & base(splits.test)
    assert not base(splits.val) & base(splits.test)

    conditions = np.array([s.condition for s in splits.train])
    assert conditions.min() == pytest.approx(0.0)
    assert conditions.max() == pytest.approx(1.0)


def test_splits_are_deterministic():
    samples = fake_samples(20)
    a = build_splits(samples, seed=7)
    b = build_splits(list(reversed(samples)), seed=7)
    for name, group in a.items():
        assert [s.sample_id for s in group] == [
            s.sample_id for s in getattr(b, name)
        ]
    c = build_splits(samples, seed=8)
    assert [s.sample_id for s in a.train] != [s.sample_id for s in c.train]


def test_splits_reject_bad_ratios():
    with pytest.raises(InvalidParameters):
        build_splits(fake_samples(10), ratios=(0.5, 0.1, 0.1))
    with pytest.raises(InvalidParameters):
        build_splits(fake_samples(10) * 2)


def test_dataset_round_trip(tmp_path, toy_samples):
    splits = build_splits(toy_samples, seed=0)
    write_dataset(tmp_path, splits)
    assert (tmp_path / "manifest.json").exists()
    assert any((tmp_path / "previews").iterdir())

    loaded = read_dataset(tmp_path)
    assert loaded.stats == splits.stats
    for name, group in splits.items():
        other = getattr(loaded, name)
        assert [s.sample_id for s in other] == [s.sample_id for s in group]
        for a, b in zip(group, other):
            np.testing.assert_array_equal(a.image, b.image)
            np.testing.assert_allclose(a.condition, b.condition)
            assert a.augmentation == b.augmentation


def test_make_sample(materials):
    settings = Settings()
    cells = blob_raster((20, 20), seed=2, sigma=4.0)
    m = Microstructure(cells=cells, Tc=180.0, seed=9)
    sample = make_sample(m, settings)
    compressed = compress(cells, settings.data.compress_factor)

    assert sample.sample_id == "tc180-s9"
    assert sample.image.shape == (2, 4, 4)
    assert sample.image.dtype == np.float32
    np.testing.assert_array_equal(sample.image[0], compressed)
    expected = homogenize(compressed, materials).D.condition()
    np.testing.assert_allclose(sample.raw_condition, expected, rtol=1e-6)
