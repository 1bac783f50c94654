import warnings

import numpy as np
import pytest

from costadv.data import DatasetParams, SyntheticDataset, generate_dataset
from costadv.errors import ValidationError
from costadv.model import TrainConfig, accuracy, init_network, train


def small(**kw):
    base = dict(k=4, d=3, n_train=200, n_val=40, n_test=80, noise=0.1, seed=0)
    base.update(kw)
    return DatasetParams(**base)


def test_same_seed_same_dataset():
    a, b = generate_dataset(small()), generate_dataset(small())
    assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.labels, b.labels)
    c = generate_dataset(small(seed=1))
    assert not np.array_equal(a.inputs, c.inputs)


def test_shapes_splits_and_balance():
    ds = generate_dataset(DatasetParams(seed=3))
    assert ds.inputs.shape == (9000, 8)
    assert np.all((ds.inputs >= 0) & (ds.inputs <= 1))
    assert {s: int(np.sum(ds.split == s)) for s in ("train", "val", "test")} == {"train": 6000, "val": 1000,
                                                                                "test": 2000}
    counts = np.bincount(ds.labels, minlength=10)
    assert counts.max() - counts.min() <= 1
    assert ds.labels.min() >= 0 and ds.labels.max() < 10


def test_noise_free_points_sit_on_centers():
    ds = generate_dataset(small(noise=0.0, clusters_per_class=1))
    assert np.allclose(ds.inputs, ds.centers[ds.labels, 0])
    x, y = ds.part("train")
    net = train(init_network([3, 16, 4], 0), x, y, TrainConfig(epochs=100, seed=0)).net
    assert accuracy(net, x, y) == 1.0


def test_clipping_warning():
    with pytest.warns(RuntimeWarning, match="clipped"):
        generate_dataset(small(noise=2.0))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        generate_dataset(small())


@pytest.mark.parametrize("kw", [{"k": 1}, {"noise": -1}, {"n_train": 1, "n_val": 0, "n_test": 0},
                                {"center_margin": 0.5}, {"clusters_per_class": 0}])
def test_invalid_params(kw):
    with pytest.raises(ValidationError):
        small(**kw)


def test_save_load(tmp_path):
    ds = generate_dataset(small())
    ds.save(tmp_path / "d.npz")
    back = SyntheticDataset.load(tmp_path / "d.npz")
    assert back.params == ds.params
    for f in ("inputs", "labels", "split", "centers"):
        assert np.array_equal(getattr(back, f), getattr(ds, f))
    (tmp_path / "junk.npz").write_bytes(b"not a zip")
    with pytest.raises(ValidationError):
        SyntheticDataset.load(tmp_path / "junk.npz")
