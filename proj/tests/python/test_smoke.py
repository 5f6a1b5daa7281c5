"""Smoke tests for the python bindings."""

import math

import numpy as np
import pytest

try:
    import gwf
except ImportError:  # in-tree build: extension on PYTHONPATH
    import _gwf as gwf


def test_version():
    assert gwf.__version__


def test_filter_bank_identities():
    for order in range(1, 11):
        f = gwf.filter_bank(order)
        lo = np.asarray(f.dec_lo)
        assert len(lo) == 2 * order
        assert abs(lo.sum() - math.sqrt(2.0)) < 1e-10
        assert abs((lo * lo).sum() - 1.0) < 1e-12
    with pytest.raises(ValueError):
        gwf.filter_bank(11)


@pytest.mark.parametrize("shape,order,mode", [
    ((64,), 4, "symmetric"),
    ((32, 32), 2, "symmetric"),
    ((16, 16), 3, "periodic"),
    ((8, 8, 8), 1, "periodic"),
])
def test_dwt_round_trip(shape, order, mode):
    rng = np.random.default_rng(7)
    x = rng.standard_normal(shape)
    plan = gwf.DwtPlan(list(shape), order=order, levels=1, mode=mode)
    coeffs = plan.forward(x)
    back = plan.inverse(coeffs)
    assert back.shape == x.shape
    assert np.abs(back - x).max() < 1e-8
    if mode == "periodic":
        assert abs((coeffs ** 2).sum() - (x ** 2).sum()) < 1e-8 * (x ** 2).sum()


def test_distance_features_match_numpy():
    rng = np.random.default_rng(3)
    cloud = rng.uniform(size=(80, 3))
    queries = rng.uniform(-0.2, 1.2, size=(50, 3))
    got = gwf.distance_features(queries, cloud)
    want = np.sqrt(((queries[:, None, :] - cloud[None, :, :]) ** 2).sum(-1)).min(1)
    assert np.allclose(got, want, atol=1e-12)


def test_riemann_weights_uniform_lattice():
    g = np.stack(np.meshgrid(*[np.arange(4) * 0.5] * 3, indexing="ij"), -1).reshape(-1, 3)
    w = gwf.riemann_weights(g, k_density=3)
    assert np.allclose(w, w[0])


def test_ball_neighbors_closed_ball():
    targets = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 2.0, 0]])
    lists = gwf.ball_neighbors(np.zeros((1, 3)), targets, radius=1.0)
    assert sorted(lists[0].tolist()) == [0, 1]


def test_relative_mse_fixtures():
    t = np.array([1.0, 2.0, 3.0, 4.0])
    assert gwf.relative_mse(t, t) == 0.0
    assert gwf.relative_mse(np.zeros(4), t) == 1.0
    assert abs(gwf.relative_mse(1.1 * t, t) - 0.01) < 1e-12


def test_end_to_end_tiny(tmp_path):
    data_dir = str(tmp_path / "data")
    model_prefix = str(tmp_path / "model")
    gwf.generate_dataset(data_dir, kind="tube", points=32, steps=10, trajs=3,
                         train_count=2, seed=5)
    report = gwf.train(data_dir, model_prefix, epochs=1, k=3, n=2)
    assert math.isfinite(report["train_rel_mse_pct"])
    preds = gwf.predict(model_prefix, data_dir, mode="window", horizon=3)
    assert preds.shape == (3, 32, 1)
    assert np.isfinite(preds).all()
    prog = gwf.predict(model_prefix, data_dir, mode="progressive", horizon=2)
    assert prog.shape == (2, 32, 1)
    means, stds = gwf.ensemble(model_prefix, data_dir, alpha=0.0, size=3, horizon=2)
    assert np.abs(np.asarray(stds[0])).max() == 0.0
