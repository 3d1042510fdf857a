import numpy as np
import pytest
from sklearn.base import clone

from maskhash import CategoryMaskHasher
from maskhash.dataset import generate_synthetic, split


@pytest.fixture(scope="module")
def data():
    ds = generate_synthetic(3, 10, 12, 6, 3.0, 0.5, 0.1, seed=3, n_frames=3)
    train, test = split(ds, 0.7, seed=3)
    names = np.array(["run", "jump", "swim"])
    to_x = lambda d: [v.frames for v in d]  # noqa: E731
    return to_x(train), names[train.labels], to_x(test), names[test.labels]


@pytest.fixture(scope="module")
def fitted(data):
    X, y, _, _ = data
    est = CategoryMaskHasher(code_length=12, embed_dim=16, repr_dim=12, n_frames=3,
                             iterations=300, learning_rate=5e-3, mask_ratio=0.5)
    return est.fit(X, y)


def test_params_round_trip():
    est = CategoryMaskHasher(code_length=16, mask_ratio=0.4)
    params = est.get_params()
    assert params["code_length"] == 16 and params["mask_ratio"] == 0.4
    twin = clone(est)
    assert twin.get_params() == params
    twin.set_params(iterations=5)
    assert twin.iterations == 5 and est.iterations == 2000


def test_fit_attributes(fitted, data):
    X, y, _, _ = data
    assert sorted(fitted.classes_.tolist()) == ["jump", "run", "swim"]
    assert fitted.n_features_in_ == 6
    assert len(fitted.loss_history_) == 300
    assert fitted.mask_.rows.sum(axis=1).tolist() == [6, 6, 6]


def test_transform_predict(fitted, data):
    X, y, Xq, yq = data
    codes = fitted.transform(Xq)
    assert codes.shape == (len(Xq), 12) and codes.dtype == np.uint8
    assert set(np.unique(codes)) <= {0, 1}
    assert np.array_equal(codes, fitted.transform(Xq))
    proba = fitted.predict_proba(Xq)
    assert np.allclose(proba.sum(axis=1), 1.0)
    assert fitted.score(Xq, yq) >= 0.9


def test_kneighbors_and_map(fitted, data):
    X, y, Xq, yq = data
    index = fitted.build_index(X, y)
    dist, idx = fitted.kneighbors(Xq, index, n_neighbors=4)
    assert dist.shape == idx.shape == (len(Xq), 4)
    assert np.all(np.diff(dist, axis=1) >= 0)
    assert 0.0 <= fitted.retrieval_map(X, y, Xq, yq) <= 1.0
    with pytest.raises(ValueError):
        fitted.build_index(X, ["fly"] * len(X))


def test_input_validation(data):
    X, y, _, _ = data
    est = CategoryMaskHasher(n_frames=3, iterations=1)
    with pytest.raises(ValueError):
        est.fit(X, y[:-1])
    with pytest.raises(ValueError):
        est.fit([np.zeros((12, 6)), np.zeros((12, 5))], ["a", "b"])
