import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskhash.dataset import FrameSet, IntraPair, generate_synthetic, sample_intra_pair
from maskhash.errors import ConfigError, ContractError, TrainingError
from maskhash.model import Architecture, init_params
from maskhash.training import (
    TrainConfig,
    backward,
    classification_loss,
    grad_check,
    intra_pair_loss,
    kink_distance,
    parse_optimizer,
    total_loss,
    train,
    write_loss_history,
)

# measured on the 10-class desk dataset (2000 iterations, defaults):
# mean of first 10 totals 2.3383, mean of last 100 totals 0.0307
DESK_INITIAL_LOSS = 2.3383
DESK_FINAL_LOSS = 0.0307


def make_pair(rng, n, d, label=0):
    a = FrameSet(0, tuple(range(n)), rng.normal(size=(n, d)))
    b = FrameSet(0, tuple(range(n, 2 * n)), rng.normal(size=(n, d)))
    return IntraPair(a, b, label)


def test_classification_loss_examples():
    assert classification_loss([0.0, 1.0, 0.0], 1) == 0.0
    assert classification_loss(np.full(4, 0.25), 3) == pytest.approx(math.log(4))
    assert classification_loss([1.0, 0.0], 1) == pytest.approx(27.631, abs=1e-3)
    with pytest.raises(ContractError):
        classification_loss([0.5, 0.5], 2)


def test_intra_pair_loss_examples():
    a, b = [0.9, 0.1], [0.1, 0.9]
    assert intra_pair_loss(a, b, 0.0) == pytest.approx(1.28)
    assert intra_pair_loss(a, b, 2.0) == 0.0
    assert intra_pair_loss(a, a, 0.0) == 0.0
    with pytest.raises(ContractError):
        intra_pair_loss([0.1], [0.1, 0.2], 0.0)


@settings(max_examples=200, deadline=None)
@given(
    a=st.lists(st.floats(0.001, 0.999), min_size=1, max_size=10),
    seed=st.integers(0, 1000),
    margin=st.floats(0, 3),
)
def test_intra_pair_loss_symmetric(a, seed, margin):
    b = np.random.default_rng(seed).uniform(0.001, 0.999, size=len(a))
    assert intra_pair_loss(a, b, margin) == intra_pair_loss(b, a, margin)
    assert intra_pair_loss(a, b, margin) >= 0


def test_total_loss_zero_model():
    arch = Architecture(3, 4, 4, 6, 4, n_frames=2)
    p = init_params(arch, 0)
    for a in p.arrays():
        a[...] = 0.0
    pair = make_pair(np.random.default_rng(0), 2, 3, label=2)
    lb = total_loss(p, pair, TrainConfig(margin=0.0))
    assert lb.inter == pytest.approx(math.log(4))
    assert lb.intra == 0.0
    assert lb.total == pytest.approx(1.3863, abs=1e-4)


def test_total_loss_decomposition(noisy_params):
    pair = make_pair(np.random.default_rng(1), 3, 8, label=1)
    for alpha, beta, margin in [(1, 1, 0), (0.3, 2.0, 0.1), (1, 0, 0), (0, 1, 0)]:
        cfg = TrainConfig(alpha=alpha, beta=beta, margin=margin)
        lb = total_loss(noisy_params, pair, cfg)
        assert abs(lb.total - (alpha * lb.inter + beta * lb.intra)) <= 1e-9
    cfg = TrainConfig(beta=0.0)
    lb = total_loss(noisy_params, pair, cfg)
    assert lb.total == lb.inter


def test_identical_sets_alpha_zero(noisy_params):
    fs = FrameSet(0, (0, 1, 2), np.random.default_rng(2).normal(size=(3, 8)))
    pair = IntraPair(fs, fs, 0)
    cfg = TrainConfig(alpha=0.0, margin=0.0)
    assert total_loss(noisy_params, pair, cfg).total == 0.0
    assert all(not g.any() for g in backward(noisy_params, pair, cfg).arrays())


def test_hinge_inactive_gradient(noisy_params):
    pair = make_pair(np.random.default_rng(3), 3, 8, label=0)
    inter_only = backward(noisy_params, pair, TrainConfig(beta=0.0))
    hinge_off = backward(noisy_params, pair, TrainConfig(margin=1e6))
    for a, b in zip(inter_only.arrays(), hinge_off.arrays()):
        assert np.array_equal(a, b)


def test_grad_check_detects_corruption(noisy_params):
    pair = make_pair(np.random.default_rng(4), 3, 8, label=3)
    cfg = TrainConfig(margin=0.0)
    assert kink_distance(noisy_params, pair, cfg) > 1e-3
    assert grad_check(noisy_params, pair, cfg) < 1e-4
    bad = backward(noisy_params, pair, cfg)
    bad.enc_w[0, 0] += 1.0
    assert grad_check(noisy_params, pair, cfg, analytic=bad) > 0.1


def test_grad_check_zero_loss():
    arch = Architecture(2, 3, 3, 4, 2, n_frames=1)
    p = init_params(arch, 0)
    fs = FrameSet(0, (0,), np.ones((1, 2)))
    assert grad_check(p, IntraPair(fs, fs, 0), TrainConfig(alpha=0.0, margin=0.0)) < 1e-6


def test_optimizer_parsing():
    assert parse_optimizer("sgd") == ("sgd", ())
    assert parse_optimizer("sgd_momentum(0.5)") == ("sgd_momentum", (0.5,))
    assert parse_optimizer("adam(0.8, 0.99, 1e-6)") == ("adam", (0.8, 0.99, 1e-6))
    assert parse_optimizer("adam") == ("adam", (0.9, 0.999, 1e-8))
    for bad in ("rmsprop", "adam(1,2)", "sgd_momentum(x)"):
        with pytest.raises(ConfigError):
            parse_optimizer(bad)


def test_train_config_validation_and_file(tmp_path):
    with pytest.raises(ConfigError):
        TrainConfig(alpha=0.0, beta=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    path = tmp_path / "c.cfg"
    path.write_text("# comment\nalpha = 0.5\nbatch_size=4  # inline\noptimizer=sgd\nother=1\n")
    cfg = TrainConfig.from_file(path)
    assert (cfg.alpha, cfg.batch_size, cfg.optimizer, cfg.beta) == (0.5, 4, "sgd", 1.0)


@pytest.fixture(scope="module")
def tiny():
    ds = generate_synthetic(3, 4, 8, 4, 3.0, 0.5, 0.1, seed=0, n_frames=2)
    return ds, Architecture(4, 6, 5, 6, 3, n_frames=2)


@pytest.mark.parametrize("optimizer", ["sgd", "sgd_momentum(0.9)", "adam(0.9,0.999,1e-8)"])
def test_zero_learning_rate_keeps_params(tiny, optimizer):
    ds, arch = tiny
    start = init_params(arch, 5)
    cfg = TrainConfig(learning_rate=0.0, iterations=7, batch_size=5, optimizer=optimizer)
    params, history = train(ds, arch, cfg, params=start.copy())
    assert params.equals(start)
    assert len(history) == 7


def test_train_deterministic(tiny, tmp_path):
    ds, arch = tiny
    cfg = TrainConfig(iterations=30, batch_size=5, seed=9)
    p1, h1 = train(ds, arch, cfg)
    p2, h2 = train(ds, arch, cfg)
    assert p1.equals(p2)
    write_loss_history(h1, tmp_path / "a.csv")
    write_loss_history(h2, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "iteration,total,inter,intra"
    p3, _ = train(ds, arch, TrainConfig(iterations=30, batch_size=5, seed=10))
    assert not p1.equals(p3)


def test_train_divergence_reports_iteration(tiny):
    ds, arch = tiny
    cfg = TrainConfig(iterations=5, optimizer="sgd", learning_rate=1e300)
    with pytest.raises(TrainingError, match="iteration [1-4]"):
        train(ds, arch, cfg)


def test_desk_loss_drops(desk_data):
    ds, _, _ = desk_data
    arch = Architecture(16, 32, 32, 16, 10, n_frames=5)
    _, history = train(ds, arch, TrainConfig())
    totals = np.array([h.total for h in history])
    initial, final = totals[:10].mean(), totals[-100:].mean()
    assert initial == pytest.approx(DESK_INITIAL_LOSS, abs=1e-3)
    assert final == pytest.approx(DESK_FINAL_LOSS, abs=1e-3)
    assert final < 0.1 * initial
    for h in history:
        assert abs(h.total - (h.inter + h.intra)) <= 1e-9


def test_batch_gradient_is_mean_of_pairs(noisy_params):
    from maskhash.training import _batch_objective, _pair_arrays

    rng = np.random.default_rng(6)
    pairs = [make_pair(rng, 3, 8, label=k % 4) for k in range(4)]
    cfg = TrainConfig(margin=0.5)
    _, _, _, g = _batch_objective(noisy_params, *_pair_arrays(pairs), cfg, True)
    singles = [backward(noisy_params, p, cfg) for p in pairs]
    for i, a in enumerate(g.arrays()):
        mean = sum(s.arrays()[i] for s in singles) / 4
        assert np.allclose(a, mean, rtol=1e-12, atol=1e-15)


def test_sampled_pairs_trainable(tiny):
    ds, arch = tiny
    pair = sample_intra_pair(ds.videos[0], 2, np.random.default_rng(0))
    lb = total_loss(init_params(arch, 0), pair, TrainConfig())
    assert lb.inter > 0 and lb.intra >= 0
