import numpy as np
import pytest

from moghs.grammar import applicable_rules, apply_rule, is_terminal, relabel, start_design
from moghs.heuristic import (
    FeatureBatch,
    featurize,
    init_params,
    load_params,
    loss_and_grads,
    net_config_for,
    predict,
    predict_batch,
    save_params,
    train_step,
)


def random_terminal(grammar, rng):
    d = start_design(grammar)
    while not is_terminal(d):
        apps = applicable_rules(grammar, d)
        d = apply_rule(d, apps[rng.integers(len(apps))])
    return d


@pytest.fixture
def cfg(tiny):
    return net_config_for(tiny, m=2)


class TestFeaturize:
    def test_single_node_layout(self, tiny, cfg):
        d = random_terminal(tiny, np.random.default_rng(0))
        single = d if len(d.nodes) == 1 else None
        while single is None:
            single = random_terminal(tiny, np.random.default_rng(1))
            if len(single.nodes) != 1:
                single = None
        x, edges = featurize(single, (1.0, 0.0), cfg)
        assert x.shape == (1, cfg.feature_dim)
        assert edges.shape == (0, 2)
        np.testing.assert_array_equal(x[0, -2:], (1.0, 0.0))
        assert x[0, cfg.n_symbols + 5] == 1.0  # terminal flag

    def test_weight_block_is_only_difference(self, tiny, cfg):
        d = random_terminal(tiny, np.random.default_rng(2))
        xa, _ = featurize(d, (1.0, 0.0), cfg)
        xb, _ = featurize(d, (0.0, 1.0), cfg)
        np.testing.assert_array_equal(xa[:, : cfg.base_dim], xb[:, : cfg.base_dim])
        assert (xa[:, cfg.base_dim :] != xb[:, cfg.base_dim :]).any()

    def test_nonterminal_nodes_have_zero_physical_block(self, tiny, cfg):
        d = start_design(tiny)
        x, _ = featurize(d, (0.5, 0.5), cfg)
        np.testing.assert_array_equal(x[0, cfg.n_symbols : cfg.n_symbols + 5], 0.0)
        assert x[0, cfg.n_symbols + 5] == 0.0

    def test_standardization_uses_grammar_ranges(self, tiny, cfg):
        d = random_terminal(tiny, np.random.default_rng(3))
        x, _ = featurize(d, (0.5, 0.5), cfg)
        phys = x[:, cfg.n_symbols : cfg.n_symbols + 5]
        assert np.abs(phys).max() <= 1.0 + 1e-9


class TestPredict:
    def test_zero_initialized_head_is_neutral(self, tiny, cfg):
        params = init_params(cfg, np.random.default_rng(0))
        d = random_terminal(tiny, np.random.default_rng(1))
        np.testing.assert_array_equal(predict(params, d, (0.3, 0.7)), 0.0)

    def test_permutation_invariance(self, crawler):
        cfg = net_config_for(crawler, m=2)
        params = init_params(cfg, np.random.default_rng(2))
        params.W[4] = np.random.default_rng(3).normal(0, 0.3, params.W[4].shape)
        rng = np.random.default_rng(4)
        for _ in range(5):
            d = random_terminal(crawler, rng)
            perm = rng.permutation(len(d.nodes))
            shuffled = relabel(d, list(perm))
            a = predict(params, d, (0.4, 0.6))
            b = predict(params, shuffled, (0.4, 0.6))
            np.testing.assert_allclose(a, b, atol=1e-9)

    def test_overfit_three_designs(self, tiny, cfg):
        rng = np.random.default_rng(5)
        designs = []
        while len(designs) < 3:
            d = random_terminal(tiny, rng)
            if all(d.nodes != e.nodes for e in designs):
                designs.append(d)
        omegas = [(1.0, 0.0), (0.5, 0.5), (0.0, 1.0)]
        targets = rng.uniform(0, 1, size=(3, 2))
        params = init_params(cfg, rng, lr=1e-2)
        items = [(d, w) for d, w in zip(designs, omegas)]
        for _ in range(500):
            train_step(params, items, targets)
        preds = predict_batch(params, items)
        assert np.abs(preds - targets).max() < 0.05


class TestTrainStep:
    def test_zero_loss_leaves_params_fixed(self, tiny, cfg):
        params = init_params(cfg, np.random.default_rng(6))
        d = random_terminal(tiny, np.random.default_rng(7))
        target = predict(params, d, (0.5, 0.5))  # zeros from the fresh head
        before = [w.copy() for w in params.tensors()]
        loss = train_step(params, [(d, (0.5, 0.5))], [target])
        assert loss == 0.0
        for b, a in zip(before, params.tensors()):
            np.testing.assert_array_equal(b, a)

    def test_single_sample_overfits_below_1e3(self, tiny, cfg):
        rng = np.random.default_rng(8)
        d = random_terminal(tiny, rng)
        params = init_params(cfg, rng, lr=1e-2)
        target = np.array([[0.8, 0.2]])
        loss = None
        for _ in range(200):
            loss = train_step(params, [(d, (0.6, 0.4))], target)
        assert loss < 1e-3

    def test_non_finite_loss_aborts(self, tiny, cfg):
        params = init_params(cfg, np.random.default_rng(9))
        d = random_terminal(tiny, np.random.default_rng(10))
        with pytest.raises(RuntimeError, match="non-finite"):
            train_step(params, [(d, (0.5, 0.5))], [[np.nan, 0.0]])

    @pytest.mark.parametrize("seed", range(10))
    def test_gradients_match_finite_differences(self, tiny, cfg, seed):
        rng = np.random.default_rng(100 + seed)
        params = init_params(cfg, rng)
        params.W[4] = rng.normal(0, 0.4, params.W[4].shape)
        params.b[4] = rng.normal(0, 0.1, params.b[4].shape)
        items = [(random_terminal(tiny, rng), tuple(rng.dirichlet(np.ones(2)))) for _ in range(3)]
        targets = rng.uniform(0, 1, size=(3, 2))
        batch = FeatureBatch.build(items, cfg)
        _, grads = loss_and_grads(params, batch, targets)

        def loss_at():
            l, _ = loss_and_grads(params, batch, targets)
            return l

        h = 1e-5
        worst = 0.0
        for t_idx, tensor in enumerate(params.tensors()):
            flat = tensor.reshape(-1)
            count = min(12, flat.size)
            for j in rng.choice(flat.size, size=count, replace=False):
                orig = flat[j]
                flat[j] = orig + h
                up = loss_at()
                flat[j] = orig - h
                down = loss_at()
                flat[j] = orig
                fd = (up - down) / (2 * h)
                an = grads[t_idx].reshape(-1)[j]
                if abs(fd) < 1e-10 and abs(an) < 1e-10:
                    continue
                rel = abs(an - fd) / max(abs(an), abs(fd), 1e-8)
                worst = max(worst, rel)
        assert worst < 1e-4

    def test_loss_trend_non_increasing(self, tiny, cfg):
        wins = 0
        for seed in range(10):
            rng = np.random.default_rng(200 + seed)
            items = [
                (random_terminal(tiny, rng), tuple(rng.dirichlet(np.ones(2))))
                for _ in range(6)
            ]
            targets = rng.uniform(0, 1, size=(6, 2))
            params = init_params(cfg, rng, lr=3e-3)
            losses = [train_step(params, items, targets) for _ in range(200)]
            medians = [np.median(losses[i : i + 50]) for i in range(0, 200, 50)]
            if all(a >= b - 1e-12 for a, b in zip(medians, medians[1:])):
                wins += 1
        assert wins >= 9

    def test_weight_conditioning_is_learned(self, tiny, cfg):
        rng = np.random.default_rng(11)
        d = random_terminal(tiny, rng)
        items = [(d, (1.0, 0.0)), (d, (0.0, 1.0))]
        targets = np.array([[1.0, 0.0], [0.0, 1.0]])
        params = init_params(cfg, rng, lr=1e-2)
        for _ in range(400):
            train_step(params, items, targets)
        a = predict(params, d, (1.0, 0.0))
        b = predict(params, d, (0.0, 1.0))
        assert np.linalg.norm(a - b) > 0.2


def test_pooling_lanes_agree():
    from moghs import kernels
    from moghs.accel import NUMBA_ENABLED

    if not NUMBA_ENABLED:
        pytest.skip("numba lane inactive")
    rng = np.random.default_rng(0)
    sizes = rng.integers(1, 9, size=40).astype(np.int64)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    n = int(sizes.sum())
    h = rng.normal(size=(n, 16))
    h[3] = h[0]  # force an exact tie inside a segment
    d_mean = rng.normal(size=(40, 16))
    d_max = rng.normal(size=(40, 16))
    mean_k, max_k = kernels.seg_pool_forward(h, starts, sizes)
    mean_n = np.add.reduceat(h, starts, axis=0) / sizes[:, None]
    max_n = np.maximum.reduceat(h, starts, axis=0)
    np.testing.assert_allclose(mean_k, mean_n, atol=1e-12)
    np.testing.assert_array_equal(max_k, max_n)
    seg_ids = np.repeat(np.arange(40), sizes)
    dh_k = kernels.seg_pool_backward(h, max_k, d_mean, d_max, starts, sizes)
    tie = h == max_n[seg_ids]
    counts = np.add.reduceat(tie.astype(float), starts, axis=0)
    dh_n = d_mean[seg_ids] / sizes[seg_ids, None] + tie * (d_max / counts)[seg_ids]
    np.testing.assert_allclose(dh_k, dh_n, atol=1e-12)


def test_grouped_batch_matches_itemwise(tiny, cfg):
    rng = np.random.default_rng(13)
    designs = []
    while len(designs) < 4:
        d = random_terminal(tiny, rng)
        designs.append((d, None))
    omegas = rng.dirichlet(np.ones(2), size=3)
    from moghs.heuristic import FeatureBatch

    grouped = FeatureBatch.build_grouped([(d, k) for d, k in designs], omegas, cfg)
    items = [(d, w) for d, _ in designs for w in omegas]
    plain = FeatureBatch.build(items, cfg)
    np.testing.assert_array_equal(grouped.x, plain.x)
    np.testing.assert_array_equal(grouped.sizes, plain.sizes)
    assert (grouped.adj != plain.adj).nnz == 0


def test_checkpoint_round_trip(tiny, cfg, tmp_path):
    rng = np.random.default_rng(12)
    params = init_params(cfg, rng, lr=5e-3)
    d = random_terminal(tiny, rng)
    for _ in range(3):
        train_step(params, [(d, (0.5, 0.5))], [[0.3, 0.9]])
    path = tmp_path / "ckpt.npz"
    save_params(params, path)
    loaded = load_params(path)
    np.testing.assert_array_equal(
        predict(loaded, d, (0.5, 0.5)), predict(params, d, (0.5, 0.5))
    )
    assert loaded.step == params.step
    # resuming training continues identically
    la = train_step(params, [(d, (0.5, 0.5))], [[0.3, 0.9]])
    lb = train_step(loaded, [(d, (0.5, 0.5))], [[0.3, 0.9]])
    assert la == lb
