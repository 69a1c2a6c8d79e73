import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from minispeechlm.model import (
    DecodeCache,
    ModelConfig,
    NoSupervisionError,
    OptimConfig,
    TrainState,
    TrainingError,
    backward,
    collate,
    count_params,
    delay_apply,
    delay_invert,
    delay_sequence,
    forward,
    forward_rows,
    init_params,
    load_checkpoint,
    loss_and_grads,
    lr_at,
    save_checkpoint,
    train_step,
    weighted_cross_entropy,
)
from minispeechlm.vocabulary import DELAY_PAD


def small_config(**kw):
    base = dict(vocab_size=20, n_q=3, d_model=16, n_layers=2, n_heads=2, max_T=24, seed=0)
    base.update(kw)
    return ModelConfig(**base)


# -- delay -------------------------------------------------------------------------


def test_delay_identity_for_one_stream():
    g = np.arange(5).reshape(5, 1)
    np.testing.assert_array_equal(delay_apply(g), g)


def test_delay_worked_example():
    a, b, c, d, e, f = 10, 11, 12, 13, 14, 15
    P = DELAY_PAD
    out = delay_apply(np.array([[a, b, c], [d, e, f]]))
    expected = [[a, P, P], [d, b, P], [P, e, c], [P, P, f]]
    np.testing.assert_array_equal(out, expected)


@given(st.integers(0, 32), st.integers(1, 9), st.integers(0, 2**31))
@settings(max_examples=100, deadline=None)
def test_delay_roundtrip(T, n_q, seed):
    rng = np.random.default_rng(seed)
    g = rng.integers(0, 50, (T, n_q))
    m = rng.random((T, n_q)) < 0.5
    w = rng.random((T, n_q))
    dg, dm, dw = delay_sequence(g, m, w)
    assert dg.shape == (T + n_q - 1, n_q)
    np.testing.assert_array_equal(delay_invert(dg), g)
    np.testing.assert_array_equal(delay_invert(dm), m)
    np.testing.assert_array_equal(delay_invert(dw), w)
    assert not dm[dg == DELAY_PAD].any() or np.any(g == DELAY_PAD)


def test_delay_invert_shape_error():
    with pytest.raises(ValueError):
        delay_invert(np.zeros((1, 4), dtype=int))


# -- forward -------------------------------------------------------------------------


def test_forward_shape_and_determinism():
    cfg = ModelConfig(vocab_size=106, n_q=9, d_model=16, n_heads=2, max_T=16)
    p = init_params(cfg)
    grid = np.random.default_rng(0).integers(0, 106, (10, 9))
    out = forward(p, cfg, grid)
    assert out.shape == (10, 9, 106)
    np.testing.assert_array_equal(out, forward(p, cfg, grid))


def test_forward_input_errors():
    cfg = small_config(max_T=4)
    p = init_params(cfg)
    with pytest.raises(ValueError):
        forward(p, cfg, np.zeros((5, 3), int))
    with pytest.raises(ValueError):
        forward(p, cfg, np.full((2, 3), 20))


@given(st.integers(1, 11), st.integers(0, 2**31))
@settings(max_examples=25, deadline=None)
def test_causality(t, seed):
    cfg = small_config()
    p = init_params(cfg)
    rng = np.random.default_rng(seed)
    g = rng.integers(0, 20, (12, 3))
    g2 = g.copy()
    g2[t:] = rng.integers(0, 20, g2[t:].shape)
    np.testing.assert_array_equal(forward(p, cfg, g)[:t], forward(p, cfg, g2)[:t])


def test_parallel_heads_are_independent():
    cfg = small_config()
    p = init_params(cfg)
    g = np.random.default_rng(1).integers(0, 20, (6, 3))
    base = forward(p, cfg, g)
    p["head.w"][2] += 1.0
    p["head.b"][2] += 1.0
    moved = forward(p, cfg, g)
    np.testing.assert_array_equal(base[:, :2], moved[:, :2])
    assert not np.array_equal(base[:, 2], moved[:, 2])


def test_forward_rows_matches_forward():
    cfg = small_config(dtype="float64")
    p = init_params(cfg)
    g = np.random.default_rng(2).integers(0, 20, (2, 9, 3))
    full = forward(p, cfg, g)
    cache = DecodeCache(cfg, 2)
    parts = [forward_rows(p, cfg, cache, g[:, :4])]
    for t in range(4, 9):
        parts.append(forward_rows(p, cfg, cache, g[:, t : t + 1]))
    np.testing.assert_allclose(np.concatenate(parts, axis=1), full, atol=1e-12)


# -- loss ------------------------------------------------------------------------------


def test_loss_perfect_and_uniform():
    grid = np.array([[1], [2], [3]])
    mask = np.array([[False], [True], [True]])
    logits = np.full((3, 1, 5), -1e9)
    logits[0, 0, 2] = 0
    logits[1, 0, 3] = 0
    loss, _ = weighted_cross_entropy(logits, grid, mask, mask.astype(float))
    assert loss == 0.0
    V = 106
    loss, per = weighted_cross_entropy(np.zeros((3, 1, V)), np.zeros((3, 1), int) + 5, mask, np.ones((3, 1)) * 0.3)
    assert loss == pytest.approx(math.log(V), rel=1e-12)
    assert loss == pytest.approx(4.663, abs=1e-3)


def test_loss_needs_supervision():
    with pytest.raises(NoSupervisionError):
        weighted_cross_entropy(np.zeros((2, 1, 3)), np.zeros((2, 1), int), np.zeros((2, 1), bool), np.ones((2, 1)))


def test_zero_weight_cell_has_no_gradient():
    rng = np.random.default_rng(3)
    logits = rng.standard_normal((4, 2, 6))
    grid = rng.integers(0, 6, (4, 2))
    mask = np.ones((4, 2), bool)
    w = np.ones((4, 2))
    w[2, 1] = 0.0
    _, _, grad = weighted_cross_entropy(logits, grid, mask, w, return_grad=True)
    assert np.all(grad[1, 1] == 0)
    # changing the unweighted label changes nothing
    grid2 = grid.copy()
    grid2[2, 1] = (grid[2, 1] + 1) % 6
    l1, _ = weighted_cross_entropy(logits, grid, mask, w)
    l2, _ = weighted_cross_entropy(logits, grid2, mask, w)
    assert l1 == l2


def test_condition_labels_do_not_affect_loss():
    cfg = small_config(dtype="float64")
    p = init_params(cfg)
    rng = np.random.default_rng(4)
    g = rng.integers(0, 20, (8, 3))
    mask = np.zeros((8, 3), bool)
    mask[5:] = True
    # rows 0..4 are unsupervised; their labels are never scored
    logits = forward(p, cfg, g)
    l1, _ = weighted_cross_entropy(logits, g, mask, mask.astype(float))
    g2 = g.copy()
    g2[3] = (g2[3] + 1) % 20
    l2, _ = weighted_cross_entropy(logits, g2, mask, mask.astype(float))
    assert l1 == l2


# -- gradients ----------------------------------------------------------------------------


def test_gradients_match_finite_differences_sampled():
    cfg = small_config(vocab_size=12, d_model=8, dtype="float64", max_T=8)
    p = init_params(cfg)
    rng = np.random.default_rng(5)
    for k in p:
        p[k] = p[k] + rng.standard_normal(p[k].shape) * 0.3
    grid = rng.integers(0, 12, (2, 6, 3))
    mask = rng.random((2, 6, 3)) < 0.7
    w = rng.random((2, 6, 3))
    _, grads = loss_and_grads(p, cfg, grid, mask, w)
    eps = 1e-5
    for k in p:
        flat = p[k].reshape(-1)
        for i in rng.choice(flat.size, size=min(4, flat.size), replace=False):
            old = flat[i]
            flat[i] = old + eps
            lp, _ = weighted_cross_entropy(forward(p, cfg, grid), grid, mask, w)
            flat[i] = old - eps
            lm, _ = weighted_cross_entropy(forward(p, cfg, grid), grid, mask, w)
            flat[i] = old
            num = (lp - lm) / (2 * eps)
            ana = grads[k].reshape(-1)[i]
            assert abs(num - ana) <= 1e-6 + 1e-4 * abs(num), k


def test_unused_embedding_rows_get_zero_gradient():
    cfg = small_config(dtype="float64")
    p = init_params(cfg)
    grid = np.array([[[1, 2, 3], [4, 5, 6], [7, 8, 9]]])
    mask = np.ones_like(grid, bool)
    _, grads = loss_and_grads(p, cfg, grid, mask, np.ones(grid.shape))
    assert np.all(grads["embed"][0, 10:] == 0)
    assert np.all(grads["pos"][3:] == 0)
    _, again = loss_and_grads(p, cfg, grid, mask, np.ones(grid.shape))
    for k in grads:
        np.testing.assert_array_equal(grads[k], again[k])


# -- optimisation -------------------------------------------------------------------------


def test_lr_schedule():
    assert lr_at(0, 100, 1e-3) == 0.0
    assert lr_at(50, 100, 1e-3) == pytest.approx(5e-4)
    assert lr_at(100, 100, 1e-3) == 1e-3
    assert lr_at(1000, 100, 1e-3) == 1e-3
    assert lr_at(0, 0, 1e-3) == 1e-3


def toy_batch(seed=6, B=3, T=8, Q=3, V=20):
    rng = np.random.default_rng(seed)
    grid = rng.integers(0, V, (B, T, Q))
    mask = np.zeros((B, T, Q), bool)
    mask[:, 3:] = True
    return grid, mask, mask.astype(float)


def test_overfit_tiny_batch_strictly_decreases():
    state = TrainState.create(small_config(), OptimConfig(peak_lr=3e-3, warmup_steps=0))
    batch = toy_batch()
    losses = []
    for _ in range(50):
        state, info = train_step(state, *batch)
        losses.append(info["loss"])
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert state.step == 50


def test_training_is_deterministic():
    batch = toy_batch()
    runs = []
    for _ in range(2):
        s = TrainState.create(small_config(), OptimConfig(warmup_steps=2))
        for _ in range(5):
            s, _ = train_step(s, *batch)
        runs.append(s.params)
    for k in runs[0]:
        np.testing.assert_array_equal(runs[0][k], runs[1][k])


def test_non_finite_loss_aborts_with_tags():
    state = TrainState.create(small_config())
    state.params["head.b"][:] = np.nan
    with pytest.raises(TrainingError, match="step 1.*asr/e7"):
        train_step(state, *toy_batch(), tags=[("asr", "e7")])
    with pytest.raises(TrainingError):
        train_step(state, np.zeros((0, 4, 3), int), np.zeros((0, 4, 3), bool), np.zeros((0, 4, 3)))


def test_checkpoint_roundtrip(tmp_path):
    s = TrainState.create(small_config(), OptimConfig(warmup_steps=1))
    s, _ = train_step(s, *toy_batch())
    s.extra = {"note": [1, 2]}
    save_checkpoint(tmp_path / "c.npz", s)
    back = load_checkpoint(tmp_path / "c.npz")
    assert back.step == 1 and back.config == s.config and back.optim == s.optim and back.extra == s.extra
    for k in s.params:
        np.testing.assert_array_equal(back.params[k], s.params[k])
        np.testing.assert_array_equal(back.m[k], s.m[k])
        np.testing.assert_array_equal(back.v[k], s.v[k])
    # continuing from the checkpoint matches continuing in memory
    a, _ = train_step(s, *toy_batch(7))
    b, _ = train_step(back, *toy_batch(7))
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])


def test_collate_pads_and_delays():
    class Seq:
        def __init__(self, T):
            self.grid = np.full((T, 2), 7)
            self.loss_mask = np.ones((T, 2), bool)
            self.weights = np.ones((T, 2))

    grid, mask, w = collate([Seq(3), Seq(5)])
    assert grid.shape == (2, 5, 2) and not mask[0, 3:].any() and np.all(grid[0, 3:] == 0)
    grid, mask, w = collate([Seq(3), Seq(5)], delay=True)
    assert grid.shape == (2, 6, 2)
    assert grid[1, 0, 1] == DELAY_PAD and not mask[1, 0, 1]


def test_config_validation_and_param_count():
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, d_model=10, n_heads=3)
    with pytest.raises(ValueError):
        ModelConfig.from_json({"vocab_size": 10, "typo": 1})
    cfg = small_config()
    assert ModelConfig.from_json(cfg.to_json()) == cfg
    d, V, Q, L, T = 16, 20, 3, 2, 24
    per_layer = 4 * d * d + 2 * d * 4 * d + 4 * d + d + 4 * d
    assert count_params(init_params(cfg)) == Q * V * d + T * d + L * per_layer + 2 * d + Q * d * V + Q * V
