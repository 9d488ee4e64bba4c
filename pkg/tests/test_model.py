"""Model forward-pass contracts: shapes, determinism, invariances, gradients."""

import numpy as np
import pytest

from promptseg import autodiff as ad
from promptseg import model as M
from promptseg.autodiff import Tensor


@pytest.fixture(scope="module")
def mini():
    cfg = M.ModelConfig.miniature(num_classes=3, points_per_class=2)
    params = M.init_params(cfg, seed=0)
    return cfg, params


def _random_image(cfg, seed=0):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(cfg.image_size, cfg.image_size, 3)).astype(np.uint8)


def test_positional_grid_deterministic_and_injective():
    a = M.positional_grid(4, 4, 16)
    b = M.positional_grid(4, 4, 16)
    np.testing.assert_array_equal(a, b)
    dists = np.linalg.norm(a[:, None, :] - a[None, :, :], axis=-1)
    off_diag = dists[~np.eye(16, dtype=bool)]
    assert off_diag.min() > 1e-6


def test_positional_grid_rejects_odd_dim():
    with pytest.raises(ValueError):
        M.positional_grid(4, 4, 15)


def test_config_validation():
    with pytest.raises(ValueError):
        M.ModelConfig(image_size=60)
    with pytest.raises(ValueError):
        M.ModelConfig(embed_dim=66)
    with pytest.raises(ValueError):
        M.ModelConfig(patch_size=3, image_size=63)


def test_encoder_zero_image_finite(mini):
    cfg, params = mini
    feats = M.encode_image(np.zeros((16, 16, 3), dtype=np.uint8), params, cfg)
    assert feats.shape == (cfg.num_patches, cfg.embed_dim)
    assert np.all(np.isfinite(feats.data))


def test_encoder_deterministic(mini):
    cfg, params = mini
    img = _random_image(cfg, 1)
    a = M.encode_image(img, params, cfg).data
    b = M.encode_image(img, params, cfg).data
    np.testing.assert_array_equal(a, b)


def test_encoder_rejects_wrong_size(mini):
    cfg, params = mini
    with pytest.raises(ValueError):
        M.encode_image(np.zeros((8, 8, 3), dtype=np.uint8), params, cfg)


def test_patch_embeddings_local_without_attention():
    # with zero encoder blocks, shifting content in one patch changes only that patch
    cfg = M.ModelConfig(
        image_size=16, patch_size=4, embed_dim=16, num_heads=2, num_classes=3,
        points_per_class=2, encoder_blocks=0, prompter_blocks=1, decoder_blocks=1,
        mlp_ratio=2,
    )
    params = M.init_params(cfg, seed=0)
    img = _random_image(cfg, 2)
    changed = img.copy()
    changed[0:4, 0:4] = 255 - changed[0:4, 0:4]
    a = M.encode_image(img, params, cfg).data
    b = M.encode_image(changed, params, cfg).data
    diff = np.abs(a - b).max(axis=1)
    assert diff[0] > 1e-9
    np.testing.assert_allclose(diff[1:], 0.0, atol=1e-12)


def test_prompter_rows_stochastic(mini):
    cfg, params = mini
    feats = M.encode_image(_random_image(cfg, 3), params, cfg)
    w = M.ai_prompter(feats, [1, 2], params, cfg)
    assert w.shape == (2, cfg.points_per_class, cfg.num_patches)
    assert np.all(w.data >= 0.0)
    np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, atol=1e-6)


def test_prompter_class_order_equivariant(mini):
    cfg, params = mini
    feats = M.encode_image(_random_image(cfg, 4), params, cfg)
    w12 = M.ai_prompter(feats, [1, 2], params, cfg).data
    w21 = M.ai_prompter(feats, [2, 1], params, cfg).data
    np.testing.assert_array_equal(w12[0], w21[1])
    np.testing.assert_array_equal(w12[1], w21[0])


def test_prompter_unknown_class(mini):
    cfg, params = mini
    feats = M.encode_image(_random_image(cfg, 5), params, cfg)
    with pytest.raises(ValueError, match="unknown class"):
        M.ai_prompter(feats, [cfg.num_classes], params, cfg)


def test_generalized_points_one_hot_recovers_row(mini):
    cfg, params = mini
    i, d = cfg.num_patches, cfg.embed_dim
    pos = Tensor(M.positional_grid(cfg.grid, cfg.grid, d))
    feats = Tensor(np.random.default_rng(0).normal(size=(i, d)))
    w = np.zeros((1, 2, i))
    w[0, 0, 5] = 1.0
    w[0, 1, 3] = 0.5
    w[0, 1, 9] = 0.5
    p_g, p_hat = M.generalized_points(Tensor(w), pos, feats)
    np.testing.assert_allclose(p_g.data[0, 0], pos.data[5], atol=1e-12)
    np.testing.assert_allclose(p_g.data[0, 1], 0.5 * (pos.data[3] + pos.data[9]), atol=1e-12)
    np.testing.assert_allclose(
        p_hat.data[0, 0], pos.data[5] + feats.data[5], atol=1e-12
    )


def test_generalized_points_match_explicit_loop(mini):
    cfg, _ = mini
    rng = np.random.default_rng(7)
    i, d = cfg.num_patches, cfg.embed_dim
    pos = Tensor(rng.normal(size=(i, d)))
    feats = Tensor(rng.normal(size=(i, d)))
    w = rng.dirichlet(np.ones(i), size=(2, 3))
    p_g, _ = M.generalized_points(Tensor(w), pos, feats)
    manual = np.zeros((2, 3, d))
    for m in range(2):
        for n in range(3):
            for k in range(i):
                manual[m, n] += w[m, n, k] * pos.data[k]
    np.testing.assert_allclose(p_g.data, manual, atol=1e-12)


def test_decoder_shapes_and_determinism(mini):
    cfg, params = mini
    feats = M.encode_image(_random_image(cfg, 6), params, cfg)
    pos = M.positional_grid(cfg.grid, cfg.grid, cfg.embed_dim)
    sets = [
        [(Tensor(pos[0]), True), (Tensor(pos[5]), False)],
        [(Tensor(pos[2]), True)],
    ]
    a = M.decode_mask(feats, sets, params, cfg)
    assert a.shape == (2, cfg.image_size, cfg.image_size)
    assert np.all(np.isfinite(a.data))
    b = M.decode_mask(feats, sets, params, cfg)
    np.testing.assert_array_equal(a.data, b.data)


def test_decoder_background_token_permutation_invariant(mini):
    cfg, params = mini
    feats = M.encode_image(_random_image(cfg, 7), params, cfg)
    pos = M.positional_grid(cfg.grid, cfg.grid, cfg.embed_dim)
    fg = (Tensor(pos[1]), True)
    bg1 = (Tensor(pos[4]), False)
    bg2 = (Tensor(pos[9]), False)
    a = M.decode_mask(feats, [[fg, bg1, bg2]], params, cfg).data
    b = M.decode_mask(feats, [[fg, bg2, bg1]], params, cfg).data
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_decoder_same_class_token_permutation_invariant(mini):
    cfg, params = mini
    feats = M.encode_image(_random_image(cfg, 8), params, cfg)
    pos = M.positional_grid(cfg.grid, cfg.grid, cfg.embed_dim)
    fg1 = (Tensor(pos[1]), True)
    fg2 = (Tensor(pos[6]), True)
    a = M.decode_mask(feats, [[fg1, fg2]], params, cfg).data
    b = M.decode_mask(feats, [[fg2, fg1]], params, cfg).data
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_classifier_zero_probe_gives_half(mini):
    cfg, params = mini
    params = dict(params)
    params["cls.probe.w"] = Tensor(np.zeros_like(params["cls.probe.w"].data))
    params["cls.probe.b"] = Tensor(np.zeros_like(params["cls.probe.b"].data))
    feats = M.encode_image(_random_image(cfg, 9), params, cfg)
    probs = M.classify(feats, params, cfg)
    np.testing.assert_allclose(probs.data, 0.5, atol=1e-12)


def test_classifier_outputs_in_range(mini):
    cfg, params = mini
    feats = M.encode_image(_random_image(cfg, 10), params, cfg)
    probs = M.classify(feats, params, cfg).data
    assert probs.shape == (cfg.num_classes - 1,)
    assert np.all((probs > 0.0) & (probs < 1.0))


def test_segment_auto_explicit_classes(mini):
    cfg, params = mini
    img = _random_image(cfg, 11)
    res = M.segment_auto(img, params, cfg, classes=[2, 1])
    assert res.classes == [1, 2]
    assert set(res.masks) == {1, 2}
    assert res.labels.shape == (cfg.image_size, cfg.image_size)
    assert set(res.probs) == {1, 2}
    for pt in res.points:
        assert pt["source"] == "auto"
        assert 0 <= pt["x"] < cfg.image_size and 0 <= pt["y"] < cfg.image_size


def test_segment_auto_empty_selection_valid(mini):
    cfg, params = mini
    res = M.segment_auto(_random_image(cfg, 12), params, cfg, classes=[])
    assert res.classes == []
    assert res.masks == {}
    assert res.points == []
    assert not res.labels.any()


def test_segment_auto_no_class_above_impossible_threshold(mini):
    cfg, params = mini
    res = M.segment_auto(_random_image(cfg, 13), params, cfg, threshold=1.1)
    assert res.classes == []
    assert not res.labels.any()


def test_segment_auto_label_map_consistent_with_masks(mini):
    cfg, params = mini
    res = M.segment_auto(_random_image(cfg, 14), params, cfg, classes=[1, 2])
    for c in res.classes:
        assert np.all(res.masks[c][res.labels == c])


def test_full_composite_gradient(mini):
    # image -> encoder -> prompter -> decoder -> scalar; analytic vs numeric
    cfg, params = mini
    img = _random_image(cfg, 15)
    names = ["enc.patch.w", "prm.out.wq", "dec.mask_token", "dec.up1.k", "cls.probe.w"]
    coeff = np.random.default_rng(0).normal(size=(cfg.image_size, cfg.image_size))

    def f(*tensors):
        p = dict(params)
        for name, t in zip(names, tensors):
            p[name] = t
        feats = M.encode_image(img, p, cfg)
        w = M.ai_prompter(feats, [1], p, cfg)
        pos = Tensor(M.positional_grid(cfg.grid, cfg.grid, cfg.embed_dim))
        p_g, _ = M.generalized_points(w, pos, feats)
        flat = p_g.reshape((cfg.points_per_class, cfg.embed_dim))
        tokens = [
            [(ad.gather(flat, n, axis=0), True) for n in range(cfg.points_per_class)]
        ]
        logits = M.decode_mask(feats, tokens, p, cfg)
        probs = M.classify(feats, p, cfg)
        return (ad.sigmoid(logits).reshape((cfg.image_size, cfg.image_size)) * Tensor(coeff)).mean() + probs.sum()

    inputs = [Tensor(params[n].data.copy(), requires_grad=True) for n in names]
    err = ad.grad_check(f, inputs, max_coords_per_tensor=6, rng=np.random.default_rng(1))
    assert err < 1e-5, f"composite grad err {err:.3e}"


def test_decode_batched_equals_per_class(mini):
    # classes with equal token counts decode as one batch; result must match
    # decoding each class alone
    cfg, params = mini
    feats = M.encode_image(_random_image(cfg, 21), params, cfg)
    pos = M.positional_grid(cfg.grid, cfg.grid, cfg.embed_dim)
    rng = np.random.default_rng(5)
    sets = []
    for _ in range(3):
        sets.append(
            [
                (Tensor(pos[int(rng.integers(cfg.num_patches))]), bool(rng.integers(2)))
                for _ in range(4)
            ]
        )
    together = M.decode_mask(feats, sets, params, cfg).data
    separate = [M.decode_mask(feats, [ts], params, cfg).data[0] for ts in sets]
    for row, alone in zip(together, separate):
        assert np.allclose(row, alone, rtol=0, atol=1e-12)


def test_decode_unequal_token_counts(mini):
    # unequal counts take the per-class fallback and still line up with
    # single-class decoding
    cfg, params = mini
    feats = M.encode_image(_random_image(cfg, 22), params, cfg)
    pos = M.positional_grid(cfg.grid, cfg.grid, cfg.embed_dim)
    sets = [
        [(Tensor(pos[0]), True)],
        [(Tensor(pos[1]), True), (Tensor(pos[2]), False), (Tensor(pos[3]), True)],
    ]
    out = M.decode_mask(feats, sets, params, cfg).data
    assert out.shape == (2, cfg.image_size, cfg.image_size)
    for m, ts in enumerate(sets):
        alone = M.decode_mask(feats, [ts], params, cfg).data[0]
        assert np.array_equal(out[m], alone)
