"""Tests for the scikit-learn style estimator facade."""

import numpy as np
import pytest
from sklearn.base import clone

from promptseg.estimator import PointPromptSegmenter
from promptseg.interactive import UserEdit


def _mini_kwargs():
    return dict(
        image_size=16, patch_size=4, embed_dim=16, num_heads=2, num_classes=3,
        points_per_class=2, encoder_blocks=1, prompter_blocks=1, decoder_blocks=1,
        total_epochs=2, warmup_epochs=1, batch_size=2, seed=0,
    )


def _toy_data(n=4, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 256, size=(n, 16, 16, 3)).astype(np.uint8)
    y = np.zeros((n, 16, 16), dtype=np.uint8)
    for i in range(n):
        y[i, 2:8, 2:8] = 1
        if i % 2 == 0:
            y[i, 10:14, 9:15] = 2
    return X, y


@pytest.fixture(scope="module")
def fitted():
    X, y = _toy_data()
    return PointPromptSegmenter(**_mini_kwargs()).fit(X, y), X, y


def test_get_set_params_and_clone():
    est = PointPromptSegmenter(**_mini_kwargs())
    params = est.get_params()
    assert params["image_size"] == 16 and params["seed"] == 0
    est2 = clone(est)
    assert est2.get_params() == params
    est2.set_params(seed=5)
    assert est2.seed == 5 and est.seed == 0


def test_fit_sets_state(fitted):
    est, X, y = fitted
    assert hasattr(est, "params_")
    assert len(est.metrics_) == 2
    assert est.model_config_.image_size == 16


def test_predict_shapes_and_dtype(fitted):
    est, X, y = fitted
    labels = est.predict(X)
    assert labels.shape == (4, 16, 16) and labels.dtype == np.uint8
    assert set(np.unique(labels)) <= {0, 1, 2}
    single = est.predict(X[0])
    assert single.shape == (1, 16, 16)


def test_predict_probs_bounds(fitted):
    est, X, y = fitted
    probs = est.predict_probs(X)
    assert probs.shape == (4, 2)
    assert np.all(probs > 0.0) and np.all(probs < 1.0)


def test_segment_returns_full_result(fitted):
    est, X, y = fitted
    res = est.segment(X[0], classes=[1, 2])
    assert res.classes == [1, 2]
    assert res.labels.shape == (16, 16)
    assert set(res.weights) == {1, 2}


def test_refine_matches_segment_when_empty(fitted):
    est, X, y = fitted
    auto = est.segment(X[0])
    ref = est.refine(X[0])
    assert ref.classes == auto.classes
    assert np.array_equal(ref.labels, auto.labels)


def test_refine_applies_edits(fitted):
    est, X, y = fitted
    res = est.refine(
        X[0],
        edits=[
            UserEdit(kind="point", class_id=1, x=4, y=4, positive=True),
            UserEdit(kind="box", class_id=2, x0=8, y0=8, x1=15, y1=15),
        ],
    )
    # edited classes are always part of the decoded set
    assert {1, 2} <= set(res.classes)
    w2 = res.weights[2]
    assert np.allclose(w2.sum(axis=1), 1.0)
    # box with corners (8,8)-(15,15) excludes the top-left 2x2 cell block
    assert np.all(w2[:, [0, 1, 4, 5]] == 0.0)


def test_refine_explicit_classes_are_authoritative(fitted):
    est, X, y = fitted
    res = est.refine(X[0], classes=[1])
    assert res.classes == [1]


def test_click_prob_is_estimator_param():
    est = PointPromptSegmenter(**_mini_kwargs())
    assert est.get_params()["click_prob"] == 0.0
    est.set_params(click_prob=0.5)
    assert est._train_config().click_prob == 0.5


def test_score_in_unit_interval(fitted):
    est, X, y = fitted
    s = est.score(X, y)
    assert 0.0 <= s <= 1.0


def test_unfitted_raises():
    est = PointPromptSegmenter(**_mini_kwargs())
    X, y = _toy_data()
    with pytest.raises(RuntimeError, match="not fitted"):
        est.predict(X)
    with pytest.raises(RuntimeError, match="not fitted"):
        est.score(X, y)


def test_validation_errors():
    est = PointPromptSegmenter(**_mini_kwargs())
    X, y = _toy_data()
    with pytest.raises(ValueError, match="images but"):
        est.fit(X, y[:2])
    with pytest.raises(ValueError, match="expected"):
        est.fit(np.zeros((2, 8, 8, 3), dtype=np.uint8), np.zeros((2, 8, 8)))
    bad_y = y.copy()
    bad_y[0, 0, 0] = 7  # class id beyond num_classes
    with pytest.raises(ValueError):
        est.fit(X, bad_y)


def test_save_load_roundtrip(tmp_path, fitted):
    est, X, y = fitted
    path = str(tmp_path / "est.ckpt")
    est.save(path)
    loaded = PointPromptSegmenter.load(path)
    assert loaded.get_params() == est.get_params()
    a = est.predict(X)
    # loaded weights went through f32 narrowing; labels should still agree
    b = loaded.predict(X)
    assert a.shape == b.shape
    assert np.mean(a == b) > 0.95


def test_fit_deterministic():
    X, y = _toy_data()
    a = PointPromptSegmenter(**_mini_kwargs()).fit(X, y)
    b = PointPromptSegmenter(**_mini_kwargs()).fit(X, y)
    for name in a.params_:
        assert np.array_equal(a.params_[name].data, b.params_[name].data)
