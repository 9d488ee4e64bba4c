"""Scikit-learn style estimator facade over the segmentation pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import interactive as I
from . import model as M
from . import training as T
from .imaging import SegSample
from .losses import LossConfig

__all__ = ["PointPromptSegmenter"]


class PointPromptSegmenter(BaseEstimator):
    """Automatic multi-class segmenter with point-prompt generation.

    fit(X, y) trains the full model (encoder, prompter, decoder, presence
    classifier) from scratch on (images, masks); predict(X) returns combined
    label maps; score(X, y) is the mean DICE over ground-truth classes.

    X: (n, H, W, 3) uint8 array or a sequence of such images. y: (n, H, W)
    integer masks with 0 = background.
    """

    def __init__(
        self,
        image_size=64,
        patch_size=8,
        embed_dim=64,
        num_heads=4,
        num_classes=4,
        points_per_class=4,
        encoder_blocks=2,
        prompter_blocks=2,
        decoder_blocks=2,
        total_epochs=20,
        warmup_epochs=2,
        batch_size=4,
        base_lr=1e-4,
        translate_max=8,
        click_prob=0.0,
        use_prompt_heuristic=True,
        seed=0,
    ):
        self.image_size = image_size
        self.patch_size = patch_size
        self.embed_dim = embed_dim
        self.num_heads = num_heads
        self.num_classes = num_classes
        self.points_per_class = points_per_class
        self.encoder_blocks = encoder_blocks
        self.prompter_blocks = prompter_blocks
        self.decoder_blocks = decoder_blocks
        self.total_epochs = total_epochs
        self.warmup_epochs = warmup_epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.translate_max = translate_max
        self.click_prob = click_prob
        self.use_prompt_heuristic = use_prompt_heuristic
        self.seed = seed

    # ------------------------------------------------------------------
    # config assembly

    def _model_config(self):
        return M.ModelConfig(
            image_size=self.image_size,
            patch_size=self.patch_size,
            embed_dim=self.embed_dim,
            num_heads=self.num_heads,
            num_classes=self.num_classes,
            points_per_class=self.points_per_class,
            encoder_blocks=self.encoder_blocks,
            prompter_blocks=self.prompter_blocks,
            decoder_blocks=self.decoder_blocks,
        )

    def _train_config(self):
        loss = LossConfig()
        if not self.use_prompt_heuristic:
            loss = loss.without_prompt_heuristic()
        return T.TrainConfig(
            base_lr=self.base_lr,
            total_epochs=self.total_epochs,
            warmup_epochs=self.warmup_epochs,
            batch_size=self.batch_size,
            translate_max=self.translate_max,
            click_prob=self.click_prob,
            seed=self.seed,
            loss=loss,
        )

    # ------------------------------------------------------------------
    # data validation

    def _as_samples(self, X, y):
        images = self._as_images(X)
        masks = [np.asarray(m) for m in y]
        if len(images) != len(masks):
            raise ValueError(f"X has {len(images)} images but y has {len(masks)} masks")
        samples = []
        for i, (img, msk) in enumerate(zip(images, masks)):
            if msk.shape != img.shape[:2]:
                raise ValueError(
                    f"sample {i}: mask shape {msk.shape} != image {img.shape[:2]}"
                )
            present = {int(v) for v in np.unique(msk) if v != 0}
            samples.append(
                SegSample(
                    id=f"{i:04d}",
                    image=img,
                    mask=msk.astype(np.uint8),
                    present_classes=present,
                ).validate(self.num_classes)
            )
        return samples

    def _as_images(self, X):
        if isinstance(X, np.ndarray) and X.ndim == 3:
            X = [X]
        images = []
        for i, img in enumerate(list(X)):
            img = np.asarray(img)
            if img.ndim != 3 or img.shape[2] != 3:
                raise ValueError(f"image {i} must be (H, W, 3), got {img.shape}")
            if img.shape[:2] != (self.image_size, self.image_size):
                raise ValueError(
                    f"image {i} is {img.shape[:2]}, expected "
                    f"{(self.image_size, self.image_size)}"
                )
            images.append(img.astype(np.uint8))
        return images

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise RuntimeError("estimator is not fitted; call fit(X, y) first")

    # ------------------------------------------------------------------
    # estimator API

    def fit(self, X, y):
        samples = self._as_samples(X, y)
        model_cfg = self._model_config()
        train_cfg = self._train_config()
        params, metrics = T.train(samples, model_cfg, train_cfg)
        self.params_ = params
        self.model_config_ = model_cfg
        self.train_config_ = train_cfg
        self.metrics_ = metrics
        return self

    def predict(self, X):
        """Combined label maps, (n, H, W) uint8 with 0 = background."""
        self._check_fitted()
        images = self._as_images(X)
        out = np.zeros((len(images), self.image_size, self.image_size), dtype=np.uint8)
        for i, img in enumerate(images):
            res = M.segment_auto(img, self.params_, self.model_config_)
            out[i] = res.labels
        return out

    def predict_probs(self, X):
        """Class-presence probabilities, (n, num_classes - 1) in class order."""
        self._check_fitted()
        images = self._as_images(X)
        out = np.zeros((len(images), self.num_classes - 1))
        for i, img in enumerate(images):
            feats = M.encode_image(img, self.params_, self.model_config_)
            out[i] = M.classify(feats, self.params_, self.model_config_).data
        return out

    def segment(self, image, classes=None):
        """Full single-image result (masks, points, weights, probabilities)."""
        self._check_fitted()
        (img,) = self._as_images([image])
        return M.segment_auto(img, self.params_, self.model_config_, classes=classes)

    def refine(self, image, edits=(), classes=None):
        """Single-image result after applying a sequence of user edits.

        `edits` is an iterable of UserEdit (points, boxes, class toggles);
        `classes` optionally fixes the decoded class set outright. With no
        edits and no classes this matches segment(image).
        """
        self._check_fitted()
        (img,) = self._as_images([image])
        state = I.PromptState(classes=set(classes) if classes is not None else None)
        for edit in edits:
            state.apply(edit)
        return I.refine(img, state, self.params_, self.model_config_)

    def score(self, X, y):
        """Mean DICE over ground-truth-present classes, averaged over samples."""
        self._check_fitted()
        samples = self._as_samples(X, y)
        return T.evaluate(self.params_, samples, self.model_config_)["mean_dice"]

    # ------------------------------------------------------------------
    # persistence

    def save(self, path):
        """Write a checkpoint whose metadata restores this estimator exactly."""
        self._check_fitted()
        T.save_checkpoint(
            path,
            self.params_,
            {
                "model_config": self.model_config_.to_dict(),
                "train_config": self.train_config_.to_dict(),
                "estimator_params": self.get_params(),
                "global_step": 0,
                "seed": self.seed,
                "dataset_hash": "",
            },
        )
        return path

    @classmethod
    def load(cls, path):
        params, meta = T.load_checkpoint(path)
        est_params = meta.get("estimator_params")
        if est_params is None:
            raise ValueError("checkpoint has no estimator parameters")
        est = cls(**est_params)
        est.params_ = params
        est.model_config_ = M.ModelConfig.from_dict(meta["model_config"])
        est.train_config_ = T.TrainConfig.from_dict(meta["train_config"])
        est.metrics_ = []
        return est
