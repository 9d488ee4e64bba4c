"""Training objectives.

Prompt-placement heuristics steer each class's weight rows toward sharp,
in-mask, mutually diverse points; segmentation quality is driven by
cross-entropy + soft DICE; class presence by an asymmetric focal-style
multi-label loss. All functions return scalar Tensors and are exercised by
finite-difference checks.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "LossConfig",
    "point_correctness",
    "point_sharpness",
    "diversity_in",
    "diversity_out",
    "diversity",
    "prompt_heuristic",
    "prompt_heuristic_components",
    "dice_loss",
    "cross_entropy",
    "asl_loss",
    "total_loss",
    "dice_score",
]

DICE_EPS = 1e-6
_PROB_CLIP = 1e-12


@dataclass(frozen=True)
class LossConfig:
    """Loss weights and stabilizers (defaults are the tuned training recipe)."""

    gamma: float = 0.1
    tau: float = 7.0
    alpha_pc: float = 2.0
    alpha_ps: float = 1.0
    alpha_pd: float = 1.0
    beta_in: float = 0.2
    beta_out: float = 0.5
    ce_weight: float = 0.3
    dice_weight: float = 0.7
    asl_gamma_pos: float = 0.0
    asl_gamma_neg: float = 2.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        for name in (
            "gamma", "alpha_pc", "alpha_ps", "alpha_pd", "beta_in", "beta_out",
            "ce_weight", "dice_weight", "asl_gamma_pos", "asl_gamma_neg",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def without_prompt_heuristic(self):
        """Ablation used by the point-quality experiments."""
        return dataclasses.replace(self, alpha_pc=0.0, alpha_ps=0.0, alpha_pd=0.0)


def _const(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# prompt heuristics


def point_correctness(weights, indicator, gamma=0.1):
    """Penalty for weight mass outside the class's grid cells.

    weights: (..., I); indicator: (I,) 0/1 over grid cells. Per row:
    1 - (sum(in-class mass) + gamma) / (sum(all mass) + gamma), then mean.
    """
    w = _const(weights)
    ind = _const(indicator)
    num = (w * ind).sum(axis=-1) + gamma
    den = w.sum(axis=-1) + gamma
    return (1.0 - num / den).mean()


def point_sharpness(weights, indicator, gamma=0.1):
    """Penalty for spreading in-class mass over many cells (0 iff one-hot in class)."""
    w = _const(weights)
    ind = _const(indicator)
    masked = w * ind
    num = masked.max(axis=-1) + gamma
    den = masked.sum(axis=-1) + gamma
    return (1.0 - num / den).mean()


def _normalize_rows(feats):
    norm = ad.sqrt((feats * feats).sum(axis=-1, keepdims=True))
    return feats / norm


def _contrastive(sims, tau):
    """Mean over anchors of logsumexp(row/tau) - self/tau (self-cosine = 1)."""
    return (ad.logsumexp_lastdim(sims * (1.0 / tau))).mean() - 1.0 / tau


def diversity_in(point_features, tau=7.0):
    """Contrastive penalty for similar points within one class; (N, D) input."""
    fn = _normalize_rows(_const(point_features))
    sims = ad.matmul(fn, fn.transpose((1, 0)))
    return _contrastive(sims, tau)


def diversity_out(point_features, tau=7.0):
    """Contrastive penalty across classes at each point index; (M, N, D) input."""
    f = _const(point_features)
    if f.shape[0] == 0:
        return Tensor(0.0)
    fn = _normalize_rows(f).transpose((1, 0, 2))  # (N, M, D)
    sims = ad.matmul(fn, fn.transpose((0, 2, 1)))  # (N, M, M)
    return _contrastive(sims, tau)


def diversity(point_features, cfg):
    """beta_in * within-class + beta_out * cross-class contrastive terms."""
    f = _const(point_features)
    if f.shape[0] == 0:
        return Tensor(0.0)
    fn = _normalize_rows(f)
    sims_in = ad.matmul(fn, fn.transpose((0, 2, 1)))  # (M, N, N)
    l_in = _contrastive(sims_in, cfg.tau)
    l_out = diversity_out(f, cfg.tau)
    return cfg.beta_in * l_in + cfg.beta_out * l_out


def prompt_heuristic_components(weights, indicators, point_features, cfg):
    """The three heuristic terms as named scalar Tensors.

    weights: (M, N, I); indicators: (M, I) 0/1; point_features: (M, N, D).
    """
    w = _const(weights)
    if w.shape[0] == 0:
        zero = Tensor(0.0)
        return {"pc": zero, "ps": zero, "pd": Tensor(0.0)}
    ind = np.asarray(indicators, dtype=np.float64)[:, None, :]  # (M, 1, I)
    return {
        "pc": point_correctness(w, ind, cfg.gamma),
        "ps": point_sharpness(w, ind, cfg.gamma),
        "pd": diversity(point_features, cfg),
    }


def prompt_heuristic(weights, indicators, point_features, cfg):
    """Weighted sum of correctness, sharpness and diversity terms."""
    c = prompt_heuristic_components(weights, indicators, point_features, cfg)
    return cfg.alpha_pc * c["pc"] + cfg.alpha_ps * c["ps"] + cfg.alpha_pd * c["pd"]


# ---------------------------------------------------------------------------
# segmentation + classification losses


def dice_loss(pred_probs, target, eps=DICE_EPS):
    """Soft DICE complement, mean over leading dims; inputs (..., H, W)."""
    p = _const(pred_probs)
    t = _const(np.asarray(target, dtype=np.float64))
    inter = (p * t).sum(axis=(-2, -1))
    total = p.sum(axis=(-2, -1)) + t.sum(axis=(-2, -1))
    return (1.0 - (2.0 * inter + eps) / (total + eps)).mean()


def cross_entropy(logits, labels):
    """Per-pixel multi-class CE. logits: (C, H, W) including a background row
    at index 0; labels: (H, W) integer class ids."""
    lg = _const(logits)
    c, h, w = lg.shape
    lab = np.asarray(labels)
    if lab.shape != (h, w):
        raise ValueError(f"labels shape {lab.shape} does not match logits {(h, w)}")
    if lab.min() < 0 or lab.max() >= c:
        raise ValueError("label values must lie in [0, num_classes)")
    lt = lg.transpose((1, 2, 0))  # (H, W, C)
    lse = ad.logsumexp_lastdim(lt)
    onehot = np.eye(c)[lab]  # (H, W, C)
    picked = (lt * onehot).sum(axis=-1)
    return (lse - picked).mean()


def asl_loss(class_probs, targets, cfg):
    """Asymmetric multi-label loss over presence probabilities (K,)."""
    p = ad.clip(_const(class_probs), _PROB_CLIP, 1.0 - _PROB_CLIP)
    y = np.asarray(targets, dtype=np.float64)
    pos = ad.log(p)
    if cfg.asl_gamma_pos > 0:
        pos = pos * ((1.0 - p) ** cfg.asl_gamma_pos)
    neg = ad.log(1.0 - p)
    if cfg.asl_gamma_neg > 0:
        neg = neg * (p**cfg.asl_gamma_neg)
    return -(pos * y + neg * (1.0 - y)).mean()


def total_loss(ce, dice, ph, asl, cfg):
    """ce_weight*CE + dice_weight*DICE + prompt heuristic + classification."""
    return cfg.ce_weight * ce + cfg.dice_weight * dice + ph + asl


# ---------------------------------------------------------------------------
# metric (plain numpy, used by evaluation)


def dice_score(pred, target):
    """2|A∩B| / (|A|+|B|) on binary masks; empty prediction vs nonempty gt -> 0."""
    a = np.asarray(pred, dtype=bool)
    b = np.asarray(target, dtype=bool)
    denom = a.sum() + b.sum()
    if denom == 0:
        return 1.0
    return 2.0 * float(np.logical_and(a, b).sum()) / float(denom)
