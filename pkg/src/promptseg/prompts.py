"""Prompt sampling, prompt-feature embedding, and confusion-matrix analysis.

Two matrices quantify how well prompts discriminate classes:

- PCM (prompt confusion matrix): s[i][j] = mean over grid patches of class i
  of the max cosine similarity to any prompt feature of class j. The
  diagonal measures how well a class's prompts match its own patches; the
  off-diagonal measures confusion with other classes.
- OCM (output confusion matrix): ocm[i][j] = |pred_j intersect gt_i| / |gt_i|,
  the fraction of class i's ground truth covered by the mask decoded from
  class j's prompts.

A structural property of the max-aggregation: adding a prompt to class j can
never lower any PCM entry in column j (a max over a superset can only grow).
`check_proposition2` machine-checks this; aggregate="mean" deliberately
breaks it and serves as the negative control.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as M
from .autodiff import Tensor

__all__ = [
    "GridPoint",
    "BoxPrompt",
    "ConfusionMatrices",
    "sample_point_prompts",
    "tightest_box",
    "embed_point",
    "embed_box",
    "patch_classes",
    "class_indicator_grid",
    "compute_pcm",
    "compute_ocm",
    "check_proposition2",
    "analyze_sample",
    "aggregate_matrices",
]


@dataclass(frozen=True)
class GridPoint:
    """A pixel-level prompt: (x, y) plus class and foreground/background role."""

    x: int
    y: int
    class_id: int
    positive: bool = True


@dataclass(frozen=True)
class BoxPrompt:
    """Inclusive pixel bounds of a box prompt."""

    x0: int
    y0: int
    x1: int
    y1: int
    class_id: int

    def __post_init__(self):
        if self.x0 > self.x1 or self.y0 > self.y1:
            raise ValueError(f"degenerate box {(self.x0, self.y0, self.x1, self.y1)}")


@dataclass
class ConfusionMatrices:
    """PCM/OCM pair with per-class presence flags (absent rows/cols are NaN)."""

    pcm: np.ndarray  # (C, C)
    ocm: np.ndarray  # (C, C)
    class_present: np.ndarray  # (C,) bool


# ---------------------------------------------------------------------------
# prompt construction


def sample_point_prompts(mask, class_id, n, rng_seed):
    """n points uniform over the class's pixels (without replacement when possible)."""
    mask = np.asarray(mask)
    ys, xs = np.nonzero(mask == class_id)
    if len(ys) == 0:
        raise ValueError(f"class {class_id} has no pixels to sample from")
    rng = np.random.default_rng(rng_seed)
    replace = len(ys) < n
    idx = rng.choice(len(ys), size=n, replace=replace)
    return [GridPoint(x=int(xs[i]), y=int(ys[i]), class_id=int(class_id)) for i in idx]


def tightest_box(mask, class_id):
    """Smallest axis-aligned box containing every pixel of the class."""
    mask = np.asarray(mask)
    ys, xs = np.nonzero(mask == class_id)
    if len(ys) == 0:
        raise ValueError(f"class {class_id} has no pixels to bound")
    return BoxPrompt(
        x0=int(xs.min()), y0=int(ys.min()), x1=int(xs.max()), y1=int(ys.max()),
        class_id=int(class_id),
    )


# ---------------------------------------------------------------------------
# embedding prompts into feature space


def _features_array(features):
    return features.data if isinstance(features, Tensor) else np.asarray(features)


def embed_point(point, features, cfg):
    """Feature of the grid cell whose patch contains the pixel."""
    feats = _features_array(features)
    cell = M.cell_of_pixel(point.x, point.y, cfg)
    return feats[cell]


def patch_centers(cfg):
    """(I, 2) array of (cx, cy) patch-centre coordinates (half-integer)."""
    g, ps = cfg.grid, cfg.patch_size
    idx = np.arange(g * g)
    gy, gx = np.divmod(idx, g)
    cx = gx * ps + (ps - 1) / 2.0
    cy = gy * ps + (ps - 1) / 2.0
    return np.stack([cx, cy], axis=1)


def embed_box(box, features, cfg):
    """Mean feature over patches whose centres fall inside the (inclusive) box."""
    feats = _features_array(features)
    centers = patch_centers(cfg)
    inside = (
        (centers[:, 0] >= box.x0)
        & (centers[:, 0] <= box.x1)
        & (centers[:, 1] >= box.y0)
        & (centers[:, 1] <= box.y1)
    )
    if not inside.any():
        raise ValueError("box contains no patch centre")
    return feats[inside].mean(axis=0)


def box_cell_mask(box, cfg):
    """Boolean (I,) mask of grid cells whose centres lie inside the box."""
    centers = patch_centers(cfg)
    inside = (
        (centers[:, 0] >= box.x0)
        & (centers[:, 0] <= box.x1)
        & (centers[:, 1] >= box.y0)
        & (centers[:, 1] <= box.y1)
    )
    return inside


# ---------------------------------------------------------------------------
# grid-level class structure


def patch_classes(mask, cfg):
    """(I,) class id per patch by majority pixel vote; any tie -> background."""
    mask = np.asarray(mask)
    if mask.shape != (cfg.image_size, cfg.image_size):
        raise ValueError(f"mask shape {mask.shape} does not match config")
    if mask.max(initial=0) >= cfg.num_classes:
        raise ValueError(
            f"mask value {int(mask.max())} >= num_classes {cfg.num_classes}"
        )
    g, ps = cfg.grid, cfg.patch_size
    patches = mask.reshape(g, ps, g, ps).transpose(0, 2, 1, 3).reshape(g * g, ps * ps)
    counts = np.zeros((g * g, cfg.num_classes), dtype=np.int64)
    np.add.at(counts, (np.arange(g * g)[:, None], patches.astype(np.int64)), 1)
    top = counts.max(axis=1)
    winners = (counts == top[:, None]).sum(axis=1)
    out = counts.argmax(axis=1)
    out[winners > 1] = 0
    return out


def class_indicator_grid(mask, class_id, cfg):
    """(I,) 0/1 indicator of the class at grid resolution (majority vote)."""
    return (patch_classes(mask, cfg) == class_id).astype(np.float64)


# ---------------------------------------------------------------------------
# confusion matrices


def _unit_rows(mat):
    norms = np.linalg.norm(mat, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("zero-norm feature vector")
    return mat / norms


def compute_pcm(features, gt_mask, prompt_features, cfg, aggregate="max"):
    """(C, C) similarity matrix + presence flags.

    prompt_features: {class_id: (K, D) array}. Entry [i, j] aggregates, over
    patches of class i, the per-patch max (or mean, for the deliberately
    broken control) cosine similarity against class j's prompts. Rows with no
    patches or columns with no prompts are NaN and flagged absent.
    """
    if aggregate not in ("max", "mean"):
        raise ValueError("aggregate must be 'max' or 'mean'")
    feats = _unit_rows(_features_array(features))
    classes = patch_classes(gt_mask, cfg)
    c = cfg.num_classes
    pcm = np.full((c, c), np.nan)
    present = np.zeros(c, dtype=bool)
    for i in range(c):
        rows = feats[classes == i]
        has_prompts = i in prompt_features and len(prompt_features[i]) > 0
        present[i] = len(rows) > 0 and has_prompts
    for i in range(c):
        rows = feats[classes == i]
        if len(rows) == 0:
            continue
        for j in range(c):
            if j not in prompt_features or len(prompt_features[j]) == 0:
                continue
            pf = _unit_rows(np.asarray(prompt_features[j], dtype=np.float64))
            sims = rows @ pf.T  # (patches_i, K_j)
            per_patch = sims.max(axis=1) if aggregate == "max" else sims.mean(axis=1)
            pcm[i, j] = per_patch.mean()
    return pcm, present


def compute_ocm(pred_masks, gt_masks):
    """(C, C) overlap matrix: ocm[i][j] = |pred_j ∩ gt_i| / |gt_i|."""
    classes = sorted(set(pred_masks) | set(gt_masks))
    c = max(classes) + 1 if classes else 0
    ocm = np.full((c, c), np.nan)
    present = np.zeros(c, dtype=bool)
    shapes = {np.asarray(m).shape for m in list(pred_masks.values()) + list(gt_masks.values())}
    if len(shapes) > 1:
        raise ValueError(f"mask shapes differ: {shapes}")
    for i in gt_masks:
        gt = np.asarray(gt_masks[i], dtype=bool)
        area = gt.sum()
        if area == 0:
            continue
        present[i] = True
        for j in pred_masks:
            pred = np.asarray(pred_masks[j], dtype=bool)
            ocm[i, j] = float(np.logical_and(pred, gt).sum()) / float(area)
    return ocm, present


def check_proposition2(features, gt_mask, class_id, base_prompts, extra_prompt, cfg,
                       aggregate="max"):
    """PCM before/after adding one prompt to the class, plus the non-decrease
    verdict over column `class_id` (every finite entry after >= before - 1e-12)."""
    base = {class_id: np.asarray(base_prompts, dtype=np.float64)}
    extended = {
        class_id: np.vstack([base[class_id], np.asarray(extra_prompt, dtype=np.float64)[None]])
    }
    before, _ = compute_pcm(features, gt_mask, base, cfg, aggregate=aggregate)
    after, _ = compute_pcm(features, gt_mask, extended, cfg, aggregate=aggregate)
    col_before = before[:, class_id]
    col_after = after[:, class_id]
    finite = np.isfinite(col_before) & np.isfinite(col_after)
    nondecreasing = bool(np.all(col_after[finite] >= col_before[finite] - 1e-12))
    return before, after, nondecreasing


# ---------------------------------------------------------------------------
# model-backed per-sample analysis


def _decoded_masks_from_cells(feats, class_cells, params, cfg):
    """Decode one binary mask per class from one-hot prompt cells.

    class_cells: {class_id: [cell, ...]}. Each class's foreground tokens are
    its own cells; every other class's cells act as background tokens.
    """
    pos = M.positional_grid(cfg.grid, cfg.grid, cfg.embed_dim)
    selected = sorted(class_cells)
    token_sets = []
    for c in selected:
        toks = [(Tensor(pos[cell]), True) for cell in class_cells[c]]
        for other in selected:
            if other != c:
                toks.extend((Tensor(pos[cell]), False) for cell in class_cells[other])
        token_sets.append(toks)
    logits = M.decode_mask(feats, token_sets, params, cfg).data
    probs = 1.0 / (1.0 + np.exp(-logits))
    return {c: probs[m] > 0.5 for m, c in enumerate(selected)}


def analyze_sample(sample, params, cfg, prompt_mode="point", points_per_class=4, seed=0):
    """PCM + OCM for one sample using ground-truth-derived prompts.

    Point mode samples points per present class (background included, sampled
    from background pixels); box mode uses the tightest class box, embedded
    as the mean in-box patch feature and decoded from the in-box cells'
    uniform generalized point. Classes whose tightest box covers no patch
    centre are skipped in box mode (their matrix rows stay absent).
    """
    if prompt_mode not in ("point", "box"):
        raise ValueError("prompt_mode must be 'point' or 'box'")
    feats = M.encode_image(sample.image, params, cfg)
    mask = sample.mask
    feats_np = feats.data

    candidates = [c for c in [0] + sorted(sample.present_classes) if np.any(mask == c)]
    classes_here = []
    prompt_feats = {}
    class_cells = {}
    for c in candidates:
        if prompt_mode == "point":
            pts = sample_point_prompts(mask, c, points_per_class, rng_seed=[seed, c])
            cells = [M.cell_of_pixel(p.x, p.y, cfg) for p in pts]
            prompt_feats[c] = np.stack([feats_np[cell] for cell in cells])
            class_cells[c] = cells
        else:
            box = tightest_box(mask, c)
            if not box_cell_mask(box, cfg).any():
                # a sub-patch object whose box covers no patch centre cannot
                # take a box prompt; it is skipped for this sample (its
                # matrix rows stay absent, as for a class with no pixels)
                continue
            prompt_feats[c] = embed_box(box, feats_np, cfg)[None]
            class_cells[c] = [("box", box)]
        classes_here.append(c)

    pcm, pcm_present = compute_pcm(feats, mask, prompt_feats, cfg)

    fg = [c for c in classes_here if c != 0]
    if prompt_mode == "point":
        pred = _decoded_masks_from_cells(feats, {c: class_cells[c] for c in fg}, params, cfg)
    else:
        pred = _decoded_box_masks(feats, {c: class_cells[c][0][1] for c in fg}, params, cfg)
    pred_full = dict(pred)
    fg_union = np.zeros_like(mask, dtype=bool)
    for m in pred.values():
        fg_union |= m
    pred_full[0] = ~fg_union

    gt_masks = {c: mask == c for c in classes_here}
    ocm, _ = compute_ocm(pred_full, gt_masks)

    c_total = cfg.num_classes
    ocm_sq = np.full((c_total, c_total), np.nan)
    lim = min(ocm.shape[0], c_total)
    ocm_sq[:lim, :lim] = ocm[:lim, :lim]
    present = np.zeros(c_total, dtype=bool)
    for c in classes_here:
        if c < c_total:
            present[c] = pcm_present[c]
    return ConfusionMatrices(pcm=pcm, ocm=ocm_sq, class_present=present)


def _decoded_box_masks(feats, boxes, params, cfg):
    """Decode per-class masks from box prompts (uniform in-box generalized point)."""
    pos = M.positional_grid(cfg.grid, cfg.grid, cfg.embed_dim)
    selected = sorted(boxes)
    token_sets = []
    vecs = {}
    for c in selected:
        inside = box_cell_mask(boxes[c], cfg)
        if not inside.any():
            raise ValueError("box contains no patch centre")
        w = inside.astype(np.float64) / inside.sum()
        vecs[c] = w @ pos
    for c in selected:
        toks = [(Tensor(vecs[c]), True)]
        for other in selected:
            if other != c:
                toks.append((Tensor(vecs[other]), False))
        token_sets.append(toks)
    logits = M.decode_mask(feats, token_sets, params, cfg).data
    probs = 1.0 / (1.0 + np.exp(-logits))
    return {c: probs[m] > 0.5 for m, c in enumerate(selected)}


def aggregate_matrices(matrices):
    """Unweighted per-sample mean of PCM/OCM stacks, skipping absent entries."""
    if not matrices:
        raise ValueError("no matrices to aggregate")
    c = matrices[0].pcm.shape[0]
    pcm = np.full((c, c), np.nan)
    ocm = np.full((c, c), np.nan)
    pstack = np.stack([m.pcm for m in matrices])
    ostack = np.stack([m.ocm for m in matrices])
    pcount = np.isfinite(pstack).sum(axis=0)
    ocount = np.isfinite(ostack).sum(axis=0)
    psum = np.where(np.isfinite(pstack), pstack, 0.0).sum(axis=0)
    osum = np.where(np.isfinite(ostack), ostack, 0.0).sum(axis=0)
    pcm[pcount > 0] = psum[pcount > 0] / pcount[pcount > 0]
    ocm[ocount > 0] = osum[ocount > 0] / ocount[ocount > 0]
    present = np.stack([m.class_present for m in matrices]).any(axis=0)
    return ConfusionMatrices(pcm=pcm, ocm=ocm, class_present=present)
