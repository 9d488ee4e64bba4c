"""The segmentation network.

Four pieces share one embedding width D over an image token grid:

- encoder: patch projection + transformer blocks -> I x D feature grid
- prompter: per requested class, N learned query tokens attend to the grid
  (image tokens refreshed by depthwise 3x3 convs instead of positional
  embeddings) and emit W, a row-stochastic N x I weight matrix per class
- decoder: two-way attention between prompt tokens (weighted positional
  points + polarity) and image tokens, then transposed-conv upscaling and a
  hypernetwork-modulated per-class logit map at full resolution
- classifier: one learned token per class through a prompter-style block,
  then a per-class linear probe + sigmoid (multi-label presence scores)

A "generalized point" is W^T P: a convex combination of positional rows —
a differentiable relaxation of a clicked point. A one-hot row recovers an
ordinary click.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "ModelConfig",
    "SegmentationResult",
    "positional_grid",
    "init_params",
    "encode_image",
    "ai_prompter",
    "generalized_points",
    "decode_mask",
    "classify",
    "build_token_sets",
    "segment_with_weights",
    "segment_auto",
    "cell_center",
    "cell_of_pixel",
]


@dataclass(frozen=True)
class ModelConfig:
    """Network geometry. num_classes includes background (class id 0)."""

    image_size: int = 64
    patch_size: int = 8
    embed_dim: int = 64
    num_heads: int = 4
    num_classes: int = 4
    points_per_class: int = 4
    encoder_blocks: int = 2
    prompter_blocks: int = 2
    decoder_blocks: int = 2
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ValueError("image_size must be a multiple of patch_size")
        if self.patch_size < 4 or self.patch_size & (self.patch_size - 1):
            raise ValueError("patch_size must be a power of two >= 4")
        if self.embed_dim % 4 != 0:
            raise ValueError("embed_dim must be a multiple of 4 (sin/cos pairs per axis)")
        if self.embed_dim % self.num_heads != 0:
            raise ValueError("embed_dim must divide evenly into heads")
        if self.num_classes < 2:
            raise ValueError("need at least background + one foreground class")

    @property
    def grid(self):
        return self.image_size // self.patch_size

    @property
    def num_patches(self):
        return self.grid * self.grid

    def foreground_classes(self):
        return list(range(1, self.num_classes))

    @staticmethod
    def miniature(num_classes=3, points_per_class=2):
        """16x16 image / 4x4 grid configuration used by gradient checks."""
        return ModelConfig(
            image_size=16,
            patch_size=4,
            embed_dim=16,
            num_heads=2,
            num_classes=num_classes,
            points_per_class=points_per_class,
            encoder_blocks=1,
            prompter_blocks=1,
            decoder_blocks=1,
            mlp_ratio=2,
        )

    def to_dict(self):
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(d):
        return ModelConfig(**d)


@dataclass
class SegmentationResult:
    """Everything a caller needs from one segmentation pass (numpy, detached)."""

    classes: list  # selected class ids, ascending
    probs: dict  # class id -> classifier probability (all foreground classes)
    soft_masks: dict  # class id -> (H, W) float in [0, 1]
    masks: dict  # class id -> (H, W) bool
    labels: np.ndarray  # (H, W) uint8 combined map, 0 = background
    points: list  # dicts: class_id, x, y, positive, source ("auto"|"user")
    weights: dict  # class id -> (N, I) final prompt weights (post-constraint)


# ---------------------------------------------------------------------------
# positional grid


def positional_grid(grid_h, grid_w, dim):
    """Fixed sinusoidal (row, col) encodings: (grid_h*grid_w, dim) array.

    Half the channels encode the row, half the column, each as interleaved
    sin/cos at dim//4 geometric frequencies from 1 to the grid size. The
    base frequency guarantees distinct rows for distinct cells.
    """
    if dim % 4 != 0:
        raise ValueError("dim must be a multiple of 4 (sin/cos pairs over two axes)")
    k = dim // 4

    def axis_encoding(n):
        freqs = np.geomspace(1.0, max(n, 2), k)
        ang = np.pi * np.arange(n)[:, None] * freqs[None, :] / n
        return np.stack([np.sin(ang), np.cos(ang)], axis=-1).reshape(n, 2 * k)

    rows = axis_encoding(grid_h)
    cols = axis_encoding(grid_w)
    out = np.zeros((grid_h, grid_w, dim))
    out[:, :, : 2 * k] = rows[:, None, :]
    out[:, :, 2 * k :] = cols[None, :, :]
    return out.reshape(grid_h * grid_w, dim)


def cell_of_pixel(x, y, cfg):
    """Grid cell index of a pixel (the patch containing it is also the nearest centre)."""
    if not (0 <= x < cfg.image_size and 0 <= y < cfg.image_size):
        raise ValueError(f"pixel ({x}, {y}) outside {cfg.image_size}x{cfg.image_size} image")
    return (int(y) // cfg.patch_size) * cfg.grid + int(x) // cfg.patch_size


def cell_center(cell, cfg):
    """Representative (x, y) pixel of a grid cell."""
    gy, gx = divmod(int(cell), cfg.grid)
    half = cfg.patch_size // 2
    return gx * cfg.patch_size + half, gy * cfg.patch_size + half


# ---------------------------------------------------------------------------
# parameter construction


def _xavier(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def _init_linear(p, rng, name, din, dout):
    p[f"{name}.w"] = _xavier(rng, (din, dout), din, dout)
    p[f"{name}.b"] = Tensor(np.zeros(dout), requires_grad=True)


def _init_ln(p, name, d):
    p[f"{name}.g"] = Tensor(np.ones(d), requires_grad=True)
    p[f"{name}.b"] = Tensor(np.zeros(d), requires_grad=True)


def _init_attn(p, rng, name, d):
    for part in ("wq", "wk", "wv", "wo"):
        p[f"{name}.{part}"] = _xavier(rng, (d, d), d, d)
    for part in ("bq", "bk", "bv", "bo"):
        p[f"{name}.{part}"] = Tensor(np.zeros(d), requires_grad=True)


def _init_mlp(p, rng, name, d, hidden):
    _init_linear(p, rng, f"{name}.fc1", d, hidden)
    _init_linear(p, rng, f"{name}.fc2", hidden, d)


def _init_dwconv(p, rng, name, d):
    limit = np.sqrt(6.0 / (9 + 9))
    p[f"{name}.k"] = Tensor(rng.uniform(-limit, limit, size=(d, 3, 3)), requires_grad=True)
    p[f"{name}.b"] = Tensor(np.zeros(d), requires_grad=True)


def _init_prompter_block(p, rng, name, d, hidden):
    _init_attn(p, rng, f"{name}.self", d)
    _init_ln(p, f"{name}.ln_q1", d)
    _init_dwconv(p, rng, f"{name}.conv_a", d)
    _init_ln(p, f"{name}.ln_i1", d)
    _init_attn(p, rng, f"{name}.cross_qi", d)
    _init_ln(p, f"{name}.ln_q2", d)
    _init_mlp(p, rng, f"{name}.mlp", d, hidden)
    _init_ln(p, f"{name}.ln_q3", d)
    _init_dwconv(p, rng, f"{name}.conv_b", d)
    _init_ln(p, f"{name}.ln_i2", d)
    _init_attn(p, rng, f"{name}.cross_iq", d)
    _init_ln(p, f"{name}.ln_i3", d)


def init_params(cfg, seed=0):
    """Deterministic parameter dict keyed by dotted names (insertion order fixed)."""
    rng = np.random.default_rng(seed)
    d = cfg.embed_dim
    hidden = d * cfg.mlp_ratio
    n_fg = cfg.num_classes - 1
    p = {}

    patch_dim = cfg.patch_size * cfg.patch_size * 3
    _init_linear(p, rng, "enc.patch", patch_dim, d)
    for i in range(cfg.encoder_blocks):
        _init_ln(p, f"enc.blk{i}.ln1", d)
        _init_attn(p, rng, f"enc.blk{i}.attn", d)
        _init_ln(p, f"enc.blk{i}.ln2", d)
        _init_mlp(p, rng, f"enc.blk{i}.mlp", d, hidden)
    _init_ln(p, "enc.ln_out", d)

    p["prm.class_emb"] = Tensor(rng.normal(0.0, 0.02, size=(n_fg, d)), requires_grad=True)
    p["prm.point_emb"] = Tensor(
        rng.normal(0.0, 0.02, size=(cfg.points_per_class, d)), requires_grad=True
    )
    for i in range(cfg.prompter_blocks):
        _init_prompter_block(p, rng, f"prm.blk{i}", d, hidden)
    p["prm.out.wq"] = _xavier(rng, (d, d), d, d)
    p["prm.out.wk"] = _xavier(rng, (d, d), d, d)

    p["dec.mask_token"] = Tensor(rng.normal(0.0, 0.02, size=d), requires_grad=True)
    p["dec.polarity"] = Tensor(rng.normal(0.0, 0.02, size=(2, d)), requires_grad=True)
    for i in range(cfg.decoder_blocks):
        _init_attn(p, rng, f"dec.blk{i}.self", d)
        _init_ln(p, f"dec.blk{i}.ln1", d)
        _init_attn(p, rng, f"dec.blk{i}.cross_ti", d)
        _init_ln(p, f"dec.blk{i}.ln2", d)
        _init_mlp(p, rng, f"dec.blk{i}.mlp", d, hidden)
        _init_ln(p, f"dec.blk{i}.ln3", d)
        _init_attn(p, rng, f"dec.blk{i}.cross_it", d)
        _init_ln(p, f"dec.blk{i}.ln4", d)
    half, quarter = d // 2, d // 4
    p["dec.up1.k"] = _xavier(rng, (d, half, 2, 2), d * 4, half * 4)
    p["dec.up1.b"] = Tensor(np.zeros(half), requires_grad=True)
    p["dec.up2.k"] = _xavier(rng, (half, quarter, 2, 2), half * 4, quarter * 4)
    p["dec.up2.b"] = Tensor(np.zeros(quarter), requires_grad=True)
    _init_linear(p, rng, "dec.hyper.fc1", d, d)
    _init_linear(p, rng, "dec.hyper.fc2", d, quarter)

    p["cls.tokens"] = Tensor(rng.normal(0.0, 0.02, size=(n_fg, d)), requires_grad=True)
    _init_prompter_block(p, rng, "cls.blk", d, hidden)
    p["cls.probe.w"] = _xavier(rng, (n_fg, d), d, 1)
    p["cls.probe.b"] = Tensor(np.zeros(n_fg), requires_grad=True)
    return p


# ---------------------------------------------------------------------------
# forward building blocks (token tensors are (B, T, D))


def _linear(x, w, b):
    lead = x.shape[:-1]
    flat = x.reshape((-1, x.shape[-1]))
    out = ad.matmul(flat, w) + b
    return out.reshape(lead + (w.shape[-1],))


def _ln(p, name, x):
    return ad.layer_norm(x, p[f"{name}.g"], p[f"{name}.b"])


def _mha(p, name, q_in, kv_in, heads):
    b, tq, d = q_in.shape
    tk = kv_in.shape[1]
    dh = d // heads
    q = _linear(q_in, p[f"{name}.wq"], p[f"{name}.bq"])
    k = _linear(kv_in, p[f"{name}.wk"], p[f"{name}.bk"])
    v = _linear(kv_in, p[f"{name}.wv"], p[f"{name}.bv"])

    def split(t, tlen):
        return t.reshape((b, tlen, heads, dh)).transpose((0, 2, 1, 3)).reshape((b * heads, tlen, dh))

    qh, kh, vh = split(q, tq), split(k, tk), split(v, tk)
    scores = ad.matmul(qh, kh.transpose((0, 2, 1))) * (1.0 / np.sqrt(dh))
    out = ad.matmul(ad.softmax_lastdim(scores), vh)
    out = out.reshape((b, heads, tq, dh)).transpose((0, 2, 1, 3)).reshape((b, tq, d))
    return _linear(out, p[f"{name}.wo"], p[f"{name}.bo"])


def _mlp(p, name, x):
    h = ad.gelu(_linear(x, p[f"{name}.fc1.w"], p[f"{name}.fc1.b"]))
    return _linear(h, p[f"{name}.fc2.w"], p[f"{name}.fc2.b"])


def _conv_refresh(p, name, img, cfg):
    """Depthwise 3x3 over the token grid; stands in for positional embeddings."""
    b, i, d = img.shape
    g = cfg.grid
    x = img.transpose((0, 2, 1)).reshape((b * d, g, g))
    rep = np.tile(np.arange(d), b)
    kernel = ad.gather(p[f"{name}.k"], rep, axis=0)
    bias = ad.gather(p[f"{name}.b"], rep, axis=0)
    y = ad.depthwise_conv3x3(x, kernel, bias)
    return y.reshape((b, d, i)).transpose((0, 2, 1))


def _prompter_block(p, name, q, img, cfg):
    heads = cfg.num_heads
    q = _ln(p, f"{name}.ln_q1", q + _mha(p, f"{name}.self", q, q, heads))
    img = _ln(p, f"{name}.ln_i1", img + _conv_refresh(p, f"{name}.conv_a", img, cfg))
    q = _ln(p, f"{name}.ln_q2", q + _mha(p, f"{name}.cross_qi", q, img, heads))
    q = _ln(p, f"{name}.ln_q3", q + _mlp(p, f"{name}.mlp", q))
    img = _ln(p, f"{name}.ln_i2", img + _conv_refresh(p, f"{name}.conv_b", img, cfg))
    img = _ln(p, f"{name}.ln_i3", img + _mha(p, f"{name}.cross_iq", img, q, heads))
    return q, img


# ---------------------------------------------------------------------------
# encoder


def patchify(image, cfg):
    """(S, S, 3) uint8 -> (I, patch*patch*3) float64 in [-1, 1]."""
    arr = np.asarray(image)
    if arr.shape != (cfg.image_size, cfg.image_size, 3):
        raise ValueError(
            f"expected {cfg.image_size}x{cfg.image_size}x3 image, got {arr.shape}"
        )
    g, ps = cfg.grid, cfg.patch_size
    x = arr.astype(np.float64) / 255.0 * 2.0 - 1.0
    x = x.reshape(g, ps, g, ps, 3).transpose(0, 2, 1, 3, 4)
    return x.reshape(g * g, ps * ps * 3)


def encode_image(image, params, cfg):
    """Image -> (I, D) feature grid Tensor (layer-normed last)."""
    patches = Tensor(patchify(image, cfg))
    x = ad.matmul(patches, params["enc.patch.w"]) + params["enc.patch.b"]
    pos = Tensor(positional_grid(cfg.grid, cfg.grid, cfg.embed_dim))
    x = (x + pos).reshape((1, cfg.num_patches, cfg.embed_dim))
    for i in range(cfg.encoder_blocks):
        h = _ln(params, f"enc.blk{i}.ln1", x)
        x = x + _mha(params, f"enc.blk{i}.attn", h, h, cfg.num_heads)
        x = x + _mlp(params, f"enc.blk{i}.mlp", _ln(params, f"enc.blk{i}.ln2", x))
    x = _ln(params, "enc.ln_out", x)
    return x.reshape((cfg.num_patches, cfg.embed_dim))


# ---------------------------------------------------------------------------
# prompter


def _validate_class_ids(class_ids, cfg):
    for c in class_ids:
        if not 1 <= int(c) < cfg.num_classes:
            raise ValueError(
                f"unknown class id {c} (valid: 1..{cfg.num_classes - 1})"
            )


def ai_prompter(features, class_ids, params, cfg):
    """Per-class point weights: (len(class_ids), N, I), rows sum to 1.

    Classes are processed independently (batched), so requesting them in a
    different order permutes the output identically.
    """
    _validate_class_ids(class_ids, cfg)
    m = len(class_ids)
    n, i, d = cfg.points_per_class, cfg.num_patches, cfg.embed_dim
    if m == 0:
        return Tensor(np.zeros((0, n, i)))
    cls = ad.gather(params["prm.class_emb"], [int(c) - 1 for c in class_ids], axis=0)
    q = cls.reshape((m, 1, d)) + params["prm.point_emb"].reshape((1, n, d))
    img = features.reshape((1, i, d)) + Tensor(np.zeros((m, 1, 1)))
    for b in range(cfg.prompter_blocks):
        q, img = _prompter_block(params, f"prm.blk{b}", q, img, cfg)
    qp = _linear(q, params["prm.out.wq"], Tensor(np.zeros(d)))
    kp = _linear(img, params["prm.out.wk"], Tensor(np.zeros(d)))
    scores = ad.matmul(qp, kp.transpose((0, 2, 1))) * (1.0 / np.sqrt(d))
    return ad.softmax_lastdim(scores)


def generalized_points(weights, pos, features):
    """P^g = W^T P and the point feature W^T (P + X); both (M, N, D)."""
    m, n, i = weights.shape
    d = pos.shape[-1]
    flat = weights.reshape((m * n, i))
    p_g = ad.matmul(flat, pos).reshape((m, n, d))
    p_hat = ad.matmul(flat, pos + features).reshape((m, n, d))
    return p_g, p_hat


# ---------------------------------------------------------------------------
# decoder


def decode_mask(features, token_sets, params, cfg):
    """Per-class full-resolution logits: (len(token_sets), S, S).

    token_sets: per class, a sequence of (point_embedding Tensor (D,),
    positive flag). Each class decodes independently against the feature
    grid; a learned mask token is prepended and read out through a
    hypernetwork over upscaled image features. Classes with equal token
    counts decode as one batch; unequal counts fall back to one batch per
    class (identical math either way).
    """
    i, d = cfg.num_patches, cfg.embed_dim
    g, s = cfg.grid, cfg.image_size
    if not token_sets:
        return Tensor(np.zeros((0, s, s)))
    pos = Tensor(positional_grid(g, g, d))
    img0 = (features + pos).reshape((1, i, d))
    if len({len(tokens) for tokens in token_sets}) == 1:
        return _decode_batch(img0, token_sets, params, cfg)
    maps = [_decode_batch(img0, [tokens], params, cfg) for tokens in token_sets]
    return ad.concat(maps, axis=0)


def _decode_batch(img0, token_sets, params, cfg):
    """Decode token sets of one common length: (len(token_sets), S, S) logits."""
    i, d = cfg.num_patches, cfg.embed_dim
    g, s = cfg.grid, cfg.image_size
    m = len(token_sets)
    k = len(token_sets[0]) + 1  # mask token first
    rows = []
    for tokens in token_sets:
        toks = [params["dec.mask_token"].reshape((1, d))]
        for vec, positive in tokens:
            pol = ad.gather(params["dec.polarity"], 0 if positive else 1, axis=0)
            toks.append((vec + pol).reshape((1, d)))
        rows.append(ad.concat(toks, axis=0).reshape((1, k, d)))
    t = ad.concat(rows, axis=0) if m > 1 else rows[0]
    img = img0 + Tensor(np.zeros((m, 1, 1)))
    for b in range(cfg.decoder_blocks):
        name = f"dec.blk{b}"
        t = _ln(params, f"{name}.ln1", t + _mha(params, f"{name}.self", t, t, cfg.num_heads))
        t = _ln(params, f"{name}.ln2", t + _mha(params, f"{name}.cross_ti", t, img, cfg.num_heads))
        t = _ln(params, f"{name}.ln3", t + _mlp(params, f"{name}.mlp", t))
        img = _ln(params, f"{name}.ln4", img + _mha(params, f"{name}.cross_it", img, t, cfg.num_heads))

    feat_map = img.transpose((0, 2, 1)).reshape((m, d, g, g))
    up = ad.gelu(ad.conv_transpose2x2(feat_map, params["dec.up1.k"], params["dec.up1.b"]))
    up = ad.gelu(ad.conv_transpose2x2(up, params["dec.up2.k"], params["dec.up2.b"]))
    mask_tok = ad.gather(t, 0, axis=1)  # (m, d)
    h = ad.gelu(_linear(mask_tok, params["dec.hyper.fc1.w"], params["dec.hyper.fc1.b"]))
    h = _linear(h, params["dec.hyper.fc2.w"], params["dec.hyper.fc2.b"])
    logits = (h.reshape((m, d // 4, 1, 1)) * up).sum(axis=1)
    side = g * 4
    while side < s:
        logits = ad.upsample2x_bilinear(logits)
        side *= 2
    return logits


# ---------------------------------------------------------------------------
# classifier


def classify(features, params, cfg):
    """Multi-label class presence probabilities: (num_classes-1,) Tensor."""
    n_fg, i, d = cfg.num_classes - 1, cfg.num_patches, cfg.embed_dim
    q = params["cls.tokens"].reshape((1, n_fg, d))
    img = features.reshape((1, i, d))
    q, img = _prompter_block(params, "cls.blk", q, img, cfg)
    toks = q.reshape((n_fg, d))
    logits = (toks * params["cls.probe.w"]).sum(axis=1) + params["cls.probe.b"]
    return ad.sigmoid(logits)


# ---------------------------------------------------------------------------
# inference pipeline (shared by automatic mode and interactive refinement)


def one_hot_rows(weights):
    """Collapse each weight row over the grid to a one-hot at its argmax.

    Ties resolve to the smallest flat cell index. Turns generalized points
    into ordinary clicked locations.
    """
    w = np.asarray(weights, dtype=np.float64)
    out = np.zeros_like(w)
    idx = w.argmax(axis=-1)
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def build_token_sets(selected, weights_np, user_points, pos_np, cfg):
    """Decoder token sets from final per-class weights plus user clicks.

    weights_np: {class_id: (N, I) array} — already constrained if a box is
    active. user_points: {class_id: [(cell, positive), ...]} deduplicated in
    order. Each class's set: own generated points (foreground) + own user
    points (one-hot, given polarity) + other classes' generated points
    (background).
    """
    gen = {c: np.matmul(weights_np[c], pos_np) for c in selected}
    sets = []
    for c in selected:
        toks = [(Tensor(row), True) for row in gen[c]]
        for cell, positive in user_points.get(c, ()):
            toks.append((Tensor(pos_np[cell]), bool(positive)))
        for other in selected:
            if other != c:
                toks.extend((Tensor(row), False) for row in gen[other])
        sets.append(toks)
    return sets


def segment_with_weights(
    features, probs_np, selected, weights_np, user_points, params, cfg, user_point_meta=()
):
    """Decode the selected classes from final weights and assemble the result."""
    pos_np = positional_grid(cfg.grid, cfg.grid, cfg.embed_dim)
    s = cfg.image_size
    points = []
    for c in selected:
        for row in weights_np[c]:
            cell = int(np.argmax(row))
            x, y = cell_center(cell, cfg)
            points.append(
                {"class_id": int(c), "x": x, "y": y, "positive": True, "source": "auto"}
            )
    points.extend(user_point_meta)

    if selected:
        token_sets = build_token_sets(selected, weights_np, user_points, pos_np, cfg)
        logits = decode_mask(features, token_sets, params, cfg).data
        soft = 1.0 / (1.0 + np.exp(-logits))
    else:
        soft = np.zeros((0, s, s))

    soft_masks = {c: soft[m] for m, c in enumerate(selected)}
    masks = {c: soft[m] > 0.5 for m, c in enumerate(selected)}
    labels = np.zeros((s, s), dtype=np.uint8)
    if selected:
        passing = soft * (soft > 0.5)
        top = passing.max(axis=0)
        ties = (passing == top[None]).sum(axis=0)
        best = np.asarray(selected, dtype=np.uint8)[np.argmax(passing, axis=0)]
        fg = (top > 0.5) & (ties == 1)
        labels[fg] = best[fg]

    return SegmentationResult(
        classes=[int(c) for c in selected],
        probs={int(c): float(probs_np[c - 1]) for c in cfg.foreground_classes()},
        soft_masks=soft_masks,
        masks=masks,
        labels=labels,
        points=points,
        weights={c: weights_np[c] for c in selected},
    )


def segment_auto(image, params, cfg, classes=None, threshold=0.5, features=None):
    """Fully automatic segmentation; explicit `classes` bypasses the classifier."""
    feats = features if features is not None else encode_image(image, params, cfg)
    probs = classify(feats, params, cfg).data
    if classes is None:
        selected = [c for c in cfg.foreground_classes() if probs[c - 1] >= threshold]
    else:
        _validate_class_ids(classes, cfg)
        selected = sorted(set(int(c) for c in classes))
    weights = ai_prompter(feats, selected, params, cfg).data
    weights_np = {c: weights[m] for m, c in enumerate(selected)}
    return segment_with_weights(feats, probs, selected, weights_np, {}, params, cfg)
