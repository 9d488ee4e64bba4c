"""Optimizer, LR schedule, training/evaluation loops, and checkpoint files.

The training loop is deterministic end to end: shuffling and augmentation
draw from per-(seed, epoch[, index]) generators, gradients accumulate in a
fixed order, and the optimizer walks parameters sorted by name — so the same
(config, data, seed) always produces bit-identical checkpoint bytes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import losses as L
from . import model as M
from .autodiff import Tensor
from .losses import LossConfig
from .prompts import class_indicator_grid

__all__ = [
    "TrainConfig",
    "TrainingDiverged",
    "cosine_lr",
    "AdamW",
    "clip_global_norm",
    "translate_sample",
    "sample_clicks",
    "sample_loss",
    "train",
    "evaluate",
    "dataset_hash",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
]


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyper-parameters (defaults are the full-scale recipe)."""

    base_lr: float = 1e-4
    warmup_init_lr: float = 1e-10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    total_epochs: int = 80
    warmup_epochs: int = 8
    batch_size: int = 4
    seed: int = 0
    clip_norm: float = 1.0
    translate_max: int = 8
    click_prob: float = 0.0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.warmup_epochs >= self.total_epochs:
            raise ValueError("warmup_epochs must be < total_epochs")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")
        for name in ("base_lr", "warmup_init_lr", "eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.translate_max < 0:
            raise ValueError("translate_max must be >= 0")
        if not 0.0 <= self.click_prob <= 1.0:
            raise ValueError("click_prob must lie in [0, 1]")

    @staticmethod
    def desk(**overrides):
        """Scaled-down schedule for the synthetic benchmark (same warmup ratio).

        Turns on simulated-click augmentation so the decoder learns that a
        clicked point marks foreground — the interactive path depends on it.
        """
        base = dict(total_epochs=20, warmup_epochs=2, batch_size=4, click_prob=0.5)
        base.update(overrides)
        return TrainConfig(**base)

    def to_dict(self):
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(d):
        d = dict(d)
        loss = LossConfig(**d.pop("loss")) if "loss" in d else LossConfig()
        return TrainConfig(loss=loss, **d)


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient stops being finite; carries a dump dict."""

    def __init__(self, message, dump):
        super().__init__(message)
        self.dump = dump


# ---------------------------------------------------------------------------
# schedule + optimizer


def cosine_lr(step, total_steps, config):
    """Linear warmup from warmup_init_lr to base_lr, then cosine decay to 0.

    Warmup spans the first warmup_epochs/total_epochs fraction of steps; both
    branches equal base_lr at the junction and the last step lands on 0.
    """
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    step = min(max(int(step), 0), int(total_steps))
    warmup_steps = int(round(total_steps * config.warmup_epochs / config.total_epochs))
    if step < warmup_steps:
        frac = step / warmup_steps
        return config.warmup_init_lr + (config.base_lr - config.warmup_init_lr) * frac
    span = total_steps - warmup_steps
    if span <= 0:
        return 0.0
    progress = (step - warmup_steps) / span
    return config.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Decoupled-weight-decay Adam over a name->Tensor parameter dict.

    Moments are kept per name; parameters update in sorted-name order. A
    missing gradient is treated as zero, so decay still applies.
    """

    def __init__(self, config):
        self.config = config
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads, lr):
        cfg = self.config
        self.t += 1
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        for name in sorted(params):
            p = params[name]
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p.data)
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            self.m[name] = cfg.beta1 * self.m[name] + (1.0 - cfg.beta1) * g
            self.v[name] = cfg.beta2 * self.v[name] + (1.0 - cfg.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data = p.data - lr * cfg.weight_decay * p.data - lr * m_hat / (
                np.sqrt(v_hat) + cfg.eps
            )


def clip_global_norm(grads, max_norm):
    """Scale all gradients in place so the global L2 norm is <= max_norm.

    Returns the pre-clip norm. Non-finite norms raise TrainingDiverged.
    """
    total = 0.0
    for name in sorted(grads):
        total += float(np.sum(grads[name] * grads[name]))
    norm = math.sqrt(total)
    if not math.isfinite(norm):
        raise TrainingDiverged(
            "gradient norm is not finite", {"grad_norm": norm}
        )
    if norm > max_norm > 0:
        scale = max_norm / norm
        for name in grads:
            grads[name] = grads[name] * scale
    return norm


# ---------------------------------------------------------------------------
# data augmentation


def translate_sample(image, mask, dx, dy):
    """Shift image and mask by (dx, dy), filling vacated pixels with zeros."""
    h, w = mask.shape
    img_out = np.zeros_like(image)
    mask_out = np.zeros_like(mask)
    sy0, sy1 = max(0, -dy), min(h, h - dy)
    dy0, dy1 = max(0, dy), min(h, h + dy)
    sx0, sx1 = max(0, -dx), min(w, w - dx)
    dx0, dx1 = max(0, dx), min(w, w + dx)
    if sy1 > sy0 and sx1 > sx0:
        img_out[dy0:dy1, dx0:dx1] = image[sy0:sy1, sx0:sx1]
        mask_out[dy0:dy1, dx0:dx1] = mask[sy0:sy1, sx0:sx1]
    return img_out, mask_out


# ---------------------------------------------------------------------------
# per-sample objective


def sample_clicks(mask, cfg, prob, rng):
    """Simulated user clicks: per present class, with probability `prob`,
    one uniformly drawn in-mask pixel's grid cell. Returns {class: [cell]}."""
    clicks = {}
    for c in cfg.foreground_classes():
        pixels = np.flatnonzero(mask == c)
        if len(pixels) == 0 or rng.random() >= prob:
            continue
        flat = int(pixels[rng.integers(len(pixels))])
        y, x = divmod(flat, mask.shape[1])
        clicks[c] = [M.cell_of_pixel(x, y, cfg)]
    return clicks


def sample_loss(image, mask, params, cfg, loss_cfg, pos=None, clicks=None):
    """Forward pass and composite loss for one training sample.

    Decodes every foreground class from its generalized points (other
    classes' points act as background tokens), then combines pixel CE (with
    an implicit all-zero background logit row), soft DICE, the point-quality
    heuristic over classes present in the mask, and the presence-classifier
    loss. `clicks` ({class: [grid cell]}) adds one-hot foreground tokens to
    a class's own set, teaching the decoder to honor clicked points.
    Returns (total Tensor, float components dict).
    """
    if pos is None:
        pos = Tensor(M.positional_grid(cfg.grid, cfg.grid, cfg.embed_dim))
    fg = cfg.foreground_classes()
    n, d, s = cfg.points_per_class, cfg.embed_dim, cfg.image_size
    present = sorted(int(c) for c in np.unique(mask) if c != 0)

    feats = M.encode_image(image, params, cfg)
    weights = M.ai_prompter(feats, fg, params, cfg)  # (M, N, I)
    p_g, p_hat = M.generalized_points(weights, pos, feats)
    flat = p_g.reshape((len(fg) * n, d))
    token_sets = []
    for mi, ci in enumerate(fg):
        toks = [(ad.gather(flat, mi * n + k, axis=0), True) for k in range(n)]
        for cell in (clicks or {}).get(ci, ()):
            toks.append((ad.gather(pos, int(cell), axis=0), True))
        for mo in range(len(fg)):
            if mo != mi:
                toks.extend(
                    (ad.gather(flat, mo * n + k, axis=0), False) for k in range(n)
                )
        token_sets.append(toks)
    logits = M.decode_mask(feats, token_sets, params, cfg)  # (M, S, S)

    ce = L.cross_entropy(ad.concat([Tensor(np.zeros((1, s, s))), logits], axis=0), mask)
    targets = np.stack([(mask == c) for c in fg]).astype(np.float64)
    dice = L.dice_loss(ad.sigmoid(logits), targets)

    rows = [i for i, c in enumerate(fg) if c in present]
    if rows:
        w_p = ad.gather(weights, rows, axis=0)
        f_p = ad.gather(p_hat, rows, axis=0)
        indicators = np.stack([class_indicator_grid(mask, fg[i], cfg) for i in rows])
        ph = L.prompt_heuristic(w_p, indicators, f_p, loss_cfg)
    else:
        ph = Tensor(0.0)

    cls_probs = M.classify(feats, params, cfg)
    presence = np.array([1.0 if c in present else 0.0 for c in fg])
    asl = L.asl_loss(cls_probs, presence, loss_cfg)

    total = L.total_loss(ce, dice, ph, asl, loss_cfg)
    components = {
        "total": float(total.data),
        "ce": float(ce.data),
        "dice": float(dice.data),
        "ph": float(ph.data),
        "asl": float(asl.data),
    }
    return total, components


# ---------------------------------------------------------------------------
# training loop


def _mean(values):
    return float(np.mean(values)) if values else 0.0


def train(samples, model_cfg, train_cfg, out_path=None, log_path=None,
          eval_samples=None, eval_every=0, progress=None):
    """Train from scratch; returns (params, per-epoch metric records).

    Writes a checkpoint to out_path and JSONL metrics to log_path when given.
    eval_every > 0 evaluates every that-many epochs (plus the last); 0 means
    last epoch only. A non-finite loss or gradient aborts with a diagnostic
    dump (written next to log_path/out_path when possible).
    """
    samples = list(samples)
    if not samples:
        raise ValueError("no training samples")
    for smp in samples:
        smp.validate(model_cfg.num_classes)

    params = M.init_params(model_cfg, seed=train_cfg.seed)
    opt = AdamW(train_cfg)
    pos = Tensor(M.positional_grid(model_cfg.grid, model_cfg.grid, model_cfg.embed_dim))
    n = len(samples)
    steps_per_epoch = (n + train_cfg.batch_size - 1) // train_cfg.batch_size
    total_steps = steps_per_epoch * train_cfg.total_epochs
    global_step = 0
    metrics = []
    log_file = open(log_path, "w") if log_path else None

    def _abort(message, dump):
        if log_file:
            log_file.close()
        dump_path = None
        if log_path:
            dump_path = str(log_path) + ".dump.json"
        elif out_path:
            dump_path = str(out_path) + ".dump.json"
        if dump_path:
            with open(dump_path, "w") as fh:
                json.dump(dump, fh, indent=2, sort_keys=True)
            message = f"{message} (dump written to {dump_path})"
        raise TrainingDiverged(message, dump)

    # Per-op NaN checks are redundant here (and slow): the loop already
    # verifies the loss and the gradient norm are finite every step.
    finite_prev = ad.set_finite_checks(False)
    try:
        for epoch in range(train_cfg.total_epochs):
            order = np.random.default_rng([train_cfg.seed, epoch]).permutation(n)
            epoch_components = []
            lr = 0.0
            for start in range(0, n, train_cfg.batch_size):
                batch = order[start:start + train_cfg.batch_size]
                for t in params.values():
                    t.grad = None
                for idx in batch:
                    smp = samples[int(idx)]
                    img, msk = smp.image, smp.mask
                    clicks = None
                    if train_cfg.translate_max > 0 or train_cfg.click_prob > 0:
                        rng = np.random.default_rng(
                            [train_cfg.seed, epoch, int(idx)]
                        )
                        if train_cfg.translate_max > 0:
                            dx, dy = rng.integers(
                                -train_cfg.translate_max,
                                train_cfg.translate_max + 1,
                                size=2,
                            )
                            img, msk = translate_sample(img, msk, int(dx), int(dy))
                        if train_cfg.click_prob > 0:
                            clicks = sample_clicks(
                                msk, model_cfg, train_cfg.click_prob, rng
                            )
                    try:
                        total, comps = sample_loss(
                            img, msk, params, model_cfg, train_cfg.loss, pos,
                            clicks=clicks,
                        )
                        if not math.isfinite(comps["total"]):
                            raise ad.NonFiniteError("loss is not finite")
                        ad.backward(total * (1.0 / len(batch)))
                    except (ad.NonFiniteError, TrainingDiverged) as exc:
                        _abort(
                            f"training diverged at epoch {epoch + 1}, "
                            f"step {global_step}, sample {smp.id}: {exc}",
                            {
                                "epoch": epoch + 1,
                                "global_step": global_step,
                                "sample_id": smp.id,
                                "error": str(exc),
                                "last_components": epoch_components[-1]
                                if epoch_components else None,
                            },
                        )
                    epoch_components.append(comps)
                grads = {
                    name: t.grad for name, t in params.items() if t.grad is not None
                }
                try:
                    clip_global_norm(grads, train_cfg.clip_norm)
                except TrainingDiverged as exc:
                    _abort(
                        f"training diverged at epoch {epoch + 1}, "
                        f"step {global_step}: {exc}",
                        {"epoch": epoch + 1, "global_step": global_step,
                         "error": str(exc)},
                    )
                lr = cosine_lr(global_step, total_steps, train_cfg)
                opt.step(params, grads, lr)
                global_step += 1

            record = {
                "epoch": epoch + 1,
                "lr": lr,
                "total": _mean([c["total"] for c in epoch_components]),
                "ce": _mean([c["ce"] for c in epoch_components]),
                "dice": _mean([c["dice"] for c in epoch_components]),
                "ph": _mean([c["ph"] for c in epoch_components]),
                "asl": _mean([c["asl"] for c in epoch_components]),
            }
            last = epoch == train_cfg.total_epochs - 1
            due = eval_every > 0 and (epoch + 1) % eval_every == 0
            if eval_samples is not None and (last or due):
                record["eval_dice"] = evaluate(params, eval_samples, model_cfg)[
                    "mean_dice"
                ]
            metrics.append(record)
            if log_file:
                log_file.write(json.dumps(record, sort_keys=True) + "\n")
                log_file.flush()
            if progress:
                progress(record)
    finally:
        ad.set_finite_checks(finite_prev)
        if log_file:
            log_file.close()

    if out_path:
        save_checkpoint(
            out_path,
            params,
            {
                "model_config": model_cfg.to_dict(),
                "train_config": train_cfg.to_dict(),
                "global_step": global_step,
                "seed": train_cfg.seed,
                "dataset_hash": dataset_hash(samples),
            },
        )
    return params, metrics


# ---------------------------------------------------------------------------
# evaluation


def evaluate(params, samples, cfg, mode="auto", threshold=0.5,
             point_mode="generalized"):
    """Mean DICE over samples (each sample averages its gt-present classes).

    mode: "auto" lets the presence classifier pick classes; "oracle" decodes
    exactly the gt-present ones; "all" decodes every foreground class.
    point_mode "onehot" collapses each point's grid weights to its argmax
    cell before decoding.
    """
    if mode not in ("auto", "oracle", "all"):
        raise ValueError("mode must be 'auto', 'oracle', or 'all'")
    if point_mode not in ("generalized", "onehot"):
        raise ValueError("point_mode must be 'generalized' or 'onehot'")
    fg = cfg.foreground_classes()
    per_sample = []
    class_sums = {c: 0.0 for c in fg}
    class_counts = {c: 0 for c in fg}
    empty = None
    for smp in samples:
        feats = M.encode_image(smp.image, params, cfg)
        probs = M.classify(feats, params, cfg).data
        gt_present = sorted(int(c) for c in smp.present_classes)
        if mode == "auto":
            selected = [c for c in fg if probs[c - 1] >= threshold]
        elif mode == "oracle":
            selected = gt_present
        else:
            selected = list(fg)
        weights = M.ai_prompter(feats, selected, params, cfg).data
        if point_mode == "onehot":
            weights = M.one_hot_rows(weights)
        weights_np = {c: weights[m] for m, c in enumerate(selected)}
        res = M.segment_with_weights(feats, probs, selected, weights_np, {}, params, cfg)
        if not gt_present:
            continue
        if empty is None:
            empty = np.zeros(smp.mask.shape, dtype=bool)
        dices = []
        for c in gt_present:
            score = L.dice_score(res.masks.get(c, empty), smp.mask == c)
            dices.append(score)
            class_sums[c] += score
            class_counts[c] += 1
        per_sample.append({"id": smp.id, "dice": float(np.mean(dices))})
    per_class = {
        c: (class_sums[c] / class_counts[c]) if class_counts[c] else None
        for c in fg
    }
    mean = float(np.mean([p["dice"] for p in per_sample])) if per_sample else 0.0
    return {"mean_dice": mean, "per_class": per_class, "per_sample": per_sample}


# ---------------------------------------------------------------------------
# checkpoint serialization


CHECKPOINT_MAGIC = b"AISAM1"


def dataset_hash(samples):
    """SHA-256 over (id, image, mask) of every sample in sorted-id order."""
    h = hashlib.sha256()
    for smp in sorted(samples, key=lambda s: s.id):
        h.update(smp.id.encode("utf-8"))
        h.update(np.ascontiguousarray(smp.image).tobytes())
        h.update(np.ascontiguousarray(smp.mask).tobytes())
    return h.hexdigest()


def save_checkpoint(path, params, metadata):
    """Write named tensors + JSON metadata in the fixed binary layout.

    Layout: magic, u8 version, u32-LE tensor count; per tensor (sorted by
    name): u16-LE name length, UTF-8 name, u8 dtype (0 = f32-LE), u8 rank,
    rank u32-LE dims, raw f32-LE payload; finally u32-LE metadata length and
    canonical JSON. Training values are narrowed f64 -> f32 on save.
    """
    parts = [CHECKPOINT_MAGIC, struct.pack("<B", 1), struct.pack("<I", len(params))]
    for name in sorted(params):
        t = params[name]
        # np.asarray keeps 0-d shapes (ascontiguousarray would promote to 1-d)
        arr = np.asarray(t.data if isinstance(t, Tensor) else t, dtype="<f4", order="C")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BB", 0, arr.ndim))
        for dim in arr.shape:
            parts.append(struct.pack("<I", dim))
        parts.append(arr.tobytes())
    meta = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts.append(struct.pack("<I", len(meta)))
    parts.append(meta)
    blob = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(blob)
    return blob


def _take(buf, offset, count, what):
    if offset + count > len(buf):
        raise ValueError(f"checkpoint truncated at byte {offset} (reading {what})")
    return buf[offset:offset + count], offset + count


def load_checkpoint(path):
    """Read a checkpoint; returns ({name: Tensor(float64, grad-enabled)}, metadata)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    raw, off = _take(buf, 0, len(CHECKPOINT_MAGIC), "magic")
    if raw != CHECKPOINT_MAGIC:
        raise ValueError(f"not a checkpoint: bad magic {raw!r}")
    raw, off = _take(buf, off, 1, "version")
    version = raw[0]
    if version != 1:
        raise ValueError(f"unsupported checkpoint version {version}")
    raw, off = _take(buf, off, 4, "tensor count")
    (count,) = struct.unpack("<I", raw)
    params = {}
    for _ in range(count):
        raw, off = _take(buf, off, 2, "name length")
        (name_len,) = struct.unpack("<H", raw)
        raw, off = _take(buf, off, name_len, "name")
        name = raw.decode("utf-8")
        raw, off = _take(buf, off, 2, "dtype/rank")
        dtype, rank = raw[0], raw[1]
        if dtype != 0:
            raise ValueError(f"unsupported dtype code {dtype} for tensor {name}")
        dims = []
        for _ in range(rank):
            raw, off = _take(buf, off, 4, f"dims of {name}")
            dims.append(struct.unpack("<I", raw)[0])
        nbytes = int(np.prod(dims, dtype=np.int64)) * 4 if dims else 4
        raw, off = _take(buf, off, nbytes, f"payload of {name}")
        arr = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float64)
        params[name] = Tensor(arr, requires_grad=True)
    raw, off = _take(buf, off, 4, "metadata length")
    (meta_len,) = struct.unpack("<I", raw)
    raw, off = _take(buf, off, meta_len, "metadata")
    metadata = json.loads(raw.decode("utf-8"))
    if off != len(buf):
        raise ValueError(f"trailing bytes after checkpoint at byte {off}")
    return params, metadata
