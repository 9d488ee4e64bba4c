"""Interactive refinement: user edits, box-constrained weights, refinement.

A PromptState accumulates a session's edits (clicked points, per-class boxes,
class toggles). `refine` re-runs the prompter, applies any box constraints to
the generated weights, folds user clicks in as one-hot points, and decodes.
With an empty state it reduces to exactly the automatic path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .prompts import BoxPrompt, GridPoint, box_cell_mask

__all__ = [
    "UserEdit",
    "PromptState",
    "apply_box_constraint",
    "to_one_hot_points",
    "merge_user_points",
    "refine",
]

_KINDS = ("point", "box", "class_toggle")


@dataclass(frozen=True)
class UserEdit:
    """One user action: a clicked point, a drawn box, or a class toggle."""

    kind: str
    class_id: int
    x: int = None
    y: int = None
    positive: bool = True
    x0: int = None
    y0: int = None
    x1: int = None
    y1: int = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown edit kind {self.kind!r}")
        if self.class_id < 1:
            raise ValueError(f"class_id must be a foreground class, got {self.class_id}")
        if self.kind == "point" and (self.x is None or self.y is None):
            raise ValueError("point edit requires x and y")
        if self.kind == "box":
            if None in (self.x0, self.y0, self.x1, self.y1):
                raise ValueError("box edit requires x0, y0, x1, y1")
            if self.x0 > self.x1 or self.y0 > self.y1:
                raise ValueError("box edit has inverted corners")


@dataclass
class PromptState:
    """Per-session prompt memory: explicit classes, user points, boxes.

    classes None means "let the classifier decide"; user points persist until
    cleared; each class holds at most one box (a new one replaces it).
    """

    classes: set = None
    points: dict = field(default_factory=dict)  # class_id -> [UserEdit, ...]
    boxes: dict = field(default_factory=dict)  # class_id -> BoxPrompt

    def apply(self, edit):
        if edit.kind == "point":
            self.points.setdefault(edit.class_id, []).append(edit)
        elif edit.kind == "box":
            self.boxes[edit.class_id] = BoxPrompt(
                x0=edit.x0, y0=edit.y0, x1=edit.x1, y1=edit.y1,
                class_id=edit.class_id,
            )
        else:  # class_toggle
            if self.classes is None:
                raise ValueError(
                    "class_toggle requires an explicit class set; set classes first"
                )
            if edit.class_id in self.classes:
                self.classes = self.classes - {edit.class_id}
            else:
                self.classes = self.classes | {edit.class_id}
        return self

    def clear(self, class_id=None):
        """Drop edits for one class, or everything when class_id is None."""
        if class_id is None:
            self.points.clear()
            self.boxes.clear()
            self.classes = None
        else:
            self.points.pop(class_id, None)
            self.boxes.pop(class_id, None)
        return self

    def is_empty(self):
        return self.classes is None and not self.points and not self.boxes


# ---------------------------------------------------------------------------
# weight-space operations


def apply_box_constraint(weights, box, cfg):
    """Zero weight mass outside the box and renormalize each row to sum 1.

    Rows left with zero in-box mass become uniform over the in-box cells.
    The result has exactly zero mass outside — no epsilon smoothing.
    """
    inside = box_cell_mask(box, cfg)
    if not inside.any():
        raise ValueError("box contains no cell center")
    w = np.asarray(weights, dtype=np.float64) * inside
    sums = w.sum(axis=-1, keepdims=True)
    uniform = inside.astype(np.float64) / inside.sum()
    out = np.where(sums > 0.0, np.divide(w, sums, out=np.zeros_like(w), where=sums > 0.0),
                   uniform)
    return out


def to_one_hot_points(weights, cfg, class_id=0):
    """Each row's argmax cell (ties -> smallest flat index) as its centre pixel."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim == 1:
        w = w[None]
    points = []
    for row in w:
        cell = int(np.argmax(row))
        x, y = M.cell_center(cell, cfg)
        points.append(GridPoint(x=x, y=y, class_id=int(class_id), positive=True))
    return points


def merge_user_points(state, selected, cfg):
    """User clicks as deduplicated (cell, positive) one-hots per class.

    Returns (user_points for the decoder, point metadata for the result).
    Duplicate clicks on the same cell with the same polarity collapse to one
    token; generated weights are never modified here.
    """
    user_points = {}
    meta = []
    for c in selected:
        seen = set()
        entries = []
        for edit in state.points.get(c, ()):
            cell = M.cell_of_pixel(edit.x, edit.y, cfg)
            key = (cell, bool(edit.positive))
            if key in seen:
                continue
            seen.add(key)
            entries.append(key)
            meta.append(
                {
                    "class_id": int(c),
                    "x": int(edit.x),
                    "y": int(edit.y),
                    "positive": bool(edit.positive),
                    "source": "user",
                }
            )
        if entries:
            user_points[c] = entries
    return user_points, meta


# ---------------------------------------------------------------------------
# the refinement round-trip


def refine(image, state, params, cfg, threshold=0.5, features=None):
    """Re-run prompting under the state's constraints and decode.

    image: (H, W, 3) uint8; `features` may carry a cached encoding of the
    same image. With an empty state this is exactly the automatic path.

    Class selection: an explicit class set is authoritative (edits for
    classes outside it are inert); otherwise the classifier's picks are
    joined with every class the user has edited — clicking a point or
    drawing a box for a class declares it present.
    """
    feats = features if features is not None else M.encode_image(image, params, cfg)
    probs = M.classify(feats, params, cfg).data
    if state.classes is None:
        edited = set(state.points) | set(state.boxes)
        M._validate_class_ids(sorted(edited), cfg)
        picks = {c for c in cfg.foreground_classes() if probs[c - 1] >= threshold}
        selected = sorted(picks | edited)
    else:
        M._validate_class_ids(sorted(state.classes), cfg)
        selected = sorted(int(c) for c in state.classes)

    weights = M.ai_prompter(feats, selected, params, cfg).data
    weights_np = {}
    for m, c in enumerate(selected):
        w = weights[m]
        if c in state.boxes:
            w = apply_box_constraint(w, state.boxes[c], cfg)
        weights_np[c] = w

    user_points, meta = merge_user_points(state, selected, cfg)
    return M.segment_with_weights(
        feats, probs, selected, weights_np, user_points, params, cfg,
        user_point_meta=meta,
    )
