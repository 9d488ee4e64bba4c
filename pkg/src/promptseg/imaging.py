"""Binary PPM/PGM codecs, synthetic shape scenes, and dataset indexing.

Images travel as binary netpbm (P6 for RGB, P5 for masks) because both are
bit-exactly reproducible from any language and cheap to base64 over HTTP.
A dataset on disk is `<root>/index.jsonl` plus `images/<id>.ppm` and
`masks/<id>.pgm`; mask pixel values are class ids (0 = background).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "SegSample",
    "DatasetIndex",
    "write_ppm",
    "parse_ppm",
    "write_pgm",
    "parse_pgm",
    "generate_dataset",
    "load_index",
    "load_sample",
    "load_all_samples",
    "CLASS_COLORS",
]

_WHITESPACE = b" \t\n\r\x0b\x0c"

# visually separated base colors for class ids 1..7 (index 0 unused)
CLASS_COLORS = [
    (0, 0, 0),
    (220, 60, 60),
    (60, 200, 80),
    (70, 90, 230),
    (230, 200, 50),
    (200, 60, 220),
    (50, 210, 210),
    (240, 140, 40),
]


@dataclass
class SegSample:
    """One annotated image: RGB pixels plus a class-id mask."""

    id: str
    image: np.ndarray  # (H, W, 3) uint8
    mask: np.ndarray  # (H, W) uint8, values are class ids
    present_classes: set

    def validate(self, num_classes=None):
        if self.image.shape[:2] != self.mask.shape:
            raise ValueError(
                f"sample {self.id}: image {self.image.shape[:2]} and mask "
                f"{self.mask.shape} sizes differ"
            )
        present = set(int(v) for v in np.unique(self.mask) if v != 0)
        if present != set(self.present_classes):
            raise ValueError(
                f"sample {self.id}: declared classes {sorted(self.present_classes)} "
                f"!= mask classes {sorted(present)}"
            )
        if num_classes is not None and self.mask.max(initial=0) >= num_classes:
            raise ValueError(
                f"sample {self.id}: mask value {int(self.mask.max())} "
                f">= num_classes {num_classes}"
            )
        return self


@dataclass
class DatasetIndex:
    """Parsed index.jsonl: (id, image path, mask path, classes) per entry."""

    root: Path
    entries: list  # of dicts with keys id/image/mask/classes

    def ids(self):
        return [e["id"] for e in self.entries]


# ---------------------------------------------------------------------------
# netpbm codecs


def _read_header_fields(data, magic):
    """Parse 'magic w h maxval' tolerating comments/whitespace; return fields + payload offset."""
    if data[:2] != magic:
        raise ValueError(f"bad magic: expected {magic!r}, got {bytes(data[:2])!r}")
    pos = 2
    fields = []
    n = len(data)
    while len(fields) < 3:
        while pos < n and data[pos : pos + 1] in (b"#",) + tuple(
            bytes([c]) for c in _WHITESPACE
        ):
            if data[pos : pos + 1] == b"#":
                while pos < n and data[pos] not in b"\n":
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and data[pos] not in _WHITESPACE:
            pos += 1
        tok = data[start:pos]
        if not tok.isdigit():
            raise ValueError(f"malformed header token {bytes(tok)!r}")
        fields.append(int(tok))
    if pos >= n:
        raise ValueError("truncated header")
    pos += 1  # exactly one whitespace byte separates header from payload
    return fields, pos


def write_ppm(image):
    """Serialize an (H, W, 3) uint8 array as binary P6 with a canonical header."""
    arr = np.ascontiguousarray(image, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {arr.shape}")
    h, w = arr.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + arr.tobytes()


def parse_ppm(data):
    """Parse binary P6 bytes into an (H, W, 3) uint8 array."""
    (w, h, maxval), pos = _read_header_fields(data, b"P6")
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval} (only 255)")
    if w < 1 or h < 1:
        raise ValueError(f"bad dimensions {w}x{h}")
    payload = data[pos:]
    if len(payload) != w * h * 3:
        raise ValueError(f"payload size {len(payload)} != expected {w * h * 3}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).copy()


def write_pgm(mask):
    """Serialize an (H, W) uint8 array as binary P5 with a canonical header."""
    arr = np.ascontiguousarray(mask, dtype=np.uint8)
    if arr.ndim != 2:
        raise ValueError(f"expected (H, W) mask, got shape {arr.shape}")
    h, w = arr.shape
    return b"P5\n%d %d\n255\n" % (w, h) + arr.tobytes()


def parse_pgm(data):
    """Parse binary P5 bytes into an (H, W) uint8 array."""
    (w, h, maxval), pos = _read_header_fields(data, b"P5")
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval} (only 255)")
    if w < 1 or h < 1:
        raise ValueError(f"bad dimensions {w}x{h}")
    payload = data[pos:]
    if len(payload) != w * h:
        raise ValueError(f"payload size {len(payload)} != expected {w * h}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()


# ---------------------------------------------------------------------------
# synthetic scenes


def _draw_disk(rng, size):
    r = int(rng.integers(size // 8, size // 4 + 1))
    cy = int(rng.integers(r, size - r))
    cx = int(rng.integers(r, size - r))
    yy, xx = np.mgrid[0:size, 0:size]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def _draw_rect(rng, size):
    w = int(rng.integers(size // 6, size // 3 + 1))
    h = int(rng.integers(size // 6, size // 3 + 1))
    y0 = int(rng.integers(0, size - h))
    x0 = int(rng.integers(0, size - w))
    out = np.zeros((size, size), dtype=bool)
    out[y0 : y0 + h, x0 : x0 + w] = True
    return out


def _draw_triangle(rng, size):
    # resampled until solid: a minimum bounding box in both axes, a minimum
    # area, and a minimum bbox fill ratio (rejects near-degenerate slivers
    # whose mask is essentially a line)
    yy, xx = np.mgrid[0:size, 0:size]

    def half_plane(p, q):
        return (q[0] - p[0]) * (xx - p[1]) - (q[1] - p[1]) * (yy - p[0])

    mask = None
    for _ in range(50):
        pts = rng.integers(0, size, size=(3, 2)).astype(np.float64)
        if np.ptp(pts[:, 0]) < size // 4 or np.ptp(pts[:, 1]) < size // 4:
            continue
        d0 = half_plane(pts[0], pts[1])
        d1 = half_plane(pts[1], pts[2])
        d2 = half_plane(pts[2], pts[0])
        neg = (d0 < 0) | (d1 < 0) | (d2 < 0)
        pos = (d0 > 0) | (d1 > 0) | (d2 > 0)
        mask = ~(neg & pos)
        area = int(mask.sum())
        bbox = (np.ptp(pts[:, 0]) + 1) * (np.ptp(pts[:, 1]) + 1)
        if area >= (size * size) // 32 and area / bbox >= 0.2:
            return mask
    if mask is None:  # unreachable in practice: the spread test rarely fails
        pts = np.array([[0, 0], [size - 1, 0], [0, size - 1]], dtype=np.float64)
        d0 = half_plane(pts[0], pts[1])
        d1 = half_plane(pts[1], pts[2])
        d2 = half_plane(pts[2], pts[0])
        mask = ~(((d0 < 0) | (d1 < 0) | (d2 < 0)) & ((d0 > 0) | (d1 > 0) | (d2 > 0)))
    return mask


_SHAPE_FNS = [_draw_disk, _draw_rect, _draw_triangle]


def _render_background(rng, size):
    c0 = rng.integers(20, 110, size=3).astype(np.float64)
    c1 = rng.integers(20, 110, size=3).astype(np.float64)
    axis = int(rng.integers(0, 2))
    t = np.linspace(0.0, 1.0, size)
    ramp = t[:, None] if axis == 0 else t[None, :]
    ramp = np.broadcast_to(ramp, (size, size))[..., None]
    return c0[None, None, :] * (1.0 - ramp) + c1[None, None, :] * ramp


def _generate_one(rng, size, num_classes, min_pixels=16, max_attempts=100):
    """One labelled scene; retries until every drawn class keeps >= min_pixels visible."""
    max_shapes = min(3, num_classes - 1)
    for _ in range(max_attempts):
        k = int(rng.integers(1, max_shapes + 1))
        class_ids = rng.choice(np.arange(1, num_classes), size=k, replace=False)
        label = np.zeros((size, size), dtype=np.uint8)
        for cid in class_ids:
            shape = _SHAPE_FNS[(int(cid) - 1) % 3](rng, size)
            label[shape] = cid  # later shapes occlude earlier ones
        counts = np.bincount(label.ravel(), minlength=num_classes)
        if all(counts[int(c)] >= min_pixels for c in class_ids):
            img = _render_background(rng, size)
            for cid in sorted(set(int(c) for c in class_ids)):
                img[label == cid] = np.asarray(CLASS_COLORS[cid], dtype=np.float64)
            noise = rng.normal(0.0, 12.0, size=(size, size))
            img = np.clip(img + noise[..., None], 0.0, 255.0)
            return np.round(img).astype(np.uint8), label
    raise RuntimeError("could not place shapes satisfying the minimum-area rule")


def generate_dataset(out_dir, count, size=64, num_classes=4, seed=0):
    """Write `count` synthetic samples under out_dir and return the index.

    Fully deterministic in (count, size, num_classes, seed): sample i draws
    from np.random.default_rng([seed, i]) so samples are order-independent.
    """
    if size < 32:
        raise ValueError("size must be >= 32")
    if not 2 <= num_classes <= 8:
        raise ValueError("num_classes must be in 2..8")
    root = Path(out_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    lines = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        image, mask = _generate_one(rng, size, num_classes)
        sid = f"{i + 1:04d}"
        img_rel = f"images/{sid}.ppm"
        mask_rel = f"masks/{sid}.pgm"
        (root / img_rel).write_bytes(write_ppm(image))
        (root / mask_rel).write_bytes(write_pgm(mask))
        classes = sorted(int(v) for v in np.unique(mask) if v != 0)
        entry = {"id": sid, "image": img_rel, "mask": mask_rel, "classes": classes}
        entries.append(entry)
        lines.append(json.dumps(entry, separators=(",", ":")))
    (root / "index.jsonl").write_text("\n".join(lines) + "\n")
    return DatasetIndex(root=root, entries=entries)


# ---------------------------------------------------------------------------
# loading


def load_index(root):
    """Parse <root>/index.jsonl into a DatasetIndex."""
    root = Path(root)
    path = root / "index.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"no index.jsonl under {root}")
    entries = []
    seen = set()
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        entry = json.loads(line)
        if entry["id"] in seen:
            raise ValueError(f"duplicate sample id {entry['id']!r}")
        seen.add(entry["id"])
        entries.append(entry)
    return DatasetIndex(root=root, entries=entries)


def load_sample(index, sample_id, num_classes=None):
    """Load and validate one sample by id; unknown ids raise KeyError."""
    for entry in index.entries:
        if entry["id"] == sample_id:
            break
    else:
        raise KeyError(f"unknown sample id {sample_id!r}")
    image = parse_ppm((index.root / entry["image"]).read_bytes())
    mask = parse_pgm((index.root / entry["mask"]).read_bytes())
    sample = SegSample(
        id=sample_id,
        image=image,
        mask=mask,
        present_classes=set(int(c) for c in entry["classes"]),
    )
    return sample.validate(num_classes=num_classes)


def load_all_samples(root, num_classes=None):
    """Load every sample listed in <root>/index.jsonl, in index order."""
    index = load_index(root)
    return [load_sample(index, sid, num_classes=num_classes) for sid in index.ids()]
