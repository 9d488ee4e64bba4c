"""HTTP service: automatic segmentation and interactive refinement.

The server holds an immutable model snapshot (parameters, config, checkpoint
digest) plus one mutable structure: a thread-safe LRU cache from image content
hash to the encoded feature grid. Requests are handled concurrently by a
threading HTTP server; handlers are pure functions of the request payload and
the snapshot, so identical requests always produce identical response bytes.

Endpoints:
    GET  /health   -> {"status": "ok", "model": <checkpoint sha256>}
    POST /segment  -> segment an inline base64 PPM image
    POST /refine   -> re-segment under a user edit list (stateless: the client
                      resends all edits; image_id may replace the inline image
                      when the features are still cached)

Error statuses: 400 malformed JSON/base64/PPM, 404 unknown path or image_id,
413 request or image over the size policy, 422 semantically invalid input
(wrong image size, unknown class id, invalid edit), 503 model not loaded.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import threading
from collections import OrderedDict
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from . import model as M
from .autodiff import Tensor
from .imaging import parse_ppm, write_pgm, write_ppm
from .interactive import PromptState, UserEdit, refine
from .training import load_checkpoint

__all__ = [
    "ApiError",
    "SessionCache",
    "ModelService",
    "build_response",
    "canonical_json",
    "make_server",
    "run",
]

MAX_BODY_BYTES = 1 << 20  # request bodies beyond this are rejected outright


def canonical_json(obj):
    """Serialize to the canonical byte form shared by the server and the CLI."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


class ApiError(Exception):
    """A request failure with an HTTP status code."""

    def __init__(self, status, message):
        super().__init__(message)
        self.status = int(status)
        self.message = str(message)


class SessionCache:
    """Thread-safe LRU map from image content hash to encoded feature grid.

    Capacity is never exceeded; a capacity of 0 disables caching entirely.
    Stored arrays are read-only copies, so a hit hands back features
    bit-identical to a fresh encode without sharing mutable state.
    """

    def __init__(self, capacity=64):
        if capacity < 0:
            raise ValueError(f"cache capacity must be >= 0, got {capacity}")
        self.capacity = int(capacity)
        self._entries = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self):
        with self._lock:
            return len(self._entries)

    def get(self, key):
        with self._lock:
            if key in self._entries:
                self._entries.move_to_end(key)
                self.hits += 1
                return self._entries[key]
            self.misses += 1
            return None

    def put(self, key, value):
        if self.capacity == 0:
            return
        frozen = np.array(value, dtype=np.float64, copy=True)
        frozen.setflags(write=False)
        with self._lock:
            self._entries[key] = frozen
            self._entries.move_to_end(key)
            while len(self._entries) > self.capacity:
                self._entries.popitem(last=False)


def _encode_pgm_b64(arr):
    return base64.b64encode(write_pgm(arr)).decode("ascii")


def build_response(result, image_id, cfg):
    """The shared response dict for /segment, /refine, and CLI inference.

    Masks are binary PGM (0/255) and the combined label map is a PGM whose
    pixel values are class ids; both are base64 so the body stays valid JSON.
    """
    masks = {
        str(c): _encode_pgm_b64(result.masks[c].astype(np.uint8) * 255)
        for c in result.classes
    }
    return {
        "image_id": image_id,
        "width": int(cfg.image_size),
        "height": int(cfg.image_size),
        "classes": [int(c) for c in result.classes],
        "probs": {str(c): float(p) for c, p in sorted(result.probs.items())},
        "masks": masks,
        "labels": _encode_pgm_b64(result.labels),
        "points": [
            {
                "class_id": int(p["class_id"]),
                "x": int(p["x"]),
                "y": int(p["y"]),
                "positive": bool(p["positive"]),
                "source": str(p["source"]),
            }
            for p in result.points
        ],
    }


def _decode_image_field(payload, cfg):
    """Base64 field -> ((H, W, 3) array, content hash). Raises ApiError."""
    b64 = payload.get("image")
    if not isinstance(b64, str):
        raise ApiError(400, "field 'image' must be a base64 string")
    try:
        raw = base64.b64decode(b64, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ApiError(400, f"invalid base64 image: {exc}") from exc
    try:
        image = parse_ppm(raw)
    except ValueError as exc:
        raise ApiError(400, f"invalid PPM image: {exc}") from exc
    h, w = image.shape[:2]
    s = cfg.image_size
    if h > s or w > s:
        raise ApiError(413, f"image {w}x{h} exceeds the {s}x{s} size policy")
    if (h, w) != (s, s):
        raise ApiError(422, f"image must be exactly {s}x{s}, got {w}x{h}")
    return image, hashlib.sha256(raw).hexdigest()


def _parse_classes_field(payload, cfg):
    classes = payload.get("classes")
    if classes is None:
        return None
    if not isinstance(classes, list) or not all(
        isinstance(c, int) and not isinstance(c, bool) for c in classes
    ):
        raise ApiError(400, "field 'classes' must be a list of integers")
    for c in classes:
        if not 1 <= c < cfg.num_classes:
            raise ApiError(
                422, f"unknown class id {c} (valid: 1..{cfg.num_classes - 1})"
            )
    return classes


def _parse_edits_field(payload, cfg):
    """Edit dicts -> PromptState-ready UserEdit list. Raises ApiError(422)."""
    edits = payload.get("edits", [])
    if not isinstance(edits, list):
        raise ApiError(400, "field 'edits' must be a list")
    s = cfg.image_size
    parsed = []
    for i, entry in enumerate(edits):
        if not isinstance(entry, dict):
            raise ApiError(400, f"edit {i} must be an object")
        kind = entry.get("kind")
        allowed = {
            "point": {"kind", "class_id", "x", "y", "positive"},
            "box": {"kind", "class_id", "x0", "y0", "x1", "y1"},
            "class_toggle": {"kind", "class_id"},
        }.get(kind)
        if allowed is None:
            raise ApiError(422, f"edit {i}: unknown kind {kind!r}")
        extra = set(entry) - allowed
        if extra:
            raise ApiError(422, f"edit {i}: unexpected fields {sorted(extra)}")
        fields = {k: entry.get(k) for k in allowed - {"kind", "positive"}}
        for name, value in fields.items():
            if not isinstance(value, int) or isinstance(value, bool):
                raise ApiError(422, f"edit {i}: field '{name}' must be an integer")
        if not 1 <= fields["class_id"] < cfg.num_classes:
            raise ApiError(422, f"edit {i}: unknown class id {fields['class_id']}")
        if kind == "point":
            if not (0 <= fields["x"] < s and 0 <= fields["y"] < s):
                raise ApiError(
                    422, f"edit {i}: point ({fields['x']},{fields['y']}) out of bounds"
                )
            positive = entry.get("positive", True)
            if not isinstance(positive, bool):
                raise ApiError(422, f"edit {i}: field 'positive' must be a boolean")
            fields["positive"] = positive
        elif kind == "box":
            for name in ("x0", "y0", "x1", "y1"):
                if not 0 <= fields[name] < s:
                    raise ApiError(422, f"edit {i}: corner '{name}' out of bounds")
        try:
            parsed.append(UserEdit(kind=kind, **fields))
        except ValueError as exc:
            raise ApiError(422, f"edit {i}: {exc}") from exc
    return parsed


class ModelService:
    """Immutable model snapshot plus the feature cache and request handlers."""

    def __init__(self, params, cfg, checkpoint_digest, cache_size=64, threshold=0.5):
        self.params = params
        self.cfg = cfg
        self.checkpoint_digest = checkpoint_digest
        self.cache = SessionCache(cache_size)
        self.threshold = float(threshold)

    @classmethod
    def from_checkpoint(cls, path, cache_size=64, threshold=0.5):
        with open(path, "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        params, meta = load_checkpoint(path)
        cfg = M.ModelConfig(**meta["model_config"])
        return cls(params, cfg, digest, cache_size=cache_size, threshold=threshold)

    # -- feature plumbing ---------------------------------------------------

    def _features_for(self, image, image_id):
        cached = self.cache.get(image_id)
        if cached is not None:
            return Tensor(cached)
        feats = M.encode_image(image, self.params, self.cfg)
        self.cache.put(image_id, feats.data)
        return feats

    # -- handlers: (payload dict) -> (status, response dict) ----------------

    def handle_health(self):
        return 200, {"status": "ok", "model": self.checkpoint_digest}

    def handle_segment(self, payload):
        if not isinstance(payload, dict):
            raise ApiError(400, "request body must be a JSON object")
        image, image_id = _decode_image_field(payload, self.cfg)
        classes = _parse_classes_field(payload, self.cfg)
        feats = self._features_for(image, image_id)
        result = M.segment_auto(
            image,
            self.params,
            self.cfg,
            classes=classes,
            threshold=self.threshold,
            features=feats,
        )
        return 200, build_response(result, image_id, self.cfg)

    def handle_refine(self, payload):
        if not isinstance(payload, dict):
            raise ApiError(400, "request body must be a JSON object")
        image, image_id, feats = self._resolve_refine_image(payload)
        classes = _parse_classes_field(payload, self.cfg)
        edits = _parse_edits_field(payload, self.cfg)
        state = PromptState(classes=set(classes) if classes is not None else None)
        for edit in edits:
            try:
                state.apply(edit)
            except ValueError as exc:
                raise ApiError(422, str(exc)) from exc
        try:
            result = refine(
                image,
                state,
                self.params,
                self.cfg,
                threshold=self.threshold,
                features=feats,
            )
        except ValueError as exc:
            raise ApiError(422, str(exc)) from exc
        return 200, build_response(result, image_id, self.cfg)

    def _resolve_refine_image(self, payload):
        """image / image_id fallback logic -> (image or None, id, features)."""
        claimed = payload.get("image_id")
        if claimed is not None and not isinstance(claimed, str):
            raise ApiError(400, "field 'image_id' must be a string")
        if payload.get("image") is not None:
            image, image_id = _decode_image_field(payload, self.cfg)
            if claimed is not None and claimed != image_id:
                raise ApiError(422, "image_id does not match the inline image bytes")
            return image, image_id, self._features_for(image, image_id)
        if claimed is None:
            raise ApiError(400, "request needs 'image_id' or an inline 'image'")
        cached = self.cache.get(claimed)
        if cached is None:
            raise ApiError(
                404, f"unknown image_id {claimed!r} and no inline image provided"
            )
        return None, claimed, Tensor(cached)


def segment_image_bytes(ppm_bytes, service, classes=None, edits=()):
    """One-shot segmentation of raw PPM bytes through the service handlers.

    This is the CLI's path: it builds the same payload the HTTP endpoints
    accept, so file output and server responses agree byte-for-byte.
    """
    payload = {"image": base64.b64encode(ppm_bytes).decode("ascii")}
    if classes is not None:
        payload["classes"] = list(classes)
    if edits:
        payload["edits"] = list(edits)
        _, response = service.handle_refine(payload)
    else:
        _, response = service.handle_segment(payload)
    return response


# ---------------------------------------------------------------------------
# HTTP layer


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "promptseg"

    # silence per-request stderr logging; the service is exercised in tests
    def log_message(self, fmt, *args):
        pass

    def _send(self, status, obj):
        body = canonical_json(obj)
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _service(self):
        return self.server.service

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_GET(self):
        if self.path != "/health":
            self._send(404, {"error": f"unknown path {self.path}"})
            return
        service = self._service()
        if service is None:
            self._send(503, {"error": "model not loaded"})
            return
        status, obj = service.handle_health()
        self._send(status, obj)

    def do_POST(self):
        if self.path not in ("/segment", "/refine"):
            self._send(404, {"error": f"unknown path {self.path}"})
            return
        service = self._service()
        if service is None:
            self._send(503, {"error": "model not loaded"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
        except ValueError:
            self._send(400, {"error": "invalid Content-Length"})
            return
        if length > MAX_BODY_BYTES:
            self._send(413, {"error": f"request body exceeds {MAX_BODY_BYTES} bytes"})
            return
        try:
            payload = json.loads(self.rfile.read(length).decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as exc:
            self._send(400, {"error": f"malformed JSON body: {exc}"})
            return
        handler = (
            service.handle_segment if self.path == "/segment" else service.handle_refine
        )
        try:
            status, obj = handler(payload)
        except ApiError as exc:
            self._send(exc.status, {"error": exc.message})
            return
        self._send(status, obj)


def make_server(service, host="127.0.0.1", port=0):
    """A ThreadingHTTPServer bound to (host, port); port 0 picks a free one."""
    httpd = ThreadingHTTPServer((host, port), _Handler)
    httpd.service = service
    return httpd


def run(checkpoint_path, host="127.0.0.1", port=8712, cache_size=64):
    """Load a checkpoint and serve until interrupted (the CLI `serve` path)."""
    service = ModelService.from_checkpoint(checkpoint_path, cache_size=cache_size)
    httpd = make_server(service, host, port)
    print(
        f"serving model {service.checkpoint_digest[:12]} "
        f"on http://{host}:{httpd.server_address[1]}"
    )
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
    return 0
