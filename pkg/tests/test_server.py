"""HTTP service tests: endpoint conformance, error codes, cache behavior,
schema validity, and concurrent-request determinism (miniature model)."""

import base64
import concurrent.futures
import hashlib
import json
import threading
from dataclasses import asdict
from pathlib import Path

import jsonschema
import numpy as np
import pytest
import requests

from promptseg.imaging import parse_pgm, write_ppm
from promptseg.model import ModelConfig, init_params
from promptseg.server import (
    ModelService,
    SessionCache,
    canonical_json,
    make_server,
)
from promptseg.training import save_checkpoint

CFG = ModelConfig(
    image_size=16,
    patch_size=4,
    embed_dim=16,
    num_heads=2,
    num_classes=3,
    points_per_class=2,
    encoder_blocks=1,
    prompter_blocks=1,
    decoder_blocks=1,
)

SCHEMA = json.loads((Path(__file__).parent.parent / "schema" / "api.json").read_text())


def validate_as(instance, definition):
    jsonschema.validate(
        instance,
        {"$ref": f"#/definitions/{definition}", "definitions": SCHEMA["definitions"]},
    )


def make_image(seed=0, size=16):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(size, size, 3)).astype(np.uint8)


def image_payload(seed=0, size=16):
    raw = write_ppm(make_image(seed=seed, size=size))
    return raw, {"image": base64.b64encode(raw).decode("ascii")}


@pytest.fixture(scope="module")
def ckpt_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("srv") / "model.ckpt"
    params = init_params(CFG, seed=0)
    save_checkpoint(path, params, {"model_config": asdict(CFG)})
    return path


@pytest.fixture(scope="module")
def service(ckpt_path):
    return ModelService.from_checkpoint(ckpt_path)


@pytest.fixture(scope="module")
def base_url(service):
    httpd = make_server(service, port=0)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{httpd.server_address[1]}"
    httpd.shutdown()
    httpd.server_close()
    thread.join(timeout=5)


# ---------------------------------------------------------------------------
# cache unit behaviour


def test_cache_lru_capacity_never_exceeded():
    cache = SessionCache(capacity=2)
    a, b, c = (np.full((2, 2), float(i)) for i in range(3))
    cache.put("a", a)
    cache.put("b", b)
    assert cache.get("a") is not None  # refresh: "a" is now most recent
    cache.put("c", c)
    assert len(cache) == 2
    assert cache.get("b") is None  # evicted as least-recently-used
    assert cache.get("a") is not None
    assert cache.get("c") is not None


def test_cache_hit_is_bit_identical_and_frozen():
    cache = SessionCache(capacity=4)
    original = np.random.default_rng(0).normal(size=(5, 3))
    cache.put("k", original)
    original[0, 0] = 999.0  # the cache must have copied
    hit = cache.get("k")
    assert hit[0, 0] != 999.0
    assert not hit.flags.writeable
    assert hit.dtype == np.float64


def test_cache_capacity_zero_disables():
    cache = SessionCache(capacity=0)
    cache.put("k", np.zeros(3))
    assert cache.get("k") is None
    assert len(cache) == 0


def test_cache_rejects_negative_capacity():
    with pytest.raises(ValueError, match="capacity"):
        SessionCache(capacity=-1)


# ---------------------------------------------------------------------------
# health


def test_health_reports_checkpoint_digest(base_url, ckpt_path):
    r = requests.get(f"{base_url}/health")
    assert r.status_code == 200
    body = r.json()
    validate_as(body, "health_response")
    assert body["model"] == hashlib.sha256(ckpt_path.read_bytes()).hexdigest()


def test_unloaded_server_returns_503():
    httpd = make_server(None, port=0)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    url = f"http://127.0.0.1:{httpd.server_address[1]}"
    try:
        assert requests.get(f"{url}/health").status_code == 503
        _, payload = image_payload()
        assert requests.post(f"{url}/segment", json=payload).status_code == 503
    finally:
        httpd.shutdown()
        httpd.server_close()
        thread.join(timeout=5)


def test_unknown_path_404(base_url):
    assert requests.get(f"{base_url}/nope").status_code == 404
    assert requests.post(f"{base_url}/nope", json={}).status_code == 404


# ---------------------------------------------------------------------------
# /segment


def test_segment_response_shape(base_url):
    raw, payload = image_payload(seed=1)
    r = requests.post(f"{base_url}/segment", json=payload)
    assert r.status_code == 200
    body = r.json()
    validate_as(body, "segmentation_response")
    assert body["image_id"] == hashlib.sha256(raw).hexdigest()
    assert body["width"] == body["height"] == CFG.image_size
    assert set(body["probs"]) == {"1", "2"}
    assert sorted(body["classes"]) == body["classes"]
    labels = parse_pgm(base64.b64decode(body["labels"]))
    assert labels.shape == (CFG.image_size, CFG.image_size)
    assert labels.max() < CFG.num_classes
    for c in body["classes"]:
        mask = parse_pgm(base64.b64decode(body["masks"][str(c)]))
        assert set(np.unique(mask)) <= {0, 255}
    for p in body["points"]:
        assert p["source"] == "auto"
        assert p["class_id"] in body["classes"]


def test_segment_deterministic_and_cache_hits(base_url, service):
    _, payload = image_payload(seed=2)
    before_hits = service.cache.hits
    r1 = requests.post(f"{base_url}/segment", json=payload)
    r2 = requests.post(f"{base_url}/segment", json=payload)
    assert r1.content == r2.content
    assert service.cache.hits > before_hits


def test_segment_explicit_classes(base_url):
    _, payload = image_payload(seed=3)
    payload["classes"] = [1]
    r = requests.post(f"{base_url}/segment", json=payload)
    assert r.status_code == 200
    body = r.json()
    assert body["classes"] == [1]
    assert set(body["masks"]) == {"1"}


def test_cache_transparency(ckpt_path):
    cached = ModelService.from_checkpoint(ckpt_path, cache_size=64)
    uncached = ModelService.from_checkpoint(ckpt_path, cache_size=0)
    _, payload = image_payload(seed=4)
    responses = []
    for service in (cached, cached, uncached):
        _, body = service.handle_segment(dict(payload))
        responses.append(canonical_json(body))
    assert responses[0] == responses[1] == responses[2]
    assert len(uncached.cache) == 0


def test_segment_error_codes(base_url):
    # malformed JSON body
    r = requests.post(
        f"{base_url}/segment",
        data=b"{not json",
        headers={"Content-Type": "application/json"},
    )
    assert r.status_code == 400
    # missing image field
    assert requests.post(f"{base_url}/segment", json={}).status_code == 400
    # image of the wrong JSON type
    assert requests.post(f"{base_url}/segment", json={"image": 5}).status_code == 400
    # invalid base64
    r = requests.post(f"{base_url}/segment", json={"image": "!!!not-base64!!!"})
    assert r.status_code == 400
    # valid base64, invalid PPM
    bad = base64.b64encode(b"P6 garbage").decode("ascii")
    assert requests.post(f"{base_url}/segment", json={"image": bad}).status_code == 400
    # oversized image -> 413
    _, payload = image_payload(seed=0, size=32)
    assert requests.post(f"{base_url}/segment", json=payload).status_code == 413
    # undersized image -> 422
    _, payload = image_payload(seed=0, size=8)
    assert requests.post(f"{base_url}/segment", json=payload).status_code == 422
    # unknown class id -> 422
    _, payload = image_payload(seed=0)
    payload["classes"] = [7]
    assert requests.post(f"{base_url}/segment", json=payload).status_code == 422
    # wrong classes type -> 400
    _, payload = image_payload(seed=0)
    payload["classes"] = "1"
    assert requests.post(f"{base_url}/segment", json=payload).status_code == 400


def test_oversized_body_413(base_url):
    r = requests.post(
        f"{base_url}/segment",
        data=b"x" * (1 << 20 | 1),
        headers={"Content-Type": "application/json"},
    )
    assert r.status_code == 413


def test_error_bodies_match_schema(base_url):
    r = requests.post(f"{base_url}/segment", json={"image": "!!!"})
    validate_as(r.json(), "error_response")


# ---------------------------------------------------------------------------
# /refine


def test_refine_empty_edits_equals_segment(base_url):
    _, payload = image_payload(seed=5)
    seg = requests.post(f"{base_url}/segment", json=payload)
    ref = requests.post(f"{base_url}/refine", json={**payload, "edits": []})
    assert seg.content == ref.content


def test_refine_by_image_id_uses_cache(base_url):
    raw, payload = image_payload(seed=6)
    seg = requests.post(f"{base_url}/segment", json=payload)
    image_id = seg.json()["image_id"]
    ref = requests.post(f"{base_url}/refine", json={"image_id": image_id, "edits": []})
    assert ref.status_code == 200
    assert ref.content == seg.content


def test_refine_unknown_image_id_404(base_url):
    r = requests.post(f"{base_url}/refine", json={"image_id": "0" * 64, "edits": []})
    assert r.status_code == 404
    r = requests.post(f"{base_url}/refine", json={"edits": []})
    assert r.status_code == 400  # neither image nor image_id


def test_refine_image_id_mismatch_422(base_url):
    _, payload = image_payload(seed=7)
    payload["image_id"] = "f" * 64
    assert requests.post(f"{base_url}/refine", json=payload).status_code == 422


def test_refine_point_edit_touches_only_its_class(base_url):
    _, payload = image_payload(seed=8)
    payload["classes"] = [1, 2]
    seg = requests.post(f"{base_url}/segment", json=payload).json()
    edit = {"kind": "point", "class_id": 1, "x": 5, "y": 5, "positive": True}
    ref = requests.post(
        f"{base_url}/refine", json={**payload, "edits": [edit]}
    ).json()
    validate_as(ref, "segmentation_response")
    assert ref["image_id"] == seg["image_id"]
    assert ref["classes"] == seg["classes"]
    assert ref["probs"] == seg["probs"]
    assert ref["masks"]["2"] == seg["masks"]["2"]  # untouched class identical
    user_points = [p for p in ref["points"] if p["source"] == "user"]
    assert user_points == [
        {"class_id": 1, "x": 5, "y": 5, "positive": True, "source": "user"}
    ]
    auto_points = [p for p in ref["points"] if p["source"] == "auto"]
    assert auto_points == [p for p in seg["points"] if p["source"] == "auto"]


def test_refine_box_edit_constrains_points(base_url):
    _, payload = image_payload(seed=9)
    payload["classes"] = [1]
    edit = {"kind": "box", "class_id": 1, "x0": 0, "y0": 0, "x1": 7, "y1": 7}
    r = requests.post(f"{base_url}/refine", json={**payload, "edits": [edit]})
    assert r.status_code == 200
    for p in r.json()["points"]:
        if p["source"] == "auto" and p["class_id"] == 1:
            assert 0 <= p["x"] <= 7 and 0 <= p["y"] <= 7


def test_refine_degenerate_box_is_422_not_500(base_url):
    # cell centers sit at 2, 6, 10, 14 on the 16x16 grid; a box squeezed
    # between them cannot constrain any cell and is a semantic error
    _, payload = image_payload(seed=12)
    payload["classes"] = [1]
    edit = {"kind": "box", "class_id": 1, "x0": 3, "y0": 3, "x1": 4, "y1": 4}
    r = requests.post(f"{base_url}/refine", json={**payload, "edits": [edit]})
    assert r.status_code == 422
    assert "error" in r.json()


def test_refine_class_toggle(base_url):
    _, payload = image_payload(seed=10)
    payload["classes"] = [1, 2]
    edit = {"kind": "class_toggle", "class_id": 2}
    r = requests.post(f"{base_url}/refine", json={**payload, "edits": [edit]})
    assert r.status_code == 200
    assert r.json()["classes"] == [1]
    # toggling without an explicit class list is a semantic error
    del payload["classes"]
    r = requests.post(f"{base_url}/refine", json={**payload, "edits": [edit]})
    assert r.status_code == 422


def test_refine_invalid_edits_422(base_url):
    _, payload = image_payload(seed=11)
    cases = [
        {"kind": "zap", "class_id": 1},
        {"kind": "point", "class_id": 0, "x": 1, "y": 1},
        {"kind": "point", "class_id": 1, "x": 99, "y": 1},
        {"kind": "point", "class_id": 1, "x": 1},
        {"kind": "point", "class_id": 1, "x": 1, "y": 1, "positive": "yes"},
        {"kind": "box", "class_id": 1, "x0": 9, "y0": 0, "x1": 3, "y1": 7},
        {"kind": "box", "class_id": 1, "x0": 0, "y0": 0, "x1": 99, "y1": 7},
        {"kind": "box", "class_id": 1, "x0": 0, "y0": 0, "x1": 7},
        {"kind": "point", "class_id": 1, "x": 1, "y": 1, "x0": 0},
    ]
    for edit in cases:
        r = requests.post(f"{base_url}/refine", json={**payload, "edits": [edit]})
        assert r.status_code == 422, f"edit {edit} -> {r.status_code}"
    r = requests.post(f"{base_url}/refine", json={**payload, "edits": {"kind": "point"}})
    assert r.status_code == 400


# ---------------------------------------------------------------------------
# concurrency


def test_100_concurrent_identical_requests(base_url):
    _, payload = image_payload(seed=12)
    blob = canonical_json(payload)
    headers = {"Content-Type": "application/json"}

    session_local = threading.local()

    def post(_):
        if not hasattr(session_local, "s"):
            session_local.s = requests.Session()
        r = session_local.s.post(f"{base_url}/segment", data=blob, headers=headers)
        return r.status_code, r.content

    with concurrent.futures.ThreadPoolExecutor(max_workers=32) as pool:
        results = list(pool.map(post, range(100)))
    codes = {code for code, _ in results}
    bodies = {body for _, body in results}
    assert codes == {200}
    assert len(bodies) == 1


# ---------------------------------------------------------------------------
# schema fixture sanity


def test_schema_is_valid_draft7():
    jsonschema.Draft7Validator.check_schema(SCHEMA)


def test_schema_rejects_malformed_response():
    with pytest.raises(jsonschema.ValidationError):
        validate_as({"status": "ok"}, "health_response")
    with pytest.raises(jsonschema.ValidationError):
        validate_as(
            {"kind": "point", "class_id": 1, "x": 1}, "edit"
        )  # missing y
