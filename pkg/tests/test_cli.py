"""CLI tests: subcommand wiring, exit codes, file outputs, and byte parity
between `infer` artifacts and the HTTP service."""

import base64
import csv
import json
import threading
from pathlib import Path

import numpy as np
import pytest
import requests

from promptseg import cli
from promptseg.imaging import load_all_samples, parse_pgm, write_ppm
from promptseg.server import ModelService, canonical_json, make_server

MINI_MODEL = {
    "image_size": 32,
    "patch_size": 8,
    "embed_dim": 16,
    "num_heads": 2,
    "num_classes": 3,
    "points_per_class": 2,
    "encoder_blocks": 1,
    "prompter_blocks": 1,
    "decoder_blocks": 1,
}
MINI_TRAIN = {
    "total_epochs": 2,
    "warmup_epochs": 1,
    "batch_size": 2,
    "base_lr": 1e-4,
    "seed": 0,
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert cli.main(["gen-data", "--out", str(data), "--count", "6", "--size", "32",
                     "--classes", "3", "--seed", "0"]) == 0
    config = root / "config.json"
    config.write_text(json.dumps({"model": MINI_MODEL, "train": MINI_TRAIN}))
    ckpt = root / "model.ckpt"
    assert cli.main(["train", "--data", str(data), "--out", str(ckpt),
                     "--config", str(config)]) == 0
    return {"root": root, "data": data, "ckpt": ckpt, "config": config}


# ---------------------------------------------------------------------------
# usage errors -> exit 2


def test_no_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as ei:
        cli.main([])
    assert ei.value.code == 2


def test_unknown_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as ei:
        cli.main(["frobnicate"])
    assert ei.value.code == 2


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as ei:
        cli.main(["gen-data", "--out", "x", "--count", "1", "--frob"])
    assert ei.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_missing_required_flag_is_usage_error():
    with pytest.raises(SystemExit) as ei:
        cli.main(["gen-data", "--out", "x"])
    assert ei.value.code == 2


def test_malformed_point_flag_is_usage_error(workdir):
    with pytest.raises(SystemExit) as ei:
        cli.main(["infer", "--ckpt", str(workdir["ckpt"]), "--image", "x.ppm",
                  "--out-prefix", "y", "--point", "1:2,3,q"])
    assert ei.value.code == 2


def test_malformed_box_flag_is_usage_error(workdir):
    with pytest.raises(SystemExit) as ei:
        cli.main(["infer", "--ckpt", str(workdir["ckpt"]), "--image", "x.ppm",
                  "--out-prefix", "y", "--box", "1:2,3"])
    assert ei.value.code == 2


def test_malformed_addr_is_usage_error(workdir):
    with pytest.raises(SystemExit) as ei:
        cli.main(["serve", "--ckpt", str(workdir["ckpt"]), "--addr", "noport"])
    assert ei.value.code == 2


# ---------------------------------------------------------------------------
# runtime errors -> exit 1


def test_eval_missing_checkpoint_is_runtime_error(workdir, capsys):
    code = cli.main(["eval", "--data", str(workdir["data"]), "--ckpt", "/nope.ckpt"])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_train_bad_config_key_is_runtime_error(workdir, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"optimizer": {}}))
    code = cli.main(["train", "--data", str(workdir["data"]),
                     "--out", str(tmp_path / "m.ckpt"), "--config", str(bad)])
    assert code == 1
    assert "unknown top-level keys" in capsys.readouterr().err


def test_train_config_accepts_inline_json(workdir, tmp_path):
    inline = json.dumps({"model": MINI_MODEL, "train": MINI_TRAIN})
    out = tmp_path / "inline.ckpt"
    assert cli.main(["train", "--data", str(workdir["data"]),
                     "--out", str(out), "--config", inline]) == 0
    assert out.read_bytes() == workdir["ckpt"].read_bytes()


# ---------------------------------------------------------------------------
# gen-data / train


def test_gen_data_writes_index(workdir):
    lines = (workdir["data"] / "index.jsonl").read_text().splitlines()
    assert len(lines) == 6


def test_train_wrote_checkpoint_and_log(workdir):
    assert workdir["ckpt"].exists()
    log = Path(str(workdir["ckpt"]) + ".log.jsonl")
    entries = [json.loads(line) for line in log.read_text().splitlines()]
    assert [e["epoch"] for e in entries] == [1, 2]


def test_train_epoch_override_clamps_warmup(workdir, tmp_path, capsys):
    out = tmp_path / "one.ckpt"
    code = cli.main(["train", "--data", str(workdir["data"]), "--out", str(out),
                     "--config", str(workdir["config"]), "--epochs", "1"])
    assert code == 0
    assert "trained 1 epochs" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# eval / pcm


def test_eval_json_is_canonical(workdir, capsys):
    code = cli.main(["eval", "--data", str(workdir["data"]),
                     "--ckpt", str(workdir["ckpt"]), "--json"])
    assert code == 0
    line = capsys.readouterr().out.strip()
    payload = json.loads(line)
    assert 0.0 <= payload["mean_dice"] <= 1.0
    assert payload["num_samples"] == 6
    assert set(payload["per_class"]) <= {"1", "2"}
    assert line.encode() == canonical_json(payload)


def test_eval_human_output(workdir, capsys):
    assert cli.main(["eval", "--data", str(workdir["data"]),
                     "--ckpt", str(workdir["ckpt"])]) == 0
    assert "mean dice" in capsys.readouterr().out


def test_pcm_writes_labeled_csv(workdir, tmp_path, capsys):
    out = tmp_path / "matrices.csv"
    code = cli.main(["pcm", "--data", str(workdir["data"]), "--ckpt", str(workdir["ckpt"]),
                     "--prompt", "point", "--points", "2", "--out", str(out)])
    assert code == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["matrix", "row", "background", "class1", "class2"]
    assert [r[0] for r in rows[1:]] == ["pcm"] * 3 + ["ocm"] * 3
    assert [r[1] for r in rows[1:4]] == ["background", "class1", "class2"]
    for r in rows[1:]:
        for cell in r[2:]:
            assert cell == "" or 0.0 <= float(cell) <= 1.0
    assert "pearson" in capsys.readouterr().out


def test_pcm_box_mode(workdir, tmp_path):
    out = tmp_path / "m.csv"
    assert cli.main(["pcm", "--data", str(workdir["data"]), "--ckpt", str(workdir["ckpt"]),
                     "--prompt", "box", "--points", "1", "--out", str(out)]) == 0
    assert out.exists()


# ---------------------------------------------------------------------------
# infer


@pytest.fixture(scope="module")
def sample_ppm(workdir):
    sample = load_all_samples(workdir["data"])[0]
    path = workdir["root"] / "sample.ppm"
    path.write_bytes(write_ppm(sample.image))
    return path


def test_infer_writes_artifacts(workdir, sample_ppm, tmp_path, capsys):
    prefix = str(tmp_path / "out")
    code = cli.main(["infer", "--ckpt", str(workdir["ckpt"]), "--image", str(sample_ppm),
                     "--out-prefix", prefix, "--classes", "1,2"])
    assert code == 0
    response = json.loads(Path(prefix + ".response.json").read_text())
    assert response["classes"] == [1, 2]
    labels = parse_pgm(Path(prefix + ".labels.pgm").read_bytes())
    assert labels.shape == (32, 32)
    for c in (1, 2):
        mask = parse_pgm(Path(prefix + f".class{c}.pgm").read_bytes())
        assert set(np.unique(mask)) <= {0, 255}
        assert base64.b64decode(response["masks"][str(c)]) == Path(
            prefix + f".class{c}.pgm"
        ).read_bytes()


def test_infer_with_edits_echoes_user_point(workdir, sample_ppm, tmp_path):
    prefix = str(tmp_path / "edit")
    code = cli.main(["infer", "--ckpt", str(workdir["ckpt"]), "--image", str(sample_ppm),
                     "--out-prefix", prefix, "--classes", "1",
                     "--point", "1:4,5,+", "--point", "1:9,9,-",
                     "--box", "1:0,0,15,15"])
    assert code == 0
    response = json.loads(Path(prefix + ".response.json").read_text())
    user = [p for p in response["points"] if p["source"] == "user"]
    assert {"class_id": 1, "x": 4, "y": 5, "positive": True, "source": "user"} in user
    assert {"class_id": 1, "x": 9, "y": 9, "positive": False, "source": "user"} in user
    for p in response["points"]:
        if p["source"] == "auto" and p["class_id"] == 1:
            assert 0 <= p["x"] <= 15 and 0 <= p["y"] <= 15


def test_infer_matches_server_byte_for_byte(workdir, sample_ppm, tmp_path):
    prefix = str(tmp_path / "parity")
    assert cli.main(["infer", "--ckpt", str(workdir["ckpt"]), "--image", str(sample_ppm),
                     "--out-prefix", prefix]) == 0
    cli_bytes = Path(prefix + ".response.json").read_bytes()

    service = ModelService.from_checkpoint(workdir["ckpt"])
    httpd = make_server(service, port=0)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    try:
        url = f"http://127.0.0.1:{httpd.server_address[1]}/segment"
        payload = {"image": base64.b64encode(sample_ppm.read_bytes()).decode("ascii")}
        r = requests.post(url, json=payload)
        assert r.status_code == 200
        assert r.content == cli_bytes
    finally:
        httpd.shutdown()
        httpd.server_close()
        thread.join(timeout=5)


# ---------------------------------------------------------------------------
# grad-check


def test_grad_check_cli_passes(capsys):
    assert cli.main(["grad-check", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "max relative error" in out
    assert "composite" in out


def test_grad_check_threshold_enforced(monkeypatch, capsys):
    monkeypatch.setattr(cli, "grad_check_suite", lambda seed=0: {"fake": 1e-3})
    assert cli.main(["grad-check"]) == 1
    assert "FAIL" in capsys.readouterr().out
