import base64
import json
import math
import os
import subprocess
from pathlib import Path

import numpy as np
import pytest

import memeface


def test_kl_closed_forms():
    assert memeface.kl_regularizer([0.0, 0.0], [0.0, 0.0]) == 0.0
    assert abs(memeface.kl_regularizer([1.0, 0.0], [0.0, 0.0]) - 0.5) < 1e-12
    assert abs(memeface.kl_regularizer([0.0], [math.log(2.0)]) - (1 - math.log(2.0)) / 2) < 1e-12
    with pytest.raises(ValueError):
        memeface.kl_regularizer([0.0, 1.0], [0.0])


def test_batch_matching_loss_against_numpy():
    loss, _, _ = memeface.batch_matching_loss(np.array([[0.37]]), 10.0)
    assert loss == 0.0

    rng = np.random.default_rng(0)
    s = rng.uniform(-1, 1, size=(5, 5))
    g = 10.0
    loss, i2c, c2i = memeface.batch_matching_loss(s, g)
    row = np.exp(g * s) / np.exp(g * s).sum(axis=1, keepdims=True)
    col = np.exp(g * s) / np.exp(g * s).sum(axis=0, keepdims=True)
    expect = -np.log(np.diag(row)).sum() - np.log(np.diag(col)).sum()
    assert abs(loss - expect) < 1e-9
    np.testing.assert_allclose(i2c.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(c2i.sum(axis=0), 1.0, atol=1e-12)


def test_annotation_percentages():
    labels = [[2]] * 388 + [[1]] * 434 + [[0]] * 178
    s = memeface.aggregate_annotations(labels)
    assert s["total"] == 1000
    assert s["counts"] == [178, 434, 388]
    assert s["percent"] == [17.8, 43.4, 38.8]
    assert s["at_least_one_percent"] == 82.2


def test_tokenizer_and_vocabulary(tmp_path):
    assert memeface.tokenize("Wow, not bad") == ["wow", ",", "not", "bad"]
    assert memeface.tokenize("我好累") == ["我", "好", "累"]
    vocab = memeface.Vocabulary.build(["a b b", "b c"])
    assert vocab.token(0) == "<unk>"
    assert vocab.token(1) == "b"
    assert vocab.encode("b zzz") == [1, 0]
    vocab.save(tmp_path / "vocab.txt")
    assert len(memeface.Vocabulary.load(tmp_path / "vocab.txt")) == len(vocab)


def test_png_round_trip_keeps_pixel_convention(tmp_path):
    levels = np.arange(256) / 127.5 - 1.0
    img = np.stack([np.tile(levels, (4, 1)), np.full((4, 256), -1.0), np.full((4, 256), 1.0)])
    memeface.save_png(img, tmp_path / "x.png")
    back = memeface.load_png(tmp_path / "x.png")
    assert back.shape == (3, 4, 256)
    np.testing.assert_allclose(back, img, atol=1e-12)
    assert memeface.decode_png((tmp_path / "x.png").read_bytes()).shape == (3, 4, 256)


def test_checkpoint_errors_surface_as_value_error(tmp_path):
    (tmp_path / "junk.ckpt").write_bytes(b"not a checkpoint")
    with pytest.raises(memeface.CheckpointError):
        memeface.read_checkpoint_header(tmp_path / "junk.ckpt")
    assert memeface.sha256_hex(b"abc").startswith("ba7816bf")


def snapshot(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_pipeline_is_deterministic(tmp_path):
    memeface.write_toy_corpus(tmp_path / "raw", images=32, seed=4)
    reports = [
        memeface.run_pipeline(tmp_path / "raw", tmp_path / out, tmp_path / "raw" / "captions.tsv", k=4,
                              resolution=32, seed=2)
        for out in ("a", "b")
    ]
    assert reports[0] == reports[1]
    assert reports[0]["ingested"] == 32
    history = reports[0]["inertia_history"]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(history, history[1:]))
    assert snapshot(tmp_path / "a") == snapshot(tmp_path / "b")
    for line in (tmp_path / "a" / "manifest.jsonl").read_text().splitlines():
        rec = json.loads(line)
        assert 3 <= len(memeface.tokenize(rec["caption"])) <= 12


CLI = os.environ.get("MEMEFACE_CLI")


@pytest.mark.skipif(not CLI, reason="MEMEFACE_CLI not set")
def test_cli_flow_feeds_the_demo_service(tmp_path):
    def run(*args):
        subprocess.run([CLI, *map(str, args)], check=True, capture_output=True)

    geometry = {"embedding_dim": 8, "text_dim": 8, "cond_dim": 4, "noise_dim": 4, "hidden_channels": 8,
                "disc_channels": 8, "damsm_channels": 8, "stages": 2, "base_resolution": 8, "region_grid": 4,
                "max_caption_len": 12}
    (tmp_path / "model.json").write_text(json.dumps(geometry))
    run("make-toy-corpus", "--out", tmp_path / "raw", "--images", 24, "--seed", 5)
    run("curate", "--input", tmp_path / "raw", "--out", tmp_path / "data", "-k", 3, "--resolution", 16,
        "--seed", 1)
    run("pretrain-damsm", "--data", tmp_path / "data", "--out", tmp_path / "damsm" / "damsm.ckpt",
        "--model-config", tmp_path / "model.json", "--epochs", 2, "--batch", 4)
    run("train", "--data", tmp_path / "data", "--damsm", tmp_path / "damsm" / "damsm.ckpt", "--out",
        tmp_path / "ckpt", "--epochs", 10, "--checkpoint-period", 5, "--batch", 4, "--schedule",
        "per_batch_alternating")

    ckpts = sorted((tmp_path / "ckpt").glob("*.ckpt"))
    assert [memeface.read_checkpoint_header(p)["epoch"] for p in ckpts] == [5, 10]

    svc = memeface.DemoService(tmp_path / "ckpt", tmp_path / "data")
    health = svc.health()
    assert health["status"] == "ok"
    assert health["n_checkpoints"] == 2
    assert len(svc.templates()) >= 1

    a = svc.generate("a cat looks very tired today", seed=3)
    b = svc.generate("a cat looks very tired today", seed=3)
    assert [f["epoch"] for f in a["frames"]] == [5, 10]
    assert a["resolution"] == 16
    for fa, fb in zip(a["frames"], b["frames"]):
        assert fa["image_b64"] == fb["image_b64"]
        img = memeface.decode_png(base64.b64decode(fa["image_b64"]))
        assert img.shape == (3, 16, 16)
        assert img.min() >= -1.0 and img.max() <= 1.0
    with pytest.raises(ValueError, match="400"):
        svc.generate("")
