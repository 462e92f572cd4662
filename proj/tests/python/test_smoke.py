# SPDX-License-Identifier: Apache-2.0
import math
import os
import subprocess

import numpy as np
import pytest

import tbigan


def test_closed_form_losses():
    assert abs(tbigan.triplet_probability(1.0, 2.0) - 0.7310586) < 1e-6
    a = np.zeros((3, 4))
    assert abs(tbigan.triplet_loss(a, a, a) - math.log(2.0)) < 1e-9
    half = np.full(5, 0.5)
    assert abs(tbigan.discriminator_loss(half, half) - 2 * math.log(2.0)) < 1e-9
    assert abs(tbigan.encoder_generator_loss(half, half) - 2 * math.log(2.0)) < 1e-9
    assert tbigan.combined_loss(0.7, 0.25, 2.0) == 0.7 + 2.0 * 0.25


def test_errors_map_to_python_exceptions():
    with pytest.raises(tbigan.ContractError):
        tbigan.triplet_probability(-1.0, 1.0)
    with pytest.raises(tbigan.UsageError):
        tbigan.resolve_config({"model": "bigan", "train.lambda": "0.5"})
    with pytest.raises(tbigan.DataError):
        tbigan.evaluate("/nonexistent/final.ckpt")
    assert issubclass(tbigan.CheckpointError, tbigan.DataError)
    assert issubclass(tbigan.TbiganError, RuntimeError)


def test_knn_and_retrieval():
    db = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0]], dtype=np.float32)
    labels = [0, 0, 1, 1]
    q = np.array([[0.05, 0.0], [5.0, 5.1]], dtype=np.float32)
    assert tbigan.knn_classify(db, labels, q, k=3) == [0, 1]
    assert tbigan.retrieval_map(db, labels, q, [0, 1])["map"] == 1.0
    assert abs(tbigan.average_precision([1, 0, 1]) - (1 + 2 / 3) / 2) < 1e-15


def test_config_defaults():
    kv = tbigan.resolve_config({"model": "bigan"})
    assert float(kv["train.lambda"]) == 0.0
    assert tbigan.resolve_config()["model"] == "triplet-bigan"
    assert "train.lambda" in tbigan.render_config()


def test_synthetic_shapes():
    data = tbigan.synthetic_shapes(3, 10, 16, 1, 4)
    images, labels = data["train"]
    assert images.shape == (30, 3, 16, 16)
    assert images.min() >= 0.0 and images.max() <= 1.0
    assert sorted(set(labels)) == [0, 1, 2]
    assert data["test"][0].shape[0] == 12


def test_train_evaluate_embed(tmp_path):
    out = tmp_path / "run"
    records = tbigan.train({
        "out": str(out),
        "arch.m": "4",
        "synthetic.class_count": "2",
        "synthetic.per_class": "24",
        "synthetic.test_per_class": "10",
        "train.n_per_class": "6",
        "train.epochs": "2",
        "train.warmup_epochs": "1",
        "train.batch_size": "16",
        "train.eval_triplets": "20",
    })
    assert [r["epoch"] for r in records] == [1, 2]
    assert "l_t" in records[1]
    report = tbigan.evaluate(str(out))
    assert 0.0 <= report["map"] <= 1.0
    assert report["m"] == 4
    vectors, labels = tbigan.embed(str(out), "test")
    assert vectors.shape == (20, 4)
    assert len(labels) == 20


CLI = os.environ.get("TBIGAN_CLI")


@pytest.mark.skipif(not CLI, reason="TBIGAN_CLI not set")
def test_cli_exit_codes(tmp_path):
    usage = subprocess.run([CLI, "train", "--model", "bigan", "--lambda", "0.5",
                            "--out", str(tmp_path / "x")], capture_output=True)
    assert usage.returncode == 2
    missing = subprocess.run([CLI, "eval", str(tmp_path / "missing.ckpt")], capture_output=True)
    assert missing.returncode == 3
    assert subprocess.run([CLI, "--help"], capture_output=True).returncode == 0
