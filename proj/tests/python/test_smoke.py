import math

import numpy as np
import pytest

import itolab

TINY = {
    "width": 16,
    "embed_dim": 16,
    "fusion_width": 16,
    "layers": 1,
    "heads": 2,
    "fusion_heads": 2,
    "fusion_blocks": 1,
    "train_size": 64,
    "batch": 16,
    "epochs": 2,
    "warmup_steps": 2,
    "eval_size": 64,
}


def test_config_text_lists_every_key():
    text = itolab.format_config({"lambda": 4})
    for key in itolab.config_keys():
        assert f"{key}=" in text
    assert "lambda=4" in text


def test_unknown_config_key_raises():
    with pytest.raises(itolab.ConfigError):
        itolab.format_config({"learning_rate": 1})


def test_lr_schedule_endpoints():
    assert itolab.lr_at(200, 5e-4, 200, 1000) == pytest.approx(5e-4)
    assert itolab.lr_at(600, 5e-4, 200, 1000) == pytest.approx(2.5e-4)
    assert itolab.lr_at(1000, 5e-4, 200, 1000) == pytest.approx(0.0, abs=1e-18)


def test_dataset_shapes_and_determinism():
    a = itolab.generate_dataset(3, 10)
    b = itolab.generate_dataset(3, 10)
    assert a["images"].shape == (10, 3, 32, 32)
    assert a["token_ids"].shape == (10, 16)
    assert np.array_equal(a["images"], b["images"])
    assert all(0 <= label < 32 for label in a["labels"])
    assert a["images"].min() >= 0.0 and a["images"].max() <= 1.0


def test_gradcheck_suite_passes():
    r = itolab.gradcheck()
    assert r["max_rel_error"] < 1e-5
    assert "objective/full_B2" in r["cases"]


def test_train_and_reload_dual_encoder(tmp_path):
    out = itolab.train(TINY, tmp_path)
    report = out["report"]
    assert report["fusion_params_loaded"] == 0
    assert len(out["evals"]) == 2
    assert out["fusion_forward_calls"] > 0
    metrics = itolab.read_metrics(tmp_path / "metrics.jsonl")
    assert [m["step"] for m in metrics] == list(range(1, len(metrics) + 1))

    enc = itolab.DualEncoder.load(tmp_path / "ckpt_dual.ito")
    assert enc.fusion_param_count() == 0
    assert not any(n.startswith("fusion.") for n in enc.param_names())
    data = itolab.generate_dataset(2, 8)
    y = enc.embed_images(data["images"])
    z = enc.embed_texts(data["token_ids"])
    assert y.shape == (8, 16) and z.shape == (8, 16)
    assert np.allclose(np.linalg.norm(y, axis=1), 1.0)
    assert enc.evaluate(TINY_EVAL_SEED, TINY["eval_size"], TINY_EVAL_SEED) == report

    full = itolab.read_checkpoint(tmp_path / "ckpt_final.ito")
    assert any(k.startswith("fusion.") for k in full)


TINY_EVAL_SEED = 2


def test_lambda_zero_skips_fusion(tmp_path):
    out = itolab.train({**TINY, "lambda": 0}, tmp_path)
    assert out["fusion_forward_calls"] == 0


def test_retrieval_and_geometry():
    eye = np.eye(4)
    r = itolab.retrieval_recall(eye, eye)
    assert r["image_to_text"] == [1.0, 1.0, 1.0]
    y = np.tile([1.0, 0.0, 0.0], (120, 1))
    z = np.tile([0.0, 1.0, 0.0], (120, 1))
    g = itolab.geometry(y, z)
    assert g["centroid_gap"] == pytest.approx(math.sqrt(2.0))
    assert g["modality_probe_acc"] == 1.0
    assert g["knn_mix"] == 0.0
