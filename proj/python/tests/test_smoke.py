"""End-to-end smoke tests for the python bindings.

Correctness is covered by the C++ suites; these verify the binding layer:
array round trips, kwarg plumbing, and that a miniature experiment runs.
"""

import json
import math

import numpy as np
import pytest

import geoadapt


def test_version():
    assert geoadapt.__version__ == "0.1.0"


def test_softmax_entropy_roundtrip():
    logits = np.array([[[[0.0, 0.0], [2.0, -2.0]]]])
    probs = geoadapt.softmax_probs(logits)
    assert probs.shape == logits.shape
    np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(probs[0, 0, 0], [0.5, 0.5], atol=1e-12)

    ent = geoadapt.entropy_map(probs)
    assert ent.shape == (1, 1, 2)
    assert ent[0, 0, 0] == pytest.approx(1.0, abs=1e-9)

    info = geoadapt.self_information_map(probs)
    np.testing.assert_allclose(info.sum(axis=-1), ent, atol=1e-12)
    assert geoadapt.mean_entropy(probs) == pytest.approx(ent.mean(), abs=1e-12)


def test_entropy_known_value():
    probs = np.array([[[[0.9, 0.1]]]])
    ent = geoadapt.entropy_map(probs)
    assert ent[0, 0, 0] == pytest.approx(0.46900, abs=1e-4)


def test_presets_and_tiles():
    names = geoadapt.preset_names()
    assert "v2k" in names
    info = geoadapt.preset_domains("v2k")
    assert info["sources"] == ["vegas"]
    assert info["target"] == "khartoum"

    image, mask = geoadapt.generate_tile("v2k", "vegas", tile_seed=7, size_px=64)
    assert image.shape == (64, 64, 3)
    assert mask.shape == (64, 64)
    assert image.min() >= 0.0 and image.max() <= 1.0
    assert set(np.unique(mask)) <= {0, 1}

    again, mask_again = geoadapt.generate_tile("v2k", "vegas", tile_seed=7, size_px=64)
    np.testing.assert_array_equal(image, again)
    np.testing.assert_array_equal(mask, mask_again)


def test_augmentation_plan_roundtrip():
    plan = geoadapt.sample_plan(seed=3, p=1.0, geometric_only=True)
    ops = [op["op"] for op in json.loads(plan)]
    assert ops, "p=1 must fire every geometric op"

    image, mask = geoadapt.generate_tile("v2k", "vegas", tile_seed=1, size_px=64)
    aug_image, aug_mask = geoadapt.apply_plan(image, mask, plan)
    assert aug_image.shape == image.shape
    assert aug_mask.shape == mask.shape

    maps = np.random.default_rng(0).random((2, 32, 32, 2))
    plans = [geoadapt.sample_plan(seed=s, p=1.0, geometric_only=True) for s in (1, 2)]
    out = geoadapt.augment_maps(maps, plans)
    assert out.shape == maps.shape
    identity = geoadapt.augment_maps(maps, ["[]", "[]"])
    np.testing.assert_array_equal(identity, maps)


def test_pair_iou():
    gt = np.zeros((4, 4), dtype=np.uint8)
    gt[:2] = 1
    pred = np.zeros((4, 4), dtype=np.uint8)
    pred[:1] = 1
    ious = geoadapt.pair_iou(gt, pred)
    assert ious[1] == pytest.approx(0.5)


def test_purity_curve_hand_example():
    feats = np.array([[0.0], [1.0], [2.0], [3.0]])
    curve = geoadapt.purity_curve(feats, [0, 1, 0, 1])
    np.testing.assert_allclose(curve["purity"], [0.75, 0.5, 0.5], atol=1e-9)
    assert curve["auc"] == pytest.approx(0.58333333, abs=1e-6)


def test_label_gap_orders_separated_above_interleaved():
    rng = np.random.default_rng(0)

    def block_mask(corner):
        mask = np.zeros((32, 32), dtype=np.uint8)
        y, x = corner
        mask[y : y + 12, x : x + 12] = 1
        return mask

    source = [block_mask((2, 2)) for _ in range(6)]
    target = [block_mask((18, 18)) for _ in range(6)]
    separated = geoadapt.label_gap(source, target, grid=8)
    mixed = geoadapt.label_gap(source + target[:3], target[3:] + source[:3], grid=8)
    assert separated["auc"] >= mixed["auc"]
    assert separated["n_source"] == 6 and separated["n_target"] == 6


def test_featurize_grid():
    mask = np.zeros((8, 8), dtype=np.uint8)
    mask[:4, :4] = 1
    vec = geoadapt.featurize_mask(mask, grid=2, mode="pool")
    np.testing.assert_allclose(vec, [1.0, 0.0, 0.0, 0.0], atol=1e-12)


def test_run_experiment_smoke(tmp_path):
    src = geoadapt.generate_dataset("v2k", "vegas", n=6, seed=11, out_dir=str(tmp_path / "src"), size_px=32)
    tgt = geoadapt.generate_dataset("v2k", "khartoum", n=6, seed=12, out_dir=str(tmp_path / "tgt"), size_px=32)

    result = geoadapt.run_experiment(
        mode="advent",
        sources=[src],
        target=tgt,
        out_dir=str(tmp_path / "run"),
        benchmark="v2k",
        iterations=3,
        batch_size=2,
        seed=5,
        eval_every=3,
    )
    assert result["mode"] == "advent"
    assert result["iterations"] == 3
    assert 0.0 <= result["iou_building"] <= 1.0
    assert result["monitor"] in {"healthy", "discriminator_overfit", "diverged"}

    metrics = [json.loads(line) for line in open(result["metrics_path"])]
    assert metrics and metrics[-1]["iter"] == 3
    assert math.isfinite(metrics[-1]["seg_loss"])

    scores = geoadapt.evaluate_checkpoint(result["final_checkpoint"], tgt)
    assert 0.0 <= scores["iou_building"] <= 1.0
