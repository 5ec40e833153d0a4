# SPDX-License-Identifier: Apache-2.0
import json
import math

import numpy as np
import pytest

import cgdrcn


def test_density_map_mass_equals_head_count():
    heads = np.array([[10.0, 12.0], [40.5, 33.0], [63.0, 63.0]])
    for scale in (1, 4, 8, 16, 32):
        d = cgdrcn.density_map(heads, 64, 64, sigma=4.0, scale=scale)
        assert d.shape == (math.ceil(64 / scale), math.ceil(64 / scale))
        assert d.sum() == pytest.approx(3.0, abs=1e-9)
        assert (d >= 0).all()


def test_density_map_rejects_bad_scale():
    with pytest.raises(ValueError):
        cgdrcn.density_map(np.array([[1.0, 1.0]]), 8, 8, scale=2)


def test_pyramid_targets_cover_levels_three_to_six():
    _, heads = cgdrcn.synth_scene(20, 128, 128, seed=3)
    targets = cgdrcn.pyramid_targets(heads, 128, 128, adaptive=True)
    assert sorted(targets) == [3, 4, 5, 6]
    for level, t in targets.items():
        assert t.shape == (128 // cgdrcn.level_scale(level),) * 2
        assert t.sum() == pytest.approx(20.0, abs=1e-9)


def test_metrics():
    mae, mse = cgdrcn.mae_mse([10, 20], [12, 16])
    assert mae == pytest.approx(3.0)
    assert mse == pytest.approx(math.sqrt(10))
    assert [cgdrcn.density_band(c) for c in (50, 51, 500, 501)] == ["low", "medium", "medium", "high"]


def test_synth_scene_is_deterministic():
    img, heads = cgdrcn.synth_scene(30, 96, 64, seed=7, weather="rain")
    again, _ = cgdrcn.synth_scene(30, 96, 64, seed=7, weather="rain")
    assert img.shape == (64, 96, 3)
    assert heads.shape == (30, 4)
    assert np.array_equal(img, again)
    assert img.min() >= 0 and img.max() <= 1


def test_model_forward_and_count():
    model = cgdrcn.Model("tiny", "ureb-c", seed=1)
    assert model.variant == "ureb-c" and model.num_parameters > 0
    img, _ = cgdrcn.synth_scene(10, 64, 64, seed=1)
    out = model.forward(img)
    assert out["density"][3].shape == (16, 16)
    assert out["density"][6].shape == (2, 2)
    assert sorted(out["confidence"]) == [3, 4, 5]
    assert len(out["weather_logits"]) == 4
    assert out["count"] == pytest.approx(out["density"][3].sum())
    assert math.isfinite(model.count(img, resize_min=64, resize_max=128))


def test_bad_model_arguments():
    with pytest.raises(ValueError):
        cgdrcn.Model("alexnet")
    with pytest.raises(ValueError):
        cgdrcn.Model("tiny", "mystery")


def test_synth_train_eval_round_trip(tmp_path):
    data = tmp_path / "data"
    code, _, err = cgdrcn.run_cli(
        ["synth", "--out", str(data), "--count", "5", "--max-heads", "20", "--size", "64", "--seed", "2"]
    )
    assert code == 0, err
    stats = cgdrcn.dataset_stats(data)
    assert stats["total_images"] == 5

    settings = {"crop_size": 64, "resize_min": 64, "resize_max": 128, "batch_size": 1, "max_steps": 2,
                "checkpoint_interval": 1, "learning_rate": 1e-3}
    model = cgdrcn.Model("tiny", "ureb", seed=4)
    result = cgdrcn.train(model, data, settings)
    assert len(result["trace"]) == 2
    assert result["best_val_mae"] == min(mae for _, mae in result["validations"])

    report = cgdrcn.evaluate(model, data, "train", settings)
    assert report["categories"]["overall"]["n_images"] == stats["split_images"]["train"]

    path = tmp_path / "m.bin"
    model.save(path)
    loaded = cgdrcn.Model.load(path)
    img, _ = cgdrcn.synth_scene(5, 64, 64, seed=9)
    assert loaded.forward(img)["count"] == model.forward(img)["count"]


def test_cli_usage_error_code():
    code, _, _ = cgdrcn.run_cli(["bogus"])
    assert code == 2
    code, out, _ = cgdrcn.run_cli(["--help"])
    assert code == 0 and "render-density" in out
