# Copyright 2026 The USKT Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.


import json

import numpy as np
import pytest

import uskt

MINI = {
    "model": {
        "input_hw": 32,
        "down_channels": [8, 8, 16, 16],
        "state_size": 4,
        "encoder_channels": [4, 8, 8, 16, 16],
    },
    "train": {"epochs": 2},
    "data": {"synthetic": {"per_class": 2}},
}


def voxel_reference(events, sw, sh, bins, h, w, t0, t1):
    grid = np.zeros((bins, h, w))
    span = t1 - t0
    for x, y, t, p in events:
        k = min(int(np.floor(bins * (t - t0) / span)), bins - 1)
        grid[k, int(y) * h // sh, int(x) * w // sw] += 1 if p > 0 else -1
    return grid


def scan_reference(a_bar, b_bar, c, d, x):
    h = np.zeros_like(a_bar)
    ys = []
    for xt in x:
        h = a_bar * h + b_bar * xt[:, None]
        ys.append((c * h).sum(axis=1) + d * xt)
    return np.array(ys)


def test_voxelize_matches_reference():
    rng = np.random.default_rng(0)
    n = 500
    events = np.column_stack([
        rng.integers(0, 20, n),
        rng.integers(0, 10, n),
        np.sort(rng.uniform(0.0, 1.0, n)),
        rng.choice([-1, 1], n),
    ]).astype(float)
    grid = uskt.voxelize(events, 20, 10, bins=4, height=5, width=7, t_start=0.0, t_end=1.0)
    assert grid.shape == (4, 5, 7)
    np.testing.assert_array_equal(grid, voxel_reference(events, 20, 10, 4, 5, 7, 0.0, 1.0))
    assert grid.sum() == events[:, 3].sum()


def test_voxelize_empty_and_errors():
    assert not uskt.voxelize(np.zeros((0, 4)), 4, 4, bins=2, height=2, width=2).any()
    with pytest.raises(uskt.FormatError):
        uskt.voxelize(np.array([[9.0, 0.0, 0.0, 1.0]]), 4, 4)
    with pytest.raises(uskt.Error):
        uskt.voxelize(np.zeros((1, 4)), 4, 4, bins=0)


def test_event_files_round_trip(tmp_path):
    events = np.array([[1, 0, 0.25, 1], [3, 2, 0.5, -1], [0, 1, 0.75, 1]], dtype=float)
    for fmt in ("csv", "evt1"):
        path = tmp_path / f"e.{fmt}"
        uskt.write_events(path, events, 4, 3, format=fmt)
        back, meta = uskt.read_events(path, format=fmt, sensor_width=4, sensor_height=3)
        np.testing.assert_array_equal(back, events)
        assert (meta["sensor_width"], meta["sensor_height"]) == (4, 3)


def test_scan_kernels_agree_with_reference():
    p = uskt.ssm_params(6, 3, seed=5)
    assert np.all((p["a_bar"] > 0) & (p["a_bar"] < 1))
    x = np.random.default_rng(1).normal(size=(40, 6))
    ref = scan_reference(p["a_bar"], p["b_bar"], p["c"], p["d"], x)
    seq = uskt.scan(p["a_bar"], p["b_bar"], p["c"], p["d"], x)
    par = uskt.scan(p["a_bar"], p["b_bar"], p["c"], p["d"], x, parallel=True, threads=3)
    np.testing.assert_allclose(seq, ref, rtol=0, atol=1e-12)
    np.testing.assert_allclose(par, ref, rtol=0, atol=1e-10)


def test_focal_reduces_to_cross_entropy():
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(5, 4))
    labels = [0, 3, 1, 2, 2]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    ce = -np.mean(logp[np.arange(5), labels])
    assert uskt.cross_entropy(logits, labels) == pytest.approx(ce, abs=1e-12)
    assert uskt.focal_loss(logits, labels, alpha=1.0, gamma=0.0) == pytest.approx(ce, abs=1e-7)
    assert uskt.focal_loss(logits, labels) < ce
    with pytest.raises(uskt.Error):
        uskt.cross_entropy(logits, [0, 1, 2, 3, 4])


def test_synthetic_dataset_is_deterministic():
    v1, l1 = uskt.synthetic_dataset(per_class=2, hw=32)
    v2, l2 = uskt.synthetic_dataset(per_class=2, hw=32)
    assert v1.shape == (6, 5, 32, 32) and v1.dtype == np.float32
    np.testing.assert_array_equal(v1, v2)
    assert sorted(l1.tolist()) == [0, 0, 1, 1, 2, 2]


def test_model_shape_trace():
    model = uskt.Model.create(json.dumps(MINI["model"]), seed=3)
    voxels, _ = uskt.synthetic_dataset(per_class=1, hw=32)
    trace = dict(model.shape_trace(voxels[0]))
    assert trace["input"] == (5, 32, 32)
    assert trace["sequence"] == (1, 16)
    assert trace["x_uskt"] == (3, 32, 32)
    out = model.forward(voxels[0])
    assert out["logits"].shape == (3,)
    assert out["x_rec"].shape == (3, 32, 32)
    assert 0 <= model.predict(voxels[0]) < 3
    with pytest.raises(uskt.ShapeError):
        model.predict(voxels[0][:2])


def test_train_and_reload(tmp_path):
    result = uskt.train(MINI, output_dir=str(tmp_path / "run"))
    history = result["history"]
    assert [h["epoch"] for h in history] == [1, 2]
    assert all(np.isfinite(h["loss"]) for h in history)
    assert (tmp_path / "run" / "metrics.jsonl").read_text().count("\n") == 2
    model = uskt.Model.load(result["model"])
    again = uskt.train(MINI, output_dir=str(tmp_path / "run2"))
    assert uskt.Model.load(again["model"]).checksum() == model.checksum()
    with pytest.raises(uskt.FormatError):
        uskt.train(MINI, bogus=1, output_dir=str(tmp_path / "bad"))


def test_gradcheck_birssm():
    rows = uskt.gradcheck("birssm")
    assert rows and all(r["pass"] and r["max_rel_err"] < 1e-4 for r in rows)
