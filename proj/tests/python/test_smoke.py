import json
import math

import numpy as np
import pytest

import herdnet


def test_softmax_and_f1():
    p = herdnet.softmax([math.log(2.0), 0.0, 0.0])
    assert p == pytest.approx([0.5, 0.25, 0.25])
    assert herdnet.f1_score(8, 2, 2) == (pytest.approx(0.8), False)
    assert herdnet.f1_score(0, 0, 0)[1]


def test_reference_row():
    s = herdnet.cross_split_summary([67.74, 64.52, 61.29, 59.68, 59.68, 62.90, 70.97, 66.13, 54.84, 66.13])
    assert round(s["mean"], 2) == 63.39
    assert round(s["std"], 2) == 4.45
    assert s["formatted"] == "63.39 ± 4.45"


def test_errors_become_exceptions():
    with pytest.raises(herdnet.HerdnetError, match="metrics"):
        herdnet.cross_split_summary([1.0])


def test_sampling():
    assert herdnet.sample_indices_uniform(30, 8) == [0, 3, 7, 11, 15, 18, 22, 26]


def test_flow_recovers_a_shift():
    rng = np.random.default_rng(0)
    base = rng.random((16, 16))
    img = np.kron(base, np.ones((4, 4)))
    from scipy.ndimage import gaussian_filter

    a = (gaussian_filter(img, 1.5) * 255).astype(np.uint8)
    b = np.roll(a, 2, axis=1)
    f = herdnet.dense_flow(a, b)
    assert f.shape == (64, 64, 2)
    inner = f[16:48, 16:48]
    assert np.median(inner[..., 0]) == pytest.approx(2.0, abs=0.3)
    assert np.median(np.abs(inner[..., 1])) < 0.3


def test_pipeline_through_cli(tmp_path):
    manifest = herdnet.generate_dataset(tmp_path / "data", [4, 4, 4], seed=3)
    assert manifest.endswith("manifest.csv")
    data = str(tmp_path / "data")
    assert herdnet.cli("split", "--data", data, "--n-splits", "1")[0] == 0
    code, out, err = herdnet.cli("train", "--data", data, "--arch", "spatial", "--epochs", "1", "--image-size", "32",
                                 "--frames", "2", "--out", tmp_path / "model")
    assert code == 0, err
    ev = tmp_path / "eval.json"
    assert herdnet.cli("eval", "--data", data, "--model", tmp_path / "model", "--out", ev)[0] == 0
    preds = json.loads(ev.read_text())["predictions"]
    report = herdnet.audit_report(preds, manifest)
    assert len(report["per_view"]["views"]) == 16
    assert herdnet.cli("train", "--bogus")[0] == 2
