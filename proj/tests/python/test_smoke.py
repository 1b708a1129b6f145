import itertools
import json
import os
from pathlib import Path

import pytest

import routerank as rr

TINY = Path(os.environ.get("ROUTERANK_TEST_DATA", Path(__file__).parents[1] / "data")) / "tiny.json"


def pair_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def test_auc_matches_pair_counting():
    scores = [0.1, 0.4, 0.4, 0.8, 0.3, 0.9, 0.4]
    labels = [0, 1, 0, 1, 0, 1, 1]
    assert rr.auc(scores, labels) == pytest.approx(pair_auc(scores, labels), abs=1e-12)
    assert rr.auc([0.2, 0.3], [1, 1]) is None


def test_label_threshold_is_inclusive():
    assert rr.binarize_label(0.05) == 1
    assert rr.binarize_label(0.0501) == 0
    assert rr.binarize_label(0.3, tau=0.3) == 1
    with pytest.raises(rr.InvalidArgument):
        rr.binarize_label(1.5)


def test_kmeans_separates_blobs():
    x = [[float(10 * (i % 2)), float(i % 5) * 0.01] for i in range(40)]
    fit = rr.kmeans(x, 2, seed=1)
    a = fit["assignments"]
    assert all((a[i] == a[j]) == (i % 2 == j % 2) for i in range(40) for j in range(40))
    trace = fit["inertia_trace"]
    assert all(b <= a_ + 1e-9 for a_, b in zip(trace, trace[1:]))


def test_errors_map_to_python_exceptions(tmp_path):
    with pytest.raises(rr.MissingInput):
        rr.run_stage("eval", tmp_path)
    with pytest.raises(rr.InvalidArgument):
        rr.run_stage("bogus", tmp_path)
    with pytest.raises(rr.SchemaError):
        rr.run_stage("gen", tmp_path, config={"seed": 1, "wrold": {}})
    assert issubclass(rr.SchemaError, rr.RouterankError)


def test_tiny_pipeline_end_to_end(tmp_path):
    manifests = rr.run_all(tmp_path, config=str(TINY), plot=False)
    assert set(manifests) == {"gen", "extract", "cluster", "train", "eval"}
    for stage in manifests:
        assert rr.verify_stage(tmp_path, stage)["command"] == stage

    report = json.loads((tmp_path / "eval_report.json").read_text())
    assert report

    model = rr.DcrModel.load(tmp_path / "dcr.ckpt")
    scores = model.score_run(tmp_path, "test")
    assert scores and all(0.0 < s < 1.0 for s in scores)
    model.save(tmp_path / "copy.ckpt")
    again = rr.DcrModel.load(tmp_path / "copy.ckpt")
    assert again == model
    assert again.score_run(tmp_path, "test") == scores


def test_seed_override_changes_the_world(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    rr.run_stage("gen", a, config=str(TINY), seed=11)
    rr.run_stage("gen", b, config=str(TINY), seed=12)
    assert (a / "users.jsonl").read_bytes() != (b / "users.jsonl").read_bytes()
    assert rr.default_config(seed=3)["seed"] == 3
