import json

import numpy as np
import pytest

import affect


def ccc_numpy(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    cov = np.mean((x - x.mean()) * (y - y.mean()))
    return 2 * cov / (x.var() + y.var() + (x.mean() - y.mean()) ** 2)


def test_ccc_matches_numpy():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.normal(size=50)
        y = 0.7 * x + rng.normal(scale=0.5, size=50) + 0.2
        assert affect.ccc(x.tolist(), y.tolist()) == pytest.approx(ccc_numpy(x, y), rel=1e-12)


def test_pearson_matches_numpy():
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=40), rng.normal(size=40)
    assert affect.pearson(x.tolist(), y.tolist()) == pytest.approx(np.corrcoef(x, y)[0, 1], rel=1e-12)


def test_degenerate_series_raise():
    with pytest.raises(affect.DegenerateInput):
        affect.ccc([1.0, 1.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        affect.ccc([1.0, 2.0], [1.0])


def test_vote_ties_break_on_confidence_then_label():
    assert affect.vote([(3, 0.9), (1, 0.5), (1, 0.5)]) == 1
    assert affect.vote([(3, 0.9), (1, 0.5)]) == 3
    assert affect.vote([(3, 0.5), (1, 0.5)]) == 1


def test_smoothing_preserves_constants_and_identity():
    flat = [0.25] * 30
    assert affect.gaussian_smooth(flat, 2.0) == pytest.approx(flat, abs=1e-15)
    x = np.sin(np.arange(25)).tolist()
    assert affect.gaussian_smooth(x, 1e-9) == x
    with pytest.raises(ValueError):
        affect.gaussian_smooth(x, 0.0)


def test_prediction_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    scores = rng.dirichlet(np.ones(8), size=12)
    pred = affect.PredictionTrack(affect.Track.EXPR, "vid_a", scores)
    assert pred.decisions[:, 0].tolist() == scores.argmax(axis=1).tolist()
    path = tmp_path / "p.csv"
    affect.write_predictions(pred, path)
    assert affect.read_predictions(path) == pred


def test_perfect_expr_prediction_scores_one():
    truth = np.arange(24) % 8
    labels = affect.LabelTrack(affect.Track.EXPR, "v", truth.reshape(-1, 1).astype(float))
    pred = affect.PredictionTrack(affect.Track.EXPR, "v", np.eye(8)[truth])
    report = affect.evaluate(pred, labels)
    assert report.performance == 1.0
    assert report.n_evaluated == 24


def test_synthetic_corpus_and_fuse(tmp_path):
    corpus = affect.synthetic_corpus(["track=va", "synth.videos=4", "synth.min_frames=20", "synth.max_frames=30"])
    assert len(corpus) == 4 and corpus.track == affect.Track.VA
    manifest = affect.write_corpus(corpus, tmp_path)
    again = affect.read_corpus(manifest)
    assert again.video_ids() == corpus.video_ids()
    assert np.array_equal(again.bundles[0].visual, corpus.bundles[0].visual)

    labels = corpus.labels[0]
    pred = affect.PredictionTrack(affect.Track.VA, labels.video_id, labels.values)
    fused = affect.fuse([pred, pred, pred])
    assert np.allclose(fused.scores, labels.values)
    assert affect.evaluate(fused, labels).performance == pytest.approx(1.0, abs=1e-12)


def test_partition_is_deterministic():
    rng = np.random.default_rng(3)
    desc = np.vstack([rng.normal(loc=c, scale=0.05, size=(5, 2)) for c in (0.0, 5.0, 10.0)])
    ids = [f"v{i:02d}" for i in range(15)]
    a = affect.partition_backgrounds(ids, desc, 3, seed=7)
    assert a == affect.partition_backgrounds(ids, desc, 3, seed=7)
    groups = {a[i] for i in ids[:5]}, {a[i] for i in ids[5:10]}, {a[i] for i in ids[10:]}
    assert all(len(g) == 1 for g in groups)
    assert len(set(a.values())) == 3


def test_split_folds_cover_every_video_once():
    ids = [f"v{i}" for i in range(11)]
    folds = affect.split_folds(ids, 5, seed=1)
    vals = [v for _, val in folds for v in val]
    assert sorted(vals) == sorted(ids)
    assert [len(val) for _, val in folds] == [3, 2, 2, 2, 2]


def test_config_errors_are_reported():
    with pytest.raises(affect.ConfigError, match="unknown config key 'train.learning_rat'"):
        affect.resolved_config(["train.learning_rat=1"])
    cfg = json.loads(affect.resolved_config(["seed=9"]))
    assert cfg["seed"] == 9


def test_small_experiment_runs():
    corpus = affect.synthetic_corpus(["synth.videos=6", "synth.min_frames=20", "synth.max_frames=30"])
    overrides = ["folds=3", "train.epochs=1", "fusion.num_layers=1", "fusion.num_heads=2", "ensemble.subsets=2"]
    report = json.loads(affect.run_experiment(corpus, overrides, json=True))
    names = [row["name"] for row in report["rows"]]
    assert names[:3] == ["fold-1", "fold-2", "fold-3"]
    with pytest.raises(affect.ConfigError, match="does not match"):
        affect.run_experiment(corpus, ["track=va"])
