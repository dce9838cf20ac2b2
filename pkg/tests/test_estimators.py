import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from fmca.config import PipelineConfig
from fmca.estimators import FMCA, PowerFeatures, PowerMLPClassifier, make_pipeline
from fmca.exceptions import ShapeMismatch
from fmca.synthetic import tone_corpus
from fmca.signal import preprocess

SMALL = dict(n_components=3, hidden_units=8, n_layers=1, n_iter=60, batch_size=64)


@pytest.fixture(scope="module")
def tones():
    sigs = tone_corpus(n_per_class=6)
    frames = [preprocess(s, 50, 2).frames for s in sigs]
    return frames, np.array([s.label for s in sigs])


def test_params_and_clone():
    est = FMCA(n_components=5, head="softmax")
    params = est.get_params()
    assert params["n_components"] == 5 and params["head"] == "softmax"
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(n_iter=3)
    assert est.n_iter == 3
    pipe = make_pipeline(PipelineConfig(n_components=2, clf_hidden_units=7))
    assert pipe.get_params()["fmca__n_components"] == 2
    assert pipe.get_params()["mlp__hidden_units"] == 7
    assert clone(pipe).get_params()["power__n_intervals"] == 6


def test_fmca_transform(tones):
    frames, labels = tones
    est = FMCA(**SMALL).fit(frames, labels)
    assert est.spectrum_.shape == (3,) and est.n_features_in_ == 25
    traces = est.transform(frames)
    assert len(traces) == len(frames)
    assert all(t.shape == (f.shape[0], 3) for t, f in zip(traces, frames))
    np.testing.assert_array_equal(est.transform(frames[0]), traces[0])
    with pytest.raises(ShapeMismatch):
        est.transform([np.ones((4, 7))])


def test_fit_checks(tones):
    frames, labels = tones
    with pytest.raises(NotFittedError):
        FMCA().transform(frames)
    with pytest.raises(ValueError, match="labels"):
        FMCA(**SMALL).fit(frames)
    with pytest.raises(ShapeMismatch):
        FMCA(**SMALL).fit(frames, labels[:-1])
    with pytest.raises(ValueError):
        FMCA(**SMALL).fit([np.full((3, 25), np.nan)] * 2, [0, 1])


def test_fit_pairs_scalar_inputs():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(2000)
    est = FMCA(n_components=2, hidden_units=8, n_layers=1, n_iter=50, batch_size=128)
    est.fit_pairs(x, x + 0.1 * rng.standard_normal(2000))
    assert est.n_features_in_ == 1 and est.spectrum_[0] > 0.9


def test_power_and_classifier():
    rng = np.random.default_rng(0)
    traces = [rng.standard_normal((20, 2)) * (1 + 3 * (i % 2)) for i in range(40)]
    y = np.arange(40) % 2
    feats = PowerFeatures(4).fit(traces).transform(traces)
    assert feats.shape == (40, 8)
    clf = PowerMLPClassifier(max_epochs=100).fit(feats, y)
    assert clf.score(feats, y) == 1.0
    assert clf.predict_proba(feats).shape == (40, 2)
    np.testing.assert_array_equal(clf.classes_, [0, 1])


def test_pipeline_end_to_end(tones):
    frames, labels = tones
    cfg = PipelineConfig(n_components=3, hidden_units=8, n_layers=1, n_iter=100, batch_size=64,
                         clf_epochs=100)
    pipe = make_pipeline(cfg).fit(frames, labels)
    assert np.mean(pipe.predict(frames) == labels) == 1.0
