import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from sedkit.corpus import FeatureSet
from sedkit.errors import ContractError, ShapeError
from sedkit.estimator import FbankExtractor, StutterDetector
from sedkit.frontend import FbankConfig, Waveform, compute_fbank
from sedkit.validation import check_features, check_labels, check_waveforms

TINY = dict(num_blocks=1, d_model=16, attention_heads=2, conv_kernel=3, lstm_layers=1, lstm_hidden=8, proj_dim=8,
            max_epochs=2, batch_size=4, lr=1e-3)


@pytest.fixture(scope="module")
def toy():
    rng = np.random.default_rng(0)
    X = [rng.standard_normal((30, 80)).astype(np.float32) for _ in range(16)]
    y = rng.integers(0, 2, size=(16, 5))
    return X, y


def test_extractor_matches_compute_fbank():
    w = np.sin(np.arange(16000) * 0.05)
    out = FbankExtractor().fit().transform([w, w[:8000]])
    assert out[0].shape == (98, 80) and out[1].shape == (48, 80)
    np.testing.assert_array_equal(out[0], compute_fbank(Waveform(w), FbankConfig()))


def test_extractor_params_reach_config():
    w = np.random.default_rng(1).standard_normal(16000)
    assert FbankExtractor(num_mel_bins=40).fit_transform([w])[0].shape == (98, 40)


def test_waveform_checks():
    with pytest.raises(ShapeError):
        check_waveforms([np.zeros((2, 5))])
    with pytest.raises(ContractError):
        check_waveforms([np.array([0.0, np.nan])])
    assert len(check_waveforms(np.zeros(10))) == 1


def test_feature_checks():
    assert len(check_features(np.zeros((3, 20, 80)))) == 3
    with pytest.raises(ShapeError):
        check_features([np.zeros((20, 40))])
    with pytest.raises(ContractError):
        check_features([np.full((20, 80), np.inf)])
    with pytest.raises(ContractError):
        check_features([])


def test_label_checks_expand_subset():
    full = check_labels([[1, 0], [0, 1]], 2, ("b", "i"))
    np.testing.assert_array_equal(full, [[0, 1, 0, 0, 0], [0, 0, 0, 0, 1]])
    with pytest.raises(ContractError):
        check_labels([[2, 0, 0, 0, 0]], 1)
    with pytest.raises(ShapeError):
        check_labels(np.zeros((3, 5)), 2)


def test_params_roundtrip():
    est = StutterDetector(d_model=32, tasks="three")
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert twin.set_params(lr=0.5).lr == 0.5


def test_predict_before_fit():
    with pytest.raises(NotFittedError):
        StutterDetector().predict([np.zeros((30, 80), np.float32)])


def test_fit_predict_score(toy):
    X, y = toy
    est = StutterDetector(**TINY).fit(X, y, groups=np.arange(16) // 2)
    pred = est.predict(X)
    assert pred.shape == (16, 5) and set(np.unique(pred)) <= {0, 1}
    assert est.predict_logits(X).shape == (16, 5, 2)
    assert 0.0 <= est.score(X, y) <= 1.0
    assert list(est.classes_) == ["p", "b", "r", "wr", "i"]
    assert len(est.history_) == 2


def test_holdout_respects_groups(toy):
    X, y = toy
    groups = np.arange(16) // 4
    est = StutterDetector(**TINY, dev_fraction=0.25)
    train_set, dev_set = est._holdout(FeatureSet([str(i) for i in range(16)], X, y, [str(g) for g in groups]))
    assert len(dev_set) == 4 and not set(train_set.speakers) & set(dev_set.speakers)


def test_single_task_with_explicit_dev(toy):
    X, y = toy
    est = StutterDetector(**TINY, tasks="single:/b", head_mode="one_logit")
    est.fit(X[:12], y[:12, 1], X_dev=X[12:], y_dev=y[12:, 1])
    assert est.predict(X).shape == (16, 1)
    assert est.predict_logits(X).shape == (16, 1, 1)


def test_same_seed_same_model(toy):
    X, y = toy
    a = StutterDetector(**TINY, random_state=5).fit(X, y).predict_logits(X)
    b = StutterDetector(**TINY, random_state=5).fit(X, y).predict_logits(X)
    np.testing.assert_array_equal(a, b)


def test_save_and_reload(toy, tmp_path):
    X, y = toy
    est = StutterDetector(**TINY).fit(X, y)
    est.save(tmp_path / "m.sedk")
    back = StutterDetector.from_checkpoint(tmp_path / "m.sedk")
    np.testing.assert_array_equal(back.predict_logits(X), est.predict_logits(X))
    assert back.get_params()["d_model"] == 16


def test_bad_group_count(toy):
    X, y = toy
    with pytest.raises(ContractError):
        StutterDetector(**TINY).fit(X, y, groups=[0, 1])
