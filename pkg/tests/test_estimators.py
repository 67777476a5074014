import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from sparnet import SourceClassifier, SparnetAdapter
from sparnet.exceptions import TrainingFailedError
from sparnet.streambench import build_stream, make_source_task


@pytest.fixture(scope="module")
def task():
    return make_source_task(d=8, n_classes=3, seed=1, n_train=600, n_holdout=300, sigma=0.2)


def test_params_and_clone():
    est = SparnetAdapter(lam=1.4, beta=0.7)
    assert est.get_params()["lam"] == 1.4
    other = clone(est).set_params(beta=1.3)
    assert other.beta == 1.3 and est.beta == 0.7
    assert clone(SourceClassifier(hidden=(5,))).hidden == (5,)


def test_source_classifier_fit_predict_and_labels(task):
    names = np.array(["a", "b", "c"])[task.y_train]
    clf = SourceClassifier(hidden=(16,), epochs=20, target_error=0.3).fit(task.x_train, names)
    assert list(clf.classes_) == ["a", "b", "c"]
    pred = clf.predict(task.x_holdout)
    assert np.mean(pred == np.array(["a", "b", "c"])[task.y_holdout]) > 0.7
    np.testing.assert_allclose(clf.predict_proba(task.x_holdout[:5]).sum(axis=1), 1.0)
    assert 0 < clf.score(task.x_holdout, np.array(["a", "b", "c"])[task.y_holdout]) <= 1
    with pytest.raises(ValueError):
        clf.predict(task.x_holdout[:, :3])


def test_source_classifier_validation(task):
    with pytest.raises(NotFittedError):
        SourceClassifier().predict(task.x_holdout)
    with pytest.raises(ValueError):
        SourceClassifier().fit(task.x_train, np.zeros(len(task.x_train)))
    with pytest.raises(TrainingFailedError):
        SourceClassifier(hidden=(4,), epochs=1, target_error=0.0).fit(task.x_train, task.y_train)


@pytest.mark.parametrize("method", ["sparnet", "tent", "bn_adapt", "source"])
def test_adapter_stream_loop(task, method):
    est = SparnetAdapter(method=method, n_aug=2, n_importance=64,
                         source_params=dict(hidden=(16,), epochs=20, target_error=0.3))
    est.fit(task.x_train, task.y_train)
    stream = build_stream(task, batches_per_domain=2, batch_size=32, seed=0)
    wrong = 0
    for batch in stream:
        wrong += int((est.adapt_predict(batch.x) != batch.labels).sum())
    assert est.n_steps_ == len(stream)
    assert wrong / (len(stream) * 32) < 0.6
    probs = est.predict_proba(stream.batch(0).x)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)
    moved = not np.array_equal(est.state_.student.theta, est.source_.params_.theta)
    assert moved == (method in ("sparnet", "tent"))
    est.reset()
    assert est.n_steps_ == 0 and np.array_equal(est.state_.student.theta, est.source_.params_.theta)


def test_adapter_determinism(task):
    kw = dict(n_aug=2, n_importance=32, source_params=dict(hidden=(8,), epochs=5, target_error=1.0), random_state=3)
    x = task.x_holdout[:40]
    a = SparnetAdapter(**kw).fit(task.x_train, task.y_train)
    b = SparnetAdapter(**kw).fit(task.x_train, task.y_train)
    for _ in range(3):
        a.partial_fit(x)
        b.partial_fit(x)
    assert np.array_equal(a.state_.student.theta, b.state_.student.theta)
    with pytest.raises(ValueError):
        a.partial_fit(x[:1])
