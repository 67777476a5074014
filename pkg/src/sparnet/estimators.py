"""scikit-learn style wrappers around the source model and the online adapter."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .engine import AdaptState, EngineConfig, bn_adapt_predict, source_predict, sparnet_step, tent_step
from .importance import compute_importance
from .model import RUNNING_STATS, Architecture, BATCH_STATS, predict_proba, pretrain_source


def _check_features(est, X, min_samples=1):
    X = check_array(X, dtype=float, ensure_min_samples=min_samples)
    if X.shape[1] != est.n_features_in_:
        raise ValueError(f"X has {X.shape[1]} features, {type(est).__name__} was fitted with {est.n_features_in_}")
    return X


class SourceClassifier(ClassifierMixin, BaseEstimator):
    """The normalised MLP trained on labelled source data.

    ``fit`` raises :class:`~sparnet.exceptions.TrainingFailedError` when the
    error on the validation data (training data if none is given) stays
    above ``target_error``.
    """

    def __init__(self, hidden=(64,), epochs=30, batch_size=128, lr=3e-3, target_error=0.05,
                 label_smoothing=0.2, random_state=0):
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.target_error = target_error
        self.label_smoothing = label_smoothing
        self.random_state = random_state

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_X_y(X, y, dtype=float)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        self.n_features_in_ = X.shape[1]
        if X_val is not None:
            X_val, y_val = check_X_y(X_val, y_val, dtype=float)
            y_val = np.searchsorted(self.classes_, y_val)
        else:
            X_val, y_val = X, codes
        arch = Architecture(X.shape[1], tuple(self.hidden), len(self.classes_))
        rng = np.random.default_rng(self.random_state)
        self.params_ = pretrain_source(
            X, codes, arch, X_val, y_val, epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
            target_error=self.target_error, label_smoothing=self.label_smoothing, rng=rng,
        )
        # per-coordinate spread of the training marginal, used by augmentations
        self.feature_scale_ = float(np.sqrt(X.var(axis=0).mean()))
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        return predict_proba(self.params_, _check_features(self, X), RUNNING_STATS)

    def predict(self, X):
        check_is_fitted(self, "params_")
        return self.classes_[self.predict_proba(X).argmax(axis=1)]


class SparnetAdapter(ClassifierMixin, BaseEstimator):
    """Online test-time adapter.

    ``fit`` trains the source model on labelled data and computes the
    parameter importance; after that, unlabeled batches are fed through
    :meth:`adapt_predict` (predict, then update) or :meth:`partial_fit`
    (update only). ``method`` picks SPARNet or one of the baselines.
    """

    def __init__(self, method="sparnet", lam=1.8, beta=1.0, temperature_scale=1.0, tau_gradient=True,
                 alpha=0.999, n_aug=8, optimizer="adam", lr=1e-3, update="all", threshold=None,
                 use_gem=True, use_sce=True, use_reg=True, n_importance=512, source_params=None,
                 random_state=0):
        self.method = method
        self.lam = lam
        self.beta = beta
        self.temperature_scale = temperature_scale
        self.tau_gradient = tau_gradient
        self.alpha = alpha
        self.n_aug = n_aug
        self.optimizer = optimizer
        self.lr = lr
        self.update = update
        self.threshold = threshold
        self.use_gem = use_gem
        self.use_sce = use_sce
        self.use_reg = use_reg
        self.n_importance = n_importance
        self.source_params = source_params
        self.random_state = random_state

    def engine_config(self):
        return EngineConfig(
            method=self.method, threshold=self.threshold, lam=self.lam, beta=self.beta,
            temperature_scale=self.temperature_scale, tau_gradient=self.tau_gradient, alpha=self.alpha,
            n_aug=self.n_aug, optimizer=self.optimizer, lr=self.lr, use_gem=self.use_gem,
            use_sce=self.use_sce, use_reg=self.use_reg, update=self.update, seed=self.random_state,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        source = SourceClassifier(**(self.source_params or {}))
        if "random_state" not in (self.source_params or {}):
            source.set_params(random_state=self.random_state)
        source.fit(X, y)
        self.source_ = source
        self.classes_ = source.classes_
        self.n_features_in_ = source.n_features_in_
        self.feature_scale_ = source.feature_scale_
        cfg = self.engine_config()
        self.importance_ = compute_importance(source.params_, X[: self.n_importance]) if cfg.needs_importance else None
        self.state_ = AdaptState(source.params_, cfg, self.importance_)
        self.n_steps_ = 0
        return self

    def reset(self):
        """Forget all adaptation and start again from the source model."""
        check_is_fitted(self, "state_")
        self.state_ = AdaptState(self.source_.params_, self.engine_config(), self.importance_)
        self.n_steps_ = 0
        return self

    def _step(self, X):
        check_is_fitted(self, "state_")
        X = _check_features(self, X, min_samples=2)
        state = self.state_
        if self.method == "sparnet":
            record, _ = sparnet_step(state, X, self.feature_scale_)
        elif self.method == "tent":
            record, _ = tent_step(state, X)
        elif self.method == "bn_adapt":
            record = bn_adapt_predict(state.student, X)
        else:
            record = source_predict(state.student, X)
        self.n_steps_ += 1
        self.last_record_ = record
        return record

    def partial_fit(self, X, y=None):
        """Adapt on one unlabeled batch; ``y`` is ignored."""
        self._step(X)
        return self

    def adapt_predict(self, X):
        """Labels emitted for ``X`` by the current model, then one update on ``X``."""
        return self.classes_[self._step(X).predicted]

    def predict_proba(self, X):
        """Current-model probabilities on ``X`` without adapting.

        Uses the batch's own normalisation statistics (the source model in
        running-statistics mode for ``method='source'``); SPARNet averages
        student and teacher.
        """
        check_is_fitted(self, "state_")
        if self.method == "source":
            return predict_proba(self.state_.student, _check_features(self, X), RUNNING_STATS)
        X = _check_features(self, X, min_samples=2)
        probs = predict_proba(self.state_.student, X, BATCH_STATS)
        if self.method == "sparnet":
            probs = 0.5 * (probs + predict_proba(self.state_.teacher.params, X, BATCH_STATS))
        return probs

    def predict(self, X):
        check_is_fitted(self, "state_")
        return self.classes_[self.predict_proba(X).argmax(axis=1)]
