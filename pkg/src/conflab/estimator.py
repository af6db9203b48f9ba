"""scikit-learn compatible wrapper around the dual-head network and its trainers."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .data import Dataset
from .exceptions import ContractError
from .losses import NegativeRewardParams
from .metrics import evaluate
from .model import uncertainty as _uncertainty, predict as _predict
from .training import TrainConfig, train
from .validation import check_features


class ConfidenceNetClassifier(BaseEstimator, ClassifierMixin):
    """Dual-head MLP classifier that also emits a per-sample confidence.

    Parameters
    ----------
    method : str
        One of ``baseline``, ``neg_reward``, ``neg_reward_fixed``,
        ``brier_diversity`` or ``multi_stage``.
    epochs, batch_size, lr, weight_decay : training schedule.
    lam : float
        Weight of the confidence loss in the joint objective.
    alpha : float
        Penalty strength for the negative-reward methods.
    beta : float
        Diversity weight for ``brier_diversity``.
    random_state : int
        Seed for initialisation, shuffling and dropout.

    Attributes
    ----------
    classes_ : ndarray
    model_ : TrainedModel
    trace_ : TrainingTrace
    """

    def __init__(
        self,
        method="baseline",
        epochs=200,
        batch_size=32,
        lr=1e-3,
        weight_decay=1e-4,
        lam=1.0,
        alpha=1.0,
        lambda1=0.5,
        lambda2=2.0,
        kappa1=0.2,
        kappa2=0.1,
        mu1=0.3,
        mu2=1.0,
        beta=0.1,
        random_state=42,
    ):
        self.method = method
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.lam = lam
        self.alpha = alpha
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.kappa1 = kappa1
        self.kappa2 = kappa2
        self.mu1 = mu1
        self.mu2 = mu2
        self.beta = beta
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        nr = NegativeRewardParams(
            lambda1=self.lambda1, lambda2=self.lambda2, kappa1=self.kappa1, kappa2=self.kappa2,
            mu1=self.mu1, mu2=self.mu2, alpha=self.alpha,
        )
        return TrainConfig(
            method=self.method, epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
            weight_decay=self.weight_decay, lam=self.lam, nr=nr, beta=self.beta,
            seed=self.random_state,
        )

    def fit(self, X, y):
        X = check_features(X)
        y_raw = np.asarray(y).reshape(-1)
        if len(y_raw) != len(X):
            raise ContractError(f"{len(X)} samples but {len(y_raw)} labels")
        self.classes_, encoded = np.unique(y_raw, return_inverse=True)
        if len(self.classes_) < 2:
            raise ContractError("fit: need at least two classes")
        self.n_features_in_ = X.shape[1]
        ds = Dataset(X, encoded.astype(np.int64), "fit")
        self.model_, self.trace_ = train(self._config(), ds)
        return self

    def _outputs(self, X):
        check_is_fitted(self, "model_")
        return _predict(self.model_.params, check_features(X, self.n_features_in_))

    def predict_proba(self, X) -> np.ndarray:
        return self._outputs(X).class_probs.data.copy()

    def decision_function(self, X) -> np.ndarray:
        """Pre-softmax logits."""
        return self._outputs(X).logits.data.copy()

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        return self.classes_[proba.argmax(axis=1)]

    def predict_confidence(self, X) -> np.ndarray:
        return self._outputs(X).confidence.data[:, 0].copy()

    def predict_uncertainty(self, X) -> np.ndarray:
        return _uncertainty(self._outputs(X))[:, 0]

    def calibration_report(self, X, y, n_bins: int = 15):
        """EvalReport of the confidence head on labelled data."""
        y = np.asarray(y).reshape(-1)
        if len(y) != len(X):
            raise ContractError(f"{len(X)} samples but {len(y)} labels")
        correct = self.predict(X) == y
        return evaluate(self.predict_confidence(X), correct, n_bins)
