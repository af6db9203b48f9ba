"""Post-hoc calibrators: temperature scaling, Platt scaling and isotonic regression.

Each calibrator has a functional form (``fit_*`` returning a
:class:`CalibrationMap`) and a scikit-learn style estimator wrapping it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ContractError, FitError
from .metrics import evaluate
from .validation import check_logits, check_scores

T_MIN, T_MAX = 0.05, 20.0
SCORE_CLIP = 1e-7
KINDS = ("identity", "temperature", "platt", "isotonic")


@dataclass
class CalibrationMap:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown calibration kind {self.kind!r}")
        if self.kind == "temperature" and not self.params.get("T", 0) > 0:
            raise ContractError("temperature map needs T > 0")
        if self.kind == "isotonic":
            x = np.asarray(self.params["breakpoints"], dtype=np.float64)
            y = np.asarray(self.params["values"], dtype=np.float64)
            if len(x) != len(y) or len(x) == 0:
                raise ContractError("isotonic map needs equally long, nonempty breakpoints and values")
            if np.any(np.diff(x) <= 0) or np.any(np.diff(y) < 0):
                raise ContractError("isotonic map needs increasing breakpoints and nondecreasing values")
            self.params = {"breakpoints": x, "values": y}

    def to_json(self) -> str:
        params = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()}
        return json.dumps({"kind": self.kind, "params": params})

    @classmethod
    def from_json(cls, text: str) -> "CalibrationMap":
        doc = json.loads(text)
        return cls(doc["kind"], doc.get("params", {}))


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _temperature_nll(z: np.ndarray, y: np.ndarray, T: float) -> tuple[float, float]:
    """Mean NLL of softmax(z / T) and its derivative in T."""
    s = z / T
    m = s.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(s - m).sum(axis=1, keepdims=True)))[:, 0]
    picked = z[np.arange(len(y)), y]
    nll = float(np.mean(lse - picked / T))
    p = softmax(s)
    grad = float(np.mean(picked - (p * z).sum(axis=1)) / T ** 2)
    return nll, grad


def fit_temperature(logits, labels, iters: int = 1000, lr: float = 0.1) -> CalibrationMap:
    """Gradient descent on validation NLL starting from T = 1, clamped to [0.05, 20]."""
    z = check_logits(logits)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(y) != len(z) or len(y) == 0:
        raise ContractError("fit_temperature: need one label per logit row and n >= 1")
    T = 1.0
    for _ in range(iters):
        nll, grad = _temperature_nll(z, y, T)
        if not np.isfinite(nll):
            raise FitError(f"fit_temperature: non-finite NLL at T={T}")
        T = min(max(T - lr * grad, T_MIN), T_MAX)
    return CalibrationMap("temperature", {"T": T})


def _logit(scores: np.ndarray) -> np.ndarray:
    s = np.clip(scores, SCORE_CLIP, 1.0 - SCORE_CLIP)
    return np.log(s / (1.0 - s))


def fit_platt(scores, correct, iters: int = 2000, lr: float = 1.0) -> CalibrationMap:
    """Logistic fit ``1 / (1 + exp(a * logit(s) + b))`` by gradient descent on log loss.

    The logit is standardised during fitting and the coefficients mapped back,
    which keeps one learning rate stable across score ranges. The slope is
    projected onto ``a <= 0`` so the fitted map never reverses score order.
    """
    s = check_scores(scores)
    t = np.asarray(correct, dtype=np.float64).reshape(-1)
    if len(t) != len(s):
        raise ContractError("fit_platt: scores and outcomes differ in length")
    if t.min() == t.max():
        raise FitError("fit_platt: both outcome values must be present")
    u = _logit(s)
    mu, sd = u.mean(), u.std()
    constant = sd < 1e-9
    sd = 1.0 if constant else sd
    v = np.zeros_like(u) if constant else (u - mu) / sd
    # start at the identity map: a = -1 on the raw logit
    a, b = -sd, -mu
    for _ in range(iters):
        p = 1.0 / (1.0 + np.exp(np.clip(a * v + b, -500, 500)))
        # d(logloss)/d(a*v+b) = t - p for this sign convention
        r = t - p
        # a <= 0 keeps the map nondecreasing in the score
        a = min(a - lr * float(np.mean(r * v)), 0.0)
        b -= lr * float(np.mean(r))
    return CalibrationMap("platt", {"a": a / sd, "b": b - a * mu / sd})


def fit_isotonic(scores, correct) -> CalibrationMap:
    """Pool-adjacent-violators on score-sorted outcomes, ties pooled first."""
    s = check_scores(scores)
    t = np.asarray(correct, dtype=np.float64).reshape(-1)
    if len(t) != len(s) or len(s) == 0:
        raise ContractError("fit_isotonic: need n >= 1 and equally long scores and outcomes")
    xs, inverse = np.unique(s, return_inverse=True)
    weights = np.bincount(inverse).astype(np.float64)
    sums = np.bincount(inverse, weights=t)
    fitted = pav(sums / weights, weights)
    return CalibrationMap("isotonic", {"breakpoints": xs, "values": fitted})


def pav(y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted least-squares nondecreasing fit of ``y``."""
    means, weights, counts = [], [], []
    for yi, wi in zip(y, w):
        means.append(float(yi))
        weights.append(float(wi))
        counts.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, c2 = means.pop(), weights.pop(), counts.pop()
            m1, w1 = means[-1], weights[-1]
            weights[-1] = w1 + w2
            means[-1] = (m1 * w1 + m2 * w2) / weights[-1]
            counts[-1] += c2
    return np.repeat(means, counts)


def apply_calibration(cmap: CalibrationMap, x) -> np.ndarray:
    """Apply a fitted map.

    Temperature maps take ``[n, K]`` logits and return calibrated class
    probabilities. Platt and isotonic maps take 1-d scores in [0, 1].
    Identity returns its input unchanged.
    """
    if cmap.kind == "identity":
        return np.asarray(x, dtype=np.float64)
    if cmap.kind == "temperature":
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim != 2:
            raise ContractError("temperature calibration needs [n, K] logits")
        return softmax(arr / cmap.params["T"])
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ContractError(f"{cmap.kind} calibration needs 1-d scores, got shape {arr.shape}")
    s = check_scores(arr)
    if cmap.kind == "platt":
        z = np.clip(cmap.params["a"] * _logit(s) + cmap.params["b"], -500, 500)
        return 1.0 / (1.0 + np.exp(z))
    xs, ys = cmap.params["breakpoints"], cmap.params["values"]
    pos = np.clip(np.searchsorted(xs, s, side="right") - 1, 0, len(xs) - 1)
    return ys[pos]


def max_probability(probs: np.ndarray) -> np.ndarray:
    return np.asarray(probs).max(axis=1)


@dataclass
class CompressionReport:
    delta_var: float
    bound: float
    ece_after: float
    holds: bool


def compression_report(before, after, accuracy: float, correct) -> CompressionReport:
    """Variance drop from calibration against ``(mean_before - acc)^2 / 4 - ECE_after^2``."""
    before = np.asarray(before, dtype=np.float64).reshape(-1)
    after = np.asarray(after, dtype=np.float64).reshape(-1)
    if before.shape != after.shape:
        raise ContractError("compression_report: before and after differ in length")
    ece_after = evaluate(after, correct).ece
    delta = float(before.var() - after.var())
    bound = (float(before.mean()) - accuracy) ** 2 / 4.0 - ece_after ** 2
    return CompressionReport(delta, bound, ece_after, delta >= bound)


# ---------------------------------------------------------------------------
# scikit-learn style wrappers
# ---------------------------------------------------------------------------


class TemperatureScaler(BaseEstimator, TransformerMixin):
    """Fit a single temperature on validation logits.

    Parameters
    ----------
    iters : int
        Gradient descent iterations.
    lr : float
        Step size on the temperature.
    """

    def __init__(self, iters: int = 1000, lr: float = 0.1):
        self.iters = iters
        self.lr = lr

    def fit(self, X, y):
        self.map_ = fit_temperature(X, y, self.iters, self.lr)
        self.temperature_ = self.map_.params["T"]
        return self

    def transform(self, X):
        check_is_fitted(self, "map_")
        return apply_calibration(self.map_, X)

    predict_proba = transform


class PlattCalibrator(BaseEstimator, TransformerMixin):
    """Logistic recalibration of a scalar confidence score."""

    def __init__(self, iters: int = 2000, lr: float = 1.0):
        self.iters = iters
        self.lr = lr

    def fit(self, X, y):
        self.map_ = fit_platt(X, y, self.iters, self.lr)
        self.a_, self.b_ = self.map_.params["a"], self.map_.params["b"]
        return self

    def transform(self, X):
        check_is_fitted(self, "map_")
        return apply_calibration(self.map_, np.asarray(X, dtype=np.float64).reshape(-1))

    predict = transform


class IsotonicCalibrator(BaseEstimator, TransformerMixin):
    """Monotone step-function recalibration via PAV."""

    def fit(self, X, y):
        self.map_ = fit_isotonic(X, y)
        return self

    def transform(self, X):
        check_is_fitted(self, "map_")
        return apply_calibration(self.map_, np.asarray(X, dtype=np.float64).reshape(-1))

    predict = transform


CALIBRATORS = {
    "temperature": TemperatureScaler,
    "platt": PlattCalibrator,
    "isotonic": IsotonicCalibrator,
}
