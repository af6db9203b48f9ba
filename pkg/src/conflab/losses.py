"""Training objectives built on the autodiff tape.

Every loss takes confidence as a ``[n, 1]`` :class:`~conflab.autodiff.Tensor`
and returns a scalar tensor so it can be differentiated end to end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ContractError

DIVERSITY_EPS = 1e-6


@dataclass
class NegativeRewardParams:
    """Reward coefficients; defaults follow the reference reward implementation."""

    lambda1: float = 0.5
    lambda2: float = 2.0
    kappa1: float = 0.2
    kappa2: float = 0.1
    mu1: float = 0.3
    mu2: float = 1.0
    alpha: float = 1.0
    certain_threshold: float = 0.5

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ContractError(f"NegativeRewardParams.{k} must be >= 0, got {v}")
        if not 0.0 < self.certain_threshold < 1.0:
            raise ContractError("certain_threshold must lie in (0, 1)")


def _column(values, n: int, what: str) -> Tensor:
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.shape[0] != n:
        raise ContractError(f"{what}: expected {n} entries, got {arr.shape[0]}")
    return Tensor(arr.reshape(n, 1))


def _check_conf(conf: Tensor) -> int:
    if conf.data.ndim != 2 or conf.shape[1] != 1:
        raise ContractError(f"confidence must have shape [n, 1], got {conf.shape}")
    return conf.shape[0]


def one_hot(labels, num_classes: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise ContractError(f"labels must lie in [0, {num_classes}), got range [{y.min()}, {y.max()}]")
    out = np.zeros((y.size, num_classes))
    out[np.arange(y.size), y] = 1.0
    return out


def correctness(class_probs, labels) -> np.ndarray:
    probs = class_probs.data if isinstance(class_probs, Tensor) else np.asarray(class_probs)
    return probs.argmax(axis=1) == np.asarray(labels).reshape(-1)


def cross_entropy(class_probs: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood; probabilities are clamped at 1e-12 before the log."""
    n, k = class_probs.shape
    target = Tensor(one_hot(labels, k))
    if target.shape[0] != n:
        raise ContractError(f"cross_entropy: {n} rows but {target.shape[0]} labels")
    picked = ad.total(ad.mul(ad.safe_log(class_probs), target), axis=1)
    return ad.scale(ad.mean(picked), -1.0)


def confidence_mse(conf: Tensor, target) -> Tensor:
    """mean((c - target)^2); with a 0/1 correctness target this is the Brier score."""
    n = _check_conf(conf)
    return ad.mean(ad.square(ad.sub(conf, _column(target, n, "confidence_mse"))))


def negative_reward_simple(correct, conf: Tensor, p: NegativeRewardParams):
    """Per-sample rewards and the loss term ``-alpha * mean(r)``.

    Correct samples receive ``-lambda1 (1 - c)^2``, incorrect ones ``-lambda2 c^2``.
    """
    n = _check_conf(conf)
    ok = _column(correct, n, "negative_reward_simple")
    wrong = Tensor(1.0 - ok.data)
    low = ad.scale(ad.mul(ok, ad.square(ad.shift(ad.scale(conf, -1.0), 1.0))), -p.lambda1)
    high = ad.scale(ad.mul(wrong, ad.square(conf)), -p.lambda2)
    rewards = ad.total(ad.add(low, high), axis=1)
    return rewards, ad.scale(ad.mean(rewards), -p.alpha)


def negative_reward_full(labels, class_probs, conf: Tensor, uncert, p: NegativeRewardParams) -> Tensor:
    """Three-case mean reward: confident-correct, confident-wrong, uncertain.

    A sample is confident when ``uncert < p.certain_threshold``. The uncertain
    branch is constant in ``conf`` and contributes no gradient.
    """
    n = _check_conf(conf)
    ok = correctness(class_probs, labels).astype(np.float64)
    certain = (np.asarray(uncert, dtype=np.float64).reshape(-1) < p.certain_threshold).astype(np.float64)
    if len(ok) != n or len(certain) != n:
        raise ContractError("negative_reward_full: labels, probabilities, confidence and uncertainty disagree in length")
    cc = Tensor((ok * certain).reshape(n, 1))
    cw = Tensor(((1 - ok) * certain).reshape(n, 1))
    flat = Tensor(((1 - certain) * (p.kappa1 * ok - p.kappa2)).reshape(n, 1))

    one_minus = ad.shift(ad.scale(conf, -1.0), 1.0)
    r_cc = ad.mul(cc, ad.shift(ad.scale(ad.square(one_minus), -p.lambda1), p.mu1))
    r_cw = ad.mul(cw, ad.shift(ad.scale(ad.square(conf), -p.lambda2), -p.mu2))
    return ad.mean(ad.add(ad.add(r_cc, r_cw), flat))


def confidence_std(conf: Tensor) -> Tensor:
    """Population standard deviation of a ``[n, 1]`` confidence column."""
    n = _check_conf(conf)
    centering = Tensor(np.eye(n) - 1.0 / n)
    return ad.sqrt(ad.mean(ad.square(ad.matmul(centering, conf))))


def brier_diversity(conf: Tensor, correct, beta: float, eps: float = DIVERSITY_EPS) -> Tensor:
    """Brier score against correctness minus ``beta * log(std(c) + eps)``."""
    n = _check_conf(conf)
    if n < 2:
        raise ContractError("brier_diversity: need at least 2 samples for a spread")
    brier = confidence_mse(conf, np.asarray(correct, dtype=np.float64))
    spread = ad.scale(ad.log(ad.shift(confidence_std(conf), eps)), -beta)
    return ad.add(brier, spread)


def composite_loss(cls_loss, conf_loss, lam: float):
    """``cls_loss + lam * conf_loss``; works on tensors or plain floats."""
    if isinstance(cls_loss, Tensor):
        return ad.add(cls_loss, ad.scale(conf_loss, lam))
    return cls_loss + lam * conf_loss


def cosine_anneal(step: int, total: int, base: float, floor: float) -> float:
    if total < 1 or not 0 <= step <= total:
        raise ContractError(f"cosine_anneal: need 0 <= step <= total and total >= 1, got {step}/{total}")
    return floor + 0.5 * (base - floor) * (1.0 + math.cos(math.pi * step / total))
