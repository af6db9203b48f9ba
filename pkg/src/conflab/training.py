"""Adam optimisation and the training regimes for the dual-head network."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import losses as L
from .autodiff import Tape
from .data import Dataset
from .exceptions import ContractError, TrainingError
from .model import ENCODER, TRAINABLE, ModelParams, forward, init_model, predict, update_running_stats

METHODS = ("baseline", "neg_reward", "neg_reward_fixed", "brier_diversity", "multi_stage")
BINARY_METHODS = METHODS
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
ANNEAL_FLOOR = 0.1
TRACE_COLUMNS = ("epoch", "loss", "mean_reward", "mean_conf", "std_conf", "train_acc", "stage")


@dataclass
class TrainConfig:
    method: str = "baseline"
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 1e-4
    lam: float = 1.0
    nr: L.NegativeRewardParams = field(default_factory=L.NegativeRewardParams)
    beta: float = 0.1
    seed: int = 42
    stage_epochs: tuple[int, int, int] | None = None

    def __post_init__(self):
        if self.method not in METHODS + ("distill",):
            raise ContractError(f"unknown training method {self.method!r}")
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 2:
            raise ContractError(
                f"TrainConfig needs lr > 0, epochs >= 1, batch_size >= 2 "
                f"(got {self.lr}, {self.epochs}, {self.batch_size})"
            )
        if self.stage_epochs is not None:
            self.stage_epochs = tuple(int(s) for s in self.stage_epochs)
            if len(self.stage_epochs) != 3 or min(self.stage_epochs) < 0:
                raise ContractError(f"stage_epochs must be three nonnegative ints, got {self.stage_epochs}")

    def stages(self) -> tuple[int, int, int]:
        if self.stage_epochs is not None:
            return self.stage_epochs
        a = self.epochs // 3
        b = (2 * self.epochs) // 3 - a
        return a, b, self.epochs - a - b


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    mean_reward: float
    mean_conf: float
    std_conf: float
    train_acc: float
    stage: int
    std_conf_correct: float


@dataclass
class TrainingTrace:
    records: list[EpochRecord] = field(default_factory=list)
    stage_boundaries: list[int] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for r in self.records:
                w.writerow([r.epoch, *(f"{getattr(r, c):.6g}" for c in TRACE_COLUMNS[1:-1]), r.stage])


@dataclass
class TrainedModel:
    params: ModelParams
    method: str
    seed: int

    def outputs(self, X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(class_probs, confidence[n], logits) in eval mode."""
        out = predict(self.params, X)
        return out.class_probs.data, out.confidence.data[:, 0], out.logits.data


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, wd: float, t: int):
    """One Adam update with decoupled weight decay; returns ``(new_params, new_state)``.

    Only names present in ``grads`` are updated; the rest are passed through.
    """
    if t < 1:
        raise ContractError(f"adam_step: t must be >= 1, got {t}")
    new_params = dict(params)
    m, v = dict(state.m), dict(state.v)
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ContractError(f"adam_step: gradient for {name} has shape {g.shape}, param {p.shape}")
        mk = ADAM_BETA1 * m.get(name, 0.0) + (1 - ADAM_BETA1) * g
        vk = ADAM_BETA2 * v.get(name, 0.0) + (1 - ADAM_BETA2) * g * g
        step = (mk / c1) / (np.sqrt(vk / c2) + ADAM_EPS)
        new_params[name] = p - lr * step - lr * wd * p
        m[name], v[name] = mk, vk
    return new_params, AdamState(m, v)


def _batches(perm: np.ndarray, size: int) -> list[np.ndarray]:
    out = [perm[i:i + size] for i in range(0, len(perm), size)]
    if len(out) > 1 and len(out[-1]) < 2:
        # batchnorm needs two rows; fold a singleton tail into the previous batch
        out[-2] = np.concatenate([out[-2], out.pop()])
    return out


class _Objective:
    """Assembles the per-method loss for one minibatch."""

    def __init__(self, config: TrainConfig, conf_targets=None):
        self.cfg = config
        self.targets = conf_targets
        self.alpha = config.nr.alpha
        self.nr = config.nr
        self.initial_error = None

    def start_epoch(self, epoch: int, last_error: float | None) -> None:
        cfg = self.cfg
        if cfg.method != "neg_reward_fixed":
            return
        total = max(cfg.epochs - 1, 1)
        base = cfg.nr.alpha
        self.alpha = L.cosine_anneal(min(epoch, total), total, base, ANNEAL_FLOOR * base)
        if last_error is not None and self.initial_error is None:
            self.initial_error = last_error
        scale = 1.0
        if self.initial_error:
            scale = last_error / self.initial_error
        self.nr = replace(cfg.nr, lambda2=cfg.nr.lambda2 * scale)

    def __call__(self, out, y, idx, stage: int):
        cfg = self.cfg
        ok = L.correctness(out.class_probs, y)
        conf = out.confidence
        method = cfg.method
        if method == "multi_stage":
            if stage == 1:
                return L.cross_entropy(out.class_probs, y), None
            if stage == 2:
                return L.confidence_mse(conf, ok), None
            method = "baseline"
        if method == "baseline":
            return L.composite_loss(L.cross_entropy(out.class_probs, y), L.confidence_mse(conf, ok), cfg.lam), None
        if method == "neg_reward":
            rewards, term = L.negative_reward_simple(ok, conf, cfg.nr)
            return ad.add(L.cross_entropy(out.class_probs, y), term), float(rewards.data.mean())
        if method == "neg_reward_fixed":
            reward = L.negative_reward_full(y, out.class_probs, conf, 1.0 - conf.data, self.nr)
            loss = ad.add(L.cross_entropy(out.class_probs, y), ad.scale(reward, -self.alpha))
            return loss, reward.item()
        if method == "brier_diversity":
            return ad.add(L.cross_entropy(out.class_probs, y), L.brier_diversity(conf, ok, cfg.beta)), None
        if method == "distill":
            target = self.targets[idx]
            return L.composite_loss(L.cross_entropy(out.class_probs, y), L.confidence_mse(conf, target), cfg.lam), None
        raise ContractError(f"unknown method {method!r}")


def _stage_of(epoch: int, config: TrainConfig) -> int:
    if config.method != "multi_stage":
        return 0
    s1, s2, _ = config.stages()
    if epoch < s1:
        return 1
    if epoch < s1 + s2:
        return 2
    return 3


def train(
    config: TrainConfig,
    train_set: Dataset,
    val_set: Dataset | None = None,
    conf_targets: np.ndarray | None = None,
    init: ModelParams | None = None,
) -> tuple[TrainedModel, TrainingTrace]:
    """Minibatch Adam on the configured objective.

    ``val_set`` is accepted for interface symmetry; training uses fixed epochs
    without early stopping. ``conf_targets`` (one per training row) are only
    read by the ``distill`` method. ``init`` warm-starts from existing
    parameters instead of a fresh seeded initialisation.
    """
    if train_set.n < 2:
        raise ContractError("train: training set needs at least 2 samples")
    if config.method == "distill":
        if conf_targets is None or len(conf_targets) != train_set.n:
            raise ContractError("train: distill needs one confidence target per training row")
        conf_targets = np.asarray(conf_targets, dtype=np.float64)
    X, y = train_set.features, train_set.labels
    k = max(train_set.num_classes, 2) if init is None else init.num_classes
    params = init.copy() if init is not None else init_model(X.shape[1], k, config.seed)
    shuffle_seq, drop_seq = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    drop_rng = np.random.default_rng(drop_seq)
    state = AdamState()
    objective = _Objective(config, conf_targets)
    trace = TrainingTrace()
    if config.method == "multi_stage":
        s1, s2, _ = config.stages()
        trace.stage_boundaries = [s1, s1 + s2]

    t = 0
    last_error = None
    for epoch in range(config.epochs):
        stage = _stage_of(epoch, config)
        objective.start_epoch(epoch, last_error)
        frozen = stage == 2
        names = ("Wc", "bc") if frozen else TRAINABLE
        losses, rewards, confs, oks = [], [], [], []
        for idx in _batches(shuffle_rng.permutation(train_set.n), config.batch_size):
            leaves = params.leaves()
            with Tape() as tape:
                out = forward(params, X[idx], mode="train", rng=drop_rng, leaves=leaves)
                loss, reward = objective(out, y[idx], idx, stage)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}", epoch=epoch)
            grads = ad.backward(loss, tape)
            if not frozen:
                update_running_stats(params, out.bn_stats, len(idx))
            t += 1
            new, state = adam_step(
                params.arrays, {n: grads[leaves[n]] for n in names}, state,
                config.lr, config.weight_decay, t,
            )
            params.arrays = new
            c = out.confidence.data[:, 0]
            ok = L.correctness(out.class_probs, y[idx])
            if reward is None:
                reward = _telemetry_reward(ok, c, config.nr)
            losses.append(value * len(idx))
            rewards.append(reward * len(idx))
            confs.append(c)
            oks.append(ok)
        if not params.is_finite():
            raise TrainingError(f"parameters became non-finite at epoch {epoch}", epoch=epoch)
        c = np.concatenate(confs)
        ok = np.concatenate(oks)
        last_error = 1.0 - ok.mean()
        trace.records.append(EpochRecord(
            epoch=epoch,
            loss=sum(losses) / len(c),
            mean_reward=sum(rewards) / len(c),
            mean_conf=float(c.mean()),
            std_conf=float(c.std()),
            train_acc=float(ok.mean()),
            stage=stage,
            std_conf_correct=float(c[ok].std()) if ok.any() else 0.0,
        ))
    return TrainedModel(params, config.method, config.seed), trace


def _telemetry_reward(ok: np.ndarray, c: np.ndarray, p: L.NegativeRewardParams) -> float:
    r = np.where(ok, -p.lambda1 * (1 - c) ** 2, -p.lambda2 * c ** 2)
    return float(r.mean())


def train_multi_stage(config: TrainConfig, train_set: Dataset, val_set: Dataset | None = None):
    """Classification, then confidence with encoder and class head frozen, then joint."""
    return train(replace(config, method="multi_stage"), train_set, val_set)


def variance_collapse_sim(c0: Sequence[float], eta_lambda: float, steps: int) -> np.ndarray:
    """Iterate ``c <- c - eta_lambda * (c - 1)`` and return pairwise gaps per step.

    Returns an array of shape ``(steps + 1, m, m)`` holding ``|c_t[a] - c_t[b]|``.
    """
    if not 0.0 < eta_lambda < 2.0:
        raise ContractError(f"variance_collapse_sim: eta_lambda must be in (0, 2), got {eta_lambda}")
    c = np.asarray(c0, dtype=np.float64)
    out = np.empty((steps + 1, len(c), len(c)))
    out[0] = np.abs(c[:, None] - c[None, :])
    for s in range(1, steps + 1):
        c = c - eta_lambda * (c - 1.0)
        out[s] = np.abs(c[:, None] - c[None, :])
    return out
