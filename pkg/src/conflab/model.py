"""Dual-head calibration network: shared encoder, softmax class head, sigmoid confidence head."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ContractError

HIDDEN = 64
DROPOUT = 0.1
BN_MOMENTUM = 0.9
BN_EPS = 1e-5
CHECKPOINT_MAGIC = "CONFLAB-MODEL-v1"

TRAINABLE = ("W1", "b1", "gamma1", "beta1", "W2", "b2", "gamma2", "beta2", "Wp", "bp", "Wc", "bc")
ENCODER = ("W1", "b1", "gamma1", "beta1", "W2", "b2", "gamma2", "beta2")
RUNNING = ("rm1", "rv1", "rm2", "rv2")


@dataclass
class ModelParams:
    """Named parameter arrays plus batchnorm running statistics."""

    input_dim: int
    num_classes: int
    arrays: dict[str, np.ndarray]
    hidden: int = HIDDEN

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.input_dim,
            self.num_classes,
            {k: v.copy() for k, v in self.arrays.items()},
            self.hidden,
        )

    def leaves(self) -> dict[str, Tensor]:
        return {k: Tensor(self.arrays[k], trainable=True) for k in TRAINABLE}

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays.values())


@dataclass
class ModelOutput:
    logits: Tensor
    class_probs: Tensor
    confidence: Tensor
    bn_stats: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)


def init_model(input_dim: int, num_classes: int, seed: int, hidden: int = HIDDEN) -> ModelParams:
    """He-normal weights, zero biases, identity batchnorm. Deterministic per seed."""
    if int(input_dim) < 1 or int(num_classes) < 2 or int(hidden) < 1:
        raise ContractError(
            f"init_model: need input_dim >= 1 and num_classes >= 2, got {input_dim}, {num_classes}"
        )
    rng = np.random.default_rng(seed)

    def he(fan_in, fan_out):
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))

    arrays = {
        "W1": he(input_dim, hidden),
        "b1": np.zeros(hidden),
        "gamma1": np.ones(hidden),
        "beta1": np.zeros(hidden),
        "rm1": np.zeros(hidden),
        "rv1": np.ones(hidden),
        "W2": he(hidden, hidden),
        "b2": np.zeros(hidden),
        "gamma2": np.ones(hidden),
        "beta2": np.zeros(hidden),
        "rm2": np.zeros(hidden),
        "rv2": np.ones(hidden),
        "Wp": he(hidden, num_classes),
        "bp": np.zeros(num_classes),
        "Wc": he(hidden, 1),
        "bc": np.zeros(1),
    }
    return ModelParams(int(input_dim), int(num_classes), arrays, int(hidden))


def forward(
    params: ModelParams,
    batch,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    leaves: dict[str, Tensor] | None = None,
) -> ModelOutput:
    """Linear-BN-ReLU-Dropout-Linear-BN-ReLU encoder followed by the two heads.

    When ``leaves`` is given the computation uses those tensors, so a caller
    holding an active tape can differentiate w.r.t. them.
    """
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.data.ndim != 2 or x.shape[1] != params.input_dim:
        raise ContractError(f"forward: expected [n, {params.input_dim}] input, got {x.shape}")
    if mode == "train" and x.shape[0] < 2:
        raise ContractError("forward: train mode needs at least 2 rows for batch statistics")
    if not np.all(np.isfinite(x.data)):
        raise ContractError("forward: non-finite input")
    p = leaves if leaves is not None else {k: Tensor(params.arrays[k]) for k in TRAINABLE}
    a = params.arrays
    stats = []

    h = ad.add(ad.matmul(x, p["W1"]), p["b1"])
    h = ad.apply("batchnorm", [h, p["gamma1"], p["beta1"]], mode=mode,
                 running_mean=a["rm1"], running_var=a["rv1"], eps=BN_EPS)
    stats.append(_batch_stats(h))
    h = ad.relu(h)
    h = ad.apply("dropout", [h], mode=mode, rng=rng, p=DROPOUT)
    h = ad.add(ad.matmul(h, p["W2"]), p["b2"])
    h = ad.apply("batchnorm", [h, p["gamma2"], p["beta2"]], mode=mode,
                 running_mean=a["rm2"], running_var=a["rv2"], eps=BN_EPS)
    stats.append(_batch_stats(h))
    features = ad.relu(h)

    logits = ad.add(ad.matmul(features, p["Wp"]), p["bp"])
    probs = ad.softmax_rows(logits)
    conf = ad.sigmoid(ad.add(ad.matmul(features, p["Wc"]), p["bc"]))
    return ModelOutput(logits, probs, conf, stats if mode == "train" else [])


def _batch_stats(bn_out: Tensor):
    tape = ad.active_tape()
    if tape is None or not tape.nodes or tape.nodes[-1].output is not bn_out:
        return None
    saved = tape.nodes[-1].saved
    return saved["mean"], saved["var"]


def update_running_stats(params: ModelParams, stats, n: int) -> None:
    """Exponential moving average of batch statistics (unbiased variance)."""
    for i, st in enumerate(stats, start=1):
        if st is None:
            continue
        mu, var = st
        unbiased = var * n / max(n - 1, 1)
        params.arrays[f"rm{i}"] = BN_MOMENTUM * params.arrays[f"rm{i}"] + (1 - BN_MOMENTUM) * mu
        params.arrays[f"rv{i}"] = BN_MOMENTUM * params.arrays[f"rv{i}"] + (1 - BN_MOMENTUM) * unbiased


def predict(params: ModelParams, x: np.ndarray) -> ModelOutput:
    """Tape-free eval-mode forward."""
    return forward(params, np.asarray(x, dtype=np.float64), mode="eval")


def uncertainty(output: ModelOutput) -> np.ndarray:
    """Uncertainty is the complement of the confidence head, shape [n, 1]."""
    return 1.0 - output.confidence.data


def save_checkpoint(params: ModelParams, path) -> None:
    doc = {
        "magic": CHECKPOINT_MAGIC,
        "input_dim": params.input_dim,
        "num_classes": params.num_classes,
        "hidden": params.hidden,
        "tensors": {
            k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
            for k, v in params.arrays.items()
        },
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> ModelParams:
    doc = json.loads(Path(path).read_text())
    if doc.get("magic") != CHECKPOINT_MAGIC:
        raise ContractError(f"{path}: not a model checkpoint (magic {doc.get('magic')!r})")
    arrays = {
        k: np.asarray(t["data"], dtype=np.float64).reshape(t["shape"])
        for k, t in doc["tensors"].items()
    }
    return ModelParams(doc["input_dim"], doc["num_classes"], arrays, doc.get("hidden", HIDDEN))
