"""Calibration and diversity metrics, reliability bins and the pass/fail gate."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ContractError

DEFAULT_BINS = 15
ECE_THRESHOLD = 0.10
STD_THRESHOLD = 0.15
MAX_VARIANCE = 0.25
RELIABILITY_COLUMNS = ("bin_lo", "bin_hi", "count", "avg_conf", "avg_acc")


@dataclass
class BinRow:
    lo: float
    hi: float
    count: int
    avg_conf: float
    avg_acc: float


@dataclass
class EvalReport:
    accuracy: float
    ece: float
    mce: float
    mean_conf: float
    std_conf: float
    n_bins: int
    bins: list[BinRow] = field(default_factory=list)
    passes_both: bool = False

    @property
    def n(self) -> int:
        return sum(b.count for b in self.bins)

    def recompute_ece(self) -> float:
        n = self.n
        return sum(b.count / n * abs(b.avg_conf - b.avg_acc) for b in self.bins if b.count)

    def recompute_mce(self) -> float:
        gaps = [abs(b.avg_conf - b.avg_acc) for b in self.bins if b.count]
        return max(gaps) if gaps else 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    def reliability_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RELIABILITY_COLUMNS)
            for b in self.bins:
                w.writerow([f"{b.lo:.6g}", f"{b.hi:.6g}", b.count, f"{b.avg_conf:.6g}", f"{b.avg_acc:.6g}"])


def passes_gate(ece: float, std_conf: float) -> bool:
    return ece < ECE_THRESHOLD and std_conf > STD_THRESHOLD


def bin_index(conf: np.ndarray, n_bins: int) -> np.ndarray:
    """Equal-width bins on [0, 1]; bins are [lo, hi) except the last, which includes 1."""
    return np.minimum((conf * n_bins).astype(np.int64), n_bins - 1)


def evaluate(conf, correct, n_bins: int = DEFAULT_BINS) -> EvalReport:
    conf = np.asarray(conf, dtype=np.float64).reshape(-1)
    correct = np.asarray(correct, dtype=bool).reshape(-1)
    if conf.size == 0:
        raise ContractError("evaluate: empty input")
    if conf.shape != correct.shape:
        raise ContractError(f"evaluate: {conf.size} confidences but {correct.size} outcomes")
    if n_bins < 1:
        raise ContractError(f"evaluate: n_bins must be >= 1, got {n_bins}")
    if np.any(conf < 0) or np.any(conf > 1) or not np.all(np.isfinite(conf)):
        raise ContractError("evaluate: confidences must lie in [0, 1]")

    idx = bin_index(conf, n_bins)
    rows = []
    ece, mce = 0.0, 0.0
    n = conf.size
    for b in range(n_bins):
        mask = idx == b
        count = int(mask.sum())
        if count:
            avg_c = float(conf[mask].mean())
            avg_a = float(correct[mask].mean())
            gap = abs(avg_c - avg_a)
            ece += count / n * gap
            mce = max(mce, gap)
        else:
            avg_c = avg_a = 0.0
        rows.append(BinRow(b / n_bins, (b + 1) / n_bins, count, avg_c, avg_a))
    std = float(conf.std())
    return EvalReport(
        accuracy=float(correct.mean()),
        ece=ece,
        mce=mce,
        mean_conf=float(conf.mean()),
        std_conf=std,
        n_bins=n_bins,
        bins=rows,
        passes_both=passes_gate(ece, std),
    )


def diversity(conf) -> tuple[float, float]:
    """(population std, variance / 0.25)."""
    conf = np.asarray(conf, dtype=np.float64).reshape(-1)
    if conf.size < 2:
        raise ContractError("diversity: need at least 2 values")
    var = float(conf.var())
    return math.sqrt(var), var / MAX_VARIANCE


def score_cal(accuracy: float, ece: float, diversity_norm: float, beta: float = 1.0, gamma: float = 1.0) -> float:
    """Accuracy discounted by calibration error and rewarded for spread."""
    if beta < 0 or gamma < 0:
        raise ContractError("score_cal: beta and gamma must be >= 0")
    return accuracy * math.exp(-beta * ece) * (1.0 + gamma * diversity_norm)


def guess_vs_abstain(p_correct_on_uncertain: float, frac_uncertain: float) -> tuple[float, float]:
    """Expected accuracy-only score when guessing vs abstaining on uncertain queries."""
    p, f = p_correct_on_uncertain, frac_uncertain
    if not (0 <= p <= 1 and 0 <= f <= 1):
        raise ContractError("guess_vs_abstain: inputs must lie in [0, 1]")
    guess = (1.0 - f) + f * p
    abstain = 1.0 - f
    assert guess >= abstain
    return guess, abstain
