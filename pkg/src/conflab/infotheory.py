"""Exact discrete information quantities for binary supervision of a k-level confidence source.

All logarithms are base 2.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ContractError

TOL = 1e-9


@dataclass(frozen=True)
class JointDistribution:
    """P(C* = c_i) = weights[i] and P(S = 1 | C* = c_i) = conditional[i]."""

    levels: np.ndarray
    weights: np.ndarray
    conditional: np.ndarray

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        q = np.asarray(self.conditional, dtype=np.float64)
        if not (len(levels) == len(w) == len(q)) or len(w) == 0:
            raise ContractError("JointDistribution: levels, weights and conditionals must align")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ContractError(f"JointDistribution: weights must sum to 1, got {w.sum()!r}")
        if np.any(q < 0) or np.any(q > 1):
            raise ContractError("JointDistribution: conditionals must lie in [0, 1]")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "conditional", q)

    @property
    def k(self) -> int:
        return len(self.weights)

    @classmethod
    def uniform(cls, k: int, conditional=None) -> "JointDistribution":
        """k evenly spaced levels (i + 0.5) / k; conditionals default to the levels."""
        if k < 1:
            raise ContractError(f"need k >= 1, got {k}")
        levels = (np.arange(k) + 0.5) / k
        q = levels if conditional is None else conditional
        return cls(levels, np.full(k, 1.0 / k), q)

    def merge_adjacent(self, i: int) -> "JointDistribution":
        """Coarsen by merging levels i and i + 1."""
        if not 0 <= i < self.k - 1:
            raise ContractError(f"cannot merge level {i} of {self.k}")
        w, q, c = self.weights, self.conditional, self.levels
        wm = w[i] + w[i + 1]
        qm = (w[i] * q[i] + w[i + 1] * q[i + 1]) / wm if wm > 0 else 0.5 * (q[i] + q[i + 1])
        cm = (w[i] * c[i] + w[i + 1] * c[i + 1]) / wm if wm > 0 else 0.5 * (c[i] + c[i + 1])
        return JointDistribution(
            np.concatenate([c[:i], [cm], c[i + 2:]]),
            np.concatenate([w[:i], [wm], w[i + 2:]]),
            np.concatenate([q[:i], [qm], q[i + 2:]]),
        )


def binary_entropy(p: float) -> float:
    if not 0.0 <= p <= 1.0:
        raise ContractError(f"binary_entropy: p must be in [0, 1], got {p}")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def entropy(weights) -> float:
    w = np.asarray(weights, dtype=np.float64)
    w = w[w > 0]
    return float(-(w * np.log2(w)).sum())


def supervision_entropy(j: JointDistribution) -> float:
    return binary_entropy(float(np.clip(j.weights @ j.conditional, 0.0, 1.0)))


def mutual_information(j: JointDistribution) -> float:
    """I(S; C*) = H(S) - H(S | C*), bits."""
    h_s = supervision_entropy(j)
    h_s_given_c = float(sum(w * binary_entropy(q) for w, q in zip(j.weights, j.conditional)))
    mi = max(h_s - h_s_given_c, 0.0)
    ceiling = min(h_s, entropy(j.weights))
    if mi > ceiling + TOL or ceiling > 1.0 + TOL:
        raise AssertionError(f"information bound violated: I={mi}, min(H(S), H(C*))={ceiling}")
    return mi


def information_gap(j: JointDistribution) -> float:
    """H(C*) - I(S; C*), bits; at least log2(k) - 1 for a uniform source."""
    gap = entropy(j.weights) - mutual_information(j)
    if np.allclose(j.weights, 1.0 / j.k) and gap < math.log2(j.k) - 1.0 - TOL:
        raise AssertionError(f"gap {gap} below log2(k) - 1 for k={j.k}")
    return gap


def ece_lower_bound(k: int, n: int, entropy_bits: float) -> float:
    """Leading term ``(1 / 2k) * (1 - n / 2**H)`` clamped at zero; the O(log k / sqrt n) term is dropped."""
    if k < 1 or n < 1:
        raise ContractError(f"ece_lower_bound: need k >= 1 and n >= 1, got k={k}, n={n}")
    return max(0.0, (1.0 / (2 * k)) * (1.0 - n / 2.0 ** entropy_bits))


def empirical_mi_from_run(conf, correct, k_bins: int) -> float:
    """Plug-in I(S; quantised confidence) in bits from paired samples."""
    conf = np.asarray(conf, dtype=np.float64).reshape(-1)
    s = np.asarray(correct, dtype=bool).reshape(-1)
    if len(conf) != len(s):
        raise ContractError("empirical_mi_from_run: length mismatch")
    if k_bins < 1 or len(conf) < k_bins:
        raise ContractError(f"empirical_mi_from_run: need n >= k_bins >= 1 (n={len(conf)}, k={k_bins})")
    bins = np.minimum((np.clip(conf, 0, 1) * k_bins).astype(np.int64), k_bins - 1)
    joint = np.zeros((k_bins, 2))
    np.add.at(joint, (bins, s.astype(np.int64)), 1.0)
    joint /= joint.sum()
    pc = joint.sum(axis=1, keepdims=True)
    ps = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float((joint[nz] * np.log2(joint[nz] / (pc @ ps)[nz])).sum())


INFO_COLUMNS = ("k", "H", "I", "gap", "ece_lower_bound")


def info_rows(kmax: int, n: int = 1) -> list[dict]:
    rows = []
    for k in range(1, kmax + 1):
        j = JointDistribution.uniform(k)
        h = entropy(j.weights)
        rows.append({
            "k": k,
            "H": h,
            "I": mutual_information(j),
            "gap": information_gap(j),
            "ece_lower_bound": ece_lower_bound(k, n, h),
        })
    return rows


def write_info_csv(rows: list[dict], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INFO_COLUMNS)
        for r in rows:
            w.writerow([r["k"], *(f"{r[c]:.6g}" for c in INFO_COLUMNS[1:])])
