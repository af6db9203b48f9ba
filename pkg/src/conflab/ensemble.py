"""Ensemble disagreement as a continuous confidence target, student distillation,
and a lightweight multi-agent confidence transfer round."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .data import Dataset
from .exceptions import ContractError, TrainingError
from .model import load_checkpoint, save_checkpoint
from .training import TrainConfig, TrainedModel, train

SIGMA_FLOOR = 1e-6
MANIFEST = "manifest.json"


@dataclass
class Ensemble:
    members: list[TrainedModel]
    seeds: list[int]
    sigma_max: float

    def member_probs(self, X) -> np.ndarray:
        """Stacked class probabilities, shape [M, n, K]."""
        return np.stack([m.outputs(X)[0] for m in self.members])

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        files = []
        for i, m in enumerate(self.members):
            name = f"member_{i:02d}.json"
            save_checkpoint(m.params, d / name)
            files.append(name)
        manifest = {
            "seeds": list(self.seeds),
            "sigma_max": self.sigma_max,
            "method": self.members[0].method,
            "members": files,
        }
        (d / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")

    @classmethod
    def load(cls, directory) -> "Ensemble":
        d = Path(directory)
        manifest = json.loads((d / MANIFEST).read_text())
        members = [
            TrainedModel(load_checkpoint(d / f), manifest["method"], s)
            for f, s in zip(manifest["members"], manifest["seeds"])
        ]
        return cls(members, manifest["seeds"], manifest["sigma_max"])


def disagreement(probs: np.ndarray) -> np.ndarray:
    """mean_m ||p_m - p_bar||^2 for member probabilities of shape [M, n, K]."""
    centred = probs - probs.mean(axis=0, keepdims=True)
    return (centred ** 2).sum(axis=2).mean(axis=0)


def train_ensemble(M: int, config: TrainConfig, data: Dataset, seeds=None) -> Ensemble:
    """Train ``M`` members with seeds ``config.seed + m`` unless ``seeds`` is given."""
    if M < 2:
        raise ContractError(f"train_ensemble: need M >= 2, got {M}")
    seeds = [config.seed + m for m in range(M)] if seeds is None else [int(s) for s in seeds]
    if len(seeds) != M:
        raise ContractError(f"train_ensemble: {len(seeds)} seeds for M={M}")
    members = []
    for i, s in enumerate(seeds):
        try:
            model, _ = train(replace(config, seed=s), data)
        except TrainingError as exc:
            raise TrainingError(f"ensemble member {i} (seed {s}) diverged: {exc}", epoch=exc.epoch, member=i) from exc
        members.append(model)
    ens = Ensemble(members, seeds, SIGMA_FLOOR)
    return fit_sigma_max(ens, data.features)


def fit_sigma_max(ens: Ensemble, X) -> Ensemble:
    """Largest member disagreement over ``X`` (floored), used to normalise targets."""
    sigma = disagreement(ens.member_probs(X))
    ens.sigma_max = max(float(sigma.max()), SIGMA_FLOOR)
    return ens


def subensemble(ens: Ensemble, M: int, X) -> Ensemble:
    """The first ``M`` members, with ``sigma_max`` refit on ``X``."""
    sub = Ensemble(ens.members[:M], ens.seeds[:M], SIGMA_FLOOR)
    return fit_sigma_max(sub, X)


def disagreement_target(ens: Ensemble, X) -> np.ndarray:
    """1 - sigma^2(x) / sigma^2_max, clipped to [0, 1]."""
    sigma = disagreement(ens.member_probs(X))
    return np.clip(1.0 - sigma / ens.sigma_max, 0.0, 1.0)


def distill_student(ens: Ensemble, data: Dataset, lam: float, config: TrainConfig) -> TrainedModel:
    """Train a fresh model on CE + lam * (c - c_target)^2 with ensemble-derived targets."""
    targets = disagreement_target(ens, data.features)
    model, _ = train(replace(config, method="distill", lam=lam), data, conf_targets=targets)
    return model


# ---------------------------------------------------------------------------
# multi-agent transfer
# ---------------------------------------------------------------------------


@dataclass
class AgentPool:
    agents: list[TrainedModel]
    domains: dict[int, Dataset]
    rankings: dict[int, list[float]] = field(default_factory=dict)

    def refresh(self) -> "AgentPool":
        self.rankings = {d: [accuracy(a, ds) for a in self.agents] for d, ds in self.domains.items()}
        return self


def accuracy(model: TrainedModel, ds: Dataset) -> float:
    probs = model.outputs(ds.features)[0]
    return float((probs.argmax(axis=1) == ds.labels).mean())


def quadrant_domains(ds: Dataset) -> dict[int, Dataset]:
    """Split 2-d features into four domains by the sign of each coordinate about its median."""
    med = np.median(ds.features[:, :2], axis=0)
    code = (ds.features[:, 0] >= med[0]).astype(int) + 2 * (ds.features[:, 1] >= med[1]).astype(int)
    return {q: ds.subset(np.flatnonzero(code == q), f"{ds.name}:q{q}") for q in range(4)}


def make_agent_pool(domains: dict[int, Dataset], n_agents: int, config: TrainConfig) -> AgentPool:
    """Agent ``i`` trains on every domain except ``i mod K``, with seed ``config.seed + i``."""
    if n_agents < 2:
        raise ContractError("make_agent_pool: need at least 2 agents")
    keys = sorted(domains)
    agents = []
    for i in range(n_agents):
        held_out = keys[i % len(keys)]
        parts = [domains[k] for k in keys if k != held_out]
        merged = Dataset(
            np.vstack([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            f"agent{i}",
        )
        model, _ = train(replace(config, seed=config.seed + i), merged)
        agents.append(model)
    return AgentPool(agents, dict(domains)).refresh()


def consensus_weights(accuracies) -> np.ndarray:
    a = np.asarray(accuracies, dtype=np.float64)
    e = np.exp(a - a.max())
    return e / e.sum()


def expert_split(pool: AgentPool, source: int) -> tuple[list[int], list[int]]:
    acc = pool.rankings.get(source) or [accuracy(a, pool.domains[source]) for a in pool.agents]
    order = sorted(range(len(pool.agents)), key=lambda i: (-acc[i], i))
    n_exp = len(pool.agents) // 2
    return order[:n_exp], order[n_exp:]


def consensus_confidence(pool: AgentPool, experts: list[int], source: int, X) -> np.ndarray:
    if not experts:
        raise ContractError("consensus_confidence: empty expert set")
    acc = pool.rankings.get(source) or [accuracy(a, pool.domains[source]) for a in pool.agents]
    w = consensus_weights([acc[i] for i in experts])
    confs = np.stack([pool.agents[i].outputs(X)[1] for i in experts])
    return w @ confs


def multi_agent_round(pool: AgentPool, source: int, target: int, config: TrainConfig) -> AgentPool:
    """Experts (top half on ``source``) teach novices confidence on ``target``."""
    if len(pool.agents) < 2:
        raise ContractError("multi_agent_round: need at least 2 agents")
    if pool.domains[source].n == 0 or pool.domains[target].n < 2:
        raise ContractError("multi_agent_round: source and target domains must be nonempty")
    experts, novices = expert_split(pool, source)
    tgt = pool.domains[target]
    c_consensus = consensus_confidence(pool, experts, source, tgt.features)
    agents = list(pool.agents)
    for i in novices:
        tuned, _ = train(
            replace(config, method="distill", seed=config.seed + 1000 + i),
            tgt,
            conf_targets=c_consensus,
            init=agents[i].params,
        )
        agents[i] = TrainedModel(tuned.params, agents[i].method, agents[i].seed)
    return AgentPool(agents, pool.domains).refresh()


# ---------------------------------------------------------------------------
# aleatoric noise check
# ---------------------------------------------------------------------------


def make_noise_regions(n_per_region: int, correct_probs, seed: int = 0) -> tuple[Dataset, np.ndarray]:
    """Unit-width strips along x0; label is 1[x1 > 0], kept with the strip's probability.

    Returns the dataset and each sample's region index. Strip ``r`` has
    ``x0`` in ``[r, r + 1)`` and ``x1`` uniform on [-1, 1].
    """
    rng = np.random.default_rng(seed)
    probs = np.asarray(correct_probs, dtype=np.float64)
    X, y, region = [], [], []
    for r, p in enumerate(probs):
        x0 = r + rng.random(n_per_region)
        x1 = rng.uniform(-1.0, 1.0, n_per_region)
        clean = (x1 > 0).astype(np.int64)
        flip = rng.random(n_per_region) >= p
        X.append(np.column_stack([x0, x1]))
        y.append(np.where(flip, 1 - clean, clean))
        region.append(np.full(n_per_region, r))
    return Dataset(np.vstack(X), np.concatenate(y), "noise_regions"), np.concatenate(region)


@dataclass
class ConvergenceResult:
    Ms: list[int]
    correlations: list[float]
    region_means: list[np.ndarray]
    clean_scores: np.ndarray


def aleatoric_convergence_check(
    data: Dataset, region: np.ndarray, correct_probs, Ms, config: TrainConfig
) -> ConvergenceResult:
    """Spearman correlation of region-mean ``c_ensemble`` with ``1 - p(1 - p)`` for each M.

    Members are trained once for ``max(Ms)`` and prefixes reused.
    """
    Ms = sorted(int(m) for m in Ms)
    probs = np.asarray(correct_probs, dtype=np.float64)
    clean = 1.0 - probs * (1.0 - probs)
    full = train_ensemble(Ms[-1], config, data)
    corrs, means = [], []
    for M in Ms:
        ens = subensemble(full, M, data.features)
        c = disagreement_target(ens, data.features)
        rm = np.array([c[region == r].mean() for r in range(len(probs))])
        means.append(rm)
        rho = spearmanr(rm, clean).statistic if len(probs) > 1 else float("nan")
        corrs.append(float(rho))
    return ConvergenceResult(Ms, corrs, means, clean)
