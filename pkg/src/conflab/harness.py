"""Experiment configuration, orchestration, result persistence and the ``conflab`` CLI.

Config grammar
--------------
A config file is plain text, one ``section.key = value`` per line. Blank lines
and lines starting with ``#`` are ignored. Lists are comma separated. Per-method
overrides use ``override.<method>.<section>.<key> = value`` where ``<section>``
is ``train`` or ``nr``. Every key can also be given on the command line as
``--section.key=value``, which wins over the file.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import data as D
from .ensemble import (
    aleatoric_convergence_check,
    disagreement_target,
    distill_student,
    make_agent_pool,
    make_noise_regions,
    multi_agent_round,
    quadrant_domains,
    expert_split,
    train_ensemble,
)
from .exceptions import ConfigError, ContractError
from .infotheory import info_rows, write_info_csv
from .losses import NegativeRewardParams
from .metrics import evaluate
from .posthoc import apply_calibration, compression_report, fit_isotonic, fit_platt, fit_temperature
from .training import METHODS, TrainConfig, train

CALIBRATOR_NAMES = ("temperature", "isotonic", "platt")

# key -> default; the default's type drives parsing
SCHEMA: dict[str, object] = {
    "dataset.kind": "two_moons",
    "dataset.path": "",
    "dataset.label_column": "label",
    "dataset.n": 1900,
    "dataset.noise": 0.25,
    "dataset.seed": 42,
    "dataset.sizes": (1050, 400, 450),
    "run.id": "default",
    "run.out": "results",
    "run.methods": METHODS,
    "run.seeds": (42, 43, 44, 45, 46),
    "run.posthoc": (),
    "run.workers": 1,
    "metrics.n_bins": 15,
    "train.epochs": 200,
    "train.batch_size": 32,
    "train.lr": 1e-3,
    "train.weight_decay": 1e-4,
    "train.lam": 1.0,
    "train.beta": 0.1,
    "nr.alpha": 1.0,
    "nr.lambda1": 0.5,
    "nr.lambda2": 2.0,
    "nr.kappa1": 0.2,
    "nr.kappa2": 0.1,
    "nr.mu1": 0.3,
    "nr.mu2": 1.0,
    "nr.certain_threshold": 0.5,
    "sweep.alphas": (0.0, 0.1, 0.5, 1.0),
    "ensemble.members": 5,
    "ensemble.lam": 1.0,
    "ensemble.sizes": (3, 5, 10),
    "ensemble.correct_probs": (0.5, 1.0),
    "ensemble.n_per_region": 200,
    "ensemble.region_epochs": 100,
    "multiagent.agents": 4,
    "multiagent.source": 0,
    "multiagent.target": 1,
    "info.kmax": 16,
    "info.n": 1,
}

_TUPLE_TYPES = {
    "dataset.sizes": int,
    "run.methods": str,
    "run.seeds": int,
    "run.posthoc": str,
    "sweep.alphas": float,
    "ensemble.sizes": int,
    "ensemble.correct_probs": float,
}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    default = SCHEMA.get(key)
    try:
        if key in _TUPLE_TYPES:
            cast = _TUPLE_TYPES[key]
            return tuple(cast(p.strip()) for p in raw.split(",") if p.strip())
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=lambda: dict(SCHEMA))
    overrides: dict = field(default_factory=dict)  # method -> {"train.lam": 1.0, ...}

    def __getitem__(self, key: str):
        return self.values[key]

    def set(self, key: str, raw: str) -> None:
        if key.startswith("override."):
            parts = key.split(".")
            if len(parts) != 4 or parts[2] not in ("train", "nr"):
                raise ConfigError(f"override keys look like override.<method>.<train|nr>.<key>, got {key!r}")
            inner = f"{parts[2]}.{parts[3]}"
            if inner not in SCHEMA:
                raise ConfigError(f"unknown override key {inner!r}")
            self.overrides.setdefault(parts[1], {})[inner] = _parse_value(inner, raw)
            return
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = _parse_value(key, raw)

    def validate(self) -> "ExperimentConfig":
        allowed = set(METHODS)
        for m in self["run.methods"]:
            if m not in allowed:
                raise ConfigError(f"unknown method {m!r}; choose from {sorted(allowed)}")
        for m in self.overrides:
            if m not in allowed:
                raise ConfigError(f"override for unknown method {m!r}")
        for c in self["run.posthoc"]:
            if c not in CALIBRATOR_NAMES:
                raise ConfigError(f"unknown calibrator {c!r}; choose from {list(CALIBRATOR_NAMES)}")
        if not self["run.seeds"]:
            raise ConfigError("run.seeds must be nonempty")
        if len(self["dataset.sizes"]) != 3 or min(self["dataset.sizes"]) < 2:
            raise ConfigError("dataset.sizes needs three sizes >= 2")
        if self["dataset.kind"] not in ("two_moons", "csv"):
            raise ConfigError(f"dataset.kind must be two_moons or csv, got {self['dataset.kind']!r}")
        if self["dataset.kind"] == "csv" and not self["dataset.path"]:
            raise ConfigError("dataset.kind=csv needs dataset.path")
        if self["run.workers"] < 1 or self["metrics.n_bins"] < 1 or self["info.kmax"] < 2:
            raise ConfigError("run.workers and metrics.n_bins must be >= 1, info.kmax >= 2")
        try:
            for m in self["run.methods"]:
                self.train_config(m, self["run.seeds"][0])
        except ContractError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def train_config(self, method: str, seed: int, **extra) -> TrainConfig:
        v = {**self.values, **self.overrides.get(method, {})}
        nr_fields = ("alpha", "lambda1", "lambda2", "kappa1", "kappa2", "mu1", "mu2", "certain_threshold")
        nr = NegativeRewardParams(**{f: v[f"nr.{f}"] for f in nr_fields})
        cfg = TrainConfig(
            method=method,
            epochs=v["train.epochs"],
            batch_size=v["train.batch_size"],
            lr=v["train.lr"],
            weight_decay=v["train.weight_decay"],
            lam=v["train.lam"],
            beta=v["train.beta"],
            nr=nr,
            seed=int(seed),
        )
        return replace(cfg, **extra) if extra else cfg

    def to_text(self) -> str:
        lines = []
        for k in SCHEMA:
            v = self.values[k]
            lines.append(f"{k} = {','.join(str(x) for x in v) if isinstance(v, tuple) else v}")
        for m in sorted(self.overrides):
            for k, v in sorted(self.overrides[m].items()):
                lines.append(f"override.{m}.{k} = {v}")
        return "\n".join(lines) + "\n"

    @property
    def run_dir(self) -> Path:
        return Path(self["run.out"]) / self["run.id"]


def parse_config_text(text: str, cfg: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = cfg or ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = line.split("=", 1)
        cfg.set(key.strip(), value)
    return cfg


def load_config(path=None, flags: dict | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        parse_config_text(text, cfg)
    for k, v in (flags or {}).items():
        cfg.set(k, v)
    return cfg.validate()


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def build_splits(cfg: ExperimentConfig) -> tuple[D.Dataset, D.Dataset, D.Dataset]:
    sizes = cfg["dataset.sizes"]
    if cfg["dataset.kind"] == "two_moons":
        ds = D.make_two_moons(cfg["dataset.n"], cfg["dataset.noise"], cfg["dataset.seed"])
    else:
        label = cfg["dataset.label_column"]
        ds = D.load_csv(cfg["dataset.path"], int(label) if label.isdigit() else label)
    if sum(sizes) != ds.n:
        # rescale proportionally to the available rows
        frac = np.asarray(sizes, dtype=np.float64) / sum(sizes)
        a, b = int(round(frac[0] * ds.n)), int(round(frac[1] * ds.n))
        sizes = (a, b, ds.n - a - b)
    return D.split(ds, sizes, cfg["dataset.seed"])


# ---------------------------------------------------------------------------
# per-run execution
# ---------------------------------------------------------------------------

ROW_COLUMNS = (
    "run_id", "label", "method", "seed", "calibrator", "accuracy", "ece", "mce",
    "mean_conf", "std_conf", "conf_min", "conf_max", "passes_both",
)
COMPRESSION_COLUMNS = ("run_id", "label", "seed", "calibrator", "delta_var", "bound", "ece_after", "holds")


@dataclass(frozen=True)
class Job:
    label: str
    seed: int
    train: TrainConfig
    posthoc: tuple[str, ...] = ()

    @property
    def tag(self) -> str:
        return f"{self.label}_s{self.seed}"


@dataclass
class ResultRow:
    run_id: str
    label: str
    method: str
    seed: int
    calibrator: str
    accuracy: float
    ece: float
    mce: float
    mean_conf: float
    std_conf: float
    conf_min: float
    conf_max: float
    passes_both: bool
    wall_time_s: float = 0.0


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def write_csv(path, columns, rows: list[dict]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _row(run_id: str, job: Job, calibrator: str, conf, correct, n_bins: int, wall: float) -> ResultRow:
    rep = evaluate(conf, correct, n_bins)
    conf = np.asarray(conf)
    return ResultRow(
        run_id, job.label, job.train.method, job.seed, calibrator, rep.accuracy, rep.ece, rep.mce,
        rep.mean_conf, rep.std_conf, float(conf.min()), float(conf.max()), rep.passes_both, wall,
    )


def _save_raw(run_dir: Path, tag: str, calibrator: str, conf, correct) -> None:
    np.save(run_dir / "raw" / f"{tag}_{calibrator}.npy", np.column_stack([conf, np.asarray(correct, dtype=np.float64)]))


def execute_job(cfg: ExperimentConfig, job: Job) -> dict:
    """Train, evaluate on test and run the requested calibrators. Never raises."""
    run_dir, run_id, n_bins = cfg.run_dir, cfg["run.id"], cfg["metrics.n_bins"]
    t0 = time.perf_counter()
    try:
        tr, va, te = build_splits(cfg)
        model, trace = train(job.train, tr, va)
        trace.to_csv(run_dir / "traces" / f"{job.tag}.csv")
        pt, ct, zt = model.outputs(te.features)
        okt = pt.argmax(axis=1) == te.labels
        wall = time.perf_counter() - t0
        rows = [_row(run_id, job, "none", ct, okt, n_bins, wall)]
        _save_raw(run_dir, job.tag, "none", ct, okt)
        evaluate(ct, okt, n_bins).reliability_csv(run_dir / "reliability" / f"{job.tag}_none.csv")
        comps = []
        if job.posthoc:
            pv, cv, zv = model.outputs(va.features)
            okv = pv.argmax(axis=1) == va.labels
            for name in job.posthoc:
                if name == "temperature":
                    cmap = fit_temperature(zv, va.labels)
                    after = apply_calibration(cmap, zt).max(axis=1)
                elif name == "platt":
                    after = apply_calibration(fit_platt(cv, okv), ct)
                else:
                    after = apply_calibration(fit_isotonic(cv, okv), ct)
                rows.append(_row(run_id, job, name, after, okt, n_bins, wall))
                _save_raw(run_dir, job.tag, name, after, okt)
                evaluate(after, okt, n_bins).reliability_csv(run_dir / "reliability" / f"{job.tag}_{name}.csv")
                rep = compression_report(ct, after, float(okt.mean()), okt)
                comps.append({"run_id": run_id, "label": job.label, "seed": job.seed, "calibrator": name, **asdict(rep)})
        return {"tag": job.tag, "rows": [asdict(r) for r in rows], "compression": comps, "error": None}
    except Exception as exc:  # recorded per run; the harness keeps going
        return {"tag": job.tag, "rows": [], "compression": [], "error": f"{type(exc).__name__}: {exc}"}


def _aggregate(rows: list[dict], keys=("label", "calibrator")) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for gkey, rs in groups.items():
        agg = dict(zip(keys, gkey))
        agg["n_seeds"] = len(rs)
        for m in ("accuracy", "ece", "mce", "mean_conf", "std_conf"):
            vals = np.array([r[m] for r in rs], dtype=np.float64)
            agg[f"{m}_mean"] = float(vals.mean())
            agg[f"{m}_std"] = float(vals.std())
        agg["conf_min"] = float(min(r["conf_min"] for r in rs))
        agg["conf_max"] = float(max(r["conf_max"] for r in rs))
        agg["n_passing"] = sum(bool(r["passes_both"]) for r in rs)
        out.append(agg)
    return out


AGG_COLUMNS = (
    "label", "calibrator", "n_seeds", "accuracy_mean", "accuracy_std", "ece_mean", "ece_std",
    "mce_mean", "mce_std", "mean_conf_mean", "mean_conf_std", "std_conf_mean", "std_conf_std",
    "conf_min", "conf_max", "n_passing",
)


@dataclass
class RunResult:
    run_dir: Path
    rows: list[dict]
    compression: list[dict]
    failures: list[dict]
    summary: dict

    @property
    def ok(self) -> bool:
        return not self.failures


def _summary(cfg: ExperimentConfig, rows, failures) -> dict:
    gate = [f"{r['label']}_s{r['seed']}" for r in rows if r["calibrator"] == "none" and r["passes_both"]]
    return {
        "run_id": cfg["run.id"],
        "n_rows": len(rows),
        "n_failed": len(failures),
        "failures": failures,
        "training_runs_passing_gate": gate,
        "groups": _aggregate(rows),
    }


def run_jobs(cfg: ExperimentConfig, jobs: list[Job]) -> RunResult:
    run_dir = cfg.run_dir
    for sub in ("raw", "traces", "reliability"):
        (run_dir / sub).mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(cfg.to_text())
    workers = min(cfg["run.workers"], max(len(jobs), 1))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(execute_job, [cfg] * len(jobs), jobs))
    else:
        results = [execute_job(cfg, j) for j in jobs]
    rows = [r for res in results for r in res["rows"]]
    comps = [c for res in results for c in res["compression"]]
    failures = [{"tag": res["tag"], "error": res["error"]} for res in results if res["error"]]
    write_csv(run_dir / "rows.csv", ROW_COLUMNS, rows)
    write_csv(run_dir / "timing.csv", ("label", "seed", "calibrator", "wall_time_s"), rows)
    if comps:
        write_csv(run_dir / "compression.csv", COMPRESSION_COLUMNS, comps)
    summary = _summary(cfg, rows, failures)
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return RunResult(run_dir, rows, comps, failures, summary)


def run(cfg: ExperimentConfig) -> RunResult:
    """Every configured method x seed, with the configured post-hoc calibrators."""
    jobs = [
        Job(m, s, cfg.train_config(m, s), tuple(cfg["run.posthoc"]))
        for m in cfg["run.methods"]
        for s in cfg["run.seeds"]
    ]
    return run_jobs(cfg, jobs)


def sweep_alpha(cfg: ExperimentConfig, alphas=None) -> tuple[RunResult, list[dict]]:
    """neg_reward at each alpha; alpha = 0 trains the baseline instead."""
    alphas = cfg["sweep.alphas"] if alphas is None else tuple(alphas)
    jobs = []
    for a in alphas:
        for s in cfg["run.seeds"]:
            if a == 0:
                tc = cfg.train_config("baseline", s)
            else:
                base = cfg.train_config("neg_reward", s)
                tc = replace(base, nr=replace(base.nr, alpha=float(a)))
            jobs.append(Job(f"alpha{a:g}", s, tc))
    res = run_jobs(cfg, jobs)
    by_label = {agg["label"]: agg for agg in _aggregate(res.rows)}
    table = [{"alpha": float(a), **by_label[f"alpha{a:g}"]} for a in alphas if f"alpha{a:g}" in by_label]
    write_csv(res.run_dir / "sweep.csv", ("alpha",) + AGG_COLUMNS, table)
    return res, table


def compare_posthoc(cfg: ExperimentConfig) -> tuple[RunResult, list[dict]]:
    """Baseline per seed, then every calibrator fit on validation and scored on test."""
    jobs = [Job("baseline", s, cfg.train_config("baseline", s), CALIBRATOR_NAMES) for s in cfg["run.seeds"]]
    res = run_jobs(cfg, jobs)
    table = _aggregate(res.rows)
    for agg in table:
        cs = [c for c in res.compression if c["calibrator"] == agg["calibrator"]]
        agg["delta_var_mean"] = float(np.mean([c["delta_var"] for c in cs])) if cs else 0.0
        agg["bound_mean"] = float(np.mean([c["bound"] for c in cs])) if cs else 0.0
        agg["compression_holds"] = sum(bool(c["holds"]) for c in cs)
    write_csv(
        res.run_dir / "posthoc.csv",
        AGG_COLUMNS + ("delta_var_mean", "bound_mean", "compression_holds"),
        table,
    )
    return res, table


def analyze_info(kmax: int, out, n: int = 1) -> list[dict]:
    if kmax < 2:
        raise ConfigError(f"analyze_info: kmax must be >= 2, got {kmax}")
    rows = info_rows(kmax, n)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    write_info_csv(rows, out)
    return rows


# ---------------------------------------------------------------------------
# ensemble and multi-agent experiments
# ---------------------------------------------------------------------------


def run_ensemble(cfg: ExperimentConfig) -> dict:
    """Aleatoric region check plus disagreement distillation on the configured dataset."""
    run_dir = cfg.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(cfg.to_text())
    base_seed = cfg["run.seeds"][0]

    probs = cfg["ensemble.correct_probs"]
    regions, region = make_noise_regions(cfg["ensemble.n_per_region"], probs, seed=base_seed)
    rcfg = cfg.train_config("baseline", base_seed, epochs=cfg["ensemble.region_epochs"])
    conv = aleatoric_convergence_check(regions, region, probs, cfg["ensemble.sizes"], rcfg)
    conv_rows = []
    for M, rho, means in zip(conv.Ms, conv.correlations, conv.region_means):
        row = {"M": M, "spearman": rho}
        row.update({f"region{r}_mean": float(v) for r, v in enumerate(means)})
        conv_rows.append(row)
    write_csv(run_dir / "convergence.csv", tuple(conv_rows[0]), conv_rows)

    tr, va, te = build_splits(cfg)
    n_bins = cfg["metrics.n_bins"]
    ens = train_ensemble(cfg["ensemble.members"], cfg.train_config("baseline", base_seed), tr)
    ens.save(run_dir / "ensemble")
    target_te = disagreement_target(ens, te.features)
    distill_rows = []
    for s in cfg["run.seeds"]:
        student = distill_student(ens, tr, cfg["ensemble.lam"], cfg.train_config("baseline", s))
        p, c, _ = student.outputs(te.features)
        ok = p.argmax(axis=1) == te.labels
        rep = evaluate(c, ok, n_bins)
        distill_rows.append({
            "seed": s, "accuracy": rep.accuracy, "ece": rep.ece, "mean_conf": rep.mean_conf,
            "std_conf": rep.std_conf, "passes_both": rep.passes_both,
            "target_mean": float(target_te.mean()), "target_std": float(target_te.std()),
            "target_corr": float(np.corrcoef(c, target_te)[0, 1]) if c.std() > 0 else 0.0,
        })
    write_csv(run_dir / "distill.csv", tuple(distill_rows[0]), distill_rows)
    return {"convergence": conv_rows, "distill": distill_rows, "sigma_max": ens.sigma_max}


def run_multiagent(cfg: ExperimentConfig) -> list[dict]:
    run_dir = cfg.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(cfg.to_text())
    tr, _, _ = build_splits(cfg)
    if tr.d < 2:
        raise ConfigError("multiagent needs at least two feature columns")
    domains = quadrant_domains(tr)
    src, tgt = cfg["multiagent.source"], cfg["multiagent.target"]
    if src not in domains or tgt not in domains:
        raise ConfigError("multiagent.source and multiagent.target must be in 0..3")
    base = cfg.train_config("baseline", cfg["run.seeds"][0])
    pool = make_agent_pool(domains, cfg["multiagent.agents"], base)
    experts, _ = expert_split(pool, src)
    before = [a.outputs(domains[tgt].features) for a in pool.agents]
    after_pool = multi_agent_round(pool, src, tgt, base)
    rows = []
    for i, agent in enumerate(after_pool.agents):
        _, c_after, _ = agent.outputs(domains[tgt].features)
        c_before = before[i][1]
        rows.append({
            "agent": i,
            "role": "expert" if i in experts else "novice",
            "acc_source": pool.rankings[src][i],
            "acc_target_before": pool.rankings[tgt][i],
            "acc_target_after": after_pool.rankings[tgt][i],
            "conf_mean_before": float(c_before.mean()),
            "conf_mean_after": float(c_after.mean()),
            "conf_std_before": float(c_before.std()),
            "conf_std_after": float(c_after.std()),
        })
    write_csv(run_dir / "multiagent.csv", tuple(rows[0]), rows)
    return rows


# ---------------------------------------------------------------------------
# audit
# ---------------------------------------------------------------------------


def audit(run_dir, n_bins: int | None = None) -> list[str]:
    """Recompute rows.csv and summary.json from the raw arrays; returns mismatches."""
    run_dir = Path(run_dir)
    if n_bins is None:
        n_bins = ExperimentConfig().values["metrics.n_bins"]
        cfg_file = run_dir / "config.txt"
        if cfg_file.exists():
            n_bins = parse_config_text(cfg_file.read_text())["metrics.n_bins"]
    with (run_dir / "rows.csv").open(newline="") as fh:
        stored = list(csv.DictReader(fh))
    problems, rebuilt = [], []
    for r in stored:
        tag = f"{r['label']}_s{r['seed']}"
        raw_path = run_dir / "raw" / f"{tag}_{r['calibrator']}.npy"
        if not raw_path.exists():
            problems.append(f"{tag}/{r['calibrator']}: missing {raw_path.name}")
            continue
        arr = np.load(raw_path)
        conf, ok = arr[:, 0], arr[:, 1].astype(bool)
        job = Job(r["label"], int(r["seed"]), TrainConfig(method=r["method"]))
        row = asdict(_row(r["run_id"], job, r["calibrator"], conf, ok, n_bins, 0.0))
        rebuilt.append(row)
        for c in ROW_COLUMNS:
            if _fmt(row[c]) != r[c]:
                problems.append(f"{tag}/{r['calibrator']}: {c} stored {r[c]} recomputed {_fmt(row[c])}")
    summary_path = run_dir / "summary.json"
    if summary_path.exists() and not problems:
        stored_summary = json.loads(summary_path.read_text())
        fresh = _aggregate(rebuilt)
        for old, new in zip(stored_summary.get("groups", []), fresh):
            for k, v in new.items():
                ov = old.get(k)
                if isinstance(v, float) and not np.isclose(ov, v, rtol=1e-12, atol=1e-15):
                    problems.append(f"summary {old['label']}/{old['calibrator']}: {k} {ov} vs {v}")
                elif not isinstance(v, float) and ov != v:
                    problems.append(f"summary {old['label']}/{old['calibrator']}: {k} {ov} vs {v}")
        if len(stored_summary.get("groups", [])) != len(fresh):
            problems.append("summary group count differs from rows.csv")
    return problems


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

SUBCOMMANDS = ("train", "sweep", "calibrate", "analyze-info", "ensemble", "multiagent", "audit")


def _split_flags(extra: list[str]) -> dict:
    flags, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        body = tok[2:]
        if "=" in body:
            k, v = body.split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"flag {tok} needs a value")
            k, v = body, extra[i + 1]
            i += 1
        flags[k] = v
        i += 1
    return flags


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="conflab", description="Confidence calibration experiments.")
    p.add_argument("command", choices=SUBCOMMANDS)
    p.add_argument("--config", help="config file (section.key = value lines)")
    p.add_argument("--out", help="output root directory (run.out)")
    p.add_argument("--seeds", help="comma separated seeds (run.seeds)")
    p.add_argument("--workers", help="parallel runs (run.workers)")
    p.add_argument("--run-dir", help="audit: directory of an existing run")
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        flags = _split_flags(extra)
        for name, key in (("out", "run.out"), ("seeds", "run.seeds"), ("workers", "run.workers")):
            if getattr(args, name) is not None:
                flags[key] = getattr(args, name)
        if args.command == "audit" and args.run_dir:
            cfg = None
        else:
            cfg = load_config(args.config, flags)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "train":
            res = run(cfg)
        elif args.command == "sweep":
            res, table = sweep_alpha(cfg)
        elif args.command == "calibrate":
            res, table = compare_posthoc(cfg)
        elif args.command == "analyze-info":
            out = cfg.run_dir / "info.csv"
            analyze_info(cfg["info.kmax"], out, cfg["info.n"])
            print(out)
            return 0
        elif args.command == "ensemble":
            run_ensemble(cfg)
            print(cfg.run_dir)
            return 0
        elif args.command == "multiagent":
            run_multiagent(cfg)
            print(cfg.run_dir)
            return 0
        else:
            target = Path(args.run_dir) if args.run_dir else cfg.run_dir
            problems = audit(target)
            for msg in problems:
                print(msg, file=sys.stderr)
            print(f"audit {target}: {'ok' if not problems else f'{len(problems)} mismatches'}")
            return 1 if problems else 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for f in res.failures:
        print(f"failed {f['tag']}: {f['error']}", file=sys.stderr)
    print(f"{res.run_dir}: {len(res.rows)} rows, {len(res.failures)} failed")
    return 1 if res.failures else 0


if __name__ == "__main__":
    raise SystemExit(main())
