"""Experiment harness: config parsing, multi-run execution, reports.

A config is one JSON document::

    {
      "schema_version": 1,
      "seed": 42,
      "replications": 1,
      "targets": [{"name": "g10", "kind": "gaussian_spectrum", "dim": 10, "seed": 0}],
      "samplers": [{"name": "diag", "estimator_kind": "diagonal", "chains": 4,
                    "num_warmup": 1000, "num_draws": 1000}]
    }

Every chain gets its own generator from
``SeedSequence(seed, spawn_key=(target_index, sampler_index, replication, chain))``,
so results do not depend on how runs are spread over worker processes.
"""

from __future__ import annotations

import csv
import json
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .adapt import ESTIMATOR_KINDS, SamplerConfig, warmup_and_sample
from .diagnostics import SUMMARY_FIELDS, preconditioned_kappa, rmse_trace, summarize_chains
from .estimators import estimate_diagonal, estimate_score_baseline, estimate_variance_baseline
from .targets import (
    BananaTarget,
    GaussianTarget,
    LogGammaGaussianTarget,
    SpectrumRecipe,
    find_recipe_with_kappa,
    generate_spectrum_sigma,
)

__all__ = [
    "SCHEMA_VERSION",
    "TARGET_KINDS",
    "ConfigError",
    "TargetSpec",
    "SamplerSpec",
    "ExperimentConfig",
    "parse_config",
    "load_config",
    "build_target",
    "chain_seed",
    "run_experiment",
    "ExperimentOutcome",
    "load_summaries",
    "compare_report",
    "kappa_sim",
    "DRAW_STAT_FIELDS",
    "SUMMARY_COLUMNS",
]

SCHEMA_VERSION = 1
TARGET_KINDS = ("standard_normal", "gaussian", "gaussian_spectrum", "banana", "log_gamma")
SUMMARY_COLUMNS = ["schema_version"] + SUMMARY_FIELDS
DRAW_STAT_FIELDS = [
    "chain",
    "iteration",
    "phase",
    "step_size",
    "tree_depth",
    "n_leapfrog",
    "divergent",
    "accept_stat",
    "delta_h",
    "grad_count",
]


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


def _require(cond, where, msg):
    if not cond:
        raise ConfigError(f"{where}: {msg}")


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


_TARGET_PARAMS = {
    "standard_normal": {},
    "gaussian": {"mu": None, "sigma": None},
    "gaussian_spectrum": {
        "eigval_law": "lognormal",
        "eigval_param": 1.0,
        "diag_scale": 2.0,
        "square_eigvals": True,
        "kappa_range": None,
    },
    "banana": {"curvature": 0.1, "s": 10.0},
    "log_gamma": {"shape": 2.0, "rate": 1.0},
}


@dataclass(frozen=True)
class TargetSpec:
    name: str
    kind: str
    dim: int
    seed: int = 0
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"name": self.name, "kind": self.kind, "dim": self.dim, "seed": self.seed}
        out.update(self.params)
        return out


@dataclass(frozen=True)
class SamplerSpec:
    name: str
    estimator_kind: str = "diagonal"
    chains: int = 4
    num_warmup: int = 1000
    num_draws: int = 1000
    max_depth: int = 10
    target_accept: float = 0.8
    gamma: float = 1e-5
    cutoff: float = 2.0
    L1: int = 10
    L2: int = 80

    def sampler_config(self, backend=None) -> SamplerConfig:
        return SamplerConfig(
            estimator_kind=self.estimator_kind,
            num_warmup=self.num_warmup,
            num_draws=self.num_draws,
            max_depth=self.max_depth,
            target_accept=self.target_accept,
            gamma=self.gamma,
            cutoff=self.cutoff,
            L1=self.L1,
            L2=self.L2,
            backend=backend,
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ExperimentConfig:
    targets: tuple
    samplers: tuple
    seed: int = 0
    replications: int = 1
    output_dir: str | None = None
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        out = {
            "schema_version": self.schema_version,
            "seed": self.seed,
            "replications": self.replications,
            "targets": [t.to_dict() for t in self.targets],
            "samplers": [s.to_dict() for s in self.samplers],
        }
        if self.output_dir is not None:
            out["output_dir"] = self.output_dir
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)


def _parse_target(raw, i) -> TargetSpec:
    where = f"targets[{i}]"
    _require(isinstance(raw, dict), where, "must be an object")
    kind = raw.get("kind")
    _require(kind in TARGET_KINDS, f"{where}.kind", f"must be one of {list(TARGET_KINDS)}, got {kind!r}")
    defaults = _TARGET_PARAMS[kind]
    known = {"name", "kind", "dim", "seed"} | set(defaults)
    extra = set(raw) - known
    _require(not extra, where, f"unknown field(s) {sorted(extra)}")
    seed = raw.get("seed", 0)
    _require(_is_int(seed) and seed >= 0, f"{where}.seed", "must be a non-negative integer")
    params = {k: raw.get(k, v) for k, v in defaults.items()}
    if kind == "gaussian":
        mu, sigma = params["mu"], params["sigma"]
        _require(isinstance(mu, list) and mu and all(_is_num(v) for v in mu), f"{where}.mu", "must be a list of numbers")
        _require(
            isinstance(sigma, list) and len(sigma) == len(mu)
            and all(isinstance(r, list) and len(r) == len(mu) and all(_is_num(v) for v in r) for r in sigma),
            f"{where}.sigma",
            "must be a square list of lists matching mu",
        )
        dim = raw.get("dim", len(mu))
        _require(dim == len(mu), f"{where}.dim", "must equal len(mu)")
        params = {"mu": [float(v) for v in mu], "sigma": [[float(v) for v in r] for r in sigma]}
    else:
        dim = raw.get("dim")
        _require(_is_int(dim) and dim >= 1, f"{where}.dim", "must be a positive integer")
    if kind == "banana":
        _require(dim >= 2, f"{where}.dim", "banana needs dim >= 2")
    if kind == "gaussian_spectrum":
        _require(params["eigval_law"] in ("lognormal", "exponential"), f"{where}.eigval_law", "must be lognormal or exponential")
        for key in ("eigval_param", "diag_scale"):
            _require(_is_num(params[key]) and params[key] >= 0, f"{where}.{key}", "must be a non-negative number")
        _require(isinstance(params["square_eigvals"], bool), f"{where}.square_eigvals", "must be a boolean")
        kr = params["kappa_range"]
        if kr is not None:
            _require(isinstance(kr, list) and len(kr) == 2 and all(_is_num(v) for v in kr) and kr[0] <= kr[1],
                     f"{where}.kappa_range", "must be [low, high]")
            params["kappa_range"] = [float(v) for v in kr]
    if kind in ("banana", "log_gamma"):
        for key, val in params.items():
            _require(_is_num(val) and val > 0, f"{where}.{key}", "must be a positive number")
            params[key] = float(val)
    name = raw.get("name", f"{kind}_{i}")
    _require(isinstance(name, str) and name, f"{where}.name", "must be a non-empty string")
    return TargetSpec(name=name, kind=kind, dim=int(dim), seed=int(seed), params=params)


def _parse_sampler(raw, i) -> SamplerSpec:
    where = f"samplers[{i}]"
    _require(isinstance(raw, dict), where, "must be an object")
    names = {f.name for f in fields(SamplerSpec)}
    extra = set(raw) - names
    _require(not extra, where, f"unknown field(s) {sorted(extra)}")
    kind = raw.get("estimator_kind", "diagonal")
    _require(kind in ESTIMATOR_KINDS, f"{where}.estimator_kind", f"must be one of {list(ESTIMATOR_KINDS)}, got {kind!r}")
    values = {"name": raw.get("name", kind), "estimator_kind": kind}
    ints = {"chains": 1, "num_warmup": 20, "num_draws": 1, "max_depth": 0, "L1": 1, "L2": 1}
    for key, low in ints.items():
        if key in raw:
            v = raw[key]
            _require(_is_int(v) and v >= low, f"{where}.{key}", f"must be an integer >= {low}")
            values[key] = v
    if "target_accept" in raw:
        v = raw["target_accept"]
        _require(_is_num(v) and 0 < v < 1, f"{where}.target_accept", "must lie in (0, 1)")
        values["target_accept"] = float(v)
    if "gamma" in raw:
        v = raw["gamma"]
        _require(_is_num(v) and v > 0, f"{where}.gamma", "must be positive")
        values["gamma"] = float(v)
    if "cutoff" in raw:
        v = raw["cutoff"]
        _require(_is_num(v) and v >= 1, f"{where}.cutoff", "must be >= 1")
        values["cutoff"] = float(v)
    _require(isinstance(values["name"], str) and values["name"], f"{where}.name", "must be a non-empty string")
    return SamplerSpec(**values)


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a decoded JSON config; raises ConfigError naming the bad field."""
    _require(isinstance(raw, dict), "config", "must be a JSON object")
    known = {"schema_version", "seed", "replications", "targets", "samplers", "output_dir"}
    extra = set(raw) - known
    _require(not extra, "config", f"unknown field(s) {sorted(extra)}")
    version = raw.get("schema_version", SCHEMA_VERSION)
    _require(version == SCHEMA_VERSION, "schema_version", f"unsupported version {version!r} (expected {SCHEMA_VERSION})")
    seed = raw.get("seed", 0)
    _require(_is_int(seed) and seed >= 0, "seed", "must be a non-negative integer")
    reps = raw.get("replications", 1)
    _require(_is_int(reps) and reps >= 1, "replications", "must be a positive integer")
    targets = raw.get("targets")
    _require(isinstance(targets, list) and targets, "targets", "must be a non-empty list")
    samplers = raw.get("samplers")
    _require(isinstance(samplers, list) and samplers, "samplers", "must be a non-empty list")
    t_specs = tuple(_parse_target(t, i) for i, t in enumerate(targets))
    s_specs = tuple(_parse_sampler(s, i) for i, s in enumerate(samplers))
    for label, specs in (("targets", t_specs), ("samplers", s_specs)):
        names = [s.name for s in specs]
        _require(len(set(names)) == len(names), label, "names must be unique")
    out_dir = raw.get("output_dir")
    _require(out_dir is None or isinstance(out_dir, str), "output_dir", "must be a string")
    return ExperimentConfig(t_specs, s_specs, seed=seed, replications=reps, output_dir=out_dir)


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return parse_config(raw)


def build_target(spec: TargetSpec):
    """Instantiate a target; also returns its covariance when analytic (else None)."""
    p = spec.params
    if spec.kind == "standard_normal":
        return GaussianTarget(np.zeros(spec.dim), np.eye(spec.dim))
    if spec.kind == "gaussian":
        return GaussianTarget(np.array(p["mu"]), np.array(p["sigma"]))
    if spec.kind == "gaussian_spectrum":
        recipe = SpectrumRecipe(
            d=spec.dim,
            eigval_law=p["eigval_law"],
            eigval_param=p["eigval_param"],
            diag_scale=p["diag_scale"],
            seed=spec.seed,
            square_eigvals=p["square_eigvals"],
        )
        if p.get("kappa_range"):
            _, sigma = find_recipe_with_kappa(recipe, *p["kappa_range"])
        else:
            sigma = generate_spectrum_sigma(recipe)
        return GaussianTarget(np.zeros(spec.dim), sigma)
    if spec.kind == "banana":
        return BananaTarget(spec.dim, p["curvature"], p["s"])
    return LogGammaGaussianTarget(spec.dim, p["shape"], p["rate"])


def chain_seed(master: int, target: int, sampler: int, replication: int, chain: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master, spawn_key=(target, sampler, replication, chain))


def _run_chain(task):
    config, ti, si, rep, chain, backend = task
    target = build_target(config.targets[ti])
    sampler = config.samplers[si]
    rng = np.random.default_rng(chain_seed(config.seed, ti, si, rep, chain))
    try:
        return (ti, si, rep, chain), warmup_and_sample(target, sampler.sampler_config(backend), rng), None
    except Exception as exc:  # recorded per run; other runs continue
        return (ti, si, rep, chain), None, f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return json.dumps([float(x) for x in v])
    return "" if v is None else str(v)


def _write_draws(path: Path, results):
    d = results[0].draws.shape[1]
    with path.open("w", newline="") as fh:
        fh.write(f"# fisherhmc draws schema_version={SCHEMA_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(["chain", "iteration"] + [f"x{j}" for j in range(d)])
        for c, r in enumerate(results):
            for it, row in enumerate(r.draws):
                w.writerow([c, it] + [repr(float(v)) for v in row])


def _write_stats(path: Path, results):
    with path.open("w", newline="") as fh:
        fh.write(f"# fisherhmc draw stats schema_version={SCHEMA_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(DRAW_STAT_FIELDS)
        for c, r in enumerate(results):
            n_warm = r.num_warmup
            for i in range(r.tree_depth.size):
                w.writerow([
                    c, i - n_warm, int(r.phase[i]), repr(float(r.step_sizes[i])), int(r.tree_depth[i]),
                    int(r.n_leapfrog[i]), int(r.divergent[i]), repr(float(r.accept_stat[i])),
                    repr(float(r.delta_h[i])), int(r.grad_counts[i]),
                ])


def _write_rmse(path: Path, results, true_mean):
    chains = np.stack([np.vstack([r.x0, r.warmup_draws, r.draws]) for r in results])
    grads = np.stack([np.concatenate([[1], 1 + r.grad_counts]) for r in results])
    g, rmse = rmse_trace(chains, true_mean, grads)
    with path.open("w", newline="") as fh:
        fh.write(f"# fisherhmc rmse trace schema_version={SCHEMA_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(["draw", "n_grad", "rmse"])
        for i, (a, b) in enumerate(zip(g, rmse)):
            w.writerow([i, repr(float(a)), repr(float(b))])


@dataclass
class ExperimentOutcome:
    rows: list
    output_dir: Path
    n_failed: int
    n_unconverged: int

    @property
    def exit_code(self) -> int:
        return 0 if self.n_failed == 0 and self.n_unconverged == 0 else 1


def run_experiment(config: ExperimentConfig, output_dir=None, jobs: int | None = None,
                   backend: str | None = None, write_files: bool = True) -> ExperimentOutcome:
    """Run every (target, sampler, replication) and write draws, stats and summaries."""
    out = Path(output_dir or config.output_dir or os.environ.get("FISHERHMC_OUTPUT", "fisherhmc_output"))
    tasks = [
        (config, ti, si, rep, chain, backend)
        for ti in range(len(config.targets))
        for si, s in enumerate(config.samplers)
        for rep in range(config.replications)
        for chain in range(s.chains)
    ]
    jobs = jobs or os.cpu_count() or 1
    if jobs <= 1 or len(tasks) == 1:
        outputs = [_run_chain(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_run_chain, tasks, chunksize=1))
    by_run: dict = {}
    for key, result, err in outputs:
        by_run.setdefault(key[:3], []).append((key[3], result, err))

    if write_files:
        for sub in ("draws", "stats", "rmse"):
            (out / sub).mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(config.to_json())
    rows = []
    n_failed = n_unconverged = 0
    for (ti, si, rep), items in sorted(by_run.items()):
        items.sort(key=lambda t: t[0])
        tspec, sspec = config.targets[ti], config.samplers[si]
        meta = {
            "target": tspec.name,
            "sampler": sspec.name,
            "replication": rep,
            "estimator_kind": sspec.estimator_kind,
            "dim": tspec.dim,
            "chains": sspec.chains,
            "num_warmup": sspec.num_warmup,
            "num_draws": sspec.num_draws,
        }
        errors = [e for _, _, e in items if e]
        if errors:
            n_failed += 1
            row = {k: None for k in SUMMARY_FIELDS}
            row.update(meta, error=errors[0].splitlines()[0], converged=False)
        else:
            results = [r for _, r, _ in items]
            summary = summarize_chains(results, meta)
            row = summary.to_row()
            if not row["converged"]:
                n_unconverged += 1
            if write_files:
                stem = f"{tspec.name}__{sspec.name}__rep{rep}"
                _write_draws(out / "draws" / f"{stem}.csv", results)
                _write_stats(out / "stats" / f"{stem}.csv", results)
                true_mean = build_target(tspec).true_mean
                if true_mean is not None:
                    _write_rmse(out / "rmse" / f"{stem}.csv", results, true_mean)
        rows.append({"schema_version": SCHEMA_VERSION, **row})

    if write_files:
        with (out / "summary.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SUMMARY_COLUMNS)
            for row in rows:
                w.writerow([_fmt(row[k]) for k in SUMMARY_COLUMNS])
        with (out / "summary.jsonl").open("w") as fh:
            for row in rows:
                fh.write(json.dumps({k: row[k] for k in SUMMARY_COLUMNS}, default=float) + "\n")
    return ExperimentOutcome(rows, out, n_failed, n_unconverged)


def load_summaries(paths) -> list[dict]:
    """Read summary rows from .jsonl or .csv files."""
    rows = []
    for p in paths:
        p = Path(p)
        if p.suffix == ".jsonl":
            for line in p.read_text().splitlines():
                if line.strip():
                    rows.append(json.loads(line))
        else:
            with p.open(newline="") as fh:
                for raw in csv.DictReader(fh):
                    row = dict(raw)
                    for k in ("n_grad", "min_ess", "wall_time", "grad_per_ess", "ess_per_grad"):
                        row[k] = float(row[k]) if row.get(k) not in (None, "") else None
                    rows.append(row)
    return rows


def _aggregate(rows):
    """Per (target, sampler): ratio-of-totals gradients per ESS and ESS per second."""
    acc: dict = {}
    for r in rows:
        if r.get("error") or r.get("min_ess") in (None, ""):
            continue
        key = (r["target"], r["sampler"])
        a = acc.setdefault(key, [0.0, 0.0, 0.0])
        a[0] += float(r["n_grad"])
        a[1] += float(r["min_ess"])
        a[2] += float(r["wall_time"])
    out = {}
    for key, (g, e, t) in acc.items():
        out[key] = {
            "grad_per_ess": g / e if e > 0 else math.inf,
            "ess_per_second": e / t if t > 0 else math.inf,
        }
    return out


def compare_report(rows, reference: str, diagnostics=("grad_per_ess", "ess_per_second")) -> dict:
    """Per-target ratios of each sampler's diagnostic to the reference sampler's.

    Returns ``{"ratios": [...], "ecdf": [...], "medians": {...}}``. Rows with
    several replications are pooled as totals before taking ratios.
    """
    agg = _aggregate(rows)
    samplers = sorted({s for _, s in agg})
    if reference not in samplers:
        raise ValueError(f"reference sampler {reference!r} not found; have {samplers}")
    ref_targets = {t for t, s in agg if s == reference}
    ratios, medians, ecdf = [], {}, []
    shared_any = False
    for s in samplers:
        if s == reference:
            continue
        shared = sorted(ref_targets & {t for t, s2 in agg if s2 == s})
        if not shared:
            continue
        shared_any = True
        for diag in diagnostics:
            vals = []
            for t in shared:
                ratio = agg[(t, s)][diag] / agg[(t, reference)][diag]
                ratios.append({"target": t, "sampler": s, "reference": reference, "diagnostic": diag, "ratio": ratio})
                vals.append(ratio)
            medians[(s, diag)] = float(np.median(vals))
            srt = np.sort(vals)
            for i, v in enumerate(srt):
                ecdf.append({"sampler": s, "diagnostic": diag, "value": float(v), "cumulative": (i + 1) / srt.size})
    if not shared_any:
        raise ValueError("no sampler shares a target with the reference; target sets are disjoint")
    return {"ratios": ratios, "ecdf": ecdf, "medians": medians}


def kappa_sim(recipes: int, dims: int, windows=(10, 20, 50), seed: int = 0, eigval_param: float = 1.0,
              diag_scale: float = 2.0, square_eigvals: bool = True) -> list[dict]:
    """Preconditioned kappa' of diagonal estimators on random covariance recipes.

    For each recipe and window size k, k exact draws (with analytic scores)
    feed the Fisher diagonal estimator and the two baselines.
    """
    rows = []
    for i in range(recipes):
        recipe = SpectrumRecipe(d=dims, eigval_param=eigval_param, diag_scale=diag_scale,
                                seed=seed * 1_000_003 + i, square_eigvals=square_eigvals)
        target = GaussianTarget(np.zeros(dims), generate_spectrum_sigma(recipe))
        rng = np.random.default_rng([seed, i])
        kappa_id = preconditioned_kappa(target.sigma, np.eye(dims))
        for k in windows:
            draws = target.sample(k, rng)
            data = (draws, target.score_at(draws))
            rows.append({
                "recipe": i,
                "window": k,
                "kappa_identity": kappa_id,
                "kappa_fisher": preconditioned_kappa(target.sigma, estimate_diagonal(data)),
                "kappa_variance": preconditioned_kappa(target.sigma, estimate_variance_baseline(data)),
                "kappa_score": preconditioned_kappa(target.sigma, estimate_score_baseline(data)),
            })
    return rows
