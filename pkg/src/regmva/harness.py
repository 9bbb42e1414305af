"""Experiment orchestration: loss-vs-k, TEV-vs-k and CEF-vs-SR sweeps.

Every sweep expands into independent fit jobs over one shared, immutable
dataset. Jobs may run in worker processes; rows are sorted before they are
returned, so the output never depends on scheduling.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .core import MvaProblem, Variant, fit_closed_form, objective, prepare, trace_objective
from .dataset import SEGMENT_TARGET, Dataset, load_dataset
from .iterate import InitScheme, derive_seed, fit_iterative
from .metrics import MetricRow, cef, sparsity_rate, tev
from .regularizers import Penalty, gamma_for_sparsity

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentReport",
    "AggregateRow",
    "CSV_HEADER",
    "CEF_METHODS",
    "load_config",
    "run_loss_vs_k",
    "run_tev_vs_k",
    "run_cef_vs_sr",
    "aggregate",
    "emit_csv",
    "read_rows",
]

CSV_HEADER = ("method", "variant", "k", "seed", "gamma", "sr", "loss", "tev", "cef",
              "iterations", "converged")
AGG_HEADER = ("method", "variant", "k", "target_sr", "gamma", "count", "sr_mean", "sr_std",
              "loss_mean", "loss_std", "tev_mean", "tev_std", "cef_mean", "cef_std")

# CEF-vs-SR methods: (name, W-step strategy, init kind)
CEF_METHODS = {
    "eigen-random": ("eigen", "random"),
    "procrustes-random": ("procrustes", "random"),
    "procrustes-orthog": ("procrustes", "orthogonal"),
    "procrustes-ideal": ("procrustes", "ideal"),
}
K_METHODS = ("closed-form", "procrustes", "eigen")
DEFAULT_SR_GRID = tuple(round(0.1 * i, 1) for i in range(9))


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    data: str = "segment.csv"
    target: str = SEGMENT_TARGET
    standardize: bool | None = None  # None: per-experiment default (on only for CEF-vs-SR)
    keep_collinear: bool = False
    variants: tuple = ("pca", "cca", "opls")
    strategies: tuple = ("procrustes", "eigen")
    k: tuple | None = None  # inclusive (lo, hi); None = 1..min(n, m) per variant
    seeds: int = 50
    root_seed: int = 0
    penalty: str = "l1"
    sr_grid: tuple = DEFAULT_SR_GRID
    gamma: float | None = None  # fixed gamma instead of SR targeting
    zero_sr_gamma: float = 0.0
    sr_tolerance: float = 0.01
    cef_k: int = 4
    cef_methods: tuple = tuple(CEF_METHODS)
    max_iter: int = 500
    tol: float = 1e-6
    jobs: int = 1
    out: str = "results"
    gnuplot: bool = False

    def validate(self) -> "ExperimentConfig":
        if self.seeds < 1:
            raise ConfigError("seeds must be at least 1")
        if not self.sr_grid or any(not 0.0 <= s <= 0.8 for s in self.sr_grid):
            raise ConfigError("SR grid must be a non-empty subset of [0, 0.8]")
        if self.penalty not in ("l1", "l21"):
            raise ConfigError("penalty must be l1 or l21")
        for v in self.variants:
            if v not in {x.value for x in Variant}:
                raise ConfigError(f"unknown variant {v!r}")
        for s in self.strategies:
            if s not in ("procrustes", "eigen"):
                raise ConfigError(f"unknown strategy {s!r}")
        for mth in self.cef_methods:
            if mth not in CEF_METHODS:
                raise ConfigError(f"unknown CEF method {mth!r}; expected one of {list(CEF_METHODS)}")
        if self.k is not None and (len(self.k) != 2 or self.k[0] < 1 or self.k[1] < self.k[0]):
            raise ConfigError(f"bad k range {self.k}")
        if self.cef_k < 1 or self.jobs < 1 or self.max_iter < 1 or self.tol <= 0:
            raise ConfigError("cef_k, jobs and max_iter must be positive, tol > 0")
        if self.gamma is not None and self.gamma < 0:
            raise ConfigError("gamma must be non-negative")
        return self

    def load(self) -> Dataset:
        return _dataset_for(self)

    def k_values(self, max_k: int) -> range:
        lo, hi = self.k if self.k is not None else (1, max_k)
        if hi > max_k:
            raise ConfigError(f"k range {lo}..{hi} exceeds min(n, m) = {max_k}")
        return range(lo, hi + 1)


def _parse_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def parse_k_range(text) -> tuple[int, int]:
    """``"3"`` or ``"1..6"`` to an inclusive pair."""
    s = str(text).strip()
    try:
        if ".." in s:
            a, b = s.split("..", 1)
            return int(a), int(b)
        return int(s), int(s)
    except ValueError:
        raise ConfigError(f"bad k range {text!r}; expected N or A..B") from None


def _split(v) -> tuple:
    if isinstance(v, (list, tuple)):
        return tuple(v)
    return tuple(x.strip() for x in str(v).split(",") if x.strip())


def coerce(key: str, value):
    """Convert a string config value to the type of field ``key``."""
    key = key.replace("-", "_")
    names = {f.name for f in fields(ExperimentConfig)}
    if key == "variant":
        key = "variants"
    if key not in names:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        if key == "standardize":
            return key, None if str(value).lower() in ("", "none", "auto") else _parse_bool(value)
        if key in ("keep_collinear", "gnuplot"):
            return key, _parse_bool(value)
        if key in ("seeds", "root_seed", "cef_k", "max_iter", "jobs"):
            return key, int(value)
        if key in ("zero_sr_gamma", "sr_tolerance", "tol"):
            return key, float(value)
        if key == "gamma":
            return key, None if str(value).lower() in ("", "none") else float(value)
        if key == "k":
            return key, None if value is None else (
                tuple(value) if isinstance(value, tuple) else parse_k_range(value))
        if key == "sr_grid":
            return key, tuple(float(x) for x in _split(value))
        if key in ("variants", "strategies", "cef_methods"):
            return key, tuple(str(x).lower() for x in _split(value))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from None
    return key, str(value)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read ``key=value`` lines (``#`` comments allowed); ``overrides`` win."""
    values: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            key, val = coerce(k.strip(), v.strip())
            values[key] = val
    for k, v in (overrides or {}).items():
        if v is not None:
            key, val = coerce(k, v)
            values[key] = val
    return ExperimentConfig(**values).validate()


# ------------------------------------------------------------- datasets ------

_DATASETS: dict = {}


def _dataset_for(config: ExperimentConfig) -> Dataset:
    standardize = bool(config.standardize)
    key = (config.data, config.target, standardize, config.keep_collinear)
    if key not in _DATASETS:
        _DATASETS[key] = load_dataset(config.data, config.target, standardize,
                                      drop_collinear_features=not config.keep_collinear)
    return _DATASETS[key]


def _resolve(config: ExperimentConfig, standardize_default: bool) -> ExperimentConfig:
    config.validate()
    if config.standardize is None:
        config = replace(config, standardize=standardize_default)
    return config


# ------------------------------------------------------------- reports -------

@dataclass
class AggregateRow:
    method: str
    variant: str
    k: int
    target_sr: float | None
    gamma: float
    count: int
    sr_mean: float
    sr_std: float
    loss_mean: float
    loss_std: float
    tev_mean: float
    tev_std: float
    cef_mean: float
    cef_std: float


@dataclass
class ExperimentReport:
    name: str
    config: ExperimentConfig
    rows: list = field(default_factory=list)
    aggregates: list = field(default_factory=list)
    preprocessing: dict = field(default_factory=dict)

    @property
    def errors(self) -> int:
        return sum(r.converged == "error" for r in self.rows)


def _target_key(target) -> float:
    return -1.0 if target is None else target


def _sort_key(row: MetricRow):
    return (row.method, row.variant, row.k, _target_key(row.target_sr), row.sr, row.seed)


def _mean_std(values):
    a = np.asarray(values, dtype=float)
    if a.size == 0:
        return math.nan, math.nan
    if np.all(a == a[0]):
        return float(a[0]), 0.0
    return float(np.mean(a)), float(np.std(a))


def aggregate(rows) -> list:
    """Mean and (population) standard deviation over seeds, per
    ``(method, variant, k, target SR)``; error rows are skipped."""
    groups: dict = {}
    for r in rows:
        if r.converged == "error":
            continue
        groups.setdefault((r.method, r.variant, r.k, r.target_sr), []).append(r)
    out = []
    for (method, variant, k, target), rs in sorted(
            groups.items(), key=lambda kv: (*kv[0][:3], _target_key(kv[0][3]))):
        gammas = sorted({r.gamma for r in rs})
        cols = [_mean_std([getattr(r, a) for r in rs]) for a in ("sr", "loss", "tev", "cef")]
        out.append(AggregateRow(method, variant, k, target,
                                gammas[0] if len(gammas) == 1 else math.nan, len(rs),
                                *[v for pair in cols for v in pair]))
    return out


# ------------------------------------------------------------- jobs ----------

def _metrics_row(prob: MvaProblem, model, method, seed, target_sr, loss_kind) -> MetricRow:
    if loss_kind == "trace":
        loss = trace_objective(prob, prob.variant, model.V)
    else:
        loss = objective(prob, prob.variant, model.U, model.W, model.gamma, model.penalty)
    curve = tev(model.U, prob.Cxx)
    return MetricRow(method, prob.variant.name, model.k, seed, model.gamma,
                     sparsity_rate(model.U), loss, float(curve[-1]), cef(model.U, prob.Cxx),
                     model.iterations, "true" if model.converged else "false",
                     tuple(float(x) for x in curve), target_sr)


def _error_row(method, variant, k, seed, gamma, target_sr, exc) -> MetricRow:
    nan = math.nan
    return MetricRow(method, variant, k, seed, gamma, nan, nan, nan, nan, 0, "error", (),
                     target_sr, error=f"{type(exc).__name__}: {exc}")


def _init_for(kind: str, seed: int) -> InitScheme:
    return InitScheme.random(seed) if kind == "random" else InitScheme(kind)


def _k_job(config: ExperimentConfig, variant: str, k: int, method: str, seeds: tuple):
    """All seeds of one (variant, k, method) cell of the loss/TEV sweeps."""
    d = _dataset_for(config)
    prob = prepare(d, variant)
    loss_kind = "trace" if variant == "cca" else "objective"
    rows = []
    closed = None
    for seed in seeds:
        try:
            if method == "closed-form":
                if closed is None:
                    closed = _metrics_row(prob, fit_closed_form(prob, variant, k, 0.0),
                                          method, seed, None, loss_kind)
                rows.append(replace(closed, seed=seed))
                continue
            model = fit_iterative(prob, variant, k, Penalty("none"), method,
                                  InitScheme.random(seed), config.max_iter, config.tol)
            rows.append(_metrics_row(prob, model, method, seed, None, loss_kind))
        except Exception as exc:  # noqa: BLE001 - recorded per row
            rows.append(_error_row(method, variant, k, seed, 0.0, None, exc))
    return rows


def _calibrate_job(config: ExperimentConfig, variant: str, k: int, method: str, target: float,
                   seed: int):
    """gamma for one (variant, method, SR point), fitted from the first seed."""
    if config.gamma is not None:
        return config.gamma
    if target == 0.0:
        return config.zero_sr_gamma
    strategy, init_kind = CEF_METHODS[method]
    fit = gamma_for_sparsity(_dataset_for(config), variant, k, config.penalty, target,
                             config.sr_tolerance, strategy=strategy,
                             init=_init_for(init_kind, seed), max_iter=config.max_iter,
                             tol=config.tol)
    return fit.gamma


def _cef_job(config: ExperimentConfig, variant: str, k: int, method: str, target: float,
             gamma: float, seeds: tuple):
    d = _dataset_for(config)
    prob = prepare(d, variant)
    strategy, init_kind = CEF_METHODS[method]
    penalty = Penalty(config.penalty, gamma)
    rows = []
    shared = None  # deterministic inits give the same fit for every seed
    for seed in seeds:
        try:
            if init_kind != "random" and shared is not None:
                rows.append(replace(shared, seed=seed))
                continue
            model = fit_iterative(prob, variant, k, penalty, strategy,
                                  _init_for(init_kind, seed), config.max_iter, config.tol)
            row = _metrics_row(prob, model, method, seed, target, "objective")
            if init_kind != "random":
                shared = row
            rows.append(row)
        except Exception as exc:  # noqa: BLE001 - recorded per row
            rows.append(_error_row(method, variant, k, seed, gamma, target, exc))
    return rows


def _run_jobs(fn, jobs: list, n_workers: int) -> list:
    if n_workers <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        futures = [pool.submit(fn, *j) for j in jobs]
        return [f.result() for f in futures]


def _seeds(config: ExperimentConfig) -> tuple:
    return tuple(derive_seed(config.root_seed, i) for i in range(config.seeds))


def _finish(name, config, d, rows) -> ExperimentReport:
    rows = sorted(rows, key=_sort_key)
    return ExperimentReport(name, config, rows, aggregate(rows), dict(d.preprocessing))


def _sweep_k(name: str, config: ExperimentConfig) -> ExperimentReport:
    config = _resolve(config, False)
    d = _dataset_for(config)
    seeds = _seeds(config)
    methods = ("closed-form",) + tuple(config.strategies)
    jobs = []
    for variant in config.variants:
        for k in config.k_values(prepare(d, variant).max_k):
            for method in methods:
                jobs.append((config, variant, k, method, seeds))
    rows = [r for chunk in _run_jobs(_k_job, jobs, config.jobs) for r in chunk]
    return _finish(name, config, d, rows)


def run_loss_vs_k(config: ExperimentConfig) -> ExperimentReport:
    """Unregularized loss per (variant, k, method, seed); CCA reports ``Tr{V^T M V}``."""
    return _sweep_k("loss-vs-k", config)


def run_tev_vs_k(config: ExperimentConfig) -> ExperimentReport:
    """Same sweep as :func:`run_loss_vs_k`; the TEV column is the payload."""
    return _sweep_k("tev-vs-k", config)


def run_cef_vs_sr(config: ExperimentConfig) -> ExperimentReport:
    """CEF per (variant, method, SR grid point, seed) under an l1 or l21 penalty.

    ``gamma`` is calibrated once per (variant, method, SR point) with
    :func:`gamma_for_sparsity`, starting from the first seed's
    initialization, and then reused for every seed; the reported ``sr`` is
    the one each fit actually reached. The SR = 0 point uses
    ``zero_sr_gamma`` (default 0, the unregularized limit). Features are
    standardized unless the config says otherwise: the gamma bracket and
    absolute CEF levels assume unit-variance inputs.
    """
    config = _resolve(config, True)
    d = _dataset_for(config)
    seeds = _seeds(config)
    k = config.cef_k
    cal_jobs = []
    for variant in config.variants:
        max_k = prepare(d, variant).max_k
        if k > max_k:
            raise ConfigError(f"cef_k={k} exceeds min(n, m) = {max_k} for {variant}")
        for method in config.cef_methods:
            for target in config.sr_grid:
                cal_jobs.append((config, variant, k, method, float(target), seeds[0]))
    gammas = _run_jobs(_calibrate_job, cal_jobs, config.jobs)
    fit_jobs = [(config, v, kk, m, t, g, seeds) for (_, v, kk, m, t, _), g in zip(cal_jobs, gammas)]
    rows = [r for chunk in _run_jobs(_cef_job, fit_jobs, config.jobs) for r in chunk]
    return _finish("cef-vs-sr", config, d, rows)


# ------------------------------------------------------------- output --------

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        return format(x, ".17g")
    return str(x)


def _meta_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ",".join(_meta_value(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def emit_csv(report: ExperimentReport, path, gnuplot: bool = False) -> dict:
    """Write rows to ``path``, aggregates to ``<stem>_agg.csv`` and the
    preprocessing record to ``<stem>_meta.txt``; optionally ``<stem>.dat``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stem = path.with_suffix("")
    agg_path = Path(f"{stem}_agg.csv")
    meta_path = Path(f"{stem}_meta.txt")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in report.rows:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_HEADER])
    with open(agg_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGG_HEADER)
        for a in report.aggregates:
            w.writerow([_fmt(getattr(a, c)) for c in AGG_HEADER])
    meta = {"experiment": report.name}
    meta.update({k: v for k, v in asdict(report.config).items()})
    meta.update({f"preprocessing.{k}": v for k, v in report.preprocessing.items()})
    with open(meta_path, "w", encoding="utf-8") as fh:
        for k, v in meta.items():
            fh.write(f"{k}={_meta_value(v)}\n")
        errs = [r for r in report.rows if r.converged == "error"]
        for r in errs:
            fh.write(f"error.{r.method}.{r.variant}.{r.k}.{r.seed}={r.error}\n")
    paths = {"rows": path, "aggregate": agg_path, "meta": meta_path}
    if gnuplot:
        dat = Path(f"{stem}.dat")
        with open(dat, "w", encoding="utf-8") as fh:
            fh.write("# " + " ".join(AGG_HEADER) + "\n")
            for a in report.aggregates:
                fh.write(" ".join(_fmt(getattr(a, c)) or "nan" for c in AGG_HEADER) + "\n")
        paths["gnuplot"] = dat
    return paths


def read_rows(path) -> list:
    """Reload a row CSV written by :func:`emit_csv` (floats round-trip exactly)."""
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(MetricRow(rec["method"], rec["variant"], int(rec["k"]), int(rec["seed"]),
                                  float(rec["gamma"]), float(rec["sr"]), float(rec["loss"]),
                                  float(rec["tev"]), float(rec["cef"]), int(rec["iterations"]),
                                  rec["converged"]))
    return rows


def default_out_path(config: ExperimentConfig, name: str) -> Path:
    return Path(config.out) / f"{name.replace('-', '_')}.csv"

