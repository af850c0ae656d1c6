"""Experiment orchestration: configs, single runs, sweeps and report tables.

A config is a TOML document. Recognised tables and keys::

    seed = 0                         # overridden by TSNORMLAB_SEED, then --seed

    [model]      n d heads ff_width layers positional_encoding activation
                 task n_classes horizon
    [weights]    source = "init" | "zero" | "unit" | "identity" | "file"
                 scale seed path
    [stats]      source = "dataset" | "explicit"
                 strategy scale mean min range        (explicit only)
    [bound]      epsilon sigma strategy c1_variant v_is_variance
    [expressivity] samples mode k perturb
    [dataset]    generator = "gaussian" | "dominant_channel" | "amplitude_classes"
                             | "trend_forecast"
                 path test_path format n_train n_test seed + generator arguments
    [train]      lr epochs patience batch_size init_scale
    [sweep]      strategies seeds output model_tag

Unknown tables or keys are rejected so a typo never silently falls back to a
default.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import math
import os
import time
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import data as tsdata
from .errors import ConfigError, DegeneracyWarning, NumericError
from .expressivity import (C1_VARIANTS, MODES, BoundQuery, BoundReport, compute_bound,
                           estimate_expressivity, strategy_factor)
from .grad import Split, TrainConfig, evaluate, history_to_csv, train
from .model import ModelConfig, init_weights, load_weights, unit_weights, zero_weights
from .normalize import STRATEGY_NAMES, FittedNormalizer, NormStrategy, apply, apply_inverse, fit

SEED_ENV = "TSNORMLAB_SEED"

SCHEMA: dict[str, set[str]] = {
    "model": {"n", "d", "heads", "ff_width", "layers", "positional_encoding", "activation",
              "task", "n_classes", "horizon"},
    "weights": {"source", "scale", "seed", "path"},
    "stats": {"source", "strategy", "scale", "mean", "min", "range"},
    "bound": {"epsilon", "sigma", "strategy", "c1_variant", "v_is_variance"},
    "expressivity": {"samples", "mode", "k", "perturb"},
    "dataset": {"generator", "path", "test_path", "format", "n_train", "n_test", "seed",
                "n_instances", "channels", "length", "scale_ratio", "noise", "cycles",
                "amp_a", "amp_b", "context", "horizon", "offset", "trend", "seasonal",
                "period"},
    "train": {"lr", "epochs", "patience", "batch_size", "init_scale"},
    "sweep": {"strategies", "seeds", "output", "model_tag"},
}


# --------------------------------------------------------------------------
# config plumbing

def load_config(path: str | Path) -> dict:
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}", key="config") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}", key="config") from exc
    validate_config(cfg)
    if path is not None:
        cfg.setdefault("_base_dir", str(Path(path).resolve().parent))
    return cfg


def validate_config(cfg: dict):
    for key, value in cfg.items():
        if key in ("seed", "_base_dir"):
            continue
        if key not in SCHEMA:
            raise ConfigError(f"unknown config table [{key}]", key=key)
        if not isinstance(value, dict):
            raise ConfigError(f"[{key}] must be a table", key=key)
        extra = set(value) - SCHEMA[key]
        if extra:
            bad = sorted(extra)[0]
            raise ConfigError(f"unknown key '{bad}' in [{key}]", key=bad)


def _need(table: dict, section: str, key: str):
    if key not in table:
        raise ConfigError(f"missing required key '{key}' in [{section}]", key=key)
    return table[key]


def _section(cfg: dict, name: str, required: bool = True) -> dict:
    if name not in cfg:
        if required:
            raise ConfigError(f"missing required table [{name}]", key=name)
        return {}
    return cfg[name]


def resolve_seed(cfg: dict, cli_seed: int | None = None) -> int:
    """``--seed`` beats ``TSNORMLAB_SEED`` beats the config's ``seed``."""
    if cli_seed is not None:
        return int(cli_seed)
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}", key=SEED_ENV) from exc
    return int(cfg.get("seed", 0))


def _resolve_path(cfg: dict, p: str) -> Path:
    path = Path(p)
    if not path.is_absolute() and "_base_dir" in cfg:
        path = Path(cfg["_base_dir"]) / path
    return path


def model_config(cfg: dict) -> ModelConfig:
    m = _section(cfg, "model")
    kwargs = {k: m[k] for k in SCHEMA["model"] if k in m}
    for key in ("n", "d", "heads"):
        _need(m, "model", key)
    try:
        return ModelConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [model]: {exc}", key="model") from exc


def build_weights(cfg: dict, mcfg: ModelConfig | None, seed: int):
    """Return ``(ModelConfig, ModelWeights | None)`` as described by ``[weights]``."""
    w = _section(cfg, "weights")
    source = _need(w, "weights", "source")
    if source == "file":
        path = _resolve_path(cfg, _need(w, "weights", "path"))
        try:
            return load_weights(path)
        except OSError as exc:
            raise ConfigError(f"cannot read weights file {path}: {exc}", key="path") from exc
    if mcfg is None:
        mcfg = model_config(cfg)
    if source == "init":
        return mcfg, init_weights(mcfg, int(w.get("seed", seed)), float(w.get("scale", 1.0)))
    if source == "zero":
        return mcfg, zero_weights(mcfg)
    if source == "unit":
        return mcfg, unit_weights(mcfg)
    if source == "identity":
        return mcfg, None
    raise ConfigError(f"unknown weights source {source!r}", key="source")


def _array_or_scalar(value, d: int, key: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if arr.size == 1:
        arr = np.full(d, arr[0])
    if arr.shape != (d,):
        raise ConfigError(f"[stats] {key} needs 1 or {d} values, got {arr.size}", key=key)
    return arr


def explicit_stats(strategy: str, d: int, scale=None, mean=0.0, vmin=0.0, vrange=None) -> FittedNormalizer:
    """Normalizer built from user-supplied statistics instead of a fit.

    ``scale`` is the standard deviation ``v`` (per channel, or one pooled
    value for ``standard_global``); ``vrange`` is ``max - min`` likewise.
    """
    st = NormStrategy.parse(strategy)
    nan = np.full(d, np.nan)
    mean_a = _array_or_scalar(mean, d, "mean")
    min_a = _array_or_scalar(vmin, d, "min")
    scale_a = _array_or_scalar(1.0 if scale is None else scale, d, "scale")
    range_a = _array_or_scalar(1.0 if vrange is None else vrange, d, "range")
    if np.any(scale_a <= 0) or np.any(range_a <= 0):
        raise ConfigError("[stats] scale and range must be positive", key="scale")
    is_global = st.is_global
    if is_global and (np.ptp(scale_a) > 0 or np.ptp(range_a) > 0 or np.ptp(mean_a) > 0 or np.ptp(min_a) > 0):
        raise ConfigError(f"{st.kind} takes a single pooled value per statistic", key="scale")
    return FittedNormalizer(
        strategy=st, scope="dataset", channels=d,
        mean=mean_a, scale=scale_a, min=min_a, max=min_a + range_a,
        median=nan, iqr=nan,
        global_mean=float(mean_a[0]), global_scale=float(scale_a[0]),
        global_min=float(min_a[0]), global_max=float(min_a[0] + range_a[0]),
        span=range_a, global_span=float(range_a[0]),
    )


# --------------------------------------------------------------------------
# datasets

GENERATORS: dict[str, Callable[..., tsdata.Dataset]] = {
    "gaussian": tsdata.synth_gaussian,
    "dominant_channel": tsdata.synth_dominant_channel,
    "amplitude_classes": tsdata.synth_amplitude_classes,
    "trend_forecast": tsdata.synth_trend_forecast,
}
_GEN_ARGS = {
    "gaussian": ("channels", "length"),
    "dominant_channel": ("length", "scale_ratio", "noise", "cycles"),
    "amplitude_classes": ("length", "amp_a", "amp_b", "cycles"),
    "trend_forecast": ("context", "horizon", "offset", "channels", "trend", "seasonal",
                       "period", "noise"),
}


def _read_dataset(path: Path, fmt: str | None, split: str) -> tsdata.Dataset:
    fmt = fmt or path.suffix.lstrip(".").lower()
    text = path.read_text(encoding="utf-8")
    if fmt == "ts":
        return tsdata.parse_uea_ts(text, name=path.stem, split=split)
    if fmt == "csv":
        return tsdata.parse_csv(text, name=path.stem, split=split)
    raise ConfigError(f"unknown dataset format {fmt!r}", key="format")


def load_datasets(cfg: dict, seed: int) -> tuple[tsdata.Dataset, tsdata.Dataset | None]:
    """``(train, test)`` from a generator table or file paths; ``test`` may be None."""
    ds = _section(cfg, "dataset")
    if "path" in ds:
        try:
            train_ds = _read_dataset(_resolve_path(cfg, ds["path"]), ds.get("format"), "train")
            test_ds = (_read_dataset(_resolve_path(cfg, ds["test_path"]), ds.get("format"), "test")
                       if "test_path" in ds else None)
        except OSError as exc:
            raise ConfigError(f"cannot read dataset: {exc}", key="path") from exc
        return train_ds, test_ds
    name = _need(ds, "dataset", "generator")
    if name not in GENERATORS:
        raise ConfigError(f"unknown generator {name!r}; expected one of {sorted(GENERATORS)}",
                          key="generator")
    kwargs = {k: ds[k] for k in _GEN_ARGS[name] if k in ds}
    data_seed = int(ds.get("seed", seed))
    n_test = int(ds.get("n_test", 0))
    n_total = int(ds.get("n_train", ds.get("n_instances", 100))) + n_test
    try:
        full = GENERATORS[name](n_total, seed=data_seed, **kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad arguments for generator {name!r}: {exc}", key="generator") from exc
    if n_test == 0:
        return full, None
    train_ds, test_ds = tsdata.train_val_split(full, n_test / n_total, data_seed + 7919)
    if "persistence_mae" in full.meta:
        train_ds = dataclasses.replace(train_ds, meta={"persistence_mae": tsdata.persistence_mae(train_ds)})
        test_ds = dataclasses.replace(test_ds, meta={"persistence_mae": tsdata.persistence_mae(test_ds)},
                                      split="test")
    return train_ds, test_ds


# --------------------------------------------------------------------------
# preprocessing into model-ready splits

def default_scope(strategy: str, task: str) -> str:
    """Classification normalises every series on its own statistics;
    forecasting keeps instance statistics only for the ``*_instance``
    strategies and fits the rest on the training split."""
    if task == "classification" or strategy.endswith("_instance") or strategy == "none":
        return "instance"
    return "dataset"


class Preprocessor:
    """Fit once on the training split, then turn any split into a :class:`Split`."""

    def __init__(self, strategy: str, scope: str, train_ds: tsdata.Dataset):
        self.strategy = NormStrategy.parse(strategy)
        self.scope = scope
        self.shared = None
        if scope == "dataset":
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegeneracyWarning)
                self.shared = fit(self.strategy, train_ds, "dataset")

    def _fits(self, ds: tsdata.Dataset) -> list[FittedNormalizer]:
        if self.shared is not None:
            return [self.shared] * len(ds)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegeneracyWarning)
            return [fit(self.strategy, inst, "instance") for inst in ds.instances]

    def split(self, ds: tsdata.Dataset, task: str) -> Split:
        if len(ds) == 0:
            raise ValueError(f"split {ds.split!r} of {ds.name!r} is empty")
        norms = self._fits(ds)
        x = np.stack([tsdata.tokenize(apply(nm, inst.values)) for nm, inst in zip(norms, ds.instances)])
        if task == "classification":
            return Split(x, ds.label_indices())
        if any(inst.target is None for inst in ds.instances):
            raise ValueError("forecasting needs a target on every instance")
        y = np.stack([apply(nm, inst.target).T.reshape(-1) for nm, inst in zip(norms, ds.instances)])
        y_raw = np.stack([inst.target.T.reshape(-1) for inst in ds.instances])
        horizon, channels = ds.instances[0].target.shape[1], ds.channels

        def decode(out: np.ndarray) -> np.ndarray:
            grid = np.swapaxes(out.reshape(len(norms), horizon, channels), 1, 2)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegeneracyWarning)
                back = np.stack([apply_inverse(nm, g) for nm, g in zip(norms, grid)])
            return np.swapaxes(back, 1, 2).reshape(len(norms), -1)

        return Split(x, y, y_raw, decode)


def train_config(cfg: dict, seed: int, task: str) -> TrainConfig:
    t = dict(_section(cfg, "train", required=False))
    loss = "cross_entropy" if task == "classification" else "squared_error"
    if "patience" not in t and "epochs" in t:
        t["patience"] = min(TrainConfig.patience, t["epochs"])
    try:
        return TrainConfig(seed=seed, loss=loss, **t)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [train]: {exc}", key="train") from exc


def _with_shape(mcfg: ModelConfig, ds: tsdata.Dataset) -> ModelConfig:
    inst = ds.instances[0]
    changes = {"n": inst.length, "d": inst.channels}
    if mcfg.task == "classification":
        changes["n_classes"] = max(2, len(ds.class_labels))
    elif inst.target is not None:
        changes["horizon"] = inst.target.shape[1]
    return dataclasses.replace(mcfg, **changes)


# --------------------------------------------------------------------------
# single run and records

@dataclass(frozen=True)
class RunRecord:
    dataset: str
    model_tag: str
    strategy: str
    seed: int
    task: str
    metric: str
    value: float
    wall_ms: float
    config_hash: str
    status: str = "ok"
    error: str = ""

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        fields = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in fields})


def config_hash(cfg: dict) -> str:
    """sha256 of the canonical config minus the sweep bookkeeping."""
    body = {k: v for k, v in cfg.items() if k not in ("sweep", "seed", "_base_dir")}
    canon = json.dumps(body, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()


def run_one(cfg: dict, strategy: str, seed: int, chash: str | None = None,
            history_path: Path | None = None) -> RunRecord:
    """Train one model for ``(strategy, seed)`` and score it on the test split.

    Without a test split the validation split is scored. Training failures
    come back as a record with ``status="failed"``.
    """
    if strategy not in STRATEGY_NAMES:
        raise ConfigError(f"unknown strategy {strategy!r}", key="strategies")
    chash = chash or config_hash(cfg)
    mcfg0 = model_config(cfg)
    if "positional_encoding" not in cfg["model"]:
        # training runs encode positions unless the config says otherwise
        mcfg0 = dataclasses.replace(mcfg0, positional_encoding=True)
    task = mcfg0.task
    metric = "accuracy" if task == "classification" else "mae"
    tag = _section(cfg, "sweep", required=False).get("model_tag", f"enc-d{mcfg0.d}-h{mcfg0.heads}")
    t0 = time.perf_counter()
    train_full, test_ds = load_datasets(cfg, seed)
    if len(train_full) == 0:
        raise ValueError("training data is empty")
    mcfg = _with_shape(mcfg0, train_full)
    tcfg = train_config(cfg, seed, task)
    train_ds, val_ds = tsdata.train_val_split(train_full, 0.2, seed)
    pre = Preprocessor(strategy, default_scope(strategy, task), train_ds)
    try:
        tr = pre.split(train_ds, task)
        va = pre.split(val_ds, task)
        weights, history = train(mcfg, tcfg, tr, va)
        value = evaluate(mcfg, weights, pre.split(test_ds, task) if test_ds is not None else va)
        if not math.isfinite(value):
            raise NumericError("metric is not finite", stage="evaluate")
        status, err = "ok", ""
    except NumericError as exc:
        value, status, err, history = float("nan"), "failed", str(exc), []
    if history_path is not None and history:
        history_path.parent.mkdir(parents=True, exist_ok=True)
        history_path.write_text(history_to_csv(history))
    return RunRecord(train_full.name, tag, strategy, int(seed), task, metric, value,
                     (time.perf_counter() - t0) * 1e3, chash, status, err)


# --------------------------------------------------------------------------
# sweep

def _sweep_plan(cfg: dict, seed_override: int | None) -> tuple[list[str], list[int], Path]:
    sw = _section(cfg, "sweep")
    strategies = list(_need(sw, "sweep", "strategies"))
    if not strategies:
        raise ConfigError("[sweep] strategies must not be empty", key="strategies")
    for s in strategies:
        if s not in STRATEGY_NAMES:
            raise ConfigError(f"unknown strategy {s!r} in [sweep] strategies", key="strategies")
    if seed_override is not None:
        seeds = [seed_override]
    else:
        seeds = [int(s) for s in _need(sw, "sweep", "seeds")]
    if not seeds:
        raise ConfigError("[sweep] seeds must not be empty", key="seeds")
    out = _resolve_path(cfg, sw.get("output", "output"))
    return strategies, seeds, out


def read_records(path: str | Path) -> list[RunRecord]:
    path = Path(path)
    if not path.exists():
        return []
    records = []
    for no, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(RunRecord.from_dict(json.loads(line)))
        except (json.JSONDecodeError, TypeError) as exc:
            raise ValueError(f"{path}:{no}: malformed record: {exc}") from exc
    return records


def _sweep_task(args):
    cfg, strategy, seed, chash, hist = args
    return run_one(cfg, strategy, seed, chash, hist)


def run_sweep(cfg: dict, jobs: int = 1, seed_override: int | None = None,
              log: Callable[[str], None] | None = None) -> tuple[Path, int]:
    """Run every missing ``(strategy, seed)`` and append records; returns (path, new count)."""
    strategies, seeds, out = _sweep_plan(cfg, seed_override)
    chash = config_hash(cfg)
    out.mkdir(parents=True, exist_ok=True)
    rec_path = out / "records.jsonl"
    done = {(r.strategy, r.seed, r.config_hash) for r in read_records(rec_path)}
    todo = [(cfg, s, seed, chash, out / "history" / f"{s}-seed{seed}.csv")
            for s in strategies for seed in seeds if (s, seed, chash) not in done]
    written = 0
    # the parent process is the only writer; workers return records
    with open(rec_path, "a", encoding="utf-8") as fh:
        def emit(rec: RunRecord):
            nonlocal written
            fh.write(rec.to_json() + "\n")
            fh.flush()
            written += 1
            if log:
                log(f"{rec.strategy} seed={rec.seed} {rec.metric}={rec.value:.6g} [{rec.status}]")

        if jobs <= 1 or len(todo) <= 1:
            for task in todo:
                emit(_sweep_task(task))
        else:
            from concurrent.futures import ProcessPoolExecutor
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                for rec in pool.map(_sweep_task, todo):
                    emit(rec)
    return rec_path, written


# --------------------------------------------------------------------------
# report

@dataclass(frozen=True)
class ReportRow:
    dataset: str
    strategy: str
    metric: str
    mean: float
    std: float
    n: int


def aggregate(records: list[RunRecord]) -> list[ReportRow]:
    """Group successful records by (dataset, strategy); sample std with n - 1."""
    groups: dict[tuple[str, str], list[RunRecord]] = {}
    for r in records:
        if r.status != "ok":
            continue
        groups.setdefault((r.dataset, r.strategy), []).append(r)
    rows = []
    for (ds, strat), recs in sorted(groups.items()):
        metrics = {r.metric for r in recs}
        if len(metrics) > 1:
            raise ValueError(f"group ({ds}, {strat}) mixes metrics {sorted(metrics)}")
        vals = np.array([r.value for r in recs], dtype=np.float64)
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        rows.append(ReportRow(ds, strat, metrics.pop(), float(vals.mean()), std, int(vals.size)))
    return rows


def report_csv(rows: list[ReportRow]) -> str:
    lines = ["dataset,strategy,metric,mean,std,n"]
    for r in rows:
        lines.append(f"{r.dataset},{r.strategy},{r.metric},{r.mean!r},{r.std!r},{r.n}")
    return "\n".join(lines) + "\n"


def report_json(rows: list[ReportRow]) -> str:
    nested: dict[str, dict] = {}
    for r in rows:
        entry = nested.setdefault(r.dataset, {"metric": r.metric, "strategies": {}})
        entry["strategies"][r.strategy] = {"mean": r.mean, "std": r.std, "n": r.n}
    return json.dumps(nested, indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# bound and expressivity commands

def _bound_settings(cfg: dict):
    b = _section(cfg, "bound")
    eps = float(_need(b, "bound", "epsilon"))
    sigma = float(_need(b, "bound", "sigma"))
    if eps < 0:
        raise ConfigError("[bound] epsilon must be >= 0", key="epsilon")
    if sigma <= 0:
        raise ConfigError("[bound] sigma must be > 0", key="sigma")
    st = _section(cfg, "stats", required=False)
    strategy = b.get("strategy", st.get("strategy"))
    if strategy is None:
        raise ConfigError("missing required key 'strategy' in [bound]", key="strategy")
    if strategy not in STRATEGY_NAMES:
        raise ConfigError(f"unknown strategy {strategy!r}", key="strategy")
    variant = b.get("c1_variant", "appendix")
    if variant not in C1_VARIANTS:
        raise ConfigError(f"c1_variant must be one of {C1_VARIANTS}", key="c1_variant")
    return eps, sigma, strategy, variant, bool(b.get("v_is_variance", False))


def resolve_stats(cfg: dict, strategy: str, d: int, seed: int):
    """Return ``(stats for the bound, normalizer for the pipeline, dataset or None)``.

    With dataset-fitted instance strategies the bound uses the instance
    with the largest strategy factor, i.e. the worst case over the data.
    """
    st = _section(cfg, "stats", required=False)
    source = st.get("source", "dataset" if "dataset" in cfg else "explicit")
    if source == "explicit":
        stats = explicit_stats(strategy, d, st.get("scale"), st.get("mean", 0.0),
                               st.get("min", 0.0), st.get("range"))
        ds = load_datasets(cfg, seed)[0] if "dataset" in cfg else None
        return stats, stats, ds
    if source != "dataset":
        raise ConfigError(f"unknown stats source {source!r}", key="source")
    if "dataset" not in cfg:
        raise ConfigError("stats source 'dataset' needs a [dataset] table", key="dataset")
    ds = load_datasets(cfg, seed)[0]
    if len(ds) == 0:
        raise ValueError("dataset is empty")
    if ds.channels != d:
        raise ConfigError(f"dataset has {ds.channels} channels but [model] d = {d}", key="d")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegeneracyWarning)
        if strategy.endswith("_instance"):
            fits = [fit(strategy, inst, "instance") for inst in ds.instances]
            worst = max(fits, key=lambda f: strategy_factor(f, strategy))
            return worst, strategy, ds
        if strategy == "none":
            stats = fit(strategy, ds, "dataset")
            return stats, stats, ds
        stats = fit(strategy, ds, "dataset")
        return stats, stats, ds


def bound_report(cfg: dict, seed: int, variant: str | None = None) -> BoundReport:
    eps, sigma, strategy, cfg_variant, v_var = _bound_settings(cfg)
    mcfg = model_config(cfg) if "model" in cfg else None
    mcfg, weights = build_weights(cfg, mcfg, seed)
    stats, _, _ = resolve_stats(cfg, strategy, mcfg.d, seed)
    q = BoundQuery(eps, sigma, strategy, stats, mcfg, weights, variant or cfg_variant, v_var)
    return compute_bound(q)


def expressivity_report(cfg: dict, seed: int, variant: str | None = None) -> dict:
    eps, sigma, strategy, cfg_variant, v_var = _bound_settings(cfg)
    mcfg = model_config(cfg) if "model" in cfg else None
    mcfg, weights = build_weights(cfg, mcfg, seed)
    stats, normalizer, ds = resolve_stats(cfg, strategy, mcfg.d, seed)
    if ds is None:
        raise ConfigError("expressivity needs a [dataset] table", key="dataset")
    if len(ds) == 0:
        raise ValueError("dataset is empty")
    bound = compute_bound(BoundQuery(eps, sigma, strategy, stats, mcfg, weights,
                                     variant or cfg_variant, v_var))
    ex = _section(cfg, "expressivity", required=False)
    mode = ex.get("mode", "pair")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}", key="mode")
    est = estimate_expressivity(mcfg, weights, normalizer, ds, eps, sigma,
                                int(ex.get("samples", 10_000)), seed, mode,
                                int(ex.get("k", 8)), ex.get("perturb", "raw"))
    dominated = est.p_hat + 3 * est.standard_error <= bound.gamma_clamped
    return {"bound": bound.to_dict(), "estimate": est.to_dict(), "dominated": bool(dominated)}


def with_overrides(cfg: dict, **changes) -> dict:
    """Deep-copied config with ``{"table.key": value}`` style overrides."""
    out = copy.deepcopy(cfg)
    for dotted, value in changes.items():
        table, key = dotted.split(".", 1)
        out.setdefault(table, {})[key] = value
    return out

