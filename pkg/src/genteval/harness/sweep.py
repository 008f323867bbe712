"""Decoding sweep runner, log-curve fitting, and the trade-off table.

A sweep is a grid of (model, strategy, parameter) cells. Each cell
generates one continuation per prefix, persists them, computes the
configured metrics, and emits one SweepRecord. Cells are independent:
the seed for sample i of a cell is ``seed XOR stable_hash(model |
strategy | param | i)``, so records do not depend on execution order
and a bounded worker pool can run cells in parallel without changing
any output. A failed cell is recorded with its error and the sweep
moves on.

Re-running a sweep recomputes only missing or stale cells: every record
stores a hash of the cell configuration plus a digest of its samples
file, and cells whose record matches are reused as-is.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from ..corpus import CorpusSplits, TokenSequence
from ..decode import DecoderConfig, generate
from ..errors import ConfigError, DegenerateFit
from ..lm.ngram import ngram_fit
from ..lm.store import load_model
from ..metrics import (
    BleuConfig,
    Sample,
    SampleSet,
    corpus_bleu,
    forward_ppl,
    mean_seq_rep,
    reverse_ppl,
    self_bleu,
)
from ..rng import stable_hash
from .samples import load_sample_set, save_sample_set

SWEEP_METRICS = ("corpus_bleu", "self_bleu", "seq_rep_4", "forward_ppl", "reverse_ppl")
CSV_COLUMNS = (
    "model",
    "strategy",
    "param",
    "n_samples",
    "corpus_bleu",
    "self_bleu",
    "seq_rep_4",
    "forward_ppl",
    "reverse_ppl",
    "seed",
    "schema",
)
SCHEMA_TAG = "v1"

# Strategies whose parameter is an integer count rather than a real.
_INT_PARAM = {"beam", "topk"}


@dataclass(frozen=True)
class SweepConfig:
    """Grid definition plus generation and metric settings.

    ``models`` holds model names (or paths, resolved by the caller).
    ``strategies`` maps strategy name to its parameter list; greedy
    takes the single parameter None. Cell grids must not contain
    duplicates. ``subsample`` caps the candidate set for the BLEU
    metrics (large runs typically cap at 500); None scores everything.
    """

    models: tuple[str, ...]
    strategies: tuple[tuple[str, tuple], ...]
    prefix_len: int = 50
    gen_len: int = 100
    n_prefixes: int | None = None
    seed: int = 0
    metrics: tuple[str, ...] = SWEEP_METRICS
    max_n: int = 4
    subsample: int | None = None
    subsample_seed: int = 0
    rev_order: int = 2
    rev_k_s: float = 1.0
    fwd_order: int = 2
    fwd_k_s: float = 1.0

    def __post_init__(self) -> None:
        if not self.models:
            raise ConfigError("sweep needs at least one model")
        if len(set(self.models)) != len(self.models):
            raise ConfigError("duplicate model names in sweep")
        if min(self.prefix_len, self.gen_len) < 1:
            raise ConfigError("prefix_len and gen_len must be positive")
        for name in self.metrics:
            if name not in SWEEP_METRICS:
                raise ConfigError(f"unknown sweep metric {name!r}")
        seen = set()
        for strategy, params in self.strategies:
            if not params:
                raise ConfigError(f"strategy {strategy!r} has no parameters")
            for p in params:
                if (strategy, p) in seen:
                    raise ConfigError(f"duplicate cell {strategy}({p})")
                seen.add((strategy, p))

    def cells(self) -> list[tuple[str, str, object]]:
        out = []
        for model in self.models:
            for strategy, params in self.strategies:
                for p in params:
                    out.append((model, strategy, p))
        return out


@dataclass
class SweepRecord:
    model: str
    strategy: str
    param: float | int | None
    n_samples: int
    metrics: dict[str, float | None]
    seed: int
    failed: str | None = None
    config_hash: str = ""
    samples_file: str = ""
    samples_sha256: str = ""

    def to_json(self) -> dict:
        return {
            "model": self.model,
            "strategy": self.strategy,
            "param": self.param,
            "n_samples": self.n_samples,
            "metrics": self.metrics,
            "seed": self.seed,
            "failed": self.failed,
            "config_hash": self.config_hash,
            "samples_file": self.samples_file,
            "samples_sha256": self.samples_sha256,
        }

    @classmethod
    def from_json(cls, data: dict) -> "SweepRecord":
        return cls(**data)


def _decoder_config(strategy: str, param, gen_len: int, seed: int) -> DecoderConfig:
    kwargs = {"strategy": strategy, "max_len": gen_len, "seed": seed}
    if strategy == "beam":
        kwargs["b"] = int(param)
    elif strategy == "temperature":
        kwargs["t"] = float(param)
    elif strategy == "topk":
        kwargs["k"] = int(param)
    elif strategy == "topp":
        kwargs["p"] = float(param)
    elif strategy == "penalized":
        kwargs["theta"] = float(param)
    elif param is not None:
        raise ConfigError("greedy takes no parameter")
    return DecoderConfig(**kwargs)


def cell_key(model: str, strategy: str, param) -> str:
    raw = f"{model}__{strategy}__{param}"
    return re.sub(r"[^A-Za-z0-9_.-]+", "-", raw)


def sample_seed(base_seed: int, model: str, strategy: str, param, index: int) -> int:
    """Per-sample seed: base XOR a stable hash of the cell and index."""
    return base_seed ^ stable_hash(f"{model}|{strategy}|{param}|{index}")


def _config_digest(cfg: SweepConfig, model: str, strategy: str, param, n_prefixes: int) -> str:
    payload = json.dumps(
        {
            "model": model,
            "strategy": strategy,
            "param": param,
            "seed": cfg.seed,
            "prefix_len": cfg.prefix_len,
            "gen_len": cfg.gen_len,
            "n_prefixes": n_prefixes,
            "metrics": list(cfg.metrics),
            "max_n": cfg.max_n,
            "subsample": cfg.subsample,
            "subsample_seed": cfg.subsample_seed,
            "rev": [cfg.rev_order, cfg.rev_k_s],
            "fwd": [cfg.fwd_order, cfg.fwd_k_s],
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def reference_set(splits: CorpusSplits, prefix_len: int, gen_len: int) -> SampleSet:
    """Human continuations from the test split, matching the generated span."""
    samples = []
    for i, seq in enumerate(splits.test):
        if len(seq) <= prefix_len:
            continue
        cont = seq.window(prefix_len, min(len(seq), prefix_len + gen_len))
        samples.append(Sample(id=f"ref-{i}", prefix=seq.window(0, prefix_len), continuation=cont))
    return SampleSet(tuple(samples), {"model": "human", "strategy": "human", "param": None, "seed": None})


def _resolve_models(cfg: SweepConfig, models) -> tuple[dict, dict]:
    """Load each model once; a load failure fails that model's cells."""
    loaded: dict[str, object] = {}
    errors: dict[str, str] = {}
    for name in cfg.models:
        source = name if models is None else models.get(name, name)
        if isinstance(source, (str, Path)):
            try:
                loaded[name] = load_model(source)
            except Exception as exc:  # noqa: BLE001 - recorded per cell
                errors[name] = f"{type(exc).__name__}: {exc}"
        else:
            loaded[name] = source
    return loaded, errors


def run_sweep(
    cfg: SweepConfig,
    splits: CorpusSplits,
    out_dir: str | Path,
    models: dict[str, object] | None = None,
    workers: int = 1,
) -> list[SweepRecord]:
    """Run every cell of the grid, returning records in grid order.

    ``models`` maps names from ``cfg.models`` to live model objects or
    saved-model paths; names absent from the mapping are treated as
    paths themselves.
    """
    out = Path(out_dir)
    (out / "records").mkdir(parents=True, exist_ok=True)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    cells = cfg.cells()
    prefixes = [
        seq.window(0, cfg.prefix_len)
        for seq in (
            splits.train[: cfg.n_prefixes] if cfg.n_prefixes else splits.train
        )
    ]
    if cells and not prefixes:
        raise ConfigError("no prefixes available for the sweep")
    refs = reference_set(splits, cfg.prefix_len, cfg.gen_len)
    bleu_cfg = BleuConfig(
        max_n=cfg.max_n, subsample=cfg.subsample, subsample_seed=cfg.subsample_seed
    )
    fwd_scorer = (
        ngram_fit(list(splits.train), order=cfg.fwd_order, k_s=cfg.fwd_k_s)
        if "forward_ppl" in cfg.metrics
        else None
    )
    loaded, load_errors = _resolve_models(cfg, models)

    def run_cell(cell):
        model_name, strategy, param = cell
        digest = _config_digest(cfg, model_name, strategy, param, len(prefixes))
        key = cell_key(model_name, strategy, param)
        record_path = out / "records" / f"{key}.json"
        samples_path = out / "samples" / f"{key}.jsonl"
        reused = _try_reuse(record_path, samples_path, digest)
        if reused is not None:
            return reused
        try:
            if model_name in load_errors:
                raise ConfigError(load_errors[model_name])
            record = _compute_cell(
                cfg, loaded[model_name], model_name, strategy, param,
                prefixes, refs, bleu_cfg, fwd_scorer, samples_path,
            )
            record.config_hash = digest
            record.samples_file = samples_path.name
            record.samples_sha256 = _file_digest(samples_path)
        except Exception as exc:  # noqa: BLE001 - cell isolation is the contract
            record = SweepRecord(
                model=model_name,
                strategy=strategy,
                param=param,
                n_samples=0,
                metrics={},
                seed=cfg.seed,
                failed=f"{type(exc).__name__}: {exc}",
                config_hash=digest,
            )
        with open(record_path, "w", encoding="utf-8") as f:
            json.dump(record.to_json(), f, sort_keys=True, indent=2)
            f.write("\n")
        return record

    if workers > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run_cell, cells))
    else:
        records = [run_cell(c) for c in cells]
    write_sweep_csv(out / "sweep.csv", records)
    return records


def _try_reuse(record_path: Path, samples_path: Path, digest: str) -> SweepRecord | None:
    if not record_path.exists():
        return None
    try:
        with open(record_path, encoding="utf-8") as f:
            record = SweepRecord.from_json(json.load(f))
    except (json.JSONDecodeError, TypeError):
        return None
    if record.config_hash != digest:
        return None
    if record.failed is not None:
        return None
    if record.samples_file:
        if not samples_path.exists():
            return None
        if record.samples_sha256 and _file_digest(samples_path) != record.samples_sha256:
            return None
    return record


def _compute_cell(
    cfg: SweepConfig,
    model,
    model_name: str,
    strategy: str,
    param,
    prefixes: list[TokenSequence],
    refs: SampleSet,
    bleu_cfg: BleuConfig,
    fwd_scorer,
    samples_path: Path,
) -> SweepRecord:
    samples = []
    for i, prefix in enumerate(prefixes):
        dcfg = _decoder_config(
            strategy, param, cfg.gen_len, sample_seed(cfg.seed, model_name, strategy, param, i)
        )
        continuation = generate(model, prefix, dcfg)
        samples.append(Sample(id=str(i), prefix=prefix, continuation=continuation))
    sset = SampleSet(
        tuple(samples),
        {"model": model_name, "strategy": strategy, "param": param, "seed": cfg.seed},
    )
    save_sample_set(samples_path, sset)
    values: dict[str, float | None] = {}
    for metric in cfg.metrics:
        if metric == "corpus_bleu":
            values[metric] = corpus_bleu(sset, refs, bleu_cfg)
        elif metric == "self_bleu":
            values[metric] = self_bleu(sset, bleu_cfg)
        elif metric == "seq_rep_4":
            mean, _nulls = mean_seq_rep(sset, 4)
            values[metric] = mean
        elif metric == "forward_ppl":
            values[metric] = forward_ppl(fwd_scorer, sset)
        elif metric == "reverse_ppl":
            values[metric] = reverse_ppl(sset, refs, order=cfg.rev_order, k_s=cfg.rev_k_s)
    return SweepRecord(
        model=model_name,
        strategy=strategy,
        param=param,
        n_samples=len(samples),
        metrics=values,
        seed=cfg.seed,
    )


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


def write_sweep_csv(path: str | Path, records: list[SweepRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.model,
                    r.strategy,
                    _format_cell(r.param),
                    r.n_samples,
                    _format_cell(r.metrics.get("corpus_bleu")),
                    _format_cell(r.metrics.get("self_bleu")),
                    _format_cell(r.metrics.get("seq_rep_4")),
                    _format_cell(r.metrics.get("forward_ppl")),
                    _format_cell(r.metrics.get("reverse_ppl")),
                    r.seed,
                    SCHEMA_TAG,
                ]
            )


def read_sweep_csv(path: str | Path) -> list[SweepRecord]:
    records = []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_COLUMNS:
            raise ConfigError(f"{path}: unexpected sweep CSV columns")
        for row in reader:
            if row["schema"] != SCHEMA_TAG:
                raise ConfigError(f"{path}: unknown schema tag {row['schema']!r}")
            metrics = {}
            for name in SWEEP_METRICS:
                metrics[name] = float(row[name]) if row[name] else None
            param: float | int | None = None
            if row["param"]:
                param = (
                    int(row["param"]) if row["strategy"] in _INT_PARAM else float(row["param"])
                )
            records.append(
                SweepRecord(
                    model=row["model"],
                    strategy=row["strategy"],
                    param=param,
                    n_samples=int(row["n_samples"]),
                    metrics=metrics,
                    seed=int(row["seed"]),
                )
            )
    return records


# ---------------------------------------------------------------------------
# Curve fitting and the trade-off table
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogFit:
    """Least-squares fit of y = a * ln(x) + b."""

    a: float
    b: float
    residual_sum: float

    def predict(self, x: float) -> float:
        return self.a * math.log(x) + self.b


def fit_log_curve(points) -> LogFit:
    """Closed-form normal equations on (ln x, y) pairs.

    Needs at least two distinct positive x values; anything else cannot
    identify a slope.
    """
    pts = [(float(x), float(y)) for x, y in points]
    if any(x <= 0 for x, _ in pts):
        raise DegenerateFit("log fit needs strictly positive x values")
    if len({x for x, _ in pts}) < 2:
        raise DegenerateFit("log fit needs at least two distinct x values")
    us = [math.log(x) for x, _ in pts]
    ys = [y for _, y in pts]
    n = len(pts)
    u_mean = sum(us) / n
    y_mean = sum(ys) / n
    var = sum((u - u_mean) ** 2 for u in us)
    cov = sum((u - u_mean) * (y - y_mean) for u, y in zip(us, ys))
    a = cov / var
    b = y_mean - a * u_mean
    residual = sum((y - (a * u + b)) ** 2 for u, y in zip(us, ys))
    return LogFit(a=a, b=b, residual_sum=residual)


# Metrics where larger values mean better quality; these are negated on
# the trade-off y axis so "down and to the left" is always worse.
HIGHER_BETTER = {
    "corpus_bleu": True,
    "acceptability": True,
    "self_bleu": False,
    "seq_rep_4": False,
    "forward_ppl": False,
    "reverse_ppl": False,
}


@dataclass(frozen=True)
class TradeoffRow:
    model: str
    strategy: str
    param: float | int | None
    x: float | None
    y: float | None


@dataclass(frozen=True)
class TradeoffTable:
    quality_metric: str
    diversity_metric: str
    rows: tuple[TradeoffRow, ...]
    fits: dict = field(default_factory=dict)  # model -> LogFit | None


def tradeoff_table(
    records: list[SweepRecord],
    quality_metric: str,
    diversity_metric: str,
) -> TradeoffTable:
    """Quality-vs-diversity points with one log fit per model.

    x is the diversity value as-is; y is the quality value, negated when
    the metric is higher-better. Rows with a missing value keep their
    place in the table with blanks and are excluded from fits; a model
    whose usable points cannot support a fit gets fits[model] = None.
    """
    if quality_metric not in HIGHER_BETTER or diversity_metric not in HIGHER_BETTER:
        known = ", ".join(sorted(HIGHER_BETTER))
        raise ConfigError(f"metrics must be one of: {known}")
    rows = []
    per_model: dict[str, list[tuple[float, float]]] = {}
    for r in records:
        quality = r.metrics.get(quality_metric)
        diversity = r.metrics.get(diversity_metric)
        y = None
        if quality is not None:
            y = -quality if HIGHER_BETTER[quality_metric] else quality
        rows.append(TradeoffRow(r.model, r.strategy, r.param, diversity, y))
        if diversity is not None and diversity > 0 and y is not None:
            per_model.setdefault(r.model, []).append((diversity, y))
    fits = {}
    for model in sorted({r.model for r in records}):
        try:
            fits[model] = fit_log_curve(per_model.get(model, []))
        except DegenerateFit:
            fits[model] = None
    return TradeoffTable(quality_metric, diversity_metric, tuple(rows), fits)


def write_tradeoff(table: TradeoffTable, csv_path: str | Path, fits_path: str | Path) -> None:
    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["model", "strategy", "param", "x", "y"])
        for row in table.rows:
            writer.writerow(
                [
                    row.model,
                    row.strategy,
                    _format_cell(row.param),
                    _format_cell(row.x),
                    _format_cell(row.y),
                ]
            )
    payload = {
        "quality_metric": table.quality_metric,
        "diversity_metric": table.diversity_metric,
        "fits": {
            model: (
                None
                if fit is None
                else {"a": fit.a, "b": fit.b, "residual_sum": fit.residual_sum}
            )
            for model, fit in table.fits.items()
        },
    }
    with open(fits_path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")
