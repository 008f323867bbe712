"""SampleSet persistence and metric report files.

Samples travel as JSONL, one object per line with keys id, model,
strategy, param, seed, prefix_ids, continuation_ids. Metric reports are
small JSON documents carrying the value next to everything needed to
reproduce it.
"""

from __future__ import annotations

import json
from pathlib import Path

from ..corpus import TokenSequence, Vocab
from ..errors import DataError
from ..metrics import Sample, SampleSet


def save_sample_set(path: str | Path, sset: SampleSet) -> None:
    prov = sset.provenance
    with open(path, "w", encoding="utf-8") as f:
        for s in sset.samples:
            f.write(
                json.dumps(
                    {
                        "id": s.id,
                        "model": prov.get("model"),
                        "strategy": prov.get("strategy"),
                        "param": prov.get("param"),
                        "seed": prov.get("seed"),
                        "prefix_ids": list(s.prefix.ids) if s.prefix else [],
                        "continuation_ids": list(s.continuation.ids),
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_sample_set(path: str | Path, vocab: Vocab | None = None) -> SampleSet:
    """Read a sample JSONL; synthesizes a placeholder vocab if none given."""
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: bad JSON ({exc})") from None
    if not rows:
        raise DataError(f"{path}: no samples")
    if vocab is None:
        top = 0
        for row in rows:
            ids = row["continuation_ids"] + row["prefix_ids"]
            top = max(top, max(ids) if ids else 0)
        vocab = Vocab.placeholder(top + 1)
    samples = []
    for row in rows:
        prefix = (
            TokenSequence(tuple(row["prefix_ids"]), vocab) if row["prefix_ids"] else None
        )
        samples.append(
            Sample(
                id=str(row["id"]),
                prefix=prefix,
                continuation=TokenSequence(tuple(row["continuation_ids"]), vocab),
            )
        )
    first = rows[0]
    provenance = {
        "model": first.get("model"),
        "strategy": first.get("strategy"),
        "param": first.get("param"),
        "seed": first.get("seed"),
    }
    return SampleSet(tuple(samples), provenance)


def write_metric_report(
    path: str | Path,
    metric: str,
    value,
    config: dict,
    provenance: dict,
    n_samples: int,
    nulls_excluded: int = 0,
) -> None:
    report = {
        "metric": metric,
        "value": value,
        "config": config,
        "provenance": provenance,
        "n_samples": n_samples,
        "nulls_excluded": nulls_excluded,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report, f, sort_keys=True, indent=2)
        f.write("\n")
