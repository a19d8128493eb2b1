"""Deterministic JSON/CSV emission of sweep results.

``results.json`` holds everything (config, config hash, seeds, rows,
summary, deltas or trend) and validates against ``report_schema.json``.
CSV files are plot-ready: ``results.csv`` (one row per run),
``summary.csv`` and, for annotation sweeps, ``deltas.csv``. Undefined
metrics are ``null`` in JSON and empty cells in CSV.
"""

from __future__ import annotations

import csv
import json
import math
from importlib import resources
from pathlib import Path

import jsonschema

from ..eval.metrics import jsonable

SCHEMA_VERSION = 1
SEED_DERIVATION = 'SeedSequence([root, *utf8("/".join(path))]).generate_state(1, uint32)[0]'
ROW_COLUMNS = ("fold", "fraction", "subset", "amount", "mode", "cell", "seed", "pipeline", "arch_tag",
               "n_labeled", "n_pretrain", "n_test", "accuracy", "avg_precision", "avg_recall", "f1",
               "noise", "temporal_distance_first_mean", "temporal_distance_closest_mean", "accuracy_std",
               "missed_phases", "label_reads_pretrain", "labeled_ids")


def load_schema() -> dict:
    text = resources.files("phaseforge.experiment").joinpath("report_schema.json").read_text()
    return json.loads(text)


def validate_report(doc: dict) -> None:
    jsonschema.validate(doc, load_schema())


def columns_of(rows) -> list:
    present = set().union(*(r.keys() for r in rows)) if rows else set()
    extra = sorted(present - set(ROW_COLUMNS))
    return [c for c in ROW_COLUMNS if c in present] + extra


def report_document(result, cfg) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": result.kind,
        "config_hash": cfg.config_hash(),
        "config": cfg.to_dict(),
        "seeds": {"root": int(cfg.seed), "derivation": SEED_DERIVATION,
                  "cells": {r["cell"]: int(r["seed"]) for r in result.rows}},
        "columns": columns_of(result.rows),
        "rows": result.rows,
        "summary": result.summary,
        "label_reads": dict(sorted(result.label_reads.items())),
    }
    if result.deltas:
        doc["deltas"] = result.deltas
    if result.trend:
        doc["trend"] = result.trend
    return jsonable(doc)


def _cell(value):
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


def _write_csv(path, records, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in records:
            w.writerow([_cell(r.get(c)) for c in columns])


def emit_report(result, cfg, out_dir, formats=("json", "csv"), stem="results") -> list:
    """Write the report files; returns their paths. Output is byte-stable for equal inputs."""
    return write_document(report_document(result, cfg), out_dir, formats, stem)


def write_document(doc: dict, out_dir, formats=("json", "csv"), stem="results") -> list:
    bad = set(formats) - {"json", "csv"}
    if bad:
        raise ValueError(f"unknown report formats {sorted(bad)}")
    validate_report(doc)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    if "json" in formats:
        p = out_dir / f"{stem}.json"
        p.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")
        paths.append(p)
    if "csv" in formats:
        p = out_dir / f"{stem}.csv"
        _write_csv(p, doc["rows"], doc["columns"])
        paths.append(p)
        if doc["summary"]:
            p = out_dir / "summary.csv"
            _write_csv(p, doc["summary"], columns_of(doc["summary"]))
            paths.append(p)
        if doc.get("deltas"):
            p = out_dir / "deltas.csv"
            _write_csv(p, doc["deltas"], list(doc["deltas"][0]))
            paths.append(p)
    return paths


def _parse(text: str):
    if text == "":
        return float("nan")
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def _restore(value):
    return float("nan") if value is None else value


def read_report(path) -> dict:
    """JSON report with ``null`` metrics turned back into NaN."""
    doc = json.loads(Path(path).read_text())
    for key in ("rows", "summary", "deltas"):
        if key in doc:
            doc[key] = [{k: _restore(v) for k, v in r.items()} for r in doc[key]]
    return doc


def read_csv_rows(path) -> list:
    with open(path, newline="") as fh:
        return [{k: _parse(v) for k, v in r.items()} for r in csv.DictReader(fh)]


def rows_equal(a, b) -> bool:
    """Exact row-table equality with NaN == NaN."""
    if len(a) != len(b):
        return False
    for ra, rb in zip(a, b):
        if set(ra) != set(rb):
            return False
        for k in ra:
            x, y = ra[k], rb[k]
            both_nan = isinstance(x, float) and isinstance(y, float) and math.isnan(x) and math.isnan(y)
            if not both_nan and x != y:
                return False
    return True
