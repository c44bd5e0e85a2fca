"""File formats: checkpoints, reward CSVs, metrics CSVs."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from typing import Sequence

import numpy as np

from .policy import PARAM_FIELDS, AdamState, PolicyParams

CHECKPOINT_VERSION = 1


def config_fingerprint(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def save_checkpoint(
    path: str,
    params: PolicyParams,
    opt_state: AdamState,
    iteration: int,
    config: dict,
) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "iteration": iteration,
        "fingerprint": config_fingerprint(config),
        "config": config,
    }
    arrays = {f: getattr(params, f) for f in PARAM_FIELDS}
    arrays.update({f"m_{f}": opt_state.m[f] for f in PARAM_FIELDS})
    arrays.update({f"v_{f}": opt_state.v[f] for f in PARAM_FIELDS})
    arrays["opt_step"] = np.array(opt_state.step)
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    np.savez(path, **arrays)


def load_checkpoint(
    path: str, expected_fingerprint: str | None = None
) -> tuple[PolicyParams, AdamState, int, dict]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version: {meta.get('version')}")
        stored = meta["fingerprint"]
        recomputed = config_fingerprint(meta["config"])
        if stored != recomputed:
            raise ValueError("checkpoint fingerprint does not match its embedded config")
        if expected_fingerprint is not None and stored != expected_fingerprint:
            raise ValueError(
                f"checkpoint fingerprint {stored} does not match expected {expected_fingerprint}"
            )
        params = PolicyParams(**{f: data[f].copy() for f in PARAM_FIELDS})
        opt = AdamState(
            m={f: data[f"m_{f}"].copy() for f in PARAM_FIELDS},
            v={f: data[f"v_{f}"].copy() for f in PARAM_FIELDS},
            step=int(data["opt_step"]),
        )
    return params, opt, int(meta["iteration"]), meta["config"]


# --- reward matrices -----------------------------------------------------------


def write_reward_csv(path: str, labels: Sequence[str], matrix: np.ndarray) -> None:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[1] != len(labels):
        raise ValueError("matrix shape does not match labels")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(labels)
        for row in matrix:
            writer.writerow([f"{x:.12g}" for x in row])


def load_reward_csv(path: str) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r]
    if len(rows) < 2:
        raise ValueError(f"reward CSV needs a header and at least one row: {path}")
    labels = [c.strip() for c in rows[0]]
    try:
        matrix = np.array([[float(c) for c in row] for row in rows[1:]])
    except ValueError as exc:
        raise ValueError(f"non-numeric reward entry in {path}: {exc}") from exc
    if matrix.shape[1] != len(labels):
        raise ValueError(f"ragged reward CSV: {path}")
    return labels, matrix


# --- metrics -------------------------------------------------------------------


class MetricsWriter:
    """Append-only CSV with a fixed column order and a mode annotation line."""

    def __init__(self, path: str, columns: Sequence[str], aggregation: str, append: bool = False):
        self.path = path
        self.columns = list(columns)
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        if append and os.path.exists(path):
            return
        with open(path, "w", newline="") as f:
            f.write(f"# aggregation={aggregation}\n")
            csv.writer(f).writerow(self.columns)

    def append(self, row: dict) -> None:
        with open(self.path, "a", newline="") as f:
            csv.writer(f).writerow([_fmt(row.get(c)) for c in self.columns])


def _fmt(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def read_metrics_csv(path: str) -> tuple[str, list[dict]]:
    """Read a metrics CSV; returns (aggregation mode, rows as dicts of floats)."""
    with open(path) as f:
        first = f.readline().strip()
        mode = first.split("=", 1)[1] if first.startswith("#") else ""
        reader = csv.DictReader(f) if first.startswith("#") else None
        if reader is None:
            f.seek(0)
            reader = csv.DictReader(f)
        rows = []
        for raw in reader:
            rows.append({k: _parse(v) for k, v in raw.items()})
    return mode, rows


def _parse(value: str):
    try:
        return float(value)
    except (TypeError, ValueError):
        return value
