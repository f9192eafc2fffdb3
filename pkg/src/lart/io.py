"""Long-CSV datasets and JSON model files."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .model import LatentTraits, PopulationParams, ResponseDataset

log = logging.getLogger(__name__)

HEADER = ["subject_id", "item_id", "correct", "cot_length"]
FORMAT_VERSION = 1


class DataFormatError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


def fmt(x: float) -> str:
    """Lossless, deterministic text for a double."""
    return repr(float(x))


def load_dataset(path) -> ResponseDataset:
    """Pivot a long CSV (one row per answered subject/item pair) into matrices.

    Subjects and items keep their first-appearance order; pairs that never
    appear are marked missing in the mask.
    """
    path = Path(path)
    cells: dict[tuple[str, str], tuple[int, float]] = {}
    subjects: dict[str, int] = {}
    items: dict[str, int] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataFormatError(f"{path}: empty file")
        if [h.strip() for h in header] != HEADER:
            raise DataFormatError(f"{path}:1: header must be {','.join(HEADER)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise DataFormatError(f"{path}:{line}: expected 4 fields, got {len(row)}")
            sid, iid, corr, length = (c.strip() for c in row)
            if not sid or not iid:
                raise DataFormatError(f"{path}:{line}: empty identifier")
            if corr not in ("0", "1"):
                raise DataFormatError(f"{path}:{line}: correct must be 0 or 1, got {corr!r}")
            try:
                t = float(length)
            except ValueError:
                raise DataFormatError(f"{path}:{line}: cot_length is not a number: {length!r}") from None
            if not (math.isfinite(t) and t > 0):
                raise DataFormatError(f"{path}:{line}: cot_length must be positive, got {length!r}")
            if (sid, iid) in cells:
                raise DataFormatError(f"{path}:{line}: duplicate record for subject {sid!r}, item {iid!r}")
            subjects.setdefault(sid, len(subjects))
            items.setdefault(iid, len(items))
            cells[sid, iid] = (int(corr), t)
    if not cells:
        raise DataFormatError(f"{path}: no data rows")
    R = np.zeros((len(subjects), len(items)), dtype=np.int64)
    T = np.ones(R.shape)
    mask = np.zeros(R.shape, dtype=bool)
    for (sid, iid), (r, t) in cells.items():
        i, j = subjects[sid], items[iid]
        R[i, j], T[i, j], mask[i, j] = r, t, True
    return ResponseDataset(R, T, list(subjects), list(items), mask)


def dataset_rows(data: ResponseDataset):
    obs = data.observed
    for i, sid in enumerate(data.subject_ids):
        for j, iid in enumerate(data.item_ids):
            if obs[i, j]:
                yield [sid, iid, str(int(data.R[i, j])), fmt(data.T[i, j])]


def save_dataset(data: ResponseDataset, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        w.writerows(dataset_rows(data))


def data_digest(data: ResponseDataset) -> str:
    """sha256 of the dataset's canonical long-CSV text."""
    h = hashlib.sha256()
    h.update((",".join(HEADER) + "\n").encode())
    for row in dataset_rows(data):
        h.update((",".join(row) + "\n").encode())
    return h.hexdigest()


def build_timestamp() -> str:
    """UTC time from SOURCE_DATE_EPOCH (0 when unset) so model files are reproducible."""
    epoch = int(os.environ.get("SOURCE_DATE_EPOCH", "0") or 0)
    return datetime.fromtimestamp(epoch, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class ModelFile:
    params: PopulationParams
    fit_meta: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION
    extra: dict = field(default_factory=dict)


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False, ensure_ascii=False) + "\n"


def save_model(params: PopulationParams, meta: dict | None, path, extra: dict | None = None) -> None:
    """Write canonical JSON: sorted keys, shortest round-trip float text, UTF-8."""
    doc = {
        "format_version": FORMAT_VERSION,
        "mode": params.mode,
        "item_ids": list(params.item_ids),
        "a": [float(x) for x in params.a],
        "b": [float(x) for x in params.b],
        "omega": [float(x) for x in params.omega],
        "phi": [float(x) for x in params.phi],
        "lambda": [float(x) for x in params.lam],
        "rho": float(params.rho),
        "fit_meta": dict(meta or {}),
    }
    for key, val in (extra or {}).items():
        if key in doc:
            raise ValueError(f"extra key {key!r} clashes with a model field")
        doc[key] = val
    Path(path).write_text(_canonical(doc), encoding="utf-8")


def fit_meta(seed: int, iters: int, tol: float, converged: bool, data: ResponseDataset | None) -> dict:
    return {
        "seed": int(seed),
        "iters": int(iters),
        "tol": float(tol),
        "converged": bool(converged),
        "timestamp": build_timestamp(),
        "data_digest": data_digest(data) if data is not None else None,
    }


def load_model(path, data: ResponseDataset | None = None, strict: bool = False) -> ModelFile:
    """Read and validate a model file.

    With ``strict`` and ``data`` given, a digest mismatch is logged as a warning.
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ModelFormatError(f"{path}: top level must be an object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported format_version {doc.get('format_version')!r}")
    required = ("mode", "item_ids", "a", "b", "omega", "phi", "lambda", "rho")
    missing = [k for k in required if k not in doc]
    if missing:
        raise ModelFormatError(f"{path}: missing field(s) {', '.join(missing)}")
    arrays = {k: doc[k] for k in ("a", "b", "omega", "phi", "lambda")}
    if any(not isinstance(v, list) for v in arrays.values()) or not isinstance(doc["item_ids"], list):
        raise ModelFormatError(f"{path}: parameter arrays must be lists")
    lengths = {len(v) for v in arrays.values()} | {len(doc["item_ids"])}
    if len(lengths) != 1:
        raise ModelFormatError(f"{path}: parameter arrays have different lengths")
    try:
        params = PopulationParams(arrays["a"], arrays["b"], arrays["omega"], arrays["phi"], arrays["lambda"],
                                  doc["rho"], item_ids=[str(s) for s in doc["item_ids"]], mode=doc["mode"])
        params.check()
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: {exc}") from None
    meta = doc.get("fit_meta") or {}
    if strict and data is not None and meta.get("data_digest") not in (None, data_digest(data)):
        log.warning("%s: data digest does not match the supplied dataset", path)
    extra = {k: v for k, v in doc.items() if k not in required + ("format_version", "fit_meta")}
    return ModelFile(params, meta, doc["format_version"], extra)


def save_traits(path, subject_ids, scores) -> None:
    cols = ("theta", "tau", "theta_lo", "theta_hi", "tau_lo", "tau_hi")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("subject_id",) + cols)
        for i, sid in enumerate(subject_ids):
            w.writerow([sid] + [fmt(getattr(scores, c)[i]) for c in cols])


def truth_extra(data: ResponseDataset, traits: LatentTraits) -> dict:
    return {
        "subject_ids": list(data.subject_ids),
        "theta": [float(x) for x in traits.theta],
        "tau": [float(x) for x in traits.tau],
    }
