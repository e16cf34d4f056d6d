"""Retrieval AUCs, test accuracy and deterministic report files."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .bmm import Assessment
from .errors import InputError, ParseError, ReportingError, UndefinedAUCError
from .nn import Network, forward
from .synthgen import CATEGORY_NAMES, CLEAN, ID_NOISE, OOD, UNKNOWN, Dataset

CURVE_COLUMNS = ("epoch", "lr", "train_loss", "test_acc", "n_clean", "n_id", "n_ood")


def auc(scores, positives) -> float:
    """Mann-Whitney AUC with average ranks; a tie counts as half a win."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    if s.shape != pos.shape or s.ndim != 1:
        raise InputError("scores and positives must be 1-D and equally long")
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("AUC needs at least one positive and one negative")
    ranks = rankdata(s)
    u_stat = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


def _auc_or_none(scores, positives) -> float | None:
    try:
        return auc(scores, positives)
    except UndefinedAUCError:
        return None


@dataclass
class RetrievalReport:
    auc_clean: float | None
    auc_id: float | None
    auc_ood: float | None
    confusion: list[list[int]]
    noise_counts: dict[str, int]

    def as_dict(self) -> dict:
        return {
            "auc_clean": self.auc_clean,
            "auc_id": self.auc_id,
            "auc_ood": self.auc_ood,
            "confusion": self.confusion,
            "noise_counts": self.noise_counts,
        }


def _require_truth(truth) -> np.ndarray:
    if truth is None:
        raise ReportingError("retrieval scoring needs ground-truth noise tags")
    t = np.asarray(truth, dtype=np.int64)
    if np.any(t == UNKNOWN):
        raise ReportingError("retrieval scoring needs a truth tag for every sample")
    return t


def retrieval_report(assessment: Assessment, truth, metric=None) -> RetrievalReport:
    """One-vs-all AUCs: clean from the negated metric, ID from u, OOD from 1 - v.

    An AUC is None when its category has no positives or no negatives.
    """
    t = _require_truth(truth)
    values = assessment.l_detect_raw if metric is None else np.asarray(getattr(metric, "values", metric))
    if t.shape != values.shape or t.shape != assessment.u.shape:
        raise ReportingError("truth, metric and assessment lengths differ")
    confusion = [[int(np.sum((t == a) & (assessment.category == b))) for b in (CLEAN, ID_NOISE, OOD)]
                 for a in (CLEAN, ID_NOISE, OOD)]
    return RetrievalReport(
        auc_clean=_auc_or_none(-values, t == CLEAN),
        auc_id=_auc_or_none(assessment.u, t == ID_NOISE),
        auc_ood=_auc_or_none(1.0 - assessment.v, t == OOD),
        confusion=confusion,
        noise_counts={name: int(np.sum(t == code)) for code, name in CATEGORY_NAMES.items()},
    )


def metric_aucs(values, truth) -> dict[str, float | None]:
    """AUCs using a raw metric as the only score (higher means noisier)."""
    t = _require_truth(truth)
    s = np.asarray(values, dtype=np.float64)
    return {
        "clean": _auc_or_none(-s, t == CLEAN),
        "id": _auc_or_none(s, t == ID_NOISE),
        "ood": _auc_or_none(s, t == OOD),
    }


def test_accuracy(net: Network, test: Dataset) -> float:
    if len(test) == 0:
        raise InputError("test set is empty")
    pred = np.argmax(forward(net, test.features), axis=1)
    return float(np.mean(pred == test.labels))


# pytest would otherwise try to collect the function above
test_accuracy.__test__ = False


def _json_scalar(x) -> str:
    if x is None:
        return "null"
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        f = float(x)
        if not math.isfinite(f):
            return "null"
        text = format(f, ".17g")
        # keep floats recognizable as floats after parsing
        if not any(ch in text for ch in ".en"):
            text += ".0"
        return text
    if isinstance(x, str):
        return json.dumps(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def dumps(obj, indent: int = 0, _level: int = 0) -> str:
    """JSON text with floats at 17 significant digits and insertion key order.

    Nested flat dicts and lists of scalars stay on one line so per-sample rows
    remain readable.
    """
    pad = " " * (indent * (_level + 1))
    close = " " * (indent * _level)
    nl = "\n" if indent else ""
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        if _level > 0 and all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj.values()):
            return "{" + ", ".join(f"{json.dumps(str(k))}: {_json_scalar(v)}" for k, v in obj.items()) + "}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{" + nl + ("," + nl).join(items) + nl + close + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_json_scalar(v) for v in seq) + "]"
        items = [pad + dumps(v, indent, _level + 1) for v in seq]
        return "[" + nl + ("," + nl).join(items) + nl + close + "]"
    return _json_scalar(obj)


def assessment_rows(assessment: Assessment, ids=None) -> list[dict]:
    n = assessment.u.shape[0]
    ids = np.arange(n) if ids is None else ids
    return [
        {
            "id": int(ids[i]),
            "l_detect_raw": float(assessment.l_detect_raw[i]),
            "l_detect_norm": float(assessment.l_detect_norm[i]),
            "u": float(assessment.u[i]),
            "v": float(assessment.v[i]),
            "category": CATEGORY_NAMES[int(assessment.category[i])],
        }
        for i in range(n)
    ]


def build_report(config: dict, history, retrieval: RetrievalReport | None, assessment: Assessment,
                 ids=None, extra: dict | None = None) -> dict:
    report = {
        "config": config,
        "per_epoch": [e.as_dict() for e in history.epochs] if history is not None else [],
        "best_accuracy": history.best_accuracy if history is not None else None,
        "last_accuracy": history.last_accuracy if history is not None else None,
        "retrieval": retrieval.as_dict() if retrieval is not None else None,
        "assessment": {
            "pivot_norm": assessment.pivot_norm,
            "bmm": assessment.bmm.as_dict() if assessment.bmm is not None else None,
            "fallback": assessment.fallback_reason,
            "monotone": assessment.monotone,
            "counts": assessment.counts(),
        },
        "samples": assessment_rows(assessment, ids),
    }
    if extra:
        report.update(extra)
    return report


def emit_report(history, retrieval, assessment, path, config: dict | None = None, ids=None,
                extra: dict | None = None) -> Path:
    path = Path(path)
    text = dumps(build_report(config or {}, history, retrieval, assessment, ids, extra), indent=1)
    try:
        path.write_text(text + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path


def write_curves_csv(per_epoch: list[dict], path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for row in per_epoch:
            w.writerow([_json_scalar(row[c]) if isinstance(row[c], float) else row[c] for c in CURVE_COLUMNS])
    return path


def load_report(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"report is not valid JSON: {exc.msg}", exc.lineno, str(path)) from None


def write_predictions_csv(predictions, path, ids=None) -> Path:
    p = np.asarray(predictions, dtype=np.float64)
    ids = np.arange(p.shape[0]) if ids is None else ids
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"p{c}" for c in range(p.shape[1])])
        for i, row in zip(ids, p):
            w.writerow([int(i)] + [format(float(x), ".17g") for x in row])
    return Path(path)


def read_predictions_csv(path, tol: float = 1e-6, renormalize: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(ids, probs)``; rows off by more than ``tol`` from summing to one are rejected.

    With ``renormalize`` the accepted rows are divided by their sums.
    """
    path = str(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file, header expected", 1, path) from None
        c = len(header) - 1
        if header[0] != "id" or c < 1 or header[1:] != [f"p{j}" for j in range(c)]:
            raise ParseError("header must be id,p0,...,p{C-1}", 1, path)
        ids, rows, seen = [], [], set()
        for row in reader:
            line = reader.line_num
            if len(row) != c + 1:
                raise ParseError(f"expected {c + 1} fields, got {len(row)}", line, path)
            try:
                sid = int(row[0])
                probs = [float(x) for x in row[1:]]
            except ValueError as exc:
                raise ParseError(str(exc), line, path) from None
            if sid in seen:
                raise ParseError(f"duplicate id {sid}", line, path)
            if not all(math.isfinite(x) and x >= 0 for x in probs):
                raise ParseError("probabilities must be finite and nonnegative", line, path)
            total = math.fsum(probs)
            if abs(total - 1.0) > tol:
                raise ParseError(f"row sums to {total!r}, not 1 within {tol}", line, path)
            seen.add(sid)
            ids.append(sid)
            rows.append(probs)
    p = np.array(rows, dtype=np.float64).reshape(len(rows), c)
    if renormalize and len(rows):
        p = p / p.sum(axis=1, keepdims=True)
    return np.array(ids, dtype=np.int64), p
