"""Command line entry point: ``dsos gen|train|audit|report``.

Exit status is 0 on success, 1 when training or another runtime step fails
and 2 for usage, configuration or parse errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bmm import assess
from .config import FORMAT_VERSION, ExperimentConfig, load_config
from .errors import ConfigError, DSOSError, InputError, ParseError
from .evalreport import (
    assessment_rows,
    dumps,
    emit_report,
    load_report,
    metric_aucs,
    read_predictions_csv,
    retrieval_report,
    write_curves_csv,
)
from .metrics import PIVOT, compute_metric_vector, minmax_normalize
from .synthgen import Truth, generate, read_csv, write_csv
from .trainer import run

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsos", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"dsos {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a corrupted synthetic dataset")
    p.add_argument("--config", required=True, metavar="PATH", help="experiment config (JSON)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=_nonneg_int, metavar="N", help="override the generator seed")

    p = sub.add_parser("train", help="train with label-noise detection and correction")
    p.add_argument("--config", required=True, metavar="PATH", help="experiment config (JSON)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=_nonneg_int, metavar="N", help="override generator and training seeds")
    p.add_argument("--disable-correction", action="store_true", help="warm-up only baseline")
    p.add_argument("--disable-softening", action="store_true", help="no dynamic softening of targets")
    p.add_argument("--disable-bootstrap", action="store_true", help="no ID bootstrapping")
    p.add_argument("--warmup-mixup", type=_bool, metavar="BOOL", help="mixup during warm-up (true/false)")

    p = sub.add_parser("audit", help="assess an external prediction matrix")
    p.add_argument("--predictions", required=True, metavar="PATH", help="CSV with header id,p0,...,p{C-1}")
    p.add_argument("--labels", required=True, metavar="PATH",
                   help="CSV whose header starts with id,label[,truth] (a dataset CSV works)")
    p.add_argument("--out", required=True, metavar="DIR", help="output directory")
    p.add_argument("--bmm-iters", type=int, default=10, metavar="N", help="EM iterations (default 10)")

    p = sub.add_parser("report", help="re-render the curves CSV from a report file")
    p.add_argument("--report", required=True, metavar="PATH", help="report.json written by train")
    p.add_argument("--out", metavar="DIR", help="output directory (default: next to the report)")
    return parser


def _output_dir(override: str | None, cfg: ExperimentConfig | None = None) -> Path:
    """``--out`` if given, else the config's output_dir (relative to the config file)."""
    if override is not None:
        out = Path(override)
    elif cfg is not None:
        out = cfg.resolve(cfg.output_dir)
    else:
        out = Path(".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(args) -> int:
    cfg = load_config(args.config)
    if cfg.gen is None:
        raise ConfigError("gen needs a 'gen' section in the config")
    if args.seed is not None:
        cfg.gen.seed = args.seed
    out = _output_dir(args.out, cfg)
    train, test = generate(cfg.gen)
    write_csv(train, out / "train.csv")
    write_csv(test, out / "test.csv")
    n_ood, n_id, n_clean = cfg.gen.counts()
    manifest = {
        "format_version": FORMAT_VERSION,
        "seed": cfg.gen.seed,
        "gen": dataclasses.asdict(cfg.gen),
        "train_size": len(train),
        "test_size": len(test),
        "counts": {"clean": n_clean, "id": n_id, "ood": n_ood},
        "noisy": n_id + n_ood,
    }
    (out / "manifest.json").write_text(dumps(manifest, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {out / 'train.csv'} ({n_clean} clean, {n_id} id, {n_ood} ood) and {out / 'test.csv'}")
    return EXIT_OK


def _load_datasets(cfg: ExperimentConfig):
    if cfg.gen is not None:
        return generate(cfg.gen)
    train = read_csv(cfg.resolve(cfg.dataset.train), cfg.dataset.num_classes)
    test = read_csv(cfg.resolve(cfg.dataset.test), train.num_classes)
    return train, test


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    tc = cfg.train
    if args.seed is not None:
        tc.seed = args.seed
        if cfg.gen is not None:
            cfg.gen.seed = args.seed
    if args.disable_correction:
        tc.enable_correction = False
    if args.disable_softening:
        tc.enable_softening = False
    if args.disable_bootstrap:
        tc.enable_bootstrap = False
    if args.warmup_mixup is not None:
        tc.warmup_mixup = args.warmup_mixup
    tc.validate()
    out = _output_dir(args.out, cfg)
    train, test = _load_datasets(cfg)
    net, history, final = run(tc, train, test)

    retrieval = None
    extra = {}
    if train.has_truth():
        retrieval = retrieval_report(final, train.truth)
        extra["metric_aucs"] = metric_aucs(final.l_detect_raw, train.truth)
    emit_report(history, retrieval, final, out / "report.json", config=cfg.echo(), extra=extra)
    write_curves_csv(_curve_rows(history.epochs), out / "curves.csv")
    print(f"best {history.best_accuracy:.4f} last {history.last_accuracy:.4f}; wrote {out / 'report.json'}")
    return EXIT_OK


def _curve_rows(epochs) -> list[dict]:
    rows = []
    for e in epochs:
        d = e if isinstance(e, dict) else e.as_dict()
        rows.append({k: ("" if d.get(k) is None else d[k])
                     for k in ("epoch", "lr", "train_loss", "test_acc", "n_clean", "n_id", "n_ood")})
    return rows


def read_labels_csv(path) -> tuple[dict[int, int], dict[int, Truth | None], dict[int, int]]:
    """Read ``id,label[,truth,...]``; returns labels, truths and source lines by id."""
    path = str(path)
    labels, truths, lines = {}, {}, {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file, header expected", 1, path) from None
        if header[:2] != ["id", "label"]:
            raise ParseError("header must start with id,label", 1, path)
        has_truth = len(header) > 2 and header[2] == "truth"
        for row in reader:
            line = reader.line_num
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line, path)
            try:
                sid, label = int(row[0]), int(row[1])
                truth = Truth.from_field(row[2]) if has_truth else None
            except ValueError as exc:
                raise ParseError(str(exc), line, path) from None
            if sid in labels:
                raise ParseError(f"duplicate id {sid}", line, path)
            if label < 0:
                raise ParseError("label must be nonnegative", line, path)
            labels[sid], truths[sid], lines[sid] = label, truth, line
    return labels, truths, lines


def cmd_audit(args) -> int:
    if args.bmm_iters < 1:
        raise ConfigError("--bmm-iters must be positive")
    ids, probs = read_predictions_csv(args.predictions)
    labels_by_id, truth_by_id, label_lines = read_labels_csv(args.labels)
    c = probs.shape[1]
    if c < 3:
        raise InputError("noise assessment needs at least 3 classes")
    if ids.size == 0:
        raise InputError("prediction file has no rows")
    for row, sid in enumerate(ids):
        if int(sid) not in labels_by_id:
            raise ParseError(f"unknown id {int(sid)}", row + 2, args.predictions)
    missing = sorted(set(labels_by_id) - set(int(i) for i in ids))
    if missing:
        raise ParseError(f"no prediction for id {missing[0]}", label_lines[missing[0]], args.labels)
    labels = np.array([labels_by_id[int(i)] for i in ids], dtype=np.int64)
    if labels.max() >= c:
        bad = int(ids[int(np.argmax(labels >= c))])
        raise ParseError(f"label {labels_by_id[bad]} outside [0, {c})", label_lines[bad], args.labels)

    metric = compute_metric_vector(labels, probs, "il_collision", c)
    normalized, mapping = minmax_normalize(metric.values)
    assessment = assess(normalized, mapping.apply(PIVOT), args.bmm_iters, raw=metric.values)

    report = {
        "format_version": FORMAT_VERSION,
        "num_samples": int(ids.size),
        "num_classes": c,
        "bmm_iters": args.bmm_iters,
        "assessment": {
            "pivot_raw": PIVOT,
            "pivot_norm": assessment.pivot_norm,
            "bmm": assessment.bmm.as_dict() if assessment.bmm is not None else None,
            "fallback": assessment.fallback_reason,
            "monotone": assessment.monotone,
            "counts": assessment.counts(),
        },
        "samples": assessment_rows(assessment, ids),
    }
    truths = [truth_by_id[int(i)] for i in ids]
    if all(t is not None for t in truths):
        codes = np.array([t.kind for t in truths], dtype=np.int64)
        report["retrieval"] = retrieval_report(assessment, codes).as_dict()
        report["metric_aucs"] = metric_aucs(metric.values, codes)
    out = _output_dir(args.out)
    path = out / "audit.json"
    path.write_text(dumps(report, indent=1) + "\n", encoding="utf-8")
    counts = assessment.counts()
    print(f"{counts['clean']} clean, {counts['id']} id, {counts['ood']} ood; wrote {path}")
    return EXIT_OK


def cmd_report(args) -> int:
    report_path = Path(args.report)
    if not report_path.exists():
        raise ConfigError(f"report file not found: {report_path}")
    report = load_report(report_path)
    if not isinstance(report, dict) or not isinstance(report.get("per_epoch"), list):
        raise ParseError("report has no per_epoch list", None, str(report_path))
    out = _output_dir(args.out if args.out is not None else str(report_path.parent))
    path = write_curves_csv(_curve_rows(report["per_epoch"]), out / "curves.csv")
    print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "audit": cmd_audit, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ParseError, InputError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"dsos {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DSOSError, OSError) as exc:
        print(f"dsos {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
