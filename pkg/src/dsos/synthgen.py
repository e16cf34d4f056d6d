"""Gaussian-cluster datasets corrupted with in-distribution and OOD noise.

Corruption uses exact counts: ``floor(rho * N)`` samples get their features
replaced by draws from OOD clusters (labels kept), then ``floor(psi * N)`` of
the remaining samples get a label flipped uniformly to one of the other
``C - 1`` classes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError, ParseError

# truth codes used in arrays
UNKNOWN, CLEAN, ID_NOISE, OOD = -1, 0, 1, 2
CATEGORY_NAMES = {CLEAN: "clean", ID_NOISE: "id", OOD: "ood"}

# web-noise composition measured on mini-WebVision (OOD 24.38 %, ID 5.32 %)
WEB_RHO = 0.2438
WEB_PSI = 0.0532


@dataclass(frozen=True)
class Truth:
    kind: int
    true_label: int | None = None

    def to_field(self) -> str:
        if self.kind == CLEAN:
            return "clean"
        if self.kind == OOD:
            return "ood"
        if self.kind == ID_NOISE:
            return f"id:{self.true_label}"
        return "-"

    @classmethod
    def from_field(cls, text: str) -> "Truth | None":
        if text == "clean":
            return cls(CLEAN)
        if text == "ood":
            return cls(OOD)
        if text == "-":
            return None
        if text.startswith("id:"):
            try:
                return cls(ID_NOISE, int(text[3:]))
            except ValueError:
                pass
        raise ValueError(f"bad truth field {text!r}")


@dataclass(frozen=True)
class SampleRecord:
    id: int
    features: tuple[float, ...]
    given_label: int
    truth: Truth | None = None


@dataclass
class GenConfig:
    num_classes: int = 10
    feature_dim: int = 16
    train_size: int = 5000
    test_size: int = 2000
    rho: float = WEB_RHO
    psi: float = WEB_PSI
    class_separation: float = 3.0
    within_class_sigma: float = 1.0
    num_ood_centers: int = 4
    seed: int = 0

    def validate(self) -> None:
        for name in ("num_classes", "feature_dim", "train_size", "test_size", "num_ood_centers"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be a positive integer")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be at least 2")
        if not (0.0 <= self.rho < 1.0 and 0.0 <= self.psi < 1.0):
            raise ConfigError("rho and psi must lie in [0, 1)")
        if self.rho + self.psi >= 1.0:
            raise ConfigError(f"rho + psi must be < 1, got {self.rho + self.psi}")
        if self.class_separation <= 0 or self.within_class_sigma <= 0:
            raise ConfigError("class_separation and within_class_sigma must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")

    def counts(self) -> tuple[int, int, int]:
        """(n_ood, n_id, n_clean) for the training split."""
        n = self.train_size
        n_ood = math.floor(self.rho * n)
        n_id = math.floor(self.psi * n)
        return n_ood, n_id, n - n_ood - n_id


@dataclass
class Dataset:
    """Column-oriented sample store.

    ``truth`` holds the integer codes ``CLEAN``/``ID_NOISE``/``OOD`` (or
    ``None`` when unknown for the whole set); ``true_labels`` is meaningful
    only where ``truth == ID_NOISE`` and is -1 elsewhere.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    truth: np.ndarray | None = None
    true_labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise InputError("features must be (N, D) with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InputError(f"labels must lie in [0, {self.num_classes})")
        if self.truth is not None:
            self.truth = np.asarray(self.truth, dtype=np.int64)
            if self.true_labels is None:
                self.true_labels = np.full(len(self), -1, dtype=np.int64)
            self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
            if self.truth.shape != self.labels.shape or self.true_labels.shape != self.labels.shape:
                raise InputError("truth arrays must have one entry per sample")
            flipped = self.truth == ID_NOISE
            if np.any(self.true_labels[flipped] == self.labels[flipped]):
                raise InputError("an ID-noise sample must carry a label different from its true label")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def ids(self) -> np.ndarray:
        return np.arange(len(self))

    def has_truth(self) -> bool:
        return self.truth is not None and bool(np.all(self.truth != UNKNOWN))

    def truth_of(self, i: int) -> Truth | None:
        if self.truth is None or self.truth[i] == UNKNOWN:
            return None
        code = int(self.truth[i])
        return Truth(code, int(self.true_labels[i]) if code == ID_NOISE else None)

    def records(self) -> list[SampleRecord]:
        return [
            SampleRecord(i, tuple(float(v) for v in self.features[i]), int(self.labels[i]), self.truth_of(i))
            for i in range(len(self))
        ]

    def one_hot(self) -> np.ndarray:
        out = np.zeros((len(self), self.num_classes))
        out[np.arange(len(self)), self.labels] = 1.0
        return out

    def category_counts(self) -> dict[str, int]:
        if self.truth is None:
            return {}
        return {name: int(np.sum(self.truth == code)) for code, name in CATEGORY_NAMES.items()}


def _draw_centers(rng: np.random.Generator, k: int, dim: int, radius: float) -> np.ndarray:
    directions = rng.standard_normal((k, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return radius * directions


def _draw_ood_centers(rng, k, dim, radius, id_centers, min_dist, max_tries=10_000) -> np.ndarray:
    out = []
    tries = 0
    while len(out) < k:
        tries += 1
        if tries > max_tries:
            raise ConfigError("could not place OOD centers away from the class clusters")
        cand = _draw_centers(rng, 1, dim, radius)[0]
        if np.min(np.linalg.norm(id_centers - cand, axis=1)) >= min_dist:
            out.append(cand)
    return np.array(out)


def generate(config: GenConfig) -> tuple[Dataset, Dataset]:
    """Return ``(train, test)``; only the training split is corrupted."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    c, d, sigma = config.num_classes, config.feature_dim, config.within_class_sigma
    centers = _draw_centers(rng, c, d, config.class_separation)
    ood_centers = _draw_ood_centers(
        rng, config.num_ood_centers, d, config.class_separation, centers, config.class_separation
    )

    def clean_split(n: int) -> tuple[np.ndarray, np.ndarray]:
        labels = rng.permutation(np.arange(n) % c)
        feats = centers[labels] + sigma * rng.standard_normal((n, d))
        return feats, labels

    train_x, train_y = clean_split(config.train_size)
    test_x, test_y = clean_split(config.test_size)

    n = config.train_size
    n_ood, n_id, _ = config.counts()
    truth = np.full(n, CLEAN, dtype=np.int64)
    true_labels = np.full(n, -1, dtype=np.int64)

    order = rng.permutation(n)
    ood_idx = np.sort(order[:n_ood])
    which = rng.integers(0, config.num_ood_centers, size=n_ood)
    train_x[ood_idx] = ood_centers[which] + sigma * rng.standard_normal((n_ood, d))
    truth[ood_idx] = OOD

    id_idx = np.sort(order[n_ood:n_ood + n_id])
    shift = rng.integers(1, c, size=n_id)
    true_labels[id_idx] = train_y[id_idx]
    train_y[id_idx] = (train_y[id_idx] + shift) % c
    truth[id_idx] = ID_NOISE

    train = Dataset(train_x, train_y, c, truth, true_labels)
    test = Dataset(test_x, test_y, c, np.full(config.test_size, CLEAN, dtype=np.int64))
    return train, test


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(dataset: Dataset, path: str | Path) -> None:
    d = dataset.feature_dim
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label", "truth"] + [f"f{j}" for j in range(d)])
        for i in range(len(dataset)):
            t = dataset.truth_of(i)
            w.writerow(
                [i, int(dataset.labels[i]), t.to_field() if t else "-"]
                + [_fmt(v) for v in dataset.features[i]]
            )


def read_csv(path: str | Path, num_classes: int | None = None) -> Dataset:
    """Parse a dataset CSV.

    Rows may appear in any order but ids must be unique and cover
    ``0..N-1``. ``num_classes`` defaults to ``max(label) + 1``.
    """
    path = str(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file, header expected", 1, path) from None
        if header[:3] != ["id", "label", "truth"]:
            raise ParseError("header must start with id,label,truth", 1, path)
        dim = len(header) - 3
        if header[3:] != [f"f{j}" for j in range(dim)]:
            raise ParseError("feature columns must be f0..f{D-1}", 1, path)
        rows: dict[int, tuple[int, Truth | None, list[float], int]] = {}
        for row in reader:
            line = reader.line_num
            if len(row) != dim + 3:
                raise ParseError(f"expected {dim + 3} fields, got {len(row)}", line, path)
            try:
                sid, label = int(row[0]), int(row[1])
                feats = [float(v) for v in row[3:]]
            except ValueError as exc:
                raise ParseError(str(exc), line, path) from None
            try:
                truth = Truth.from_field(row[2])
            except ValueError as exc:
                raise ParseError(str(exc), line, path) from None
            if sid < 0 or label < 0:
                raise ParseError("id and label must be nonnegative", line, path)
            if not all(math.isfinite(v) for v in feats):
                raise ParseError("non-finite feature value", line, path)
            if sid in rows:
                raise ParseError(f"duplicate id {sid}", line, path)
            rows[sid] = (label, truth, feats, line)

    n = len(rows)
    if sorted(rows) != list(range(n)):
        raise ParseError("ids must be contiguous from 0", None, path)
    labels = np.array([rows[i][0] for i in range(n)], dtype=np.int64)
    feats = np.array([rows[i][2] for i in range(n)], dtype=np.float64).reshape(n, dim)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if n else 0
    elif n and labels.max() >= num_classes:
        bad = int(np.argmax(labels >= num_classes))
        raise ParseError(f"label {labels[bad]} outside [0, {num_classes})", rows[bad][3], path)

    truths = [rows[i][1] for i in range(n)]
    if n and all(t is not None for t in truths):
        truth = np.array([t.kind for t in truths], dtype=np.int64)
        true_labels = np.array([t.true_label if t.kind == ID_NOISE else -1 for t in truths], dtype=np.int64)
    elif any(t is not None for t in truths):
        truth = np.array([UNKNOWN if t is None else t.kind for t in truths], dtype=np.int64)
        true_labels = np.array([t.true_label if t is not None and t.kind == ID_NOISE else -1 for t in truths],
                               dtype=np.int64)
    else:
        truth = true_labels = None
    try:
        return Dataset(feats, labels, num_classes, truth, true_labels)
    except InputError as exc:
        raise ParseError(str(exc), None, path) from None
