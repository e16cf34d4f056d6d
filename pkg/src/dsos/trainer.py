"""Two-phase training: warm-up on the given labels, then per-epoch detection
and training on corrected targets.

Random streams are split by purpose (initialization, batch order, mixup) so
that switching a feature on or off never changes the data order.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .bmm import Assessment, assess
from .correction import CorrectionParams, bootstrap_label, dynamic_soften, mixup_batch
from .errors import ConfigError, InputError, TrainingError
from .evalreport import test_accuracy
from .metrics import PIVOT, compute_metric_vector, minmax_normalize
from .nn import LossTerms, Network, OptimizerState, backward, forward, sgd_step
from .synthgen import Dataset

log = logging.getLogger(__name__)

_INIT, _SHUFFLE, _MIXUP = 0, 1, 2


@dataclass
class TrainConfig:
    epochs: int = 40
    warmup_end: int | None = None
    lr: float = 0.03
    lr_drop_epochs: list[int] = field(default_factory=lambda: [20, 32])
    lr_drop_factor: float = 10.0
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 32
    hidden_dims: list[int] = field(default_factory=lambda: [128])
    correction: CorrectionParams = field(default_factory=CorrectionParams)
    warmup_mixup: bool = True
    warmup_entropy: bool = True
    correction_mixup: bool = False
    enable_correction: bool = True
    enable_bootstrap: bool = True
    enable_softening: bool = True
    bmm_iters: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if isinstance(self.correction, dict):
            self.correction = CorrectionParams(**self.correction)

    @property
    def effective_warmup_end(self) -> int:
        if not self.enable_correction:
            return self.epochs
        if self.warmup_end is not None:
            return self.warmup_end
        if self.lr_drop_epochs:
            return min(self.lr_drop_epochs) + 1
        raise ConfigError("warmup_end is unset and there is no learning-rate drop to derive it from")

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not self.lr > 0 or not self.lr_drop_factor > 0:
            raise ConfigError("lr and lr_drop_factor must be positive")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ConfigError("momentum must lie in [0, 1) and weight_decay be nonnegative")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError("hidden_dims must be positive")
        if self.bmm_iters < 1:
            raise ConfigError("bmm_iters must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        self.correction.validate()
        end = self.effective_warmup_end
        if not 1 <= end <= self.epochs:
            raise ConfigError(f"warmup_end {end} must lie in [1, epochs={self.epochs}]")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``; a drop at ``d`` applies from epoch ``d + 1``."""
        n_drops = sum(1 for d in self.lr_drop_epochs if epoch > d)
        return self.lr / self.lr_drop_factor ** n_drops

    def as_dict(self) -> dict:
        out = asdict(self)
        out["warmup_end"] = self.effective_warmup_end
        return out


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    lr: float
    train_loss: float
    test_acc: float
    n_clean: int | None = None
    n_id: int | None = None
    n_ood: int | None = None
    bmm: dict | None = None
    fallback: str | None = None

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)

    @property
    def best_accuracy(self) -> float | None:
        return max((e.test_acc for e in self.epochs), default=None)

    @property
    def last_accuracy(self) -> float | None:
        return self.epochs[-1].test_acc if self.epochs else None


@dataclass
class Streams:
    shuffle: np.random.Generator
    mixup: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "Streams":
        return cls(np.random.default_rng([seed, _SHUFFLE]), np.random.default_rng([seed, _MIXUP]))


def build_network(config: TrainConfig, input_dim: int, num_classes: int) -> Network:
    dims = [input_dim, *config.hidden_dims, num_classes]
    return Network.init(dims, np.random.default_rng([config.seed, _INIT]))


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _train_sweep(net, features, targets, weights, gamma, use_mixup, config, opt, streams, epoch) -> float:
    """One pass over the data; returns the sample-weighted mean batch loss."""
    n = features.shape[0]
    total = 0.0
    for b, idx in enumerate(_batches(n, config.batch_size, streams.shuffle)):
        x, y, w = features[idx], targets[idx], weights[idx]
        if use_mixup:
            lam = float(streams.mixup.beta(config.correction.mixup_beta, config.correction.mixup_beta))
            perm = streams.mixup.permutation(len(idx))
            x, y = mixup_batch(x, y, lam, perm)
            w = lam * w + (1 - lam) * w[perm]
        grads = backward(net, x, y, LossTerms(gamma, w))
        if not np.isfinite(grads.loss):
            raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
        try:
            sgd_step(net, grads, opt)
        except TrainingError as exc:
            raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from exc
        total += grads.loss * len(idx)
    return total / n


def warmup_epoch(net: Network, train: Dataset, config: TrainConfig, opt: OptimizerState,
                 streams: Streams, epoch: int = 1) -> float:
    """Train on the given labels, with mixup and an unweighted entropy penalty by default."""
    if epoch > config.effective_warmup_end:
        raise InputError(f"epoch {epoch} is past the warm-up end {config.effective_warmup_end}")
    gamma = config.correction.gamma if config.warmup_entropy else 0.0
    weights = np.ones(len(train))
    return _train_sweep(net, train.features, train.one_hot(), weights, gamma, config.warmup_mixup,
                        config, opt, streams, epoch)


def evaluate_metrics(net: Network, train: Dataset, bmm_iters: int = 10) -> tuple[np.ndarray, Assessment]:
    """Score every sample against its original label and assess it."""
    if train.num_classes < 3:
        raise ConfigError("noise assessment needs at least 3 classes")
    predictions = forward(net, train.features)
    metric = compute_metric_vector(train.labels, predictions, "il_collision", train.num_classes)
    normalized, mapping = minmax_normalize(metric.values)
    assessment = assess(normalized, mapping.apply(PIVOT), bmm_iters, raw=metric.values)
    if not assessment.monotone:
        log.debug("posterior is not monotone over the observed metric range")
    return predictions, assessment


def corrected_targets(train: Dataset, assessment: Assessment, predictions: np.ndarray,
                      config: TrainConfig) -> np.ndarray:
    """Targets rebuilt from the pristine labels: bootstrap, then soften."""
    params = config.correction
    targets = train.one_hot()
    if config.enable_bootstrap:
        targets = bootstrap_label(targets, predictions, assessment.u, params.bootstrap_threshold)
    if config.enable_softening:
        targets = dynamic_soften(targets, assessment.v, params.alpha)
    return targets


def correction_epoch(net: Network, train: Dataset, assessment: Assessment, predictions: np.ndarray,
                     config: TrainConfig, opt: OptimizerState, streams: Streams, epoch: int) -> float:
    targets = corrected_targets(train, assessment, predictions, config)
    return _train_sweep(net, train.features, targets, assessment.v, config.correction.gamma,
                        config.correction_mixup, config, opt, streams, epoch)


def run(config: TrainConfig, train: Dataset, test: Dataset) -> tuple[Network, TrainHistory, Assessment]:
    """Full schedule; returns the network, per-epoch history and the final assessment."""
    config.validate()
    if train.num_classes < 3:
        raise ConfigError("training with noise assessment needs at least 3 classes")
    if test.num_classes != train.num_classes or test.feature_dim != train.feature_dim:
        raise InputError("train and test sets disagree on classes or feature width")
    pristine = train.labels.copy()
    net = build_network(config, train.feature_dim, train.num_classes)
    opt = OptimizerState.for_network(net, config.lr, config.momentum, config.weight_decay)
    streams = Streams.from_seed(config.seed)
    history = TrainHistory()
    warmup_end = config.effective_warmup_end

    for epoch in range(1, config.epochs + 1):
        opt.learning_rate = config.lr_at(epoch)
        if epoch <= warmup_end:
            loss = warmup_epoch(net, train, config, opt, streams, epoch)
            record = EpochRecord(epoch, "warmup", opt.learning_rate, loss, 0.0)
        else:
            predictions, assessment = evaluate_metrics(net, train, config.bmm_iters)
            loss = correction_epoch(net, train, assessment, predictions, config, opt, streams, epoch)
            counts = assessment.counts()
            record = EpochRecord(
                epoch, "correction", opt.learning_rate, loss, 0.0,
                counts["clean"], counts["id"], counts["ood"],
                assessment.bmm.as_dict() if assessment.bmm is not None else None,
                assessment.fallback_reason,
            )
        record.test_acc = test_accuracy(net, test)
        history.epochs.append(record)
        log.info("epoch %d %s lr=%g loss=%.4f acc=%.4f", epoch, record.phase, record.lr, loss, record.test_acc)

    if not np.array_equal(pristine, train.labels):
        raise TrainingError("given labels were modified during training")
    _, final = evaluate_metrics(net, train, config.bmm_iters)
    return net, history, final
