"""Small fully connected classifier with hand-written backprop and SGD.

Everything runs in float64. Layers compute ``h @ W + b``; hidden layers use a
rectifier and the last layer feeds a row-wise softmax.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, TrainingError

PROB_FLOOR = 1e-12


def safe_log(p: np.ndarray) -> np.ndarray:
    return np.log(np.clip(p, PROB_FLOOR, 1.0))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def row_entropy(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy of each row, natural log, with probabilities clamped."""
    return -(probs * safe_log(probs)).sum(axis=-1)


@dataclass
class Network:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    def __post_init__(self) -> None:
        if len(self.layer_dims) < 2 or any(int(d) <= 0 for d in self.layer_dims):
            raise InputError(f"layer_dims must hold at least two positive sizes, got {self.layer_dims}")
        if self.activation != "relu":
            raise InputError(f"unsupported activation {self.activation!r}")
        n_layers = len(self.layer_dims) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise InputError("need one weight matrix and one bias vector per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_dims[i], self.layer_dims[i + 1])
            if w.shape != shape or b.shape != (shape[1],):
                raise InputError(f"layer {i}: expected W{shape} and b({shape[1]},), got {w.shape} and {b.shape}")

    @classmethod
    def init(cls, layer_dims: list[int], seed: int | np.random.Generator) -> "Network":
        """Glorot-uniform weights and zero biases from a seeded generator."""
        rng = np.random.default_rng(seed)
        dims = [int(d) for d in layer_dims]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(dims, weights, biases)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1]

    def params(self) -> list[np.ndarray]:
        """Parameters in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Network":
        return Network(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )


def _check_features(net: Network, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise InputError(f"expected features of width {net.input_dim}, got shape {np.shape(features)}")
    return x


def _forward_cached(net: Network, x: np.ndarray):
    pre_acts = []
    acts = [x]
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        pre_acts.append(z)
        if i < last:
            h = np.maximum(z, 0.0)
            acts.append(h)
    probs = softmax(pre_acts[-1])
    return probs, acts, pre_acts


def forward(net: Network, features: np.ndarray) -> np.ndarray:
    """Class probabilities, one row per input row."""
    x = _check_features(net, features)
    return _forward_cached(net, x)[0]


def cross_entropy_soft(probs: np.ndarray, targets: np.ndarray) -> float:
    """Batch mean of ``-sum_c t_c log p_c``."""
    p = np.asarray(probs, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 2:
        raise InputError(f"probs {p.shape} and targets {t.shape} must be matching 2-D batches")
    return float(-(t * safe_log(p)).sum(axis=1).mean())


@dataclass
class LossTerms:
    """Auxiliary terms added to the soft cross-entropy.

    ``entropy_weights`` holds one weight per sample for the entropy penalty;
    ``None`` disables it regardless of ``gamma``.
    """

    gamma: float = 0.0
    entropy_weights: np.ndarray | None = None


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    loss: float
    probs: np.ndarray = field(repr=False)

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def loss_value(probs: np.ndarray, targets: np.ndarray, aux: LossTerms | None = None) -> float:
    loss = cross_entropy_soft(probs, targets)
    if aux is not None and aux.entropy_weights is not None and aux.gamma != 0.0:
        v = np.asarray(aux.entropy_weights, dtype=np.float64)
        loss += aux.gamma * float(np.mean(v * row_entropy(probs)))
    return loss


def backward(
    net: Network,
    features: np.ndarray,
    targets: np.ndarray,
    aux_loss_terms: LossTerms | None = None,
) -> Gradients:
    """Exact gradients of ``CE(h(x), targets) + gamma * mean(v * H(h(x)))``.

    Targets and entropy weights are treated as constants.
    """
    x = _check_features(net, features)
    t = np.asarray(targets, dtype=np.float64)
    probs, acts, pre_acts = _forward_cached(net, x)
    if t.shape != probs.shape:
        raise InputError(f"targets shape {t.shape} does not match output shape {probs.shape}")
    n = x.shape[0]

    # d(mean CE)/d logits, valid for any target mass
    dz = (probs * t.sum(axis=1, keepdims=True) - t) / n

    aux = aux_loss_terms
    if aux is not None and aux.entropy_weights is not None and aux.gamma != 0.0:
        v = np.asarray(aux.entropy_weights, dtype=np.float64)
        if v.shape != (n,):
            raise InputError(f"entropy weights need shape ({n},), got {v.shape}")
        # dH/dp through the clamped log, then through the softmax Jacobian
        clamped = probs <= PROB_FLOOR
        dh_dp = np.where(clamped, -np.log(PROB_FLOOR), -(np.log(np.where(clamped, 1.0, probs)) + 1.0))
        dh_dz = probs * (dh_dp - (probs * dh_dp).sum(axis=1, keepdims=True))
        dz = dz + (aux.gamma / n) * v[:, None] * dh_dz

    loss = loss_value(probs, t, aux)

    n_layers = len(net.weights)
    grad_w: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    grad_b: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for i in range(n_layers - 1, -1, -1):
        grad_w[i] = acts[i].T @ dz
        grad_b[i] = dz.sum(axis=0)
        if i > 0:
            dz = (dz @ net.weights[i].T) * (pre_acts[i - 1] > 0)
    return Gradients(grad_w, grad_b, loss, probs)


@dataclass
class OptimizerState:
    velocity_w: list[np.ndarray]
    velocity_b: list[np.ndarray]
    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 0.0

    def __post_init__(self) -> None:
        if not self.learning_rate >= 0:
            raise InputError("learning_rate must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise InputError("momentum must lie in [0, 1)")
        if not self.weight_decay >= 0:
            raise InputError("weight_decay must be nonnegative")

    @classmethod
    def for_network(cls, net: Network, learning_rate: float, momentum: float = 0.9,
                    weight_decay: float = 0.0) -> "OptimizerState":
        return cls(
            [np.zeros_like(w) for w in net.weights],
            [np.zeros_like(b) for b in net.biases],
            learning_rate,
            momentum,
            weight_decay,
        )


def sgd_step(net: Network, grads: Gradients, state: OptimizerState) -> tuple[Network, OptimizerState]:
    """One momentum-SGD update, in place; weight decay is folded into the gradient."""
    if len(grads.weights) != len(net.weights):
        raise InputError("gradient set does not match the network depth")
    for i, (gw, gb) in enumerate(zip(grads.weights, grads.biases)):
        if gw.shape != net.weights[i].shape or gb.shape != net.biases[i].shape:
            raise InputError(f"layer {i}: gradient shape mismatch")
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            err = TrainingError(f"non-finite gradient in layer {i}")
            err.layer = i
            raise err
    mu, wd, lr = state.momentum, state.weight_decay, state.learning_rate
    for i in range(len(net.weights)):
        vw, vb = state.velocity_w[i], state.velocity_b[i]
        vw *= mu
        vw += grads.weights[i] + wd * net.weights[i]
        vb *= mu
        vb += grads.biases[i] + wd * net.biases[i]
        net.weights[i] -= lr * vw
        net.biases[i] -= lr * vb
    return net, state
