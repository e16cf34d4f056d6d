"""Hand-built networks whose outputs are ideal predictions per truth category."""

import numpy as np

from dsos.nn import Network
from dsos.synthgen import CLEAN, ID_NOISE, Dataset


def ideal_predictions(train: Dataset, seed: int = 0) -> np.ndarray:
    """Clean: one-hot on the given label. ID: confident (0.9-1.0) on the true
    label. OOD: close to uniform. The small per-sample spread keeps every
    category a cluster rather than a single point."""
    rng = np.random.default_rng(seed)
    c = train.num_classes
    out = np.empty((len(train), c))
    for i in range(len(train)):
        kind = train.truth[i]
        if kind == CLEAN:
            out[i] = np.eye(c)[train.labels[i]]
        elif kind == ID_NOISE:
            conf = rng.uniform(0.9, 1.0)
            out[i] = (1 - conf) / (c - 1)
            out[i, train.true_labels[i]] = conf
        else:
            out[i] = rng.dirichlet(np.full(c, 200.0))
    return out


def lookup_setup(train: Dataset, predictions: np.ndarray) -> tuple[Network, Dataset]:
    """A linear net over one-hot sample indicators that reproduces ``predictions``."""
    n, c = predictions.shape
    net = Network([n, c], [np.log(np.clip(predictions, 1e-12, None))], [np.zeros(c)])
    data = Dataset(np.eye(n), train.labels, c, train.truth, train.true_labels)
    return net, data
