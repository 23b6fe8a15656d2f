"""CNN classifier trained on the inferred labels, plus evaluation helpers.

Architecture for 28x28 single-channel input, valid convolutions:
conv 32@3x3 -> pool 2x2 -> conv 64@3x3 -> conv 64@3x3 -> pool 2x2
-> dense 100 -> dense 10, ReLU activations, He init, softmax output.
Intermediate sizes: 28 -> 26 -> 13 -> 11 -> 9 -> 4, flattened 1024.
"""

import numpy as np

from . import nn
from .errors import DivergenceError
from .tensorfile import load_tensors, save_tensors


class CnnParams:
    def __init__(self, seed=0, dtype=np.float64, side=28):
        self.seed = seed
        self.side = side
        rng = np.random.default_rng(seed)
        after_pool1 = (side - 2) // 2
        after_pool2 = (after_pool1 - 2 - 2) // 2
        flat = after_pool2 * after_pool2 * 64
        self.layers = [
            nn.Conv2d(1, 32, (3, 3), rng, dtype=dtype),
            nn.ReLU(),
            nn.MaxPool2x2(),
            nn.Conv2d(32, 64, (3, 3), rng, dtype=dtype),
            nn.ReLU(),
            nn.Conv2d(64, 64, (3, 3), rng, dtype=dtype),
            nn.ReLU(),
            nn.MaxPool2x2(),
            nn.Flatten(),
            nn.Dense(flat, 100, rng, dtype=dtype),
            nn.ReLU(),
            nn.Dense(100, 10, rng, dtype=dtype),
        ]

    def weighted_layers(self):
        return [l for l in self.layers if l.params()]

    def save(self, path, meta=None):
        m = dict(meta or {})
        m.update(seed=self.seed, side=self.side)
        tensors = {}
        for i, layer in enumerate(self.weighted_layers()):
            tensors[f"W{i}"] = layer.W
            tensors[f"b{i}"] = layer.b
        save_tensors(path, tensors, meta=m)

    @classmethod
    def load(cls, path):
        meta, tensors = load_tensors(path)
        dtype = tensors["W0"].dtype.type
        params = cls(seed=meta["seed"], dtype=dtype, side=meta.get("side", 28))
        for i, layer in enumerate(params.weighted_layers()):
            layer.W = tensors[f"W{i}"]
            layer.b = tensors[f"b{i}"]
            layer.dW = np.zeros_like(layer.W)
            layer.db = np.zeros_like(layer.b)
        return params


def init_cnn(seed=0, dtype=np.float64):
    """He-initialized weights (fan-in scaling), zero biases."""
    return CnnParams(seed=seed, dtype=dtype)


def _as_batch(images, side, dtype):
    x = np.asarray(images)
    if x.ndim == 2 and x.shape[1] == side * side:
        x = x.reshape(-1, 1, side, side)
    elif x.ndim == 3 and x.shape[1:] == (side, side):
        x = x[:, None, :, :]
    elif x.ndim != 4 or x.shape[1:] != (1, side, side):
        raise ValueError(f"expected {side}x{side} images, got shape {x.shape}")
    return x.astype(dtype)


def train_cnn(params, store, labels, epochs, seed=0, lr=0.01, momentum=0.9, batch_size=32):
    """SGD (lr 0.01, momentum 0.9) on softmax cross entropy.

    Mini-batches reshuffled each epoch from `seed`; epochs=0 leaves the
    parameters untouched.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != len(store):
        raise ValueError(f"{labels.shape[0]} labels for {len(store)} images")
    if epochs <= 0:
        return params

    dtype = params.weighted_layers()[0].W.dtype.type
    opt = nn.SGDMomentum(params.layers, lr=lr, momentum=momentum)
    rng = np.random.default_rng(seed)
    n = len(store)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            x = _as_batch(store.images[idx], params.side, dtype)
            logits = nn.forward(params.layers, x)
            loss, grad = nn.softmax_cross_entropy(logits, labels[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            nn.backward(params.layers, grad)
            opt.step()
    return params


def classify(params, images, chunk=512):
    """Predicted digit and softmax probabilities per image."""
    dtype = params.weighted_layers()[0].W.dtype.type
    x = _as_batch(images, params.side, dtype)
    probs = np.empty((x.shape[0], 10), dtype=np.float64)
    for start in range(0, x.shape[0], chunk):
        logits = nn.forward(params.layers, x[start : start + chunk])
        probs[start : start + logits.shape[0]] = nn.softmax(logits)
    return probs.argmax(axis=1), probs


def eval_classification(params, test_store):
    """Fraction of test images whose argmax matches the true label."""
    preds, _ = classify(params, test_store.images)
    return float((preds == test_store.evaluation_labels()).mean())


def eval_addition(params, test_corpus, test_store):
    """Fraction of test examples whose predicted digits reproduce the sum."""
    preds, _ = classify(params, test_store.images)
    correct = 0
    for ex in test_corpus.examples:
        weights = 10 ** np.arange(ex.w - 1, -1, -1, dtype=np.int64)
        predicted_sum = int((preds[ex.grid] * weights).sum())
        correct += predicted_sum == ex.sum
    return correct / len(test_corpus.examples)
