"""Minimal layer kit with explicit backprop, shared by the autoencoder and CNN.

Everything is plain numpy. Layers cache what they need on forward and fill
their grad buffers on backward; SGDMomentum updates parameters in place.
Determinism: all randomness comes from the rng handed to the constructors,
and batch order is owned by the callers.
"""

import numpy as np


def he_normal(rng, fan_in, shape, dtype):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)


class Dense:
    def __init__(self, n_in, n_out, rng, dtype=np.float64):
        self.W = he_normal(rng, n_in, (n_in, n_out), dtype)
        self.b = np.zeros(n_out, dtype=dtype)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)

    def forward(self, x):
        self._x = x
        return x @ self.W + self.b

    def backward(self, grad):
        self.dW[...] = self._x.T @ grad
        self.db[...] = grad.sum(axis=0)
        return grad @ self.W.T

    def params(self):
        return [(self.W, self.dW), (self.b, self.db)]


class ReLU:
    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad):
        return grad * self._mask

    def params(self):
        return []


class Conv2d:
    """Valid (no-padding) stride-1 convolution on (B, C, H, W) input."""

    def __init__(self, in_channels, filters, kernel, rng, dtype=np.float64):
        kh, kw = kernel
        fan_in = in_channels * kh * kw
        self.W = he_normal(rng, fan_in, (filters, in_channels, kh, kw), dtype)
        self.b = np.zeros(filters, dtype=dtype)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self.kernel = (kh, kw)

    def _wmat(self):
        # (C*kh*kw, F) view for the im2col product
        f = self.W.shape[0]
        return self.W.reshape(f, -1).T

    def forward(self, x):
        kh, kw = self.kernel
        windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
        # (B, C, Ho, Wo, kh, kw) -> (B, Ho, Wo, C*kh*kw)
        cols = windows.transpose(0, 2, 3, 1, 4, 5)
        b_, ho, wo = cols.shape[:3]
        cols = cols.reshape(b_, ho, wo, -1)
        self._cols = cols
        self._xshape = x.shape
        out = cols @ self._wmat() + self.b
        return out.transpose(0, 3, 1, 2)

    def backward(self, grad):
        kh, kw = self.kernel
        f, c = self.W.shape[:2]
        g = grad.transpose(0, 2, 3, 1)  # (B, Ho, Wo, F)
        b_, ho, wo = g.shape[:3]
        dwmat = np.tensordot(self._cols, g, axes=([0, 1, 2], [0, 1, 2]))
        self.dW[...] = dwmat.T.reshape(self.W.shape)
        self.db[...] = g.sum(axis=(0, 1, 2))
        dcols = (g @ self._wmat().T).reshape(b_, ho, wo, c, kh, kw)
        dx = np.zeros(self._xshape, dtype=grad.dtype)
        for p in range(kh):
            for q in range(kw):
                dx[:, :, p : p + ho, q : q + wo] += dcols[:, :, :, :, p, q].transpose(
                    0, 3, 1, 2
                )
        return dx

    def params(self):
        return [(self.W, self.dW), (self.b, self.db)]


class MaxPool2x2:
    """2x2 max pooling, stride 2, floor on odd sizes.

    Backward routes the gradient to the first maximal element of each
    window (argmax tie rule).
    """

    def forward(self, x):
        b, c, h, w = x.shape
        ho, wo = h // 2, w // 2
        self._xshape = x.shape
        win = x[:, :, : ho * 2, : wo * 2].reshape(b, c, ho, 2, wo, 2)
        win = win.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, 4)
        self._argmax = win.argmax(axis=-1)
        return win.max(axis=-1)

    def backward(self, grad):
        b, c, h, w = self._xshape
        ho, wo = h // 2, w // 2
        d4 = np.zeros((b, c, ho, wo, 4), dtype=grad.dtype)
        np.put_along_axis(d4, self._argmax[..., None], grad[..., None], axis=-1)
        d4 = d4.reshape(b, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        dx = np.zeros(self._xshape, dtype=grad.dtype)
        dx[:, :, : ho * 2, : wo * 2] = d4.reshape(b, c, ho * 2, wo * 2)
        return dx

    def params(self):
        return []


class Flatten:
    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)

    def params(self):
        return []


def forward(layers, x):
    for layer in layers:
        x = layer.forward(x)
    return x


def backward(layers, grad):
    for layer in reversed(layers):
        grad = layer.backward(grad)
    return grad


def parameters(layers):
    out = []
    for layer in layers:
        out.extend(layer.params())
    return out


class SGDMomentum:
    def __init__(self, layers, lr, momentum=0.9):
        self.lr = lr
        self.momentum = momentum
        self._params = parameters(layers)
        self._velocity = [np.zeros_like(p) for p, _ in self._params]

    def step(self):
        for (p, g), v in zip(self._params, self._velocity):
            v *= self.momentum
            v -= self.lr * g
            p += v


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross entropy and gradient w.r.t. logits."""
    n = logits.shape[0]
    probs = softmax(logits)
    eps = np.finfo(probs.dtype).tiny
    loss = -np.log(probs[np.arange(n), labels] + eps).mean()
    grad = probs
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def mse(pred, target):
    """Mean squared error over all entries and gradient w.r.t. pred."""
    diff = pred - target
    loss = float((diff**2).mean())
    return loss, 2.0 * diff / diff.size
