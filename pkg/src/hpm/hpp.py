"""Horizontal pyramid pooling head.

For every scale ``n`` in the pyramid the feature map is cut into ``n``
equal horizontal stripes. Each stripe is pooled to a column vector
(average, max, or their sum), reduced by its own 1x1 convolution and
scored by its own bias-free classifier. Bins are ordered scale-major,
top-to-bottom within a scale; that order is also the descriptor layout.
"""
from dataclasses import dataclass

import numpy as np

from .nn import conv2d_backward, conv2d_forward, init_conv, init_linear, linear_backward, \
    linear_forward, softmax_cross_entropy

POOLINGS = ("avg", "max", "avg_plus_max")


@dataclass(frozen=True)
class PyramidConfig:
    scales: tuple = (1, 2, 4, 8)
    reduced_dim: int = 32
    pooling: str = "avg_plus_max"
    num_classes: int = 2

    def __post_init__(self):
        scales = tuple(int(s) for s in self.scales)
        object.__setattr__(self, "scales", scales)
        if not scales or scales[0] < 1:
            raise ValueError("scales must be a non-empty list of positive bin counts")
        if any(b <= a for a, b in zip(scales, scales[1:])):
            raise ValueError(f"scales must be strictly increasing, got {scales}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if self.reduced_dim < 1:
            raise ValueError("reduced_dim must be positive")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")

    @property
    def total_bins(self):
        return sum(self.scales)

    @property
    def descriptor_dim(self):
        return self.reduced_dim * self.total_bins

    def bins(self):
        """(scale index, bin index) pairs in descriptor order."""
        return [(i, j) for i, n in enumerate(self.scales) for j in range(n)]

    def check_height(self, height):
        bad = [n for n in self.scales if height % n]
        if bad:
            raise ValueError(f"feature height {height} is not divisible by scales {bad}")


@dataclass
class PyramidHead:
    config: PyramidConfig
    in_channels: int
    reduce: list  # Conv2dLayer per bin, 1x1, in_channels -> reduced_dim
    fc: list  # LinearLayer per bin, reduced_dim -> num_classes

    def named_parameters(self):
        for (i, j), red in zip(self.config.bins(), self.reduce):
            yield f"reduce_{i}_{j}.weight", red.weight
            yield f"reduce_{i}_{j}.bias", red.bias
        for (i, j), fc in zip(self.config.bins(), self.fc):
            yield f"fc_{i}_{j}.weight", fc.weight


@dataclass
class BinFeatures:
    G: np.ndarray  # (N, total_bins, C) pooled stripes
    H: np.ndarray  # (N, total_bins, reduced_dim)
    logits: np.ndarray  # (N, total_bins, num_classes)


def build_head(cfg, in_channels, rng):
    reduce, fc = [], []
    for i, j in cfg.bins():
        reduce.append(init_conv(rng.child(f"reduce_{i}_{j}"), in_channels, cfg.reduced_dim, 1))
        fc.append(init_linear(rng.child(f"fc_{i}_{j}"), cfg.reduced_dim, cfg.num_classes))
    return PyramidHead(cfg, in_channels, reduce, fc)


def slice_bins(F, n):
    h = F.shape[2]
    if n < 1 or h % n:
        raise ValueError(f"height {h} cannot be split into {n} equal bins")
    step = h // n
    return [F[:, :, j * step:(j + 1) * step, :] for j in range(n)]


def pool_bin(bin_, strategy):
    if strategy not in POOLINGS:
        raise ValueError(f"unknown pooling {strategy!r}")
    if strategy == "avg":
        return bin_.mean(axis=(2, 3))
    if strategy == "max":
        return bin_.max(axis=(2, 3))
    return bin_.mean(axis=(2, 3)) + bin_.max(axis=(2, 3))


def _pool_bin_backward(bin_, grad_g, strategy):
    n, c, h, w = bin_.shape
    grad = np.zeros(bin_.shape, dtype=bin_.dtype)
    if strategy in ("avg", "avg_plus_max"):
        grad += (grad_g / (h * w))[:, :, None, None]
    if strategy in ("max", "avg_plus_max"):
        # first argmax in row-major order takes the whole gradient
        idx = np.argmax(bin_.reshape(n, c, h * w), axis=2)
        routed = np.zeros((n, c, h * w), dtype=bin_.dtype)
        np.put_along_axis(routed, idx[:, :, None], grad_g[:, :, None], axis=2)
        grad += routed.reshape(n, c, h, w)
    return grad


def _check_features(head, F):
    if F.ndim != 4 or F.shape[1] != head.in_channels:
        raise ValueError(f"expected feature map with {head.in_channels} channels, got shape {F.shape}")
    head.config.check_height(F.shape[2])


def head_forward(head, F):
    _check_features(head, F)
    cfg = head.config
    G, H, logits = [], [], []
    k = 0
    for n in cfg.scales:
        for part in slice_bins(F, n):
            g = pool_bin(part, cfg.pooling)
            h = conv2d_forward(head.reduce[k], g[:, :, None, None])[:, :, 0, 0]
            G.append(g)
            H.append(h)
            logits.append(linear_forward(head.fc[k], h))
            k += 1
    return BinFeatures(np.stack(G, axis=1), np.stack(H, axis=1), np.stack(logits, axis=1))


def head_backward(head, F, grad_logits, feats=None):
    """Returns (grad_F, parameter gradients keyed like ``named_parameters``)."""
    _check_features(head, F)
    cfg = head.config
    n_batch = F.shape[0]
    expected = (n_batch, cfg.total_bins, cfg.num_classes)
    if grad_logits.shape != expected:
        raise ValueError(f"grad_logits shape {grad_logits.shape} != {expected}")
    if feats is None:
        feats = head_forward(head, F)
    grad_F = np.zeros_like(F)
    grads = {}
    k = 0
    for i, n in enumerate(cfg.scales):
        step = F.shape[2] // n
        for j, part in enumerate(slice_bins(F, n)):
            gl = grad_logits[:, k]
            grad_h, grads[f"fc_{i}_{j}.weight"] = linear_backward(head.fc[k], feats.H[:, k], gl)
            g_in = feats.G[:, k][:, :, None, None]
            grad_g, gw, gb = conv2d_backward(head.reduce[k], g_in, grad_h[:, :, None, None])
            grads[f"reduce_{i}_{j}.weight"] = gw
            grads[f"reduce_{i}_{j}.bias"] = gb
            grad_F[:, :, j * step:(j + 1) * step, :] += _pool_bin_backward(part, grad_g[:, :, 0, 0], cfg.pooling)
            k += 1
    return grad_F, grads


def hpm_loss(bin_logits, labels):
    """Cross-entropy summed over the batch and over every bin classifier.

    Returns (scalar loss, grad w.r.t. ``bin_logits``).
    """
    n, b, p = bin_logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    losses, grad = softmax_cross_entropy(bin_logits.reshape(n * b, p), np.repeat(labels, b))
    return losses.sum(), grad.reshape(n, b, p)


def predict_bin(logits):
    """Predicted class per row; argmax of the logits, lowest index on ties."""
    return np.argmax(logits, axis=-1)


def max_pool_argmax(head, F):
    """Argmax locations of every max-pooled stripe; used to spot ties in gradient checks."""
    out = []
    for n in head.config.scales:
        for part in slice_bins(F, n):
            out.append(np.argmax(part.reshape(part.shape[0], part.shape[1], -1), axis=2).ravel())
    return np.concatenate(out)
