"""Mini-batch SGD training of backbone + pyramid head on identity labels."""
from dataclasses import dataclass, field
import time

import numpy as np

from .backbone import backbone_backward, backbone_forward
from .hpp import head_backward, head_forward, hpm_loss, predict_bin
from .nn import SgdMomentum, sgd_step
from .tensor import DTYPE, Rng


class NumericError(FloatingPointError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    epochs: int = 30
    base_lr: float = 0.1
    decay_epoch: int = 20
    momentum: float = 0.9
    backbone_lr_mult: float = 1.0
    seed: int = 0
    flip_augment: bool = True
    normalize_mean: tuple = (0.5, 0.5, 0.5)
    normalize_std: tuple = (0.5, 0.5, 0.5)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.epochs and not 0 <= self.decay_epoch <= self.epochs:
            raise ValueError("decay_epoch must lie in [0, epochs]")
        if any(s == 0 for s in self.normalize_std):
            raise ValueError("normalize_std must be non-zero")


@dataclass
class EpochRecord:
    epoch: int
    loss: float  # branch-summed cross-entropy per sample
    lr: float
    branch_acc: np.ndarray
    bin_names: list = field(default_factory=list)
    seconds: float = 0.0

    def to_line(self):
        accs = " ".join(f"acc_{name}={a:.4f}" for name, a in zip(self.bin_names, self.branch_acc))
        return f"epoch={self.epoch} loss={self.loss:.6f} lr={self.lr:g} {accs} time={self.seconds:.2f}"


def normalize_images(images, mean, std):
    mean = np.asarray(mean, dtype=DTYPE).reshape(-1, 1, 1)
    std = np.asarray(std, dtype=DTYPE).reshape(-1, 1, 1)
    if np.any(std == 0):
        raise ValueError("normalization std must be non-zero")
    return ((images - mean) / std).astype(DTYPE, copy=False)


def flip(images):
    """Mirror along the width axis."""
    return images[..., ::-1].copy()


def augment(images, rng, cfg, force_flip=None):
    """Random horizontal flip (p = 0.5 per image) then per-channel normalization.

    Works on one image (C, H, W) or a batch (N, C, H, W).
    """
    single = images.ndim == 3
    x = images[None] if single else images
    if force_flip is not None:
        mask = np.broadcast_to(np.asarray(force_flip, dtype=bool), (len(x),))
    elif cfg.flip_augment:
        mask = rng.random(len(x)) < 0.5
    else:
        mask = np.zeros(len(x), dtype=bool)
    x = x.copy()
    if mask.any():
        x[mask] = flip(x[mask])
    x = normalize_images(x, cfg.normalize_mean, cfg.normalize_std)
    return x[0] if single else x


def parameters(model, head):
    return {**dict(model.named_parameters()), **dict(head.named_parameters())}


def make_optimizer(model, cfg):
    mult = {name: cfg.backbone_lr_mult for name, _ in model.named_parameters()}
    return SgdMomentum(cfg.base_lr, cfg.momentum, cfg.decay_epoch, lr_mult=mult)


def bin_names(head):
    return [f"{i}_{j}" for i, j in head.config.bins()]


def train_epoch(model, head, images, labels, opt, epoch, rng, cfg):
    """One pass over the data in a seeded shuffled order.

    The update uses the batch-mean gradient of the branch-summed loss.
    """
    n = len(images)
    if n == 0:
        raise ValueError("empty training set")
    labels = np.asarray(labels)
    t0 = time.perf_counter()
    erng = rng.child(f"epoch/{epoch}")
    order = erng.permutation(n)
    params = parameters(model, head)
    total = 0.0
    correct = np.zeros(head.config.total_bins)
    for start in range(0, n, cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        x = augment(images[idx], erng, cfg)
        y = labels[idx]
        F, cache = backbone_forward(model, x, keep_cache=True)
        feats = head_forward(head, F)
        loss, grad_logits = hpm_loss(feats.logits, y)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss at epoch {epoch}")
        grad_logits /= DTYPE(len(idx))
        grad_F, grads = head_backward(head, F, grad_logits, feats)
        grads.update(backbone_backward(model, x, grad_F, cache))
        sgd_step(opt, params, grads, epoch)
        total += float(loss)
        correct += (predict_bin(feats.logits) == y[:, None]).sum(axis=0)
    return EpochRecord(epoch, total / n, opt.lr_at(epoch), correct / n, bin_names(head),
                       time.perf_counter() - t0)


def train(model, head, images, labels, cfg, on_epoch=None):
    """Run ``cfg.epochs`` epochs; returns the list of EpochRecords."""
    rng = Rng(cfg.seed).child("train")
    opt = make_optimizer(model, cfg)
    log = []
    for epoch in range(cfg.epochs):
        rec = train_epoch(model, head, images, labels, opt, epoch, rng, cfg)
        log.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return log


def forward_logits(model, head, images, cfg, batch_size=64):
    out = []
    for start in range(0, len(images), batch_size):
        x = normalize_images(images[start:start + batch_size], cfg.normalize_mean, cfg.normalize_std)
        out.append(head_forward(head, backbone_forward(model, x)).logits)
    return np.concatenate(out)


def evaluate_classification(model, head, images, labels, cfg):
    """Per-branch accuracy on un-augmented (normalized, unflipped) images."""
    if len(images) == 0:
        raise ValueError("no samples to evaluate")
    logits = forward_logits(model, head, images, cfg)
    return (predict_bin(logits) == np.asarray(labels)[:, None]).mean(axis=0)


def evaluation_loss(model, head, images, labels, cfg):
    """Branch-summed cross-entropy per sample on un-augmented images."""
    logits = forward_logits(model, head, images, cfg)
    loss, _ = hpm_loss(logits, np.asarray(labels))
    return float(loss) / len(images)
