"""Descriptors, distances, ranking and activation heatmaps."""
from dataclasses import dataclass

import numpy as np

from .backbone import backbone_forward
from .hpp import head_forward
from .tensor import DTYPE, TensorFormatError, load_tensor, save_tensor
from .trainer import flip, normalize_images

MIN_NORM = 1e-12


@dataclass
class DescriptorSet:
    vectors: np.ndarray  # (M, D) float32, unit rows
    pids: np.ndarray
    cams: np.ndarray
    is_query: np.ndarray

    def __post_init__(self):
        self.pids = np.asarray(self.pids, dtype=np.int64)
        self.cams = np.asarray(self.cams, dtype=np.int64)
        self.is_query = np.broadcast_to(np.asarray(self.is_query, dtype=bool), self.pids.shape).copy()
        if self.vectors.ndim != 2 or not (len(self.vectors) == len(self.pids) == len(self.cams)):
            raise ValueError("vectors, pids and cams must agree in length")

    def __len__(self):
        return len(self.pids)

    @property
    def dim(self):
        return self.vectors.shape[1]


def bin_vectors(model, head, images):
    """Concatenated reduced bin features H, scale-major then top-to-bottom."""
    H = head_forward(head, backbone_forward(model, images)).H
    return H.reshape(len(images), -1)


def extract_descriptor(model, head, images, mean, std, flip_sum=True, batch_size=32):
    """Raw (unnormalized) descriptors for a batch of [0, 1] images."""
    out = []
    for start in range(0, len(images), batch_size):
        x = normalize_images(images[start:start + batch_size], mean, std)
        v = bin_vectors(model, head, x)
        if flip_sum:
            v = v + bin_vectors(model, head, flip(x))
        out.append(v)
    return np.concatenate(out).astype(DTYPE, copy=False)


def normalize(v):
    v = np.asarray(v)
    norms = np.linalg.norm(v.astype(np.float64), axis=-1, keepdims=True)
    if np.any(norms <= MIN_NORM):
        raise ValueError("cannot normalize a (near) zero vector")
    return (v / norms).astype(v.dtype, copy=False)


def distance_matrix(queries, gallery):
    """Squared Euclidean distances, shape (num_queries, num_gallery)."""
    q = np.asarray(queries, dtype=np.float64)
    g = np.asarray(gallery, dtype=np.float64)
    if q.ndim != 2 or g.ndim != 2 or q.shape[1] != g.shape[1]:
        raise ValueError(f"descriptor dimensions differ: {q.shape} vs {g.shape}")
    d = (q * q).sum(1)[:, None] + (g * g).sum(1)[None, :] - 2 * q @ g.T
    return np.maximum(d, 0)


def rank(distances, valid=None):
    """Valid gallery indices by ascending distance, ties by index."""
    distances = np.asarray(distances)
    idx = np.arange(len(distances)) if valid is None else np.flatnonzero(valid)
    if len(idx) == 0:
        raise ValueError("no valid gallery items to rank")
    return idx[np.argsort(distances[idx], kind="stable")]


def heatmap(F):
    """Min-max normalize each channel of (C, H, W), sum, rescale to [0, 1]."""
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 3 or F.shape[0] < 1:
        raise ValueError("heatmap expects a (C, H, W) feature map")
    lo = F.min(axis=(1, 2), keepdims=True)
    span = F.max(axis=(1, 2), keepdims=True) - lo
    scaled = np.where(span > 0, (F - lo) / np.where(span > 0, span, 1), 0)
    total = scaled.sum(axis=0)
    top = total.max()
    return (total / top if top > 0 else total).astype(DTYPE)


def upsample(map2d, height, width):
    """Nearest-neighbour enlargement for viewing a heatmap next to its image."""
    h, w = map2d.shape
    return map2d[(np.arange(height) * h) // height][:, (np.arange(width) * w) // width]


def labels_path(path):
    return f"{path}.labels"


def save_descriptors(path, dset):
    save_tensor(path, dset.vectors)
    with open(labels_path(path), "w") as f:
        for k in range(len(dset)):
            f.write(f"{k} {dset.pids[k]} {dset.cams[k]} {int(dset.is_query[k])}\n")


def load_descriptors(path):
    vectors = load_tensor(path)
    if vectors.ndim != 2:
        raise TensorFormatError(f"{path}: descriptor file must hold a matrix")
    rows = []
    with open(labels_path(path)) as f:
        for line in f:
            if line.strip():
                rows.append([int(t) for t in line.split()])
    if len(rows) != len(vectors) or any(len(r) != 4 for r in rows):
        raise TensorFormatError(f"{labels_path(path)}: expected {len(vectors)} lines of 'index pid cam is_query'")
    if [r[0] for r in rows] != list(range(len(rows))):
        raise TensorFormatError(f"{labels_path(path)}: indices out of order")
    r = np.array(rows, dtype=np.int64).reshape(-1, 4)
    return DescriptorSet(vectors, r[:, 1], r[:, 2], r[:, 3].astype(bool))
