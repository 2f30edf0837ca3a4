"""Market-style datasets on disk, binary PPM/PGM codecs, and a synthetic
generator of striped "persons" whose identity lives in horizontal bands.
"""
from dataclasses import dataclass
import os
import re

import numpy as np

from .tensor import DTYPE, Rng

SPLITS = ("train", "query", "gallery")
MARKET_NAME = re.compile(r"^(-1|\d{4,})_c(\d+)(.*)\.([A-Za-z0-9]+)$")

# RGB cube corners at two levels; any two distinct entries differ by 0.7
# in at least one channel, which keeps identities apart after the camera
# brightness offset is applied.
_LEVELS = (0.15, 0.85)
PALETTE = np.array([(r, g, b) for r in _LEVELS for g in _LEVELS for b in _LEVELS], dtype=DTYPE)
MAX_CAMERA_OFFSET = 0.1


class DataError(Exception):
    """Malformed or missing dataset files."""


@dataclass
class Sample:
    image: np.ndarray  # (3, H, W), values in [0, 1]
    person_id: int
    camera_id: int
    split: str
    name: str = ""


def parse_market_filename(name):
    m = MARKET_NAME.match(os.path.basename(name))
    if m is None:
        raise DataError(f"not a Market-style file name: {name!r}")
    pid, cam = int(m.group(1)), int(m.group(2))
    if cam < 1:
        raise DataError(f"camera id must be positive in {name!r}")
    return pid, cam


def format_market_filename(pid, cam, seq, frame=0, ext="ppm"):
    head = "-1" if pid < 0 else f"{pid:04d}"
    return f"{head}_c{cam}s1_{seq:06d}_{frame:02d}.{ext}"


# --- PPM / PGM ----------------------------------------------------------

def _read_header(buf, magic, path):
    if buf[:2] != magic:
        raise DataError(f"{path}: expected {magic.decode()} magic, got {buf[:2]!r}")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and buf[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated or malformed header")
        fields.append(int(buf[start:pos]))
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise DataError(f"{path}: truncated header")
    width, height, maxval = fields
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 is supported, got {maxval}")
    if width < 1 or height < 1:
        raise DataError(f"{path}: empty image")
    return width, height, pos + 1


def resize_nearest(image, height, width):
    _, h, w = image.shape
    if (h, w) == (height, width):
        return image
    rows = (np.arange(height) * h) // height
    cols = (np.arange(width) * w) // width
    return image[:, rows][:, :, cols]


def load_ppm(path, size=None):
    """Binary P6 image as a (3, H, W) float32 array in [0, 1].

    ``size=(height, width)`` resizes with nearest-neighbour sampling.
    """
    with open(path, "rb") as f:
        buf = f.read()
    width, height, offset = _read_header(buf, b"P6", path)
    n = width * height * 3
    if len(buf) < offset + n:
        raise DataError(f"{path}: truncated pixel data")
    pix = np.frombuffer(buf, dtype=np.uint8, count=n, offset=offset).reshape(height, width, 3)
    image = pix.transpose(2, 0, 1).astype(DTYPE) / DTYPE(255)
    if size is not None:
        image = resize_nearest(image, *size)
    return np.ascontiguousarray(image)


def quantize(image):
    return np.round(np.clip(image, 0, 1) * 255).astype(np.uint8)


def write_ppm(path, image):
    pix = quantize(image).transpose(1, 2, 0)
    with open(path, "wb") as f:
        f.write(f"P6\n{pix.shape[1]} {pix.shape[0]}\n255\n".encode())
        f.write(np.ascontiguousarray(pix).tobytes())


def write_pgm(path, gray):
    pix = quantize(gray)
    with open(path, "wb") as f:
        f.write(f"P5\n{pix.shape[1]} {pix.shape[0]}\n255\n".encode())
        f.write(np.ascontiguousarray(pix).tobytes())


def load_pgm(path):
    with open(path, "rb") as f:
        buf = f.read()
    width, height, offset = _read_header(buf, b"P5", path)
    if len(buf) < offset + width * height:
        raise DataError(f"{path}: truncated pixel data")
    pix = np.frombuffer(buf, dtype=np.uint8, count=width * height, offset=offset)
    return pix.reshape(height, width).astype(DTYPE) / DTYPE(255)


# --- dataset layout -----------------------------------------------------

def write_dataset(samples, root):
    """Write root/{train,query,gallery}/*.ppm plus root/manifest.txt."""
    for split in SPLITS:
        os.makedirs(os.path.join(root, split), exist_ok=True)
    lines = []
    for s in samples:
        rel = f"{s.split}/{s.name}"
        write_ppm(os.path.join(root, rel), s.image)
        lines.append(f"{rel} {s.person_id} {s.camera_id}\n")
    with open(os.path.join(root, "manifest.txt"), "w") as f:
        f.writelines(lines)


def load_split(root, split, size=None):
    if split not in SPLITS:
        raise DataError(f"unknown split {split!r}, expected one of {SPLITS}")
    folder = os.path.join(root, split)
    if not os.path.isdir(folder):
        raise DataError(f"missing dataset directory {folder}")
    samples = []
    for name in sorted(os.listdir(folder)):
        if not name.lower().endswith(".ppm"):
            continue
        pid, cam = parse_market_filename(name)
        samples.append(Sample(load_ppm(os.path.join(folder, name), size), pid, cam, split, name))
    if not samples:
        raise DataError(f"no .ppm images in {folder}")
    return samples


def stack(samples):
    """(images (N,3,H,W), person ids, camera ids) as arrays."""
    images = np.stack([s.image for s in samples]).astype(DTYPE, copy=False)
    pids = np.array([s.person_id for s in samples], dtype=np.int64)
    cams = np.array([s.camera_id for s in samples], dtype=np.int64)
    return images, pids, cams


def label_map(pids):
    """Map person ids to contiguous class indices 0..P-1 (sorted by id)."""
    return {int(p): k for k, p in enumerate(sorted(set(int(p) for p in pids)))}


# --- synthetic striped persons -----------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    num_ids: int = 16
    images_per_id_per_cam: int = 10
    num_cams: int = 3
    band_count: int = 8
    misalignment_max: int = 4
    noise_std: float = 0.05
    seed: int = 7
    height: int = 128
    width: int = 64
    palette_size: int = 8
    disjoint_ids: bool = False

    def __post_init__(self):
        if self.band_count < 2:
            raise ValueError("band_count must be at least 2")
        if self.num_ids < 2 or (self.disjoint_ids and self.num_ids < 4):
            raise ValueError("too few identities")
        if self.num_cams < 2:
            raise ValueError("need at least 2 cameras (one for queries)")
        if self.images_per_id_per_cam < (1 if self.disjoint_ids else 2):
            raise ValueError("too few images per identity and camera")
        if not 0 <= self.misalignment_max < self.height / 4:
            raise ValueError("misalignment_max must lie in [0, height/4)")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if not 2 <= self.palette_size <= len(PALETTE):
            raise ValueError(f"palette_size must lie in [2, {len(PALETTE)}]")
        if self.height < self.band_count or self.width < 8:
            raise ValueError("image too small")
        if self.palette_size ** self.band_count < self.num_ids:
            raise ValueError("palette_size ** band_count must be at least num_ids")


def identity_signatures(cfg):
    """Palette index per band for every identity, shape (num_ids, band_count).

    Signatures are distinct: a repeat of an earlier identity is redrawn.
    """
    rng = Rng(cfg.seed).child("signatures")
    sig = rng.integers(0, cfg.palette_size, (cfg.num_ids, cfg.band_count))
    seen = set()
    for k in range(cfg.num_ids):
        while tuple(sig[k]) in seen:
            sig[k] = rng.integers(0, cfg.palette_size, cfg.band_count)
        seen.add(tuple(sig[k]))
    return sig


def camera_offsets(cfg):
    rng = Rng(cfg.seed).child("cameras")
    return (MAX_CAMERA_OFFSET * (2 * rng.random(cfg.num_cams) - 1)).astype(DTYPE)


def camera_backgrounds(cfg):
    rng = Rng(cfg.seed).child("backgrounds")
    return (0.3 + 0.4 * rng.random((cfg.num_cams, 3))).astype(DTYPE)


def render(signature, shift, background, offset, cfg, noise=None):
    """One (3, H, W) image: bands shifted down by ``shift`` rows, a
    camera-coloured margin on both sides, a brightness offset and noise."""
    h, w = cfg.height, cfg.width
    band_of_row = np.arange(h) * cfg.band_count // h
    src = np.clip(np.arange(h) - shift, 0, h - 1)
    colors = PALETTE[signature[band_of_row[src]]]  # (H, 3)
    image = np.broadcast_to(colors.T[:, :, None], (3, h, w)).copy()
    margin = w // 8
    image[:, :, :margin] = background[:, None, None]
    image[:, :, w - margin:] = background[:, None, None]
    image += offset
    if noise is not None:
        image += noise
    return np.clip(image, 0, 1).astype(DTYPE)


def generate_synthetic(cfg):
    """Samples for all identities and cameras, deterministic in ``cfg.seed``.

    Camera 1 images are queries, other cameras gallery. With
    ``disjoint_ids`` the first half of the identities is used only for
    training; otherwise the first half of each identity's images per camera
    is training data and the rest is held out for query/gallery.
    """
    sigs = identity_signatures(cfg)
    offsets = camera_offsets(cfg)
    backgrounds = camera_backgrounds(cfg)
    root = Rng(cfg.seed)
    n_train_ids = cfg.num_ids // 2
    n_train_imgs = cfg.images_per_id_per_cam // 2
    samples = []
    seq = 0
    for ident in range(cfg.num_ids):
        pid = ident + 1
        for cam in range(1, cfg.num_cams + 1):
            for k in range(cfg.images_per_id_per_cam):
                rng = root.child(f"image/{pid}/{cam}/{k}")
                m = cfg.misalignment_max
                shift = int(rng.integers(-m, m + 1)) if m else 0
                noise = None
                if cfg.noise_std > 0:
                    noise = (cfg.noise_std * rng.normal((3, cfg.height, cfg.width))).astype(DTYPE)
                image = render(sigs[ident], shift, backgrounds[cam - 1], offsets[cam - 1], cfg, noise)
                if cfg.disjoint_ids:
                    is_train = ident < n_train_ids
                else:
                    is_train = k < n_train_imgs
                split = "train" if is_train else ("query" if cam == 1 else "gallery")
                name = format_market_filename(pid, cam, seq)
                samples.append(Sample(image, pid, cam, split, name))
                seq += 1
    return samples


def by_split(samples, split):
    return [s for s in samples if s.split == split]
