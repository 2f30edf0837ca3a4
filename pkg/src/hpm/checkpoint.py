"""Model checkpoints: named HPMT tensors in a single file.

Layout: b"HPMC", version byte, uint32 LE record count, then per record a
uint16 LE name length, the UTF-8 name and one HPMT tensor. A few
``meta.*`` records describe the pyramid so that a checkpoint cannot be
silently used with a different head configuration.
"""
from dataclasses import replace
import struct

import numpy as np

from .backbone import build_backbone
from .hpp import POOLINGS, build_head
from .tensor import DTYPE, Rng, TensorFormatError, tensor_from_bytes, tensor_to_bytes

MAGIC = b"HPMC"
VERSION = 1


class CheckpointMismatch(ValueError):
    """Checkpoint parameters do not fit the requested configuration."""


def _meta(model, head):
    bc, pc = model.config, head.config
    return [
        ("meta.input_size", np.array([bc.input_height, bc.input_width], dtype=DTYPE)),
        ("meta.scales", np.array(pc.scales, dtype=DTYPE)),
        ("meta.pooling", np.array([POOLINGS.index(pc.pooling)], dtype=DTYPE)),
    ]


def checkpoint_bytes(model, head):
    records = _meta(model, head) + list(model.named_parameters()) + list(head.named_parameters())
    out = [MAGIC, bytes([VERSION]), struct.pack("<I", len(records))]
    for name, arr in records:
        raw = name.encode()
        out += [struct.pack("<H", len(raw)), raw, tensor_to_bytes(arr)]
    return b"".join(out)


def save_checkpoint(path, model, head):
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(model, head))


def read_records(path):
    """Ordered {name: array} of every record in a checkpoint file."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MAGIC:
        raise TensorFormatError(f"{path}: not a checkpoint (bad magic bytes)")
    if len(buf) < 9 or buf[4] != VERSION:
        raise TensorFormatError(f"{path}: unsupported checkpoint version")
    (count,) = struct.unpack_from("<I", buf, 5)
    pos, records = 9, {}
    for _ in range(count):
        if len(buf) < pos + 2:
            raise TensorFormatError(f"{path}: truncated checkpoint")
        (n,) = struct.unpack_from("<H", buf, pos)
        name = buf[pos + 2:pos + 2 + n].decode()
        arr, pos = tensor_from_bytes(buf, pos + 2 + n)
        records[name] = arr
    if pos != len(buf):
        raise TensorFormatError(f"{path}: trailing bytes in checkpoint")
    return records


def load_checkpoint(path, backbone_cfg, pyramid_cfg):
    """Rebuild (model, head) for the given configs and fill in the stored
    parameters, raising CheckpointMismatch if anything disagrees.

    The number of classes is taken from the stored classifiers.
    """
    records = read_records(path)
    if "fc_0_0.weight" in records:
        pyramid_cfg = replace(pyramid_cfg, num_classes=records["fc_0_0.weight"].shape[0])
    model = build_backbone(backbone_cfg, Rng(0))
    head = build_head(pyramid_cfg, backbone_cfg.stage_channels[-1], Rng(0))
    for name, expected in _meta(model, head):
        stored = records.get(name)
        if stored is None or stored.shape != expected.shape or np.any(stored != expected):
            raise CheckpointMismatch(f"checkpoint {name} = {None if stored is None else stored.tolist()}, "
                                     f"config expects {expected.tolist()}")
    wanted = dict(model.named_parameters())
    wanted.update(head.named_parameters())
    stored_names = {k for k in records if not k.startswith("meta.")}
    if stored_names != set(wanted):
        missing = sorted(set(wanted) - stored_names)[:3]
        extra = sorted(stored_names - set(wanted))[:3]
        raise CheckpointMismatch(f"parameter names differ (missing {missing}, unexpected {extra})")
    for name, arr in wanted.items():
        if records[name].shape != arr.shape:
            raise CheckpointMismatch(f"{name}: checkpoint shape {records[name].shape} != config shape {arr.shape}")
        arr[...] = records[name]
    return model, head
