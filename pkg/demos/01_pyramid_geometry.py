"""
Horizontal pyramid pooling, step by step
========================================

A feature map is cut into 1, 2, 4 and 8 horizontal stripes. Each stripe
becomes one pooled column vector, so a four-level pyramid gives 15
branches and a descriptor 15 times the reduced width.
"""
import numpy as np

from hpm.backbone import BackboneConfig, backbone_forward, build_backbone
from hpm.hpp import PyramidConfig, build_head, head_forward, pool_bin, slice_bins
from hpm.tensor import Rng

# A toy map with one channel whose value is its row number makes the
# stripe boundaries easy to read off.
F = np.arange(8, dtype=np.float32)[None, None, :, None].repeat(2, axis=3)
for n in (1, 2, 4, 8):
    rows = [part[0, 0, :, 0].tolist() for part in slice_bins(F, n)]
    print(f"scale {n}: {rows}")

# avg + max pooling of the stripe holding rows 4..7: mean 5.5 plus max 7
print("avg_plus_max of the lower half:", pool_bin(slice_bins(F, 2)[1], "avg_plus_max")[0, 0])

# The backbone has an output stride of 16, so a 128x64 person crop gives an
# 8x4 map, the smallest height that still splits into 8 stripes.
rng = Rng(0)
cfg = BackboneConfig()
model = build_backbone(cfg, rng.child("backbone"))
head = build_head(PyramidConfig(num_classes=10), cfg.stage_channels[-1], rng.child("head"))
images = np.random.default_rng(0).random((2, 3, 128, 64), dtype=np.float32)
feats = head_forward(head, backbone_forward(model, images))
print("feature map:", cfg.feature_shape)
print("pooled G:", feats.G.shape, " reduced H:", feats.H.shape, " logits:", feats.logits.shape)
print("descriptor length:", head.config.descriptor_dim)

# The full-size setting: 384x128 input, 24x8 map, 256-d bins.
big = BackboneConfig(input_height=384, input_width=128)
print("384x128 input ->", big.feature_shape[1:], "map;",
      "descriptor", PyramidConfig(reduced_dim=256).descriptor_dim)
