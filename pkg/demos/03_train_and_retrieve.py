"""
Training on striped synthetic people and retrieving them
========================================================

Sixteen synthetic identities are drawn as stacks of coloured bands,
jittered vertically and seen by three cameras with different backgrounds
and brightness. The network learns to classify the training images; the
held-out images are then matched across cameras with the concatenated
bin features. Pass a number to change the epoch count (default 30).
"""
import os
import sys
import tempfile

import numpy as np

from hpm.backbone import backbone_forward
from hpm.config import RunConfig
from hpm.dataio import by_split, generate_synthetic, write_pgm, write_ppm
from hpm.pipeline import score, train_accuracy, train_model
from hpm.retrieval import heatmap, upsample
from hpm.trainer import normalize_images

here = os.path.dirname(os.path.abspath(__file__))
cfg = RunConfig.from_file(os.path.join(here, "..", "configs", "desk.cfg"))
if len(sys.argv) > 1:
    epochs = int(sys.argv[1])
    cfg = cfg.replace(epochs=epochs, decay_epoch=min(cfg["decay_epoch"], epochs))

samples = generate_synthetic(cfg.synth())
train = by_split(samples, "train")
print(f"{len(train)} training images, {len(by_split(samples, 'query'))} queries, "
      f"{len(by_split(samples, 'gallery'))} gallery images")

model, head, log = train_model(cfg, train, on_epoch=lambda r: print(
    f"epoch {r.epoch:2d}  loss {r.loss:7.3f}  global acc {r.branch_acc[0]:.2f}  "
    f"finest-stripe acc {r.branch_acc[-1]:.2f}  ({r.seconds:.1f}s)"))

# Coarse branches see the whole person and usually learn first; single
# eighth-height stripes hold one or two bands and are harder to classify.
acc = train_accuracy(model, head, cfg, train)
print("train accuracy per scale:",
      {n: round(float(a), 3) for n, a in zip(cfg["scales"], np.split(acc, np.cumsum(cfg["scales"])[:-1]))})

report = score(model, head, samples, cfg)
print(report.to_text(), end="")

# Activation heatmaps of the last feature map, written next to the images.
out = tempfile.mkdtemp(prefix="hpm_heatmaps_")
query = by_split(samples, "query")[:4]
x = normalize_images(np.stack([s.image for s in query]), cfg["normalize_mean"], cfg["normalize_std"])
for s, fmap in zip(query, backbone_forward(model, x)):
    write_ppm(os.path.join(out, s.name), s.image)
    write_pgm(os.path.join(out, s.name.replace(".ppm", "_heat.pgm")), upsample(heatmap(fmap), 128, 64))
print("images and heatmaps in", out)
