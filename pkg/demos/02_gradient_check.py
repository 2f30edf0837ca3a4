"""
Checking hand-written gradients
===============================

Every backward pass in the library is written by hand. Here the whole
network (backbone, pyramid head and summed cross-entropy) is compared with
central differences in float64. Coordinates where a +/-h nudge flips a ReLU
or moves a max-pool argmax sit on a kink and are skipped.
"""
import numpy as np

from hpm.backbone import BackboneConfig, backbone_backward, backbone_forward, build_backbone, relu_masks
from hpm.hpp import PyramidConfig, build_head, head_backward, head_forward, hpm_loss, max_pool_argmax
from hpm.tensor import Rng

rng = Rng(1)
model = build_backbone(BackboneConfig(input_height=128, input_width=16), rng.child("b"))
head = build_head(PyramidConfig(reduced_dim=8, num_classes=3), 64, rng.child("h"))
for _, layer in model.layers:
    layer.weight, layer.bias = layer.weight.astype(np.float64), layer.bias.astype(np.float64)
for layer in head.reduce + head.fc:
    layer.weight = layer.weight.astype(np.float64)
for layer in head.reduce:
    layer.bias = layer.bias.astype(np.float64)

# Zero biases leave pre-activations of dead regions at exactly 0, which
# is a kink for every nudge. A little bias noise moves them off it.
jitter = np.random.default_rng(3)
for _, layer in model.layers:
    layer.bias += jitter.normal(0, 0.05, layer.bias.shape)

images = np.random.default_rng(1).random((1, 3, 128, 16))
labels = np.array([1])


def loss():
    return float(hpm_loss(head_forward(head, backbone_forward(model, images)).logits, labels)[0])


def kinks():
    F = backbone_forward(model, images)
    return np.concatenate([relu_masks(model, images), max_pool_argmax(head, F)])


F, cache = backbone_forward(model, images, keep_cache=True)
feats = head_forward(head, F)
_, g_logits = hpm_loss(feats.logits, labels)
grad_F, grads = head_backward(head, F, g_logits, feats)
grads.update(backbone_backward(model, images, grad_F, cache))

# A stem weight touches every pixel, so with a coarse step some unit almost
# always crosses zero; float64 allows a much finer step.
h = 1e-6
base = kinks()
params = {**dict(model.named_parameters()), **dict(head.named_parameters())}
picker = np.random.default_rng(2)
worst = 0.0
for name in ["stem.weight", "stage2_1.weight", "stage4_2.bias", "reduce_3_5.weight", "fc_0_0.weight"]:
    p = params[name]
    for _ in range(5):
        i = tuple(int(picker.integers(s)) for s in p.shape)
        old = p[i]
        p[i] = old + h
        up, k_up = loss(), kinks()
        p[i] = old - h
        down, k_down = loss(), kinks()
        p[i] = old
        if not (np.array_equal(k_up, base) and np.array_equal(k_down, base)):
            print(f"{name}{list(i)}: on a kink, skipped")
            continue
        numeric = (up - down) / (2 * h)
        err = abs(numeric - grads[name][i]) / max(abs(numeric), abs(grads[name][i]), 1e-6)
        worst = max(worst, err)
        print(f"{name}{list(i)}: analytic {grads[name][i]: .6e}  numeric {numeric: .6e}")
print(f"largest relative error: {worst:.1e}")
