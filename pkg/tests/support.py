"""Model fixtures shared by the gradient tests."""
import numpy as np

from hpm.backbone import BackboneConfig, backbone_backward, backbone_forward, build_backbone, relu_masks
from hpm.hpp import PyramidConfig, build_head, head_backward, head_forward, hpm_loss, max_pool_argmax
from hpm.tensor import Rng


def to_float64(*modules):
    """Replace every layer array with a float64 copy, in place."""
    for m in modules:
        layers = [layer for _, layer in m.layers] if hasattr(m, "layers") else m.reduce + m.fc
        for layer in layers:
            layer.weight = layer.weight.astype(np.float64)
            if hasattr(layer, "bias"):
                layer.bias = layer.bias.astype(np.float64)


def small_model(height=128, width=16, channels=(16, 32, 64, 64), scales=(1, 2, 4, 8), pooling="avg_plus_max",
                reduced_dim=8, num_classes=3, seed=0):
    bcfg = BackboneConfig(3, channels, height, width)
    rng = Rng(seed)
    model = build_backbone(bcfg, rng.child("backbone"))
    head = build_head(PyramidConfig(scales, reduced_dim, pooling, num_classes), channels[-1], rng.child("head"))
    to_float64(model, head)
    return model, head


def composite(model, head, images, labels):
    """(loss fn, analytic gradients, kink signature fn) for backbone + head + loss."""
    def loss():
        F = backbone_forward(model, images)
        return float(hpm_loss(head_forward(head, F).logits, labels)[0])

    def state():
        F = backbone_forward(model, images)
        return np.concatenate([relu_masks(model, images), max_pool_argmax(head, F)])

    F, cache = backbone_forward(model, images, keep_cache=True)
    feats = head_forward(head, F)
    _, g_logits = hpm_loss(feats.logits, labels)
    grad_F, grads = head_backward(head, F, g_logits, feats)
    grads.update(backbone_backward(model, images, grad_F, cache))
    return loss, grads, state


def all_parameters(model, head):
    params = dict(model.named_parameters())
    params.update(head.named_parameters())
    return params
