"""Small convolutional feature extractor with a 1/16 output stride.

A stride-2 stem is followed by four stages of two 3x3 conv+ReLU layers
with strides (2, 2, 2, 1). Keeping the last stage at stride 1 is what
makes the output 1/16 rather than 1/32 of the input, which leaves enough
rows for an 8-bin horizontal split.
"""
from dataclasses import dataclass

import numpy as np

from .nn import conv2d_backward, conv2d_forward, init_conv, relu_backward, relu_forward

STAGE_STRIDES = (2, 2, 2, 1)
OUTPUT_STRIDE = 16
MIN_FEATURE_ROWS = 8
RELU_GAIN = 6.0


@dataclass(frozen=True)
class BackboneConfig:
    in_channels: int = 3
    stage_channels: tuple = (16, 32, 64, 64)
    input_height: int = 128
    input_width: int = 64

    def __post_init__(self):
        if len(self.stage_channels) != len(STAGE_STRIDES):
            raise ValueError(f"need {len(STAGE_STRIDES)} stage channel counts")
        if self.in_channels < 1 or min(self.stage_channels) < 1:
            raise ValueError("channel counts must be positive")
        h, w = self.input_height, self.input_width
        if h < 1 or w < 1 or h % OUTPUT_STRIDE or w % OUTPUT_STRIDE:
            raise ValueError(f"input size {h}x{w} must be a positive multiple of {OUTPUT_STRIDE}")
        if (h // OUTPUT_STRIDE) % MIN_FEATURE_ROWS:
            raise ValueError(f"feature height {h // OUTPUT_STRIDE} must be a multiple of "
                             f"{MIN_FEATURE_ROWS} (input height a multiple of "
                             f"{OUTPUT_STRIDE * MIN_FEATURE_ROWS})")

    @property
    def feature_shape(self):
        """(channels, height, width) of the backbone output."""
        return (self.stage_channels[-1], self.input_height // OUTPUT_STRIDE,
                self.input_width // OUTPUT_STRIDE)


@dataclass
class BackboneModel:
    config: BackboneConfig
    layers: list  # (name, Conv2dLayer), each followed by ReLU

    def named_parameters(self):
        for name, layer in self.layers:
            yield f"{name}.weight", layer.weight
            yield f"{name}.bias", layer.bias


def build_backbone(cfg, rng):
    layers = [("stem", init_conv(rng.child("stem"), cfg.in_channels, cfg.stage_channels[0], 3, 2, 1,
                                 RELU_GAIN))]
    c_in = cfg.stage_channels[0]
    for k, (c_out, stride) in enumerate(zip(cfg.stage_channels, STAGE_STRIDES), start=1):
        for m, s in enumerate((stride, 1), start=1):
            name = f"stage{k}_{m}"
            layers.append((name, init_conv(rng.child(name), c_in, c_out, 3, s, 1, RELU_GAIN)))
            c_in = c_out
    return BackboneModel(cfg, layers)


def backbone_forward(model, images, keep_cache=False):
    """Feature maps (N, C, H/16, W/16); with ``keep_cache`` also the
    per-layer inputs and pre-activations needed by the backward pass."""
    cfg = model.config
    expected = (cfg.in_channels, cfg.input_height, cfg.input_width)
    if images.ndim != 4 or images.shape[1:] != expected:
        raise ValueError(f"expected images of shape (N, {expected[0]}, {expected[1]}, {expected[2]}), "
                         f"got {images.shape}")
    x = images
    cache = []
    for _, layer in model.layers:
        z = conv2d_forward(layer, x)
        if keep_cache:
            cache.append((x, z))
        x = relu_forward(z)
    return (x, cache) if keep_cache else x


def backbone_backward(model, images, grad_F, cache=None):
    """Parameter gradients (name -> array) for an upstream gradient on F."""
    if cache is None:
        _, cache = backbone_forward(model, images, keep_cache=True)
    expected = cache[-1][1].shape
    if grad_F.shape != expected:
        raise ValueError(f"grad_F shape {grad_F.shape} != feature shape {expected}")
    grads = {}
    g = grad_F
    for (name, layer), (x, z) in zip(reversed(model.layers), reversed(cache)):
        g = relu_backward(z, g)
        g, gw, gb = conv2d_backward(layer, x, g)
        grads[f"{name}.weight"] = gw
        grads[f"{name}.bias"] = gb
    return grads


def relu_masks(model, images):
    """Sign pattern of every pre-activation; used to spot ReLU kinks in gradient checks."""
    _, cache = backbone_forward(model, images, keep_cache=True)
    return np.concatenate([(z > 0).ravel() for _, z in cache])
