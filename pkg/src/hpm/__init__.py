"""Horizontal Pyramid Matching for person re-identification, in numpy."""
from .backbone import BackboneConfig, BackboneModel, backbone_backward, backbone_forward, build_backbone
from .hpp import (BinFeatures, PyramidConfig, PyramidHead, build_head, head_backward, head_forward,
                  hpm_loss, pool_bin, predict_bin, slice_bins)
from .metrics import EvalReport, average_precision, cmc_curve, evaluate, junk_mask
from .retrieval import DescriptorSet, distance_matrix, extract_descriptor, heatmap, normalize, rank
from .tensor import Rng
from .trainer import TrainConfig, evaluate_classification, train, train_epoch

__version__ = "0.1.0"
