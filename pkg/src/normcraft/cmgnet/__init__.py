"""Desk-scale CMG-Net: model, CND-modified loss, training and inference."""

from .config import NetConfig, RunConfig, TrainConfig, dump_config, load_config, parse_config
from .data import PatchSet, make_patch_set, sample_training_set
from .loss import loss_total, point_weight_targets
from .model import (
    NetState,
    aff_forward,
    forward,
    hier_fuse_forward,
    init_state,
    layer_shapes,
    lfe_forward,
    load_state,
    neighborhoods,
    pff_forward,
    qstn_forward,
    wnp_forward,
)
from .predict import predict_normals, predict_patches
from .train import LossTrace, train_toy
from .io import load_checkpoint, save_checkpoint
