"""
模型模組初始化檔案
"""

from .encoder import Module, EncoderConfig, Encoder, build_encoder
from .heads import (
    ProjectionHead,
    Classifier,
    Network,
    project,
    build_pretrain_network,
    attach_classifier,
    network_from_description,
)
from .checkpoint import (
    Checkpoint,
    save_checkpoint,
    load_checkpoint,
    restore_parameters,
    encode_checkpoint,
    decode_checkpoint,
)
from .predict import encode_images, image_probabilities, predict_bag_scores

__all__ = [
    'Module',
    'EncoderConfig',
    'Encoder',
    'build_encoder',
    'ProjectionHead',
    'Classifier',
    'Network',
    'project',
    'build_pretrain_network',
    'attach_classifier',
    'network_from_description',
    'Checkpoint',
    'save_checkpoint',
    'load_checkpoint',
    'restore_parameters',
    'encode_checkpoint',
    'decode_checkpoint',
    'encode_images',
    'image_probabilities',
    'predict_bag_scores',
]
