#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0

"""
common funcs for tests
"""

import os

import numpy as np

from unidual.autograd import functional as F
from unidual.autograd.tensor import Tensor
from unidual.common.constants import BlockKind, Modality, NormMode, NormStats
from unidual.data.synth import SourceSpec
from unidual.models.config import ModelConfig, StageSpec, StemSpec, TaskSpec


TEST_DIR = os.path.dirname(os.path.realpath(__file__))
ETC_DIR = os.path.realpath(os.path.join(TEST_DIR, '..', '..', '..', 'etc', 'unidual'))


def slow_tests_enabled():
    return bool(os.environ.get('UNIDUAL_SLOW_TESTS'))


def get_config_path(name='tiny.cfg'):
    return os.path.join(ETC_DIR, name)


def get_tasks(image_classes=4, video_classes=8):
    return [TaskSpec('image', Modality.Image, image_classes), TaskSpec('video', Modality.Video, video_classes)]


def get_model_config(arch=BlockKind.UNIDUAL, **kwargs):
    properties = {
        'arch': arch,
        'stem': StemSpec(channels=4, spatial_kernel=3, temporal_kernel=3, stride=1,
                         max_pool=kwargs.pop('max_pool', False)),
        'stages': [StageSpec(1, 4, 1), StageSpec(1, 6, 2)],
        'clip_len': 4,
        'image_size': 8,
        'in_channels': 1,
        'tasks': get_tasks(),
        'norm': NormMode.NoNorm,
        'norm_stats': NormStats.PerPathway,
        'precision': 64,
        'seed': 3,
    }
    properties.update(kwargs)
    return ModelConfig(**properties)


def get_three_stage_config(arch=BlockKind.UNIDUAL, **kwargs):
    """
    A 3-stage network with clips long enough to keep interior frames after 7 temporal convs.
    """
    properties = {
        'stem': StemSpec(channels=4, spatial_kernel=3, temporal_kernel=3, stride=1),
        'stages': [StageSpec(1, 4, 1), StageSpec(1, 6, 2), StageSpec(1, 8, 2)],
        'clip_len': 15,
        'image_size': 8,
    }
    properties.update(kwargs)
    return get_model_config(arch, **properties)


def get_image_source(**kwargs):
    properties = {'source_id': 'image', 'modality': Modality.Image, 'shapes': ['square', 'disc', 'cross', 'triangle'],
                  'bands': 1, 'noise': 0.05, 'shape_size': 5, 'image_size': 8, 'clip_len': 4, 'crop_margin': 2}
    properties.update(kwargs)
    return SourceSpec(**properties).validate()


def get_video_source(**kwargs):
    properties = {'source_id': 'video', 'modality': Modality.Video, 'shapes': ['square', 'disc', 'cross', 'triangle'],
                  'directions': 2, 'speed': 1.0, 'noise': 0.05, 'shape_size': 5, 'image_size': 8, 'clip_len': 4,
                  'crop_margin': 2}
    properties.update(kwargs)
    return SourceSpec(**properties).validate()


def random_values(seed, *shape):
    return np.random.default_rng(seed).standard_normal(shape)


def random_tensor(seed, *shape, **kwargs):
    return Tensor(random_values(seed, *shape), requires_grad=kwargs.get('requires_grad', True))


def linear_readout(h, seed=99):
    """
    A fixed random linear functional of h as a one-element tensor.
    """
    weight = Tensor(random_values(seed, 1, h.size))
    flat = F.reshape(h, (1,) + h.shape)
    return F.linear(flat, weight)
