#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0

"""
Declarative network configuration.
"""

from unidual.common import exceptions
from unidual.common.constants import BlockKind, Modality, NormMode, NormStats, Sections
from unidual.common.dict_class import DictClass


class StemSpec(DictClass):
    def __init__(self, channels=16, spatial_kernel=3, temporal_kernel=3, stride=1, max_pool=False):
        self.channels = channels
        self.spatial_kernel = spatial_kernel
        self.temporal_kernel = temporal_kernel
        self.stride = stride
        self.max_pool = max_pool


class StageSpec(DictClass):
    def __init__(self, units=1, channels=16, spatial_stride=1, temporal_stride=1):
        self.units = units
        self.channels = channels
        self.spatial_stride = spatial_stride
        self.temporal_stride = temporal_stride

    @staticmethod
    def parse(text, spatial_stride=1, temporal_stride=1):
        """
        Parse 'units@channels', e.g. '2@32'.
        """
        try:
            units, channels = text.split('@')
            return StageSpec(int(units), int(channels), spatial_stride, temporal_stride)
        except ValueError:
            raise exceptions.ConfigError("Stage must look like units@channels: %s" % text)


class TaskSpec(DictClass):
    """
    A classification task: one per data source.
    """

    def __init__(self, task_id='image', modality=Modality.Image, num_classes=1):
        self.task_id = task_id
        self.modality = modality
        self.num_classes = num_classes

    def main_head(self):
        return '%s_main' % self.task_id

    def aux_head(self):
        return '%s_aux_on_%s_path' % (self.task_id, self.modality.other().value)


class ModelConfig(DictClass):
    def __init__(self, arch=BlockKind.UNIDUAL, stem=None, stages=None, spatial_kernel=3, temporal_kernel=3,
                 mid_channels=0, clip_len=8, image_size=32, in_channels=1, tasks=None, aux_heads=False,
                 share_aux_image_head=False, inflate_images=False, norm=NormMode.NoNorm,
                 norm_stats=NormStats.PerPathway, bn_eps=1e-5, bn_momentum=0.1, precision=64, seed=0):
        self.arch = arch
        self.stem = stem if stem is not None else StemSpec()
        self.stages = stages if stages is not None else [StageSpec(1, 16, 1), StageSpec(1, 32, 2), StageSpec(1, 64, 2)]
        self.spatial_kernel = spatial_kernel
        self.temporal_kernel = temporal_kernel
        self.mid_channels = mid_channels
        self.clip_len = clip_len
        self.image_size = image_size
        self.in_channels = in_channels
        self.tasks = tasks if tasks is not None else [TaskSpec('image', Modality.Image, 4),
                                                      TaskSpec('video', Modality.Video, 16)]
        self.aux_heads = aux_heads
        self.share_aux_image_head = share_aux_image_head
        self.inflate_images = inflate_images
        self.norm = norm
        self.norm_stats = norm_stats
        self.bn_eps = bn_eps
        self.bn_momentum = bn_momentum
        self.precision = precision
        self.seed = seed

    def get_task(self, task_id):
        for task in self.tasks:
            if task.task_id == task_id:
                return task
        raise exceptions.ConfigError("Unknown task %s" % task_id)

    def head_ids(self):
        heads = [task.main_head() for task in self.tasks]
        if self.aux_heads:
            heads += [task.aux_head() for task in self.tasks]
        return heads

    def validate(self):
        if not self.stages:
            raise exceptions.ConfigError("A network needs at least one stage")
        for kernel in [self.spatial_kernel, self.temporal_kernel, self.stem.spatial_kernel, self.stem.temporal_kernel]:
            if kernel < 1 or kernel % 2 == 0:
                raise exceptions.ConfigError("Kernels must be odd, got %s" % kernel)
        if not self.tasks:
            raise exceptions.ConfigError("A network needs at least one task")
        if len(set(t.task_id for t in self.tasks)) != len(self.tasks):
            raise exceptions.ConfigError("Task ids must be unique")
        modalities = set(t.modality for t in self.tasks)
        if self.arch == BlockKind.UNIDUAL and modalities != set([Modality.Image, Modality.Video]):
            raise exceptions.ConfigError("UNIDUAL needs at least one image head and one video head")
        if self.aux_heads and self.arch != BlockKind.UNIDUAL:
            raise exceptions.ConfigError("Auxiliary heads are only valid for UNIDUAL")
        if self.precision not in (32, 64):
            raise exceptions.ConfigError("precision must be 32 or 64")
        if self.clip_len < 1 or self.image_size < 1 or self.in_channels < 1:
            raise exceptions.ConfigError("clip_len, image_size and in_channels must be positive")
        return self


def parse_stages(config):
    stages = config.config_get_list(Sections.Model, 'stages')
    strides = [int(s) for s in config.config_get_list(Sections.Model, 'stage_strides')]
    temporal_strides = [int(s) for s in config.config_get_list(Sections.Model, 'stage_temporal_strides')]
    if len(strides) != len(stages) or len(temporal_strides) != len(stages):
        raise exceptions.ConfigError("model.stage_strides and model.stage_temporal_strides need one entry per stage",
                                     stages=len(stages), strides=len(strides), temporal_strides=len(temporal_strides))
    return [StageSpec.parse(text, s, st) for text, s, st in zip(stages, strides, temporal_strides)]


def model_config_from_run_config(config, tasks, arch=None, aux_heads=None, inflate_images=None):
    """
    Build a ModelConfig from the [model] section.

    :param config: RunConfig.
    :param tasks: list of TaskSpec, one per data source.
    :param arch, aux_heads, inflate_images: overrides set by a training variant.
    """
    try:
        arch = arch or BlockKind.parse(config.config_get(Sections.Model, 'arch'))
        norm = NormMode.parse(config.config_get(Sections.Model, 'norm'))
        norm_stats = NormStats.parse(config.config_get(Sections.Model, 'norm_stats'))
    except ValueError as error:
        raise exceptions.ConfigError(str(error))

    stem = StemSpec(channels=config.config_get_int(Sections.Model, 'stem_channels'),
                    spatial_kernel=config.config_get_int(Sections.Model, 'stem_spatial_kernel'),
                    temporal_kernel=config.config_get_int(Sections.Model, 'stem_temporal_kernel'),
                    stride=config.config_get_int(Sections.Model, 'stem_stride'),
                    max_pool=config.config_get_bool(Sections.Model, 'stem_max_pool'))
    if aux_heads is None:
        aux_heads = config.config_get_bool(Sections.Model, 'aux_heads') and arch == BlockKind.UNIDUAL
    if inflate_images is None:
        inflate_images = config.config_get_bool(Sections.Model, 'inflate_images')

    model_config = ModelConfig(arch=arch, stem=stem, stages=parse_stages(config),
                               spatial_kernel=config.config_get_int(Sections.Model, 'spatial_kernel'),
                               temporal_kernel=config.config_get_int(Sections.Model, 'temporal_kernel'),
                               mid_channels=config.config_get_int(Sections.Model, 'mid_channels'),
                               clip_len=config.config_get_int(Sections.Model, 'clip_len'),
                               image_size=config.config_get_int(Sections.Model, 'image_size'),
                               in_channels=config.config_get_int(Sections.Model, 'in_channels'),
                               tasks=tasks, aux_heads=aux_heads,
                               share_aux_image_head=config.config_get_bool(Sections.Model, 'share_aux_image_head'),
                               inflate_images=inflate_images, norm=norm, norm_stats=norm_stats,
                               bn_eps=config.config_get_float(Sections.Model, 'bn_eps'),
                               bn_momentum=config.config_get_float(Sections.Model, 'bn_momentum'),
                               precision=config.config_get_int(Sections.Model, 'precision'),
                               seed=config.config_get_int(Sections.Model, 'seed'))
    return model_config.validate()
