#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0

"""
Networks: stem, staged residual units and pooled linear heads.

Head ids are '<task>_main' for the task's own pathway and '<task>_aux_on_<pathway>_path'
for the auxiliary head on the other pathway, e.g. image_main, video_main,
image_aux_on_video_path, video_aux_on_image_path.
"""

import copy
import logging

import numpy as np

from unidual.autograd import functional as F
from unidual.autograd.tensor import Parameter, ParameterRegistry, Tensor, get_dtype, no_grad
from unidual.common import exceptions
from unidual.common.constants import BlockKind, Modality, ParamGroup
from unidual.nn import blocks


MAIN_GROUPS = {Modality.Image: ParamGroup.HeadImage, Modality.Video: ParamGroup.HeadVideo}
AUX_GROUPS = {Modality.Image: ParamGroup.HeadAuxImage, Modality.Video: ParamGroup.HeadAuxVideo}
POOL_AXES = {Modality.Image: 'HW', Modality.Video: 'LHW'}


class HeadSpec(object):
    def __init__(self, head_id, task, pathway, group, aux=False, param_prefix=None):
        self.head_id = head_id
        self.task = task
        self.pathway = pathway
        self.group = group
        self.aux = aux
        self.param_prefix = param_prefix or 'head.%s' % head_id

    def __repr__(self):
        return 'HeadSpec(%s, pathway=%s)' % (self.head_id, self.pathway.value)


class Network(object):
    """
    A network built from a ModelConfig. Parameters live in an ordered registry; the registry
    order is fixed by the config and is the checkpoint record order.
    """

    def __init__(self, config):
        self.config = config.validate()
        self.dtype = get_dtype(config.precision)
        self.registry = ParameterRegistry()
        self.training = False
        self.logger = logging.getLogger(self.get_class_name())

        block_args = {'spatial_kernel': config.spatial_kernel, 'temporal_kernel': config.temporal_kernel,
                      'mid_channels': config.mid_channels, 'norm': config.norm,
                      'norm_stats': config.norm_stats, 'bn_eps': config.bn_eps, 'bn_momentum': config.bn_momentum}
        self.stem_spec = blocks.BlockSpec(config.arch, config.in_channels, config.stem.channels,
                                          spatial_kernel=config.stem.spatial_kernel,
                                          temporal_kernel=config.stem.temporal_kernel,
                                          spatial_stride=config.stem.stride,
                                          norm=config.norm, norm_stats=config.norm_stats,
                                          bn_eps=config.bn_eps, bn_momentum=config.bn_momentum).validate()
        self.units = []
        channels = config.stem.channels
        for i, stage in enumerate(config.stages):
            for j in range(stage.units):
                first = j == 0
                unit = blocks.make_unit_spec(config.arch, channels, stage.channels,
                                             spatial_stride=stage.spatial_stride if first else 1,
                                             temporal_stride=stage.temporal_stride if first else 1,
                                             **block_args)
                self.units.append(('stage%s.unit%s' % (i + 1, j + 1), unit))
                channels = stage.channels
        self.feature_channels = channels
        self.heads = self._head_specs()

        rng = np.random.default_rng(config.seed)
        blocks.init_block_params(self.stem_spec, self.registry, 'stem', rng, self.dtype)
        for name, unit in self.units:
            blocks.init_unit_params(unit, self.registry, name, rng, self.dtype)
        for head in self.heads.values():
            if '%s.weight' % head.param_prefix in self.registry:
                continue
            bound = 1.0 / np.sqrt(self.feature_channels)
            weight = rng.uniform(-bound, bound, size=(head.task.num_classes, self.feature_channels))
            self.registry.add(Parameter('%s.weight' % head.param_prefix, weight.astype(self.dtype), head.group))
            self.registry.add(Parameter('%s.bias' % head.param_prefix,
                                        np.zeros(head.task.num_classes, dtype=self.dtype), head.group))
        self.logger.debug("built %s network with %s parameters" % (config.arch.value, self.num_parameters()))

    def get_class_name(self):
        return self.__class__.__name__

    def _head_specs(self):
        config = self.config
        heads = {}
        for task in config.tasks:
            if config.arch == BlockKind.UNIDUAL:
                pathway = task.modality
            else:
                pathway = Modality.Video if config.inflate_images else task.modality
            heads[task.main_head()] = HeadSpec(task.main_head(), task, pathway, MAIN_GROUPS[task.modality])
        if config.aux_heads:
            for task in config.tasks:
                prefix = None
                if config.share_aux_image_head and task.modality == Modality.Image:
                    prefix = heads[task.main_head()].param_prefix
                heads[task.aux_head()] = HeadSpec(task.aux_head(), task, task.modality.other(),
                                                  AUX_GROUPS[task.modality], aux=True, param_prefix=prefix)
        return heads

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def parameters(self):
        return list(self.registry)

    def named_values(self):
        return [(p.name, p.values) for p in self.registry]

    def num_parameters(self, trainable_only=True):
        return self.registry.num_values(trainable_only)

    def zero_grad(self):
        self.registry.zero_grad()

    def get_head(self, head):
        if head not in self.heads:
            raise exceptions.ModalityMismatch("Unknown head %s" % head, heads=sorted(self.heads.keys()))
        return self.heads[head]

    def prepare_input(self, x, head, modality=None):
        """
        Bring a batch to the pathway of a head: images are inflated to static clips for a video
        pathway, clips give their middle frame to an image pathway.

        :param x: N x C x L x H x W array or Tensor.
        :param modality: the modality of the examples; inferred from L when None.

        :returns: (Tensor, pathway)
        :raises ModalityMismatch: the examples do not belong to the head's task modality, or
                                  a clip length differs from the configured one.
        """
        head = self.get_head(head)
        values = x.values if isinstance(x, Tensor) else np.asarray(x)
        if values.ndim != 5:
            raise exceptions.ModalityMismatch("Input must be N x C x L x H x W", shape=list(values.shape))
        length = values.shape[2]
        if modality is None:
            modality = Modality.Image if length == 1 else Modality.Video
        if modality != head.task.modality:
            raise exceptions.ModalityMismatch("Head %s takes %s examples, got %s"
                                              % (head.head_id, head.task.modality.value, modality.value))
        if head.pathway == Modality.Video:
            if length == 1:
                values = np.repeat(values, self.config.clip_len, axis=2)
            elif length != self.config.clip_len:
                raise exceptions.ModalityMismatch("Clip length %s differs from the configured %s"
                                                  % (length, self.config.clip_len))
        elif length > 1:
            values = values[:, :, length // 2:length // 2 + 1]
        return Tensor(values.astype(self.dtype, copy=False)), head.pathway

    def trunk_forward(self, x, pathway, captures=None, training=None):
        """
        Stem and residual units on one pathway.

        :param captures: optional dict filled with the point-wise output of every unit by name.
        :param training: batch statistics mode; the network mode when None. The network's own
                         flag is never touched, so concurrent eval-mode calls are safe.
        """
        params = self.registry
        if training is None:
            training = self.training
        h = F.relu(blocks.block_forward(x, self.stem_spec, pathway, params.scope('stem'), training))
        if self.config.stem.max_pool:
            h = F.max_pool_spatial(h, 3, 2, padding=1)
        for name, unit in self.units:
            capture = {} if captures is not None else None
            h = blocks.residual_unit_forward(h, unit, pathway, params.scope(name), training, capture)
            if captures is not None:
                captures[name] = capture['pointwise']
        return h

    def head_forward(self, features, head):
        head = self.get_head(head)
        pooled = F.global_pool(features, POOL_AXES[head.pathway])
        return F.linear(pooled, self.registry['%s.weight' % head.param_prefix].tensor,
                        self.registry['%s.bias' % head.param_prefix].tensor)

    def forward_pathway(self, x, head, modality=None, training=None):
        """
        Logits N x K of a head; only the head's pathway is evaluated.
        """
        inputs, pathway = self.prepare_input(x, head, modality)
        return self.head_forward(self.trunk_forward(inputs, pathway, training=training), head)

    def predict(self, x, head, modality=None):
        """
        Eval-mode logits as a plain array.
        """
        with no_grad():
            return self.forward_pathway(x, head, modality, training=False).values

    def strip_aux_heads(self):
        """
        Return a network without auxiliary heads, sharing every other parameter.
        """
        aux = [h for h in self.heads.values() if h.aux]
        if not aux:
            return self
        stripped = copy.copy(self)
        stripped.config = copy.deepcopy(self.config)
        stripped.config.aux_heads = False
        stripped.heads = dict((k, h) for k, h in self.heads.items() if not h.aux)
        kept_prefixes = set(h.param_prefix for h in stripped.heads.values())
        stripped.registry = ParameterRegistry()
        for param in self.registry:
            if param.name.startswith('head.') and param.name.rsplit('.', 1)[0] not in kept_prefixes:
                continue
            stripped.registry.add(param)
        self.logger.info("stripped %s auxiliary heads" % len(aux))
        return stripped


def build_network(config):
    return Network(config)


def forward_pathway(net, x, head, modality=None):
    return net.forward_pathway(x, head, modality)


def strip_aux_heads(net):
    return net.strip_aux_heads()
