#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0

"""
Blocks and residual units.

A block is conv_spatial -> norm -> relu -> point-wise conv. The point-wise conv is
    R2D:     a 1x1 bank 'pointwise' (t = 1)
    R2P1D:   a t x 1 x 1 temporal bank 'pointwise'
    UNIDUAL: 'image_branch' (t = 1) or 'video_branch' (t taps), selected by the modality.
A residual unit is relu(shortcut(x) + block2(relu(block1(x)))).

Parameters of a block live under a ParameterScope:
    spatial.weight, spatial.bias (norm none only)
    norm.gamma, norm.beta, norm.running_mean[.<pathway>], norm.running_var[.<pathway>],
    norm.num_batches[.<pathway>] (batch norm only)
    pointwise.{weight,bias} or image_branch.{weight,bias} and video_branch.{weight,bias}
"""

import numpy as np

from unidual.autograd import functional as F
from unidual.autograd.tensor import Parameter
from unidual.common import exceptions
from unidual.common.constants import BlockKind, Modality, NormMode, NormStats, ParamGroup
from unidual.common.dict_class import DictClass


BRANCH_GROUPS = {Modality.Image: ParamGroup.ImageBranch, Modality.Video: ParamGroup.VideoBranch}


class BlockSpec(DictClass):
    def __init__(self, kind=BlockKind.UNIDUAL, in_channels=1, out_channels=1, mid_channels=0,
                 spatial_kernel=3, temporal_kernel=3, spatial_stride=1, temporal_stride=1,
                 norm=NormMode.NoNorm, norm_stats=NormStats.PerPathway, bn_eps=1e-5, bn_momentum=0.1):
        self.kind = kind
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.mid_channels = mid_channels or out_channels
        self.spatial_kernel = spatial_kernel
        self.temporal_kernel = 1 if kind == BlockKind.R2D else temporal_kernel
        self.spatial_stride = spatial_stride
        self.temporal_stride = temporal_stride
        self.norm = norm
        self.norm_stats = norm_stats
        self.bn_eps = bn_eps
        self.bn_momentum = bn_momentum

    @property
    def has_projection_shortcut(self):
        return (self.in_channels != self.out_channels or self.spatial_stride > 1 or self.temporal_stride > 1)

    def validate(self):
        if self.spatial_kernel % 2 == 0 or self.temporal_kernel % 2 == 0:
            raise exceptions.ConfigError("Kernels must be odd: d=%s t=%s" % (self.spatial_kernel, self.temporal_kernel))
        if min(self.in_channels, self.out_channels, self.mid_channels) < 1:
            raise exceptions.ConfigError("Channel counts must be positive")
        if self.spatial_stride < 1 or self.temporal_stride < 1:
            raise exceptions.ConfigError("Strides must be positive")
        return self

    def branch_names(self):
        if self.kind == BlockKind.UNIDUAL:
            return ['image_branch', 'video_branch']
        return ['pointwise']

    def stats_suffixes(self):
        if self.kind == BlockKind.UNIDUAL and self.norm_stats == NormStats.PerPathway:
            return [Modality.Image.value, Modality.Video.value]
        return [None]


class UnitSpec(DictClass):
    """
    Two basic blocks; the shortcut strides follow the first block.
    """

    def __init__(self, block1=None, block2=None):
        self.block1 = block1
        self.block2 = block2

    @property
    def has_projection_shortcut(self):
        return self.block1.has_projection_shortcut


def make_unit_spec(kind, in_channels, out_channels, spatial_stride=1, temporal_stride=1, **kwargs):
    block1 = BlockSpec(kind, in_channels, out_channels, spatial_stride=spatial_stride,
                       temporal_stride=temporal_stride, **kwargs).validate()
    block2 = BlockSpec(kind, out_channels, out_channels, **kwargs).validate()
    return UnitSpec(block1, block2)


def _uniform(rng, fan_in, shape, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _add_norm_params(registry, prefix, channels, spec, dtype, stats_groups):
    registry.add(Parameter('%s.gamma' % prefix, np.ones(channels, dtype=dtype), ParamGroup.Shared))
    registry.add(Parameter('%s.beta' % prefix, np.zeros(channels, dtype=dtype), ParamGroup.Shared))
    for suffix in spec.stats_suffixes():
        tail = '.%s' % suffix if suffix else ''
        group = stats_groups.get(suffix, ParamGroup.Shared)
        registry.add(Parameter('%s.running_mean%s' % (prefix, tail), np.zeros(channels, dtype=dtype),
                               group, trainable=False))
        registry.add(Parameter('%s.running_var%s' % (prefix, tail), np.ones(channels, dtype=dtype),
                               group, trainable=False))
        registry.add(Parameter('%s.num_batches%s' % (prefix, tail), np.zeros(1, dtype=dtype),
                               group, trainable=False))


STATS_GROUPS = {Modality.Image.value: ParamGroup.ImageBranch, Modality.Video.value: ParamGroup.VideoBranch}


def init_block_params(spec, registry, prefix, rng, dtype=np.float64):
    """
    Create the parameters of one block under prefix, in a fixed order.
    """
    d, m = spec.spatial_kernel, spec.mid_channels
    batch = spec.norm == NormMode.Batch
    registry.add(Parameter('%s.spatial.weight' % prefix,
                           _uniform(rng, spec.in_channels * d * d, (m, spec.in_channels, d, d), dtype),
                           ParamGroup.Shared))
    if not batch:
        registry.add(Parameter('%s.spatial.bias' % prefix, np.zeros(m, dtype=dtype), ParamGroup.Shared))
    else:
        _add_norm_params(registry, '%s.norm' % prefix, m, spec, dtype, STATS_GROUPS)

    for branch in spec.branch_names():
        if branch == 'image_branch':
            taps, group = 1, ParamGroup.ImageBranch
        elif branch == 'video_branch':
            taps, group = spec.temporal_kernel, ParamGroup.VideoBranch
        else:
            taps, group = spec.temporal_kernel, ParamGroup.Shared
        registry.add(Parameter('%s.%s.weight' % (prefix, branch),
                               _uniform(rng, m * taps, (spec.out_channels, m, taps), dtype), group))
        registry.add(Parameter('%s.%s.bias' % (prefix, branch), np.zeros(spec.out_channels, dtype=dtype), group))


def init_shortcut_params(spec, registry, prefix, rng, dtype=np.float64):
    registry.add(Parameter('%s.weight' % prefix,
                           _uniform(rng, spec.in_channels, (spec.out_channels, spec.in_channels, 1, 1), dtype),
                           ParamGroup.Shared))
    if spec.norm == NormMode.Batch:
        _add_norm_params(registry, '%s.norm' % prefix, spec.out_channels, spec, dtype, STATS_GROUPS)
    else:
        registry.add(Parameter('%s.bias' % prefix, np.zeros(spec.out_channels, dtype=dtype), ParamGroup.Shared))


def init_unit_params(unit_spec, registry, prefix, rng, dtype=np.float64):
    init_block_params(unit_spec.block1, registry, '%s.block1' % prefix, rng, dtype)
    init_block_params(unit_spec.block2, registry, '%s.block2' % prefix, rng, dtype)
    if unit_spec.has_projection_shortcut:
        init_shortcut_params(unit_spec.block1, registry, '%s.shortcut' % prefix, rng, dtype)


def _optional(params, name):
    param = params.get(name)
    return param.tensor if param is not None else None


def norm_forward(x, spec, modality, params, training):
    """
    Batch norm with shared affine parameters and the running statistics of the pathway.
    params is the scope of the norm layer.
    """
    suffix = None
    if spec.kind == BlockKind.UNIDUAL and spec.norm_stats == NormStats.PerPathway:
        suffix = modality.value
    tail = '.%s' % suffix if suffix else ''
    return F.batch_norm(x, params['gamma'].tensor, params['beta'].tensor,
                        params['running_mean%s' % tail].values, params['running_var%s' % tail].values,
                        params['num_batches%s' % tail].values, training,
                        eps=spec.bn_eps, momentum=spec.bn_momentum)


def spatial_forward(x, spec, modality, params, training=False):
    """
    conv_spatial -> norm -> relu; the part shared by every kind of block.
    """
    padding = (spec.spatial_kernel - 1) // 2
    h = F.conv_spatial(x, params['spatial.weight'].tensor, _optional(params, 'spatial.bias'),
                       stride=spec.spatial_stride, padding=padding)
    if spec.norm == NormMode.Batch:
        h = norm_forward(h, spec, modality, params.scope('norm'), training)
    return F.relu(h)


def pointwise_forward(h, spec, modality, params, branch='pointwise'):
    weight = params['%s.weight' % branch].tensor
    padding = (weight.shape[2] - 1) // 2
    return F.conv_temporal(h, weight, _optional(params, '%s.bias' % branch),
                           padding=padding, stride=spec.temporal_stride)


def unidual_block_forward(x, spec, modality, params, training=False):
    """
    Shared spatial conv followed by the point-wise branch of the modality.

    Only the selected branch is read, so the other branch never enters the tape.

    :raises ModalityMismatch: image input with L != 1.
    :raises MissingParameter: the selected branch is absent.
    """
    if spec.kind != BlockKind.UNIDUAL:
        raise exceptions.ConfigError("unidual_block_forward needs a UNIDUAL spec, got %s" % spec.kind.value)
    if modality == Modality.Image and x.shape[-3] != 1:
        raise exceptions.ModalityMismatch("Image input must have L=1", shape=list(x.shape))
    branch = 'image_branch' if modality == Modality.Image else 'video_branch'
    if '%s.weight' % branch not in params:
        raise exceptions.MissingParameter(name=params.full_name('%s.weight' % branch))
    h = spatial_forward(x, spec, modality, params, training)
    return pointwise_forward(h, spec, modality, params, branch)


def block_forward(x, spec, modality, params, training=False):
    """
    R2D or R2P1D block. Any modality is accepted; an R2D block handles clips framewise.
    UNIDUAL specs are routed to unidual_block_forward.
    """
    if spec.kind == BlockKind.UNIDUAL:
        return unidual_block_forward(x, spec, modality, params, training)
    h = spatial_forward(x, spec, modality, params, training)
    return pointwise_forward(h, spec, modality, params)


def shortcut_forward(x, spec, modality, params, training=False):
    if not spec.has_projection_shortcut:
        return x
    h = F.conv_spatial(x, params['weight'].tensor, _optional(params, 'bias'), stride=spec.spatial_stride)
    if spec.norm == NormMode.Batch:
        h = norm_forward(h, spec, modality, params.scope('norm'), training)
    return F.temporal_subsample(h, spec.temporal_stride)


def residual_unit_forward(x, unit_spec, modality, params, training=False, capture=None):
    """
    out = relu(shortcut(x) + block2(relu(block1(x))))

    :param capture: optional dict receiving the block2 point-wise output under 'pointwise'.
    :raises ShapeMismatch: the residual and the shortcut disagree in shape.
    """
    h = F.relu(block_forward(x, unit_spec.block1, modality, params.scope('block1'), training))
    h = block_forward(h, unit_spec.block2, modality, params.scope('block2'), training)
    if capture is not None:
        capture['pointwise'] = h.values
    shortcut = shortcut_forward(x, unit_spec.block1, modality, params.scope('shortcut'), training)
    if shortcut.shape != h.shape:
        raise exceptions.ShapeMismatch(op='residual add', shortcut=list(shortcut.shape), residual=list(h.shape))
    return F.relu(shortcut + h)
