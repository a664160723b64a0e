#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0

"""
Weight conversions between image and video networks.

deflate: t x 1 x 1 temporal banks become 1x1 banks holding the sum of the taps.
inflate: 1x1 banks become t taps of w / t.
extract: one pathway of a UNIDUAL network as a plain R2D or R2P1D network.
Spatial banks, biases and norm parameters are copied. Auxiliary heads are dropped.
"""

import collections
import copy
import logging

import numpy as np

from unidual.common import exceptions
from unidual.common.constants import BlockKind, Modality
from unidual.models.network import Network
from unidual.surgery.checkpoint import Checkpoint


logger = logging.getLogger(__name__)

STATS = ('running_mean', 'running_var', 'num_batches')


def _split_stats(name):
    """
    'a.norm.running_mean.video' -> ('a.norm.running_mean', 'video'); other names -> (name, None)
    """
    parts = name.split('.')
    if len(parts) > 2 and parts[-2] in STATS and parts[-1] in (Modality.Image.value, Modality.Video.value):
        return '.'.join(parts[:-1]), parts[-1]
    return name, None


def _branch_of(name):
    parts = name.split('.')
    if len(parts) >= 2 and parts[-2] in ('pointwise', 'image_branch', 'video_branch'):
        return parts[-2], parts[-1]
    return None, None


def _pathway_tensors(ckpt, pathway):
    """
    Map the records of one pathway to plain single-trunk names. Branches and statistics of the
    other pathway are dropped; shared statistics are kept.
    """
    branch_name = '%s_branch' % pathway.value
    mapped = collections.OrderedDict()
    for name, values in ckpt.tensors.items():
        if name.startswith('head.'):
            continue
        base, stats_pathway = _split_stats(name)
        if stats_pathway is not None:
            if stats_pathway == pathway.value:
                mapped[base] = values
            continue
        branch, leaf = _branch_of(name)
        if branch in ('image_branch', 'video_branch'):
            if branch == branch_name:
                mapped[name[:-len('%s.%s' % (branch, leaf))] + 'pointwise.%s' % leaf] = values
            continue
        mapped[name] = values
    return mapped


def _assemble(ckpt, config, mapped, heads):
    """
    Order converted tensors like the registry of the target network.

    :param heads: dict target head prefix -> source head prefix.
    """
    target = Network(config)
    tensors = collections.OrderedDict()
    used = set()
    for param in target.registry:
        name = param.name
        if name.startswith('head.'):
            prefix, leaf = name.rsplit('.', 1)
            source = heads.get(prefix)
            if source is None:
                logger.info("head parameter %s has no source and is left for reinitialization" % name)
                continue
            values = ckpt.tensors.get('%s.%s' % (source, leaf))
        else:
            values = mapped.get(name)
            used.add(name)
        if values is None:
            raise exceptions.ConfigError("Checkpoint does not match the converted config", parameter=name)
        if values.shape != param.shape:
            raise exceptions.ExtentMismatch(record=name, expected=list(param.shape), got=list(values.shape))
        tensors[name] = values.copy()
    unused = [name for name in mapped if name not in used]
    if unused:
        raise exceptions.ConfigError("Checkpoint records without a converted counterpart", records=unused)
    return Checkpoint(config, tensors)


def _check_odd(taps):
    if taps < 1 or taps % 2 == 0:
        raise exceptions.WrongParameterException("temporal size must be odd, got %s" % taps)


def _match_heads(source_config, target_tasks):
    """
    Target task heads keep the head of the same task; a different task takes a source head of
    equal class count when one exists, otherwise its head is dropped.
    """
    heads = {}
    for task in target_tasks:
        source = None
        for candidate in source_config.tasks:
            if candidate.task_id == task.task_id and candidate.num_classes == task.num_classes:
                source = candidate
                break
        if source is None:
            for candidate in source_config.tasks:
                if candidate.num_classes == task.num_classes:
                    source = candidate
                    break
        if source is not None:
            heads['head.%s' % task.main_head()] = 'head.%s' % source.main_head()
    return heads


def deflate_weights(ckpt, tasks=None):
    """
    Convert an R2P1D checkpoint, or the video pathway of a UNIDUAL one, into an R2D checkpoint.

    :param tasks: tasks of the converted network; the source tasks when None.
    :raises MissingParameter: the checkpoint has no temporal banks.
    :raises ConfigError: the checkpoint is not a video network.
    """
    source = ckpt.config
    if source.arch not in (BlockKind.R2P1D, BlockKind.UNIDUAL):
        raise exceptions.ConfigError("deflation needs an r2p1d or unidual checkpoint, got %s" % source.arch.value)
    mapped = _pathway_tensors(ckpt, Modality.Video)
    banks = [name for name in mapped if name.endswith('pointwise.weight')]
    if not banks:
        raise exceptions.MissingParameter("checkpoint has no temporal banks")
    for name in banks:
        values = mapped[name]
        _check_odd(values.shape[2])
        mapped[name] = values.sum(axis=2, keepdims=True)

    config = copy.deepcopy(source)
    config.arch = BlockKind.R2D
    config.temporal_kernel = 1
    config.stem.temporal_kernel = 1
    config.aux_heads = False
    config.inflate_images = False
    if tasks is not None:
        config.tasks = list(tasks)
    logger.info("deflated %s temporal banks" % len(banks))
    return _assemble(ckpt, config.validate(), mapped, _match_heads(source, config.tasks))


def inflate_weights(ckpt, t, tasks=None):
    """
    Convert an R2D checkpoint into an R2P1D checkpoint with t-tap temporal banks of w / t.

    :raises WrongParameterException: t is even.
    """
    _check_odd(t)
    source = ckpt.config
    if source.arch != BlockKind.R2D:
        raise exceptions.ConfigError("inflation needs an r2d checkpoint, got %s" % source.arch.value)
    mapped = _pathway_tensors(ckpt, Modality.Image)
    for name in mapped:
        if name.endswith('pointwise.weight'):
            mapped[name] = np.repeat(mapped[name] / t, t, axis=2)

    config = copy.deepcopy(source)
    config.arch = BlockKind.R2P1D
    config.temporal_kernel = t
    config.stem.temporal_kernel = t
    if tasks is not None:
        config.tasks = list(tasks)
    return _assemble(ckpt, config.validate(), mapped, _match_heads(source, config.tasks))


def extract_pathway(ckpt, pathway):
    """
    Split one pathway out of a UNIDUAL checkpoint: the image pathway is an R2D network, the
    video pathway an R2P1D network. Only the main heads of the pathway's tasks are kept.
    """
    source = ckpt.config
    if source.arch != BlockKind.UNIDUAL:
        raise exceptions.ConfigError("pathway extraction needs a unidual checkpoint, got %s" % source.arch.value)
    pathway = Modality.parse(pathway)
    config = copy.deepcopy(source)
    config.arch = BlockKind.R2D if pathway == Modality.Image else BlockKind.R2P1D
    if pathway == Modality.Image:
        config.temporal_kernel = 1
        config.stem.temporal_kernel = 1
    config.aux_heads = False
    config.inflate_images = False
    config.tasks = [task for task in source.tasks if task.modality == pathway]
    heads = dict(('head.%s' % task.main_head(), 'head.%s' % task.main_head()) for task in config.tasks)
    return _assemble(ckpt, config.validate(), _pathway_tensors(ckpt, pathway), heads)
