#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0

"""
Most activated feature maps of a unit, side by side for the two pathways.
"""

import numpy as np

from unidual.autograd.tensor import Tensor, no_grad
from unidual.common import exceptions
from unidual.common.constants import BlockKind, Modality


class ActivationMap(object):
    def __init__(self, pathway, unit, channel, feature_map, peak):
        self.pathway = pathway
        self.unit = unit
        self.channel = channel
        self.feature_map = feature_map
        self.peak = peak

    def __repr__(self):
        return 'ActivationMap(%s, %s, channel=%s, peak=%.4f)' % (self.pathway.value, self.unit, self.channel, self.peak)


def pathway_inputs(pixels, clip_len):
    """
    The input of each pathway for one example: a clip feeds its middle frame to the image
    pathway, an image is inflated to a static clip for the video pathway.

    :param pixels: C x L x H x W.
    :returns: dict pathway -> 1 x C x L x H x W array.
    """
    length = pixels.shape[1]
    if length == 1:
        return {Modality.Image: pixels[None], Modality.Video: np.repeat(pixels[None], clip_len, axis=2)}
    middle = length // 2
    return {Modality.Image: pixels[None, :, middle:middle + 1], Modality.Video: pixels[None]}


def rank_channels(feature_maps):
    """
    Channels ordered by their maximum activation, ties to the lower channel.

    :param feature_maps: C x ... array.
    :returns: (order, peaks)
    """
    peaks = feature_maps.reshape(feature_maps.shape[0], -1).max(axis=1)
    order = np.lexsort((np.arange(len(peaks)), -peaks))
    return order, peaks


def top_activated_maps(net, pixels, unit_index=-1, k=3):
    """
    Rank the channels of a unit's point-wise output on the input's own pathway and return the
    same channels of the dual pathway.

    :param net: a UNIDUAL Network.
    :param pixels: one example, C x L x H x W (L = 1 for an image).
    :param unit_index: index into the residual units, negative counts from the end.
    :param k: number of channels.

    :returns: dict pathway -> list of ActivationMap, both in the ranking order of the input's pathway.
    """
    if net.config.arch != BlockKind.UNIDUAL:
        raise exceptions.ConfigError("Activation comparison needs a unidual network")
    if not -len(net.units) <= unit_index < len(net.units):
        raise exceptions.WrongParameterException("unit index %s out of range [0, %s)" % (unit_index, len(net.units)))
    unit = net.units[unit_index][0]
    primary = Modality.Image if pixels.shape[1] == 1 else Modality.Video

    maps = {}
    with no_grad():
        for pathway, values in pathway_inputs(np.asarray(pixels), net.config.clip_len).items():
            captures = {}
            net.trunk_forward(Tensor(values.astype(net.dtype, copy=False)), pathway, captures, training=False)
            maps[pathway] = captures[unit][0]

    channels = maps[primary].shape[0]
    if k > channels:
        raise exceptions.WrongParameterException("k=%s exceeds the %s channels of %s" % (k, channels, unit))
    order, _ = rank_channels(maps[primary])
    result = {}
    for pathway, feature_maps in maps.items():
        peaks = feature_maps.reshape(channels, -1).max(axis=1)
        result[pathway] = [ActivationMap(pathway, unit, int(c), feature_maps[c], float(peaks[c])) for c in order[:k]]
    return result
