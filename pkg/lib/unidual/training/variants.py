#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0

"""
Named model variants: the architecture, training mode and sources each one uses.
"""

from unidual.common import exceptions
from unidual.common.constants import BlockKind, Modality, TrainMode


class Variant(object):
    def __init__(self, name, arch, mode, modalities, inflate_images=False, aux_heads=False, needs_checkpoint=False):
        self.name = name
        self.arch = arch
        self.mode = mode
        self.modalities = modalities
        self.inflate_images = inflate_images
        self.aux_heads = aux_heads
        self.needs_checkpoint = needs_checkpoint

    def select_sources(self, sources):
        selected = [s for s in sources if s.modality in self.modalities]
        if not selected:
            needed = ' or '.join(m.value for m in self.modalities)
            raise exceptions.ConfigError("Variant %s needs a %s source" % (self.name, needed))
        if self.mode in (TrainMode.Multitask, TrainMode.UniDual, TrainMode.UniDualAux):
            if len(selected) < 2 or set(s.modality for s in selected) != set(self.modalities):
                raise exceptions.ConfigError("Variant %s needs at least one image and one video source" % self.name)
        return selected

    def __repr__(self):
        return 'Variant(%s)' % self.name


BOTH = [Modality.Image, Modality.Video]

VARIANTS = {
    'r2d': Variant('r2d', BlockKind.R2D, TrainMode.SeparateImage, [Modality.Image]),
    'r2p1d': Variant('r2p1d', BlockKind.R2P1D, TrainMode.SeparateVideo, [Modality.Video]),
    'r2d_multitask': Variant('r2d_multitask', BlockKind.R2D, TrainMode.Multitask, BOTH, inflate_images=True),
    'r2p1d_multitask': Variant('r2p1d_multitask', BlockKind.R2P1D, TrainMode.Multitask, BOTH, inflate_images=True),
    'unidual': Variant('unidual', BlockKind.UNIDUAL, TrainMode.UniDual, BOTH),
    'unidual_aux': Variant('unidual_aux', BlockKind.UNIDUAL, TrainMode.UniDualAux, BOTH, aux_heads=True),
    'finetune_image': Variant('finetune_image', BlockKind.R2D, TrainMode.Finetune, [Modality.Image],
                              needs_checkpoint=True),
    'finetune_video': Variant('finetune_video', BlockKind.R2P1D, TrainMode.Finetune, [Modality.Video],
                              needs_checkpoint=True),
}


def get_variant(name):
    if name not in VARIANTS:
        raise exceptions.WrongParameterException("Unknown mode %s (choices: %s)" % (name, ', '.join(sorted(VARIANTS))))
    return VARIANTS[name]
