#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0

"""
Constants.
"""

from enum import Enum


CHECKPOINT_MAGIC = b'UDCK'
CHECKPOINT_VERSION = 1


class Sections:
    Common = 'common'
    Model = 'model'
    Data = 'data'
    Train = 'train'
    Eval = 'eval'


class EXIT_CODE:
    OK = 0
    ValidationError = 1
    RuntimeFailure = 2


class UniDualEnum(Enum):
    def to_dict(self):
        return {'class': self.__class__.__name__,
                'module': self.__class__.__module__,
                'attributes': {'_value_': self.value}}

    @staticmethod
    def is_class(d):
        if d and isinstance(d, dict) and 'class' in d and 'module' in d and 'attributes' in d:
            return True
        return False

    @staticmethod
    def from_dict(d):
        if UniDualEnum.is_class(d):
            module = __import__(d['module'], fromlist=[None])
            cls = getattr(module, d['class'])
            return cls(d['attributes']['_value_'])
        return d

    @classmethod
    def parse(cls, value):
        """
        Parse an enum from its value or its member name, case-insensitively.

        :param value: the string (or member) to parse.

        :returns: the enum member.
        :raises ValueError: if nothing matches.
        """
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        for member in cls:
            if text == str(member.value).lower() or text == member.name.lower():
                return member
        raise ValueError("%s is not a valid %s (choices: %s)"
                         % (value, cls.__name__, ', '.join(str(m.value) for m in cls)))


class Modality(UniDualEnum):
    Image = 'image'
    Video = 'video'

    def other(self):
        return Modality.Video if self is Modality.Image else Modality.Image


class BlockKind(UniDualEnum):
    R2D = 'r2d'
    R2P1D = 'r2p1d'
    UNIDUAL = 'unidual'


class ParamGroup(UniDualEnum):
    Shared = 'shared'
    ImageBranch = 'image_branch'
    VideoBranch = 'video_branch'
    HeadImage = 'head_image'
    HeadVideo = 'head_video'
    HeadAuxImage = 'head_aux_image'
    HeadAuxVideo = 'head_aux_video'


class NormMode(UniDualEnum):
    NoNorm = 'none'
    Batch = 'batch'


class NormStats(UniDualEnum):
    PerPathway = 'per_pathway'
    Shared = 'shared'


class TrainMode(UniDualEnum):
    SeparateImage = 'separate_image'
    SeparateVideo = 'separate_video'
    Finetune = 'finetune'
    Multitask = 'multitask'
    UniDual = 'unidual'
    UniDualAux = 'unidual_aux'


class ScheduleKind(UniDualEnum):
    WarmupStep = 'warmup_step'
    WarmupCosine = 'warmup_cosine'


class FrameStrategy(UniDualEnum):
    Center = 'center'
    Random = 'random'


class ScoreAverage(UniDualEnum):
    Softmax = 'softmax'
    Logits = 'logits'


class Split(UniDualEnum):
    Train = 'train'
    Eval = 'eval'
