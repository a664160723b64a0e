#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0

"""
Loss routing and the training step.

Every sub-batch trains the main head of its task. Under UniDualAux every sub-batch also
trains the auxiliary head of its task on the other pathway: images as static clips through
the video pathway, one sampled frame per clip through the image pathway.
"""

import collections
import logging

from unidual.autograd import functional as F
from unidual.autograd.tensor import backward, scale, sum_tensors
from unidual.common import exceptions
from unidual.common.constants import FrameStrategy, Modality, Sections, TrainMode
from unidual.common.dict_class import DictClass
from unidual.data.stream import sample_aux_frame, stack_pixels
from unidual.training.optimizer import sgd_step


logger = logging.getLogger(__name__)

MAIN = 'main'
AUX = 'aux'

SEPARATE_MODALITIES = {TrainMode.SeparateImage: Modality.Image, TrainMode.SeparateVideo: Modality.Video}


class TrainingPlan(DictClass):
    """
    How losses are formed: the mode, per-task loss weights and the auxiliary frame choice.
    """

    def __init__(self, mode=TrainMode.UniDualAux, loss_weights=None, aux_loss_weights=None,
                 aux_frame=FrameStrategy.Random, seed=0):
        self.mode = mode
        self.loss_weights = loss_weights or {}
        self.aux_loss_weights = aux_loss_weights or {}
        self.aux_frame = aux_frame
        self.seed = seed

    def weight(self, kind, task_id):
        weights = self.loss_weights if kind == MAIN else self.aux_loss_weights
        return float(weights.get(task_id, 1.0))

    @staticmethod
    def from_run_config(config, mode, sources):
        ids = [s.source_id for s in sources]
        all_ids = config.config_get_list(Sections.Data, 'sources')

        def _weights(option):
            values = config.config_get_list(Sections.Train, option)
            if not values:
                return {}
            if len(values) != len(all_ids):
                raise exceptions.ConfigError("train.%s needs one weight per data source" % option)
            return dict((source_id, float(v)) for source_id, v in zip(all_ids, values) if source_id in ids)

        try:
            aux_frame = FrameStrategy.parse(config.config_get(Sections.Train, 'aux_frame'))
        except ValueError as error:
            raise exceptions.ConfigError(str(error))
        return TrainingPlan(mode, _weights('loss_weights'), _weights('aux_loss_weights'), aux_frame,
                            config.config_get_int(Sections.Data, 'seed'))


def aux_frames(sub_batch, plan, step):
    """
    One frame per clip of a video sub-batch, seeded by (plan seed, step, position).
    """
    return [sample_aux_frame(clip, plan.aux_frame, [plan.seed, step, position])
            for position, clip in enumerate(sub_batch.examples)]


def compute_losses(net, plan, batch):
    """
    Forward every loss term of a mixed batch.

    :returns: OrderedDict (kind, task_id) -> (weight, scalar Tensor), kind being 'main' or 'aux'.
    :raises ModalityMismatch: a sub-batch does not fit the mode.
    """
    terms = collections.OrderedDict()
    for sub_batch in batch.sub_batches:
        task = net.config.get_task(sub_batch.source.source_id)
        if plan.mode in SEPARATE_MODALITIES and task.modality != SEPARATE_MODALITIES[plan.mode]:
            raise exceptions.ModalityMismatch("Mode %s cannot train on %s source %s"
                                              % (plan.mode.value, task.modality.value, task.task_id))
        labels = sub_batch.labels
        logits = net.forward_pathway(sub_batch.pixels, task.main_head(), task.modality)
        terms[(MAIN, task.task_id)] = (plan.weight(MAIN, task.task_id), F.softmax_xent(logits, labels))

        if plan.mode == TrainMode.UniDualAux:
            if task.modality == Modality.Image:
                pixels = sub_batch.pixels
            else:
                pixels = stack_pixels(aux_frames(sub_batch, plan, batch.step))
            logits = net.forward_pathway(pixels, task.aux_head(), task.modality)
            terms[(AUX, task.task_id)] = (plan.weight(AUX, task.task_id), F.softmax_xent(logits, labels))
    return terms


def total_loss(terms):
    return sum_tensors([scale(loss, weight) for weight, loss in terms.values()])


def accumulate_gradients(net, plan, batch):
    """
    Forward all terms and backpropagate their weighted sum once.

    :returns: dict of loss values with 'total'.
    :raises NonFiniteLoss: naming the step.
    """
    try:
        terms = compute_losses(net, plan, batch)
        total = total_loss(terms)
    except exceptions.NonFiniteError as error:
        raise exceptions.NonFiniteLoss(str(error), step=batch.step)
    try:
        backward(total)
    except exceptions.NonFiniteError as error:
        raise exceptions.NonFiniteGradient(str(error), step=batch.step)
    values = collections.OrderedDict((key, loss.item()) for key, (_, loss) in terms.items())
    values['total'] = total.item()
    return values


def train_step(net, plan, batch, optimizer, lr):
    """
    One optimizer step on the summed loss of a mixed batch.

    :returns: dict (kind, task_id) -> loss value, plus 'total'.
    """
    net.train()
    net.zero_grad()
    values = accumulate_gradients(net, plan, batch)
    sgd_step(net.parameters(), optimizer, lr)
    logger.debug("step %s lr %.6f loss %.6f" % (batch.step, lr, values['total']))
    return values
