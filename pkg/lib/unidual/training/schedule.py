#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0

"""
Learning rate schedules: a linear warm-up followed by step decay or a cosine curve.
"""

import math

from unidual.common import exceptions
from unidual.common.constants import ScheduleKind, Sections
from unidual.common.dict_class import DictClass


class Schedule(DictClass):
    def __init__(self, kind=ScheduleKind.WarmupStep, base_lr=0.01, warmup_epochs=10, total_epochs=45,
                 step_every=10, decay_factor=10, warmup_start_factor=0.1):
        self.kind = kind
        self.base_lr = base_lr
        self.warmup_epochs = warmup_epochs
        self.total_epochs = total_epochs
        self.step_every = step_every
        self.decay_factor = decay_factor
        self.warmup_start_factor = warmup_start_factor

    def validate(self):
        if self.base_lr <= 0:
            raise exceptions.ScheduleError("base_lr must be positive", base_lr=self.base_lr)
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise exceptions.ScheduleError("warmup_epochs must be in [0, total_epochs)",
                                           warmup_epochs=self.warmup_epochs, total_epochs=self.total_epochs)
        if self.kind == ScheduleKind.WarmupStep and (self.step_every <= 0 or self.decay_factor <= 0):
            raise exceptions.ScheduleError("step_every and decay_factor must be positive")
        return self

    @staticmethod
    def from_run_config(config, total_epochs=None):
        try:
            kind = ScheduleKind.parse(config.config_get(Sections.Train, 'schedule'))
        except ValueError as error:
            raise exceptions.ScheduleError(str(error))
        return Schedule(kind=kind,
                        base_lr=config.config_get_float(Sections.Train, 'base_lr'),
                        warmup_epochs=config.config_get_float(Sections.Train, 'warmup_epochs'),
                        total_epochs=total_epochs or config.config_get_int(Sections.Train, 'epochs'),
                        step_every=config.config_get_float(Sections.Train, 'step_every'),
                        decay_factor=config.config_get_float(Sections.Train, 'decay_factor'),
                        warmup_start_factor=config.config_get_float(Sections.Train, 'warmup_start_factor')).validate()


def lr_at(schedule, epoch):
    """
    Learning rate at a (fractional) epoch.

    :raises ScheduleError: epoch outside [0, total_epochs).
    """
    if epoch < 0 or epoch >= schedule.total_epochs:
        raise exceptions.ScheduleError("epoch %s outside [0, %s)" % (epoch, schedule.total_epochs))
    base, warmup = schedule.base_lr, schedule.warmup_epochs
    if epoch < warmup:
        start = base * schedule.warmup_start_factor
        return start + (base - start) * epoch / warmup
    if schedule.kind == ScheduleKind.WarmupStep:
        return base / schedule.decay_factor ** math.floor((epoch - warmup) / schedule.step_every)
    return 0.5 * base * (1 + math.cos(math.pi * (epoch - warmup) / (schedule.total_epochs - warmup)))
