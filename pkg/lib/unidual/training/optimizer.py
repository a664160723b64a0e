#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0

"""
SGD with momentum and weight decay.
"""

import collections

import numpy as np

from unidual.common import exceptions


class OptimizerState(object):
    def __init__(self, momentum=0.9, weight_decay=1e-4):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers = collections.OrderedDict()
        self.steps = 0

    def to_snapshot(self):
        return {'meta': {'momentum': self.momentum, 'weight_decay': self.weight_decay, 'steps': self.steps},
                'buffers': collections.OrderedDict((k, v.copy()) for k, v in self.buffers.items())}

    @classmethod
    def from_snapshot(cls, snapshot):
        state = cls(snapshot['meta']['momentum'], snapshot['meta']['weight_decay'])
        state.steps = snapshot['meta'].get('steps', 0)
        state.buffers = collections.OrderedDict((k, v.copy()) for k, v in snapshot['buffers'].items())
        return state


def sgd_step(params, state, lr, grads=None):
    """
    v <- momentum * v + g + weight_decay * w;  w <- w - lr * v

    Parameters without a gradient, or not trainable, are left alone. All gradients are
    cleared afterwards.

    :param params: Parameters.
    :param grads: optional dict name -> gradient replacing the parameters' own gradients.
    :raises NonFiniteGradient: before any update, naming the first offending parameter.
    """
    updates = []
    for param in params:
        grad = grads.get(param.name) if grads is not None else param.grad
        if grad is None or not param.trainable:
            continue
        if not np.all(np.isfinite(grad)):
            raise exceptions.NonFiniteGradient(parameter=param.name)
        updates.append((param, grad))

    for param, grad in updates:
        velocity = state.buffers.get(param.name)
        if velocity is None:
            velocity = np.zeros_like(param.values)
        velocity = state.momentum * velocity + grad + state.weight_decay * param.values
        state.buffers[param.name] = velocity
        param.values = (param.values - lr * velocity).astype(param.values.dtype, copy=False)
    state.steps += 1

    for param in params:
        param.zero_grad()
