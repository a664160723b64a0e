#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0

"""
Finite-difference gradient checking.

ReLU and max-pool make the loss piecewise smooth. A central difference whose +-eps forwards
land on another piece measures the kink, not the gradient, and large inputs put some of
their many pre-activations within eps of zero for almost every coordinate. Two switch
policies keep the check on one piece:

    freeze  the +-eps forwards reuse the ReLU masks and max-pool indices of the unperturbed
            forward, the same ones the tape differentiates (default);
    skip    coordinates whose +-eps forwards move a switch are dropped and resampled.
"""

import logging

import numpy as np

from unidual.autograd import functional as F
from unidual.autograd.tensor import Parameter, backward, no_grad
from unidual.common import exceptions


logger = logging.getLogger(__name__)

SWITCH_POLICIES = ('freeze', 'skip')


def relative_error(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)


class GradCheckEntry(object):
    def __init__(self, name, group, max_error, num_coords, num_moved=0):
        self.name = name
        self.group = group
        self.max_error = max_error
        self.num_coords = num_coords
        self.num_moved = num_moved

    def __repr__(self):
        return '%s: %.3e over %s coords, %s moved a switch' % (self.name, self.max_error, self.num_coords,
                                                                self.num_moved)


class GradCheckReport(object):
    """
    Per-parameter maximum relative errors of one check.
    """

    def __init__(self, tol):
        self.tol = tol
        self.entries = []

    @property
    def max_error(self):
        return max([e.max_error for e in self.entries] or [0.0])

    @property
    def passed(self):
        return self.max_error <= self.tol

    def by_group(self):
        groups = {}
        for entry in self.entries:
            key = entry.group.value if hasattr(entry.group, 'value') else str(entry.group)
            groups[key] = max(groups.get(key, 0.0), entry.max_error)
        return groups

    def raise_on_failure(self):
        if not self.passed:
            worst = max(self.entries, key=lambda e: e.max_error)
            raise exceptions.GradCheckFailure(parameter=worst.name, error=worst.max_error, tol=self.tol)

    def __repr__(self):
        return 'GradCheckReport(max_error=%.3e, tol=%s, passed=%s)' % (self.max_error, self.tol, self.passed)


def _named(params):
    named = []
    for index, param in enumerate(params):
        if isinstance(param, Parameter):
            named.append((param.name, param.group, param.tensor))
        else:
            named.append((param.name or 'param%s' % index, None, param))
    return named


def grad_check(forward_fn, params, eps=1e-5, tol=1e-4, sample_size=32, seed=0, switches='freeze'):
    """
    Compare tape gradients with central differences.

    :param forward_fn: callable without arguments returning a scalar Tensor; it must be
                       deterministic (64-bit, no batch statistics).
    :param params: Parameters or Tensors to check.
    :param eps: finite difference step.
    :param tol: maximum accepted relative error.
    :param sample_size: tensors larger than this are checked on a random coordinate sample.
    :param seed: seed of the coordinate sample.
    :param switches: 'freeze' or 'skip', see the module doc.

    :returns: GradCheckReport.
    :raises GradCheckFailure: if an analytic or numeric gradient is not finite.
    """
    if switches not in SWITCH_POLICIES:
        raise exceptions.WrongParameterException("switches must be one of %s, got %s" % (SWITCH_POLICIES, switches))
    freeze = switches == 'freeze'
    named = _named(params)
    for _, _, tensor in named:
        tensor.grad = None
    with F.recording_switches() as reference:
        backward(forward_fn())
    analytic = {id(tensor): (np.zeros_like(tensor.values) if tensor.grad is None else tensor.grad.copy())
                for _, _, tensor in named}
    for _, _, tensor in named:
        tensor.grad = None

    def _evaluate():
        with F.recording_switches(reference.switches, freeze) as recorder:
            value = forward_fn().item()
        return value, recorder.moved

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol)
    for name, group, tensor in named:
        tensor.values = np.ascontiguousarray(tensor.values)
        flat = tensor.values.reshape(-1)
        grads = analytic[id(tensor)].reshape(-1)
        if not np.all(np.isfinite(grads)):
            raise exceptions.GradCheckFailure("analytic gradient is not finite", parameter=name)
        if flat.size > sample_size:
            order = rng.permutation(flat.size)
        else:
            order = np.arange(flat.size)

        coords, numeric, moved = [], [], 0
        with no_grad():
            for coord in order:
                if len(coords) >= sample_size or (not freeze and moved >= sample_size):
                    break
                saved = flat[coord]
                flat[coord] = saved + eps
                plus, plus_moved = _evaluate()
                flat[coord] = saved - eps
                minus, minus_moved = _evaluate()
                flat[coord] = saved
                if plus_moved or minus_moved:
                    moved += 1
                    if not freeze:
                        continue
                coords.append(coord)
                numeric.append((plus - minus) / (2 * eps))
        numeric = np.array(numeric)
        if not np.all(np.isfinite(numeric)):
            raise exceptions.GradCheckFailure("numeric gradient is not finite", parameter=name)
        if not coords:
            logger.warning("gradcheck %s: every sampled coordinate moved a switch", name)

        errors = relative_error(grads[np.array(coords, dtype=np.int64)], numeric)
        entry = GradCheckEntry(name, group, float(errors.max()) if len(errors) else 0.0, len(coords), moved)
        logger.debug("gradcheck %s", entry)
        report.entries.append(entry)
    return report
