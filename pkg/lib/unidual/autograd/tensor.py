#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0

"""
Dense tensors with a recorded tape and reverse-mode gradients.

Every differentiable operation records a TapeNode on its output. backward() collects the
nodes reachable from a scalar loss and visits them in exact reverse creation order.
Gradients of leaves accumulate across calls until they are cleared.
"""

import collections
import contextlib
import itertools
import threading

import numpy as np

from unidual.common import exceptions


DTYPES = {32: np.float32, 64: np.float64}

_STATE = threading.local()
_SEQUENCE = itertools.count()


def get_dtype(precision):
    if precision not in DTYPES:
        raise exceptions.WrongParameterException("precision must be 32 or 64, got %s" % precision)
    return DTYPES[precision]


def is_grad_enabled():
    return getattr(_STATE, 'grad_enabled', True)


@contextlib.contextmanager
def no_grad():
    """
    Disable tape recording in the current thread.
    """
    previous = is_grad_enabled()
    _STATE.grad_enabled = False
    try:
        yield
    finally:
        _STATE.grad_enabled = previous


def check_finite(values, op, phase='forward'):
    if not np.all(np.isfinite(values)):
        raise exceptions.NonFiniteError(op=op, phase=phase)


class TapeNode(object):
    """
    One recorded operation: op id, inputs, output id and the saved forward context.
    """

    def __init__(self, op, inputs, output, backward_fn, ctx):
        self.seq = next(_SEQUENCE)
        self.op = op
        self.inputs = inputs
        self.input_ids = [id(t) for t in inputs]
        self.output_id = id(output)
        self.backward_fn = backward_fn
        self.ctx = ctx

    def __repr__(self):
        return 'TapeNode(%s, seq=%s)' % (self.op, self.seq)


class Tensor(object):
    def __init__(self, values, requires_grad=False, dtype=None, name=None):
        values = np.asarray(values)
        if dtype is not None:
            values = values.astype(dtype, copy=False)
        elif not np.issubdtype(values.dtype, np.floating):
            values = values.astype(np.float64)
        self.values = values
        self.grad = None
        self.requires_grad = requires_grad
        self.node = None
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def dtype(self):
        return self.values.dtype

    def numpy(self):
        return self.values

    def item(self):
        return float(self.values.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return scale(self, other)

    __rmul__ = __mul__

    def __repr__(self):
        return 'Tensor(shape=%s, dtype=%s%s)' % (list(self.shape), self.dtype,
                                                 ', requires_grad' if self.requires_grad else '')


def record(op, inputs, values, backward_fn, ctx=None):
    """
    Wrap the result of an operation and record it on the tape.

    :param op: op id.
    :param inputs: input tensors, in the order backward_fn returns their gradients.
    :param values: the numpy result.
    :param backward_fn: fn(ctx, grad_output) -> list of gradients (None for no gradient).
    :param ctx: saved forward context.

    :returns: Tensor.
    :raises NonFiniteError: if the result holds NaN or Inf.
    """
    check_finite(values, op)
    out = Tensor(values)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = TapeNode(op, inputs, out, backward_fn, ctx)
    return out


def _collect_nodes(root):
    nodes = {}
    stack = [root.node]
    while stack:
        node = stack.pop()
        if node is None or node.seq in nodes:
            continue
        nodes[node.seq] = node
        for t in node.inputs:
            if t.node is not None and t.node.seq not in nodes:
                stack.append(t.node)
    return [nodes[seq] for seq in sorted(nodes, reverse=True)]


def _accumulate_leaf(tensor, grad):
    if tensor.grad is None:
        tensor.grad = np.array(grad, dtype=tensor.values.dtype, copy=True)
    else:
        tensor.grad += grad


def backward(loss):
    """
    Populate gradients of every leaf reachable from a scalar loss.

    :param loss: a one-element tensor produced by recorded operations.
    :raises GraphError: if the loss has more than one element or is not on a tape.
    """
    if loss.size != 1:
        raise exceptions.GraphError("backward needs a one-element tensor, got shape %s" % list(loss.shape))
    seed = np.ones_like(loss.values)
    if loss.node is None:
        if loss.requires_grad:
            _accumulate_leaf(loss, seed)
            return
        raise exceptions.GraphError("tensor was not produced by a recorded tape")

    grads = {loss.node.output_id: seed}
    for node in _collect_nodes(loss):
        grad_output = grads.pop(node.output_id, None)
        if grad_output is None:
            continue
        input_grads = node.backward_fn(node.ctx, grad_output)
        for tensor, grad in zip(node.inputs, input_grads):
            if grad is None or not tensor.requires_grad:
                continue
            check_finite(grad, node.op, phase='backward')
            if tensor.node is None:
                _accumulate_leaf(tensor, grad)
            elif id(tensor) in grads:
                grads[id(tensor)] = grads[id(tensor)] + grad
            else:
                grads[id(tensor)] = grad


def add(a, b):
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    if a.shape != b.shape:
        raise exceptions.ShapeMismatch(op='add', left=list(a.shape), right=list(b.shape))

    def _backward(ctx, grad):
        return [grad, grad]
    return record('add', [a, b], a.values + b.values, _backward)


def scale(a, factor):
    if isinstance(factor, Tensor):
        raise exceptions.NotImplementedException("tensor by tensor products are not supported")
    factor = float(factor)

    def _backward(ctx, grad):
        return [grad * ctx]
    return record('scale', [a], a.values * a.dtype.type(factor), _backward, factor)


def sum_tensors(tensors):
    """
    Sum scalar tensors in the given order.
    """
    total = tensors[0]
    for t in tensors[1:]:
        total = add(total, t)
    return total


class Parameter(object):
    """
    A named tensor of a network: trainable weights or non-trainable state (running statistics).
    """

    def __init__(self, name, values, group, trainable=True):
        self.name = name
        self.group = group
        self.trainable = trainable
        self.tensor = Tensor(values, requires_grad=trainable, name=name)

    @property
    def values(self):
        return self.tensor.values

    @values.setter
    def values(self, values):
        self.tensor.values = values

    @property
    def grad(self):
        return self.tensor.grad

    @property
    def shape(self):
        return self.tensor.shape

    @property
    def size(self):
        return self.tensor.size

    def zero_grad(self):
        self.tensor.grad = None

    def set_trainable(self, trainable):
        self.trainable = trainable
        self.tensor.requires_grad = trainable
        if not trainable:
            self.tensor.grad = None

    def __repr__(self):
        return 'Parameter(%s, %s, %s)' % (self.name, self.group.value, list(self.shape))


class ParameterScope(object):
    """
    View of the parameters under a name prefix, addressed by their local names.
    """

    def __init__(self, registry, prefix):
        self.registry = registry
        self.prefix = prefix

    def full_name(self, name):
        return '%s.%s' % (self.prefix, name) if self.prefix else name

    def __contains__(self, name):
        return self.full_name(name) in self.registry

    def __getitem__(self, name):
        return self.registry[self.full_name(name)]

    def get(self, name, default=None):
        return self.registry.get(self.full_name(name), default)

    def scope(self, prefix):
        return ParameterScope(self.registry, self.full_name(prefix))


class ParameterRegistry(object):
    """
    Ordered, uniquely named parameters of a network. Registry order is the checkpoint order.
    """

    def __init__(self):
        self._params = collections.OrderedDict()

    def add(self, param):
        if param.name in self._params:
            raise exceptions.ConfigError("Duplicated parameter name %s" % param.name)
        self._params[param.name] = param
        return param

    def remove(self, name):
        del self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __getitem__(self, name):
        if name not in self._params:
            raise exceptions.MissingParameter(name=name)
        return self._params[name]

    def get(self, name, default=None):
        return self._params.get(name, default)

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params.keys())

    def scope(self, prefix):
        return ParameterScope(self, prefix)

    def trainable(self):
        return [p for p in self._params.values() if p.trainable]

    def by_group(self, group):
        return [p for p in self._params.values() if p.group == group]

    def groups(self):
        groups = []
        for p in self._params.values():
            if p.group not in groups:
                groups.append(p.group)
        return groups

    def num_values(self, trainable_only=True):
        return int(sum(p.size for p in self._params.values() if p.trainable or not trainable_only))

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()
