#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0

"""
Differentiable primitives.

Activations are batched N x C x L x H x W arrays; images are L=1 clips. Ops taking
activations also accept a single C x L x H x W example, which is promoted to a batch of one.
"""

import contextlib
import functools
import threading

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from unidual.autograd.tensor import Tensor, record
from unidual.common import exceptions


AXES = {'L': 2, 'H': 3, 'W': 4}

_active = threading.local()


class SwitchRecorder(object):
    """
    Collects the switching pattern of the piecewise linear ops (ReLU masks, max-pool argmax
    indices) of the forwards run under it, in call order.

    With a reference recording it notes whether any switch moved away from the reference;
    with freeze=True the ops also reuse the reference switches, so the forward stays on the
    linear piece the reference was taken on.
    """

    def __init__(self, reference=None, freeze=False):
        self.reference = reference
        self.freeze = freeze
        self.switches = []
        self.count = 0
        self.moved = False

    def __call__(self, switch):
        position = self.count
        self.count += 1
        if self.reference is None:
            self.switches.append(switch)
            return switch
        if position >= len(self.reference) or self.reference[position].shape != switch.shape:
            raise exceptions.GraphError("forward does not match the reference switches", position=position)
        expected = self.reference[position]
        if not self.moved and not np.array_equal(switch, expected):
            self.moved = True
        return expected if self.freeze else switch


@contextlib.contextmanager
def recording_switches(reference=None, freeze=False):
    """
    Run the enclosed forwards under a SwitchRecorder of the current thread.
    """
    recorder = SwitchRecorder(reference, freeze)
    saved = getattr(_active, 'recorder', None)
    _active.recorder = recorder
    try:
        yield recorder
    finally:
        _active.recorder = saved


def _switch(values):
    recorder = getattr(_active, 'recorder', None)
    return values if recorder is None else recorder(values)


def reshape(x, shape):
    def _backward(ctx, grad):
        return [grad.reshape(ctx)]
    return record('reshape', [x], x.values.reshape(shape), _backward, x.shape)


def _batched(op):
    @functools.wraps(op)
    def wrapper(x, *args, **kwargs):
        if x.ndim == 4:
            out = op(reshape(x, (1,) + x.shape), *args, **kwargs)
            return reshape(out, out.shape[1:])
        if x.ndim != 5:
            raise exceptions.ShapeMismatch(op=op.__name__, expected='N x C x L x H x W', got=list(x.shape))
        return op(x, *args, **kwargs)
    return wrapper


def _check_odd(name, size):
    if size < 1 or size % 2 == 0:
        raise exceptions.WrongParameterException("%s must be odd, got %s" % (name, size))


def _frames(values):
    """ N x C x L x H x W -> (N*L) x C x H x W """
    n, c, l, h, w = values.shape
    return values.transpose(0, 2, 1, 3, 4).reshape(n * l, c, h, w)


def _unframes(values, n, l):
    """ (N*L) x C x H x W -> N x C x L x H x W """
    b, c, h, w = values.shape
    return np.ascontiguousarray(values.reshape(n, l, c, h, w).transpose(0, 2, 1, 3, 4))


def _conv_spatial_backward(ctx, grad):
    n, c, l = ctx['dims']
    stride, padding, kernel = ctx['stride'], ctx['padding'], ctx['kernel']
    weight, cols = ctx['weight'], ctx['cols']
    c_out, out_h, out_w = grad.shape[1], grad.shape[3], grad.shape[4]
    g = np.ascontiguousarray(grad).reshape(n, c_out, -1)

    grad_weight = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
    grad_cols = np.matmul(weight.reshape(c_out, -1).T, g).reshape(n, c, kernel, kernel, l, out_h, out_w)
    # col2im
    grad_padded = np.zeros(ctx['padded_shape'], dtype=grad.dtype)
    for i in range(kernel):
        for j in range(kernel):
            grad_padded[:, :, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += grad_cols[:, :, i, j]
    height, width = grad_padded.shape[3] - 2 * padding, grad_padded.shape[4] - 2 * padding
    grads = [grad_padded[:, :, :, padding:padding + height, padding:padding + width], grad_weight]
    if ctx['has_bias']:
        grads.append(grad.sum(axis=(0, 2, 3, 4)))
    return grads


@_batched
def conv_spatial(x, weight, bias=None, stride=1, padding=0):
    """
    2D convolution applied to every frame with the same filters, as one batched GEMM over
    an N x (C_in*d*d) x (L*H'*W') im2col matrix.

    :param x: N x C_in x L x H x W.
    :param weight: C_out x C_in x d x d, d odd.
    :param bias: optional C_out.
    :param stride: spatial stride s >= 1.
    :param padding: zero padding p >= 0.

    :returns: N x C_out x L x H' x W', H' = floor((H + 2p - d) / s) + 1.
    """
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise exceptions.ShapeMismatch(op='conv_spatial', weight=list(weight.shape))
    kernel = weight.shape[2]
    _check_odd('spatial kernel', kernel)
    n, c, l, h, w = x.shape
    if c != weight.shape[1]:
        raise exceptions.ShapeMismatch(op='conv_spatial', input_channels=c, weight_channels=weight.shape[1])
    if stride < 1 or padding < 0:
        raise exceptions.WrongParameterException("stride must be >= 1 and padding >= 0")
    if h + 2 * padding < kernel or w + 2 * padding < kernel:
        raise exceptions.ShapeMismatch(op='conv_spatial', input=list(x.shape), kernel=kernel, padding=padding)

    padded = x.values
    if padding:
        padded = np.pad(padded, ((0, 0), (0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(padded, (kernel, kernel), axis=(3, 4))[:, :, :, ::stride, ::stride]
    out_h, out_w = windows.shape[3], windows.shape[4]
    cols = np.ascontiguousarray(windows.transpose(0, 1, 5, 6, 2, 3, 4)).reshape(n, c * kernel * kernel, -1)
    c_out = weight.shape[0]
    out = np.matmul(weight.values.reshape(c_out, -1), cols).reshape(n, c_out, l, out_h, out_w)
    inputs = [x, weight]
    if bias is not None:
        out += bias.values[None, :, None, None, None]
        inputs.append(bias)

    ctx = {'dims': (n, c, l), 'stride': stride, 'padding': padding, 'kernel': kernel,
           'weight': weight.values, 'cols': cols, 'padded_shape': padded.shape,
           'has_bias': bias is not None}
    return record('conv_spatial', inputs, out, lambda ctx, grad: _conv_spatial_backward(ctx, grad), ctx)


@_batched
def conv_temporal(x, weight, bias=None, padding=None, stride=1):
    """
    1D convolution along L, point-wise over H and W. t = 1 is the 1x1 channel mixing case.

    :param x: N x C_in x L x H x W.
    :param weight: C_out x C_in x t, t odd.
    :param bias: optional C_out.
    :param padding: temporal zero padding, (t - 1) / 2 by default.
    :param stride: temporal stride.

    :returns: N x C_out x L' x H x W, L' = floor((L + 2p - t) / stride) + 1.
    """
    if weight.ndim != 3:
        raise exceptions.ShapeMismatch(op='conv_temporal', weight=list(weight.shape))
    taps = weight.shape[2]
    _check_odd('temporal kernel', taps)
    n, c, l, h, w = x.shape
    if c != weight.shape[1]:
        raise exceptions.ShapeMismatch(op='conv_temporal', input_channels=c, weight_channels=weight.shape[1])
    if padding is None:
        padding = (taps - 1) // 2
    if taps > l + 2 * padding:
        raise exceptions.ShapeMismatch(op='conv_temporal', length=l, kernel=taps, padding=padding)
    out_l = (l + 2 * padding - taps) // stride + 1
    span = stride * (out_l - 1) + 1
    c_out = weight.shape[0]

    padded = x.values
    if padding:
        padded = np.pad(padded, ((0, 0), (0, 0), (padding, padding), (0, 0), (0, 0)))
    out = np.zeros((n, c_out, out_l * h * w), dtype=np.result_type(x.values, weight.values))
    for tau in range(taps):
        out += np.matmul(weight.values[:, :, tau], padded[:, :, tau:tau + span:stride].reshape(n, c, -1))
    out = out.reshape(n, c_out, out_l, h, w)
    inputs = [x, weight]
    if bias is not None:
        out += bias.values[None, :, None, None, None]
        inputs.append(bias)

    def _backward(ctx, grad):
        g = np.ascontiguousarray(grad).reshape(n, c_out, -1)
        grad_weight = np.zeros_like(ctx['weight'])
        grad_padded = np.zeros(ctx['padded'].shape, dtype=grad.dtype)
        for tau in range(taps):
            window = slice(tau, tau + span, stride)
            frames = ctx['padded'][:, :, window].reshape(n, c, -1)
            grad_weight[:, :, tau] = np.matmul(g, frames.transpose(0, 2, 1)).sum(axis=0)
            grad_padded[:, :, window] += np.matmul(ctx['weight'][:, :, tau].T, g).reshape(n, c, out_l, h, w)
        grads = [grad_padded[:, :, padding:padding + l], grad_weight]
        if ctx['has_bias']:
            grads.append(grad.sum(axis=(0, 2, 3, 4)))
        return grads

    ctx = {'weight': weight.values, 'padded': padded, 'has_bias': bias is not None}
    return record('conv_temporal', inputs, out, _backward, ctx)


def relu(x):
    mask = _switch(x.values > 0)

    def _backward(ctx, grad):
        return [np.where(ctx, grad, 0).astype(grad.dtype, copy=False)]
    return record('relu', [x], np.where(mask, x.values, 0).astype(x.dtype, copy=False), _backward, mask)


def batch_norm(x, gamma, beta, running_mean, running_var, num_batches, training, eps=1e-5, momentum=0.1):
    """
    Normalize every channel (axis 1) over the batch and all remaining axes.

    running_mean, running_var and num_batches are arrays owned by the caller and updated in
    place in training mode.

    :raises GraphError: eval mode before the running statistics were ever updated.
    """
    if eps <= 0:
        raise exceptions.WrongParameterException("batch norm eps must be positive")
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise exceptions.ShapeMismatch(op='batch_norm', channels=channels, gamma=list(gamma.shape))
    axes = tuple(a for a in range(x.ndim) if a != 1)
    view = [1] * x.ndim
    view[1] = channels
    count = x.size // channels

    if training:
        mean = x.values.mean(axis=axes)
        var = x.values.var(axis=axes)
        unbiased = var * count / (count - 1) if count > 1 else var
        running_mean *= (1 - momentum)
        running_mean += momentum * mean
        running_var *= (1 - momentum)
        running_var += momentum * unbiased
        num_batches += 1
    else:
        if num_batches[0] == 0:
            raise exceptions.GraphError("batch norm running statistics are uninitialized")
        mean, var = running_mean, running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.values - mean.reshape(view)) * inv_std.reshape(view)
    out = gamma.values.reshape(view) * x_hat + beta.values.reshape(view)

    def _backward(ctx, grad):
        grad_gamma = (grad * ctx['x_hat']).sum(axis=axes)
        grad_beta = grad.sum(axis=axes)
        grad_x_hat = grad * ctx['gamma'].reshape(view)
        if ctx['training']:
            grad_x = (count * grad_x_hat - grad_x_hat.sum(axis=axes).reshape(view)
                      - ctx['x_hat'] * (grad_x_hat * ctx['x_hat']).sum(axis=axes).reshape(view))
            grad_x = grad_x * (ctx['inv_std'] / count).reshape(view)
        else:
            grad_x = grad_x_hat * ctx['inv_std'].reshape(view)
        return [grad_x, grad_gamma, grad_beta]

    ctx = {'x_hat': x_hat, 'gamma': gamma.values, 'inv_std': inv_std, 'training': training}
    return record('batch_norm', [x, gamma, beta], out.astype(x.dtype, copy=False), _backward, ctx)


@_batched
def global_pool(x, axes):
    """
    Mean over the named axes, a non-empty subset of 'L', 'H', 'W'. The pooled axes are removed.
    """
    if not axes:
        raise exceptions.WrongParameterException("global_pool needs at least one axis")
    dims = tuple(sorted(AXES[a] for a in axes))
    pooled = int(np.prod([x.shape[d] for d in dims]))

    def _backward(ctx, grad):
        return [np.broadcast_to(np.expand_dims(grad, dims), ctx) / pooled]
    return record('global_pool', [x], x.values.mean(axis=dims), _backward, x.shape)


@_batched
def max_pool_spatial(x, kernel, stride, padding=0):
    """
    Per-frame spatial max pooling with -inf padding. The gradient goes to the first argmax of
    each window in row-major order.
    """
    n, c, l, h, w = x.shape
    if kernel > h + 2 * padding or kernel > w + 2 * padding or padding >= kernel:
        raise exceptions.ShapeMismatch(op='max_pool_spatial', input=list(x.shape), kernel=kernel, padding=padding)
    padded = np.pad(_frames(x.values), ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                    constant_values=-np.inf)
    windows = sliding_window_view(padded, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    b, _, out_h, out_w = windows.shape[:4]
    flat = windows.reshape(b, c, out_h, out_w, kernel * kernel)
    index = _switch(flat.argmax(axis=-1))
    out = np.take_along_axis(flat, index[..., None], axis=-1)[..., 0]

    def _backward(ctx, grad):
        g = _frames(grad)
        grad_padded = np.zeros(ctx['padded_shape'], dtype=grad.dtype)
        bi, ci, hi, wi = np.indices(ctx['index'].shape)
        rows = hi * stride + ctx['index'] // kernel
        cols = wi * stride + ctx['index'] % kernel
        np.add.at(grad_padded, (bi, ci, rows, cols), g)
        return [_unframes(grad_padded[:, :, padding:padding + h, padding:padding + w], n, l)]

    ctx = {'index': index, 'padded_shape': padded.shape}
    return record('max_pool_spatial', [x], _unframes(out, n, l), _backward, ctx)


def linear(x, weight, bias=None):
    """
    y = W x + b for every example; x is flattened to F features per example.
    A 1-D x is a single example.
    """
    single = x.ndim == 1
    flat = x.values.reshape(1, -1) if single else x.values.reshape(x.shape[0], -1)
    if weight.ndim != 2 or flat.shape[1] != weight.shape[1]:
        raise exceptions.ShapeMismatch(op='linear', features=flat.shape[1], weight=list(weight.shape))
    out = flat @ weight.values.T
    inputs = [x, weight]
    if bias is not None:
        out = out + bias.values
        inputs.append(bias)

    def _backward(ctx, grad):
        g = grad.reshape(1, -1) if single else grad
        grads = [(g @ ctx['weight']).reshape(ctx['shape']), g.T @ ctx['flat']]
        if ctx['has_bias']:
            grads.append(g.sum(axis=0))
        return grads

    ctx = {'weight': weight.values, 'flat': flat, 'shape': x.shape, 'has_bias': bias is not None}
    return record('linear', inputs, out[0] if single else out, _backward, ctx)


def softmax(values):
    """
    Row-wise softmax of a plain array (no tape).
    """
    shifted = values - values.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)
    return exps / exps.sum(axis=-1, keepdims=True)


def softmax_xent(logits, labels):
    """
    Mean softmax cross-entropy over the batch.

    :param logits: N x K, or K for a single example.
    :param labels: N class indices, or one index.

    :returns: scalar Tensor.
    """
    values = logits.values.reshape(1, -1) if logits.ndim == 1 else logits.values
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    num, classes = values.shape
    if labels.shape != (num,):
        raise exceptions.ShapeMismatch(op='softmax_xent', logits=list(logits.shape), labels=list(labels.shape))
    if np.any(labels < 0) or np.any(labels >= classes):
        raise exceptions.WrongParameterException("label out of range [0, %s): %s" % (classes, labels.tolist()))

    rows = np.arange(num)
    shifted = values - values.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    top = shifted.argmax(axis=1)
    rest = exps.copy()
    rest[rows, top] = 0
    log_sum = np.log1p(rest.sum(axis=1))
    loss = np.asarray((log_sum - shifted[rows, labels]).mean(), dtype=values.dtype)

    def _backward(ctx, grad):
        probs = ctx['exps'] / ctx['exps'].sum(axis=1, keepdims=True)
        probs[rows, labels] -= 1
        probs *= grad / num
        return [probs.reshape(ctx['shape'])]

    return record('softmax_xent', [logits], loss, _backward, {'exps': exps, 'shape': logits.shape})


@_batched
def temporal_subsample(x, stride):
    """
    Keep every stride-th frame, starting from frame 0.
    """
    if stride == 1:
        return x

    def _backward(ctx, grad):
        full = np.zeros(ctx, dtype=grad.dtype)
        full[:, :, ::stride] = grad
        return [full]
    return record('temporal_subsample', [x], np.ascontiguousarray(x.values[:, :, ::stride]), _backward, x.shape)


def constant(values, dtype=None):
    return Tensor(values, requires_grad=False, dtype=dtype)
