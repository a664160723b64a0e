#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0

"""
UDCK checkpoints.

Layout, little-endian:
    magic        4 bytes  b'UDCK'
    version      u32
    config       u32 length + JSON of the ModelConfig
    records      u32 count + records
    optimizer    u8 flag; when 1: u32 length + JSON meta, u32 count + records
A record is
    name         u16 length + utf-8
    dtype        u8 bytes per value (4 or 8)
    rank         u8
    extents      rank x u32
    count        u64 number of values
    payload      count values
Nothing may follow the optimizer section.
"""

import collections
import logging
import struct

import numpy as np

from unidual.common import exceptions
from unidual.common.constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from unidual.common.utils import json_dumps, json_loads
from unidual.models.config import ModelConfig
from unidual.models.network import Network


logger = logging.getLogger(__name__)

DTYPE_CODES = {4: np.dtype('<f4'), 8: np.dtype('<f8')}


class Checkpoint(object):
    """
    Named tensors in registry order, the model config and an optional optimizer snapshot
    ({'meta': dict, 'buffers': OrderedDict name -> array}).
    """

    def __init__(self, config=None, tensors=None, optimizer=None):
        self.config = config
        self.tensors = tensors if tensors is not None else collections.OrderedDict()
        self.optimizer = optimizer

    @classmethod
    def from_network(cls, net, optimizer=None):
        tensors = collections.OrderedDict((p.name, p.values.copy()) for p in net.registry)
        return cls(net.config, tensors, optimizer.to_snapshot() if optimizer is not None else None)

    def names(self):
        return list(self.tensors.keys())

    def to_bytes(self):
        chunks = [CHECKPOINT_MAGIC, struct.pack('<I', CHECKPOINT_VERSION)]
        config = json_dumps(self.config).encode('utf-8')
        chunks += [struct.pack('<I', len(config)), config]
        chunks += _pack_records(self.tensors)
        if self.optimizer is None:
            chunks.append(struct.pack('<B', 0))
        else:
            meta = json_dumps(self.optimizer['meta']).encode('utf-8')
            chunks += [struct.pack('<B', 1), struct.pack('<I', len(meta)), meta]
            chunks += _pack_records(self.optimizer['buffers'])
        return b''.join(chunks)

    @classmethod
    def from_bytes(cls, data):
        reader = _Reader(data)
        magic = reader.take(4, 'magic')
        if magic != CHECKPOINT_MAGIC:
            raise exceptions.BadMagic(magic=magic)
        version = reader.unpack('<I', 'version')
        if version != CHECKPOINT_VERSION:
            raise exceptions.UnsupportedVersion(version=version, supported=CHECKPOINT_VERSION)
        length = reader.unpack('<I', 'config')
        try:
            config = json_loads(reader.take(length, 'config').decode('utf-8'))
        except (ValueError, TypeError, AttributeError, exceptions.WrongParameterException) as error:
            raise exceptions.CorruptRecord(record='config', error=str(error))
        if not isinstance(config, ModelConfig):
            raise exceptions.CorruptRecord(record='config', error='not a model config: %s' % type(config).__name__)
        tensors = _unpack_records(reader)
        optimizer = None
        if reader.unpack('<B', 'optimizer'):
            length = reader.unpack('<I', 'optimizer')
            try:
                meta = json_loads(reader.take(length, 'optimizer').decode('utf-8'))
            except ValueError as error:
                raise exceptions.CorruptRecord(record='optimizer', error=str(error))
            optimizer = {'meta': meta, 'buffers': _unpack_records(reader)}
        if not reader.at_end():
            raise exceptions.CorruptRecord(record='trailing data', bytes=reader.remaining())
        return cls(config, tensors, optimizer)

    def write(self, path):
        with open(path, 'wb') as f:
            f.write(self.to_bytes())
        logger.debug("wrote %s tensors to %s" % (len(self.tensors), path))

    @classmethod
    def read(cls, path):
        with open(path, 'rb') as f:
            return cls.from_bytes(f.read())


class _Reader(object):
    def __init__(self, data):
        self.data = data
        self.offset = 0

    def take(self, size, record):
        if self.offset + size > len(self.data):
            raise exceptions.CorruptRecord(record=record, reason='truncated')
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt, record):
        values = struct.unpack(fmt, self.take(struct.calcsize(fmt), record))
        return values[0] if len(values) == 1 else values

    def remaining(self):
        return len(self.data) - self.offset

    def at_end(self):
        return self.offset == len(self.data)


def _pack_records(tensors):
    chunks = [struct.pack('<I', len(tensors))]
    for name, values in tensors.items():
        encoded = name.encode('utf-8')
        values = np.asarray(values)
        width = values.dtype.itemsize
        if width not in DTYPE_CODES:
            raise exceptions.CheckpointException("Unsupported dtype %s" % values.dtype, record=name)
        chunks.append(struct.pack('<H', len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack('<BB', width, values.ndim))
        chunks.append(struct.pack('<%sI' % values.ndim, *values.shape))
        chunks.append(struct.pack('<Q', values.size))
        chunks.append(values.astype(DTYPE_CODES[width], copy=False).tobytes())
    return chunks


def _unpack_records(reader):
    tensors = collections.OrderedDict()
    count = reader.unpack('<I', 'record count')
    for index in range(count):
        length = reader.unpack('<H', 'record %s' % index)
        try:
            name = reader.take(length, 'record %s' % index).decode('utf-8')
        except UnicodeDecodeError:
            raise exceptions.CorruptRecord(record='record %s' % index, reason='name is not utf-8')
        width, rank = reader.unpack('<BB', name)
        if width not in DTYPE_CODES:
            raise exceptions.CorruptRecord(record=name, reason='dtype code %s' % width)
        extents = reader.unpack('<%sI' % rank, name) if rank else ()
        extents = tuple(extents) if isinstance(extents, tuple) else (extents,)
        values_count = reader.unpack('<Q', name)
        if values_count != int(np.prod(extents, dtype=np.int64)):
            raise exceptions.CorruptRecord(record=name, extents=list(extents), values=values_count)
        payload = reader.take(values_count * width, name)
        if name in tensors:
            raise exceptions.CorruptRecord(record=name, reason='duplicated name')
        tensors[name] = np.frombuffer(payload, dtype=DTYPE_CODES[width]).reshape(extents).copy()
    return tensors


def apply_checkpoint(net, ckpt, strict=True, skip_prefixes=()):
    """
    Copy checkpoint tensors into a network.

    :param strict: every network parameter not skipped must be present in the checkpoint.
    :param skip_prefixes: records and parameters whose names start with any of these are left alone.

    :raises UnknownTensor: a record names no parameter of the network.
    :raises ExtentMismatch: a record's extents differ from its parameter.
    """
    skip_prefixes = tuple(skip_prefixes)
    for name, values in ckpt.tensors.items():
        if skip_prefixes and name.startswith(skip_prefixes):
            continue
        if name not in net.registry:
            raise exceptions.UnknownTensor(record=name)
        param = net.registry[name]
        if param.shape != values.shape:
            raise exceptions.ExtentMismatch(record=name, expected=list(param.shape), got=list(values.shape))
    if strict:
        for param in net.registry:
            if skip_prefixes and param.name.startswith(skip_prefixes):
                continue
            if param.name not in ckpt.tensors:
                raise exceptions.CheckpointException("Checkpoint lacks a network parameter", record=param.name)
    for name, values in ckpt.tensors.items():
        if skip_prefixes and name.startswith(skip_prefixes):
            continue
        net.registry[name].values = np.array(values, dtype=net.dtype, copy=True)
    return net


def save_checkpoint(net, path, optimizer=None):
    ckpt = Checkpoint.from_network(net, optimizer)
    ckpt.write(path)
    return ckpt


def read_checkpoint(path):
    return Checkpoint.read(path)


def network_from_checkpoint(ckpt):
    return apply_checkpoint(Network(ckpt.config), ckpt)


def load_checkpoint(path):
    """
    Rebuild the network saved at path.
    """
    return network_from_checkpoint(read_checkpoint(path))
