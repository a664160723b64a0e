#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0

"""
Mixed multi-source batches, image inflation and frame sampling.
"""

import logging

from concurrent import futures

import numpy as np

from unidual.common import exceptions
from unidual.common.constants import FrameStrategy, Split
from unidual.data.synth import ClipExample, ImageExample, generate


def inflate_image_to_clip(img, length):
    """
    Copy an image length times into a static clip.
    """
    if length < 1:
        raise exceptions.WrongParameterException("clip length must be >= 1, got %s" % length)
    return ClipExample(np.repeat(img.pixels, length, axis=1), img.label, img.source_id, img.shape)


def sample_aux_frame(clip, strategy=FrameStrategy.Random, seed=0):
    """
    One frame of a clip as an image carrying the clip label: frame floor(L/2) for the center
    strategy, a seeded uniform frame for the random one.
    """
    length = clip.pixels.shape[1]
    if FrameStrategy.parse(strategy) == FrameStrategy.Center:
        frame = length // 2
    else:
        frame = int(np.random.default_rng(seed).integers(length))
    return ImageExample(np.ascontiguousarray(clip.pixels[:, frame:frame + 1]), clip.label, clip.source_id, clip.shape)


def normalized_weights(sources):
    weights = np.array([float(s.weight) for s in sources])
    if len(weights) == 0:
        raise exceptions.WrongParameterException("A mixed stream needs at least one source")
    if np.any(weights < 0) or weights.sum() <= 0:
        raise exceptions.WrongParameterException("Source weights must be >= 0 with a positive sum",
                                                 weights=weights.tolist())
    return weights / weights.sum()


def sample_sources(sources, count, rng):
    """
    Source indices of count examples, drawn from the categorical distribution of the weights.
    """
    return rng.choice(len(sources), size=count, p=normalized_weights(sources))


def stack_pixels(examples):
    return np.stack([e.pixels for e in examples])


class SubBatch(object):
    """
    The examples of one source within a mixed batch.
    """

    def __init__(self, source, examples):
        self.source = source
        self.examples = examples

    @property
    def pixels(self):
        return stack_pixels(self.examples)

    @property
    def labels(self):
        return np.array([e.label for e in self.examples], dtype=np.int64)

    def __len__(self):
        return len(self.examples)


class MixedBatch(object):
    def __init__(self, step, sub_batches):
        self.step = step
        self.sub_batches = sub_batches

    def __len__(self):
        return sum(len(b) for b in self.sub_batches)

    def get(self, source_id):
        for sub_batch in self.sub_batches:
            if sub_batch.source.source_id == source_id:
                return sub_batch
        return None


class MixedStream(object):
    """
    Deterministic stream of mixed batches. The source of every example is drawn from the
    normalized weights; every source numbers its examples 0, 1, 2, ... in draw order.
    Examples may be rendered by worker threads; the (source, index) sequence is fixed by
    the sampler alone.
    """

    def __init__(self, sources, batch_size, seed, split=Split.Train, num_workers=1):
        if batch_size < 1:
            raise exceptions.WrongParameterException("batch size must be positive")
        self.sources = sources
        self.batch_size = batch_size
        self.seed = seed
        self.split = split
        self.num_workers = num_workers
        self.rng = np.random.default_rng([int(seed), 7])
        self.counters = [0] * len(sources)
        self.step = 0
        normalized_weights(sources)
        self.logger = logging.getLogger(self.get_class_name())

    def get_class_name(self):
        return self.__class__.__name__

    def draw(self, count):
        """
        The next count (source position, example index) assignments.
        """
        assignments = []
        for position in sample_sources(self.sources, count, self.rng):
            assignments.append((int(position), self.counters[position]))
            self.counters[position] += 1
        return assignments

    def _render(self, assignment):
        position, index = assignment
        return generate(self.sources[position], self.seed, index, self.split)

    def next_batch(self):
        assignments = self.draw(self.batch_size)
        if self.num_workers > 1:
            with futures.ThreadPoolExecutor(max_workers=self.num_workers) as executor:
                examples = list(executor.map(self._render, assignments))
        else:
            examples = [self._render(a) for a in assignments]

        sub_batches = []
        for position, source in enumerate(self.sources):
            picked = [e for (p, _), e in zip(assignments, examples) if p == position]
            if picked:
                sub_batches.append(SubBatch(source, picked))
        batch = MixedBatch(self.step, sub_batches)
        self.step += 1
        self.logger.debug("batch %s: %s" % (batch.step, dict((b.source.source_id, len(b)) for b in sub_batches)))
        return batch

    def __iter__(self):
        return self

    def __next__(self):
        return self.next_batch()

    next = __next__


def mixed_batch_stream(sources, batch_size, seed, split=Split.Train, num_workers=1):
    return MixedStream(sources, batch_size, seed, split, num_workers)
