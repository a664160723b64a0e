#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0

"""
Evaluation protocols.

A model is anything with predict(pixels, head, modality) -> N x K logits.
Accuracies are fractions in [0, 1].
"""

import logging

from concurrent import futures

import numpy as np

from unidual.autograd.functional import softmax
from unidual.common import exceptions
from unidual.common.constants import Modality, ScoreAverage, Split
from unidual.data.synth import gen_motion_video, gen_shape_image


logger = logging.getLogger(__name__)


def top_k_hits(logits, labels, k):
    """
    Whether each label is among the k largest logits, ties to the lower index.
    """
    k = min(k, logits.shape[1])
    columns = np.arange(logits.shape[1])
    hits = np.zeros(len(labels), dtype=bool)
    for i, (row, label) in enumerate(zip(logits, labels)):
        order = np.lexsort((columns, -row))
        hits[i] = label in order[:k]
    return hits


def clip_starts(video_len, clip_len, num_clips):
    """
    num_clips start offsets evenly spaced over [0, video_len - clip_len].
    """
    if video_len < clip_len:
        raise exceptions.WrongParameterException("video length %s is shorter than the clip length %s"
                                                 % (video_len, clip_len))
    return np.round(np.linspace(0, video_len - clip_len, num_clips)).astype(int)


def _map(fn, items, num_threads):
    if num_threads > 1:
        with futures.ThreadPoolExecutor(max_workers=num_threads) as executor:
            return list(executor.map(fn, items))
    return [fn(item) for item in items]


def _chunks(count, size):
    return [list(range(start, min(start + size, count))) for start in range(0, count, size)]


class ImageMetrics(object):
    def __init__(self, top1, top5, count):
        self.top1 = top1
        self.top5 = top5
        self.count = count

    def __repr__(self):
        return 'top1=%.4f top5=%.4f (%s images)' % (self.top1, self.top5, self.count)


class VideoMetrics(object):
    def __init__(self, clip1, video1, clip5, count):
        self.clip1 = clip1
        self.video1 = video1
        self.clip5 = clip5
        self.count = count

    def __repr__(self):
        return 'clip1=%.4f video1=%.4f clip5=%.4f (%s videos)' % (self.clip1, self.video1, self.clip5, self.count)


def evaluate_image(model, source, num_images=500, seed=12345, batch_size=32, head=None, num_threads=1):
    """
    top-1 and top-5 (k = min(5, K)) over freshly generated evaluation images.
    """
    head = head or '%s_main' % source.source_id

    def _score(indices):
        examples = [gen_shape_image(source, seed, i, Split.Eval) for i in indices]
        logits = model.predict(np.stack([e.pixels for e in examples]), head, Modality.Image)
        labels = np.array([e.label for e in examples])
        return top_k_hits(logits, labels, 1), top_k_hits(logits, labels, 5)

    results = _map(_score, _chunks(num_images, batch_size), num_threads)
    top1 = np.concatenate([r[0] for r in results])
    top5 = np.concatenate([r[1] for r in results])
    metrics = ImageMetrics(float(top1.mean()), float(top5.mean()), len(top1))
    logger.debug("%s: %s" % (source.source_id, metrics))
    return metrics


def evaluate_video(model, source, num_videos=200, num_clips=10, video_len=16, seed=12345, batch_size=32,
                   score_average=ScoreAverage.Softmax, head=None, num_threads=1):
    """
    clip@1, video@1 and clip@5 over freshly generated evaluation videos of video_len frames.
    video@1 takes the arg-max of the per-clip scores averaged over num_clips evenly spaced clips.
    """
    head = head or '%s_main' % source.source_id
    starts = clip_starts(video_len, source.clip_len, num_clips)
    average_softmax = ScoreAverage.parse(score_average) == ScoreAverage.Softmax
    videos_per_batch = max(1, batch_size // num_clips)

    def _score(indices):
        videos = [gen_motion_video(source, seed, i, video_len, Split.Eval) for i in indices]
        clips = np.stack([v.pixels[:, s:s + source.clip_len] for v in videos for s in starts])
        logits = model.predict(clips, head, Modality.Video)
        labels = np.array([v.label for v in videos])
        clip_labels = np.repeat(labels, num_clips)
        scores = softmax(logits) if average_softmax else logits
        averaged = scores.reshape(len(videos), num_clips, -1).mean(axis=1)
        return (top_k_hits(logits, clip_labels, 1), top_k_hits(logits, clip_labels, 5),
                averaged.argmax(axis=1) == labels)

    results = _map(_score, _chunks(num_videos, videos_per_batch), num_threads)
    clip1 = np.concatenate([r[0] for r in results])
    clip5 = np.concatenate([r[1] for r in results])
    video1 = np.concatenate([r[2] for r in results])
    metrics = VideoMetrics(float(clip1.mean()), float(video1.mean()), float(clip5.mean()), len(video1))
    logger.debug("%s: %s" % (source.source_id, metrics))
    return metrics
