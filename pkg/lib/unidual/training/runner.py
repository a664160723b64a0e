#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0

"""
Training runs: the epoch loop, per-epoch evaluation, metrics CSV and checkpoints.
"""

import csv
import logging
import os
import time

import numpy as np

from unidual.common import exceptions
from unidual.common.constants import Modality, ScoreAverage, Sections
from unidual.common.utils import make_dirs
from unidual.data.stream import MixedStream
from unidual.data.synth import sources_from_config
from unidual.models.config import TaskSpec, model_config_from_run_config
from unidual.models.network import Network
from unidual.surgery.checkpoint import apply_checkpoint, read_checkpoint, save_checkpoint
from unidual.training.engine import AUX, MAIN, TrainingPlan, train_step
from unidual.training.evaluation import evaluate_image, evaluate_video
from unidual.training.optimizer import OptimizerState
from unidual.training.schedule import Schedule, lr_at
from unidual.training.variants import get_variant


CSV_HEADER = ['epoch', 'lr', 'loss_img', 'loss_vid', 'loss_aux_img', 'loss_aux_vid',
              'top1', 'top5', 'clip1', 'video1', 'seconds']


class EvalSettings(object):
    def __init__(self, num_images=500, num_videos=200, num_clips=10, video_len=16, seed=12345, batch_size=32,
                 score_average=ScoreAverage.Softmax, num_threads=1, every_epoch=True):
        self.num_images = num_images
        self.num_videos = num_videos
        self.num_clips = num_clips
        self.video_len = video_len
        self.seed = seed
        self.batch_size = batch_size
        self.score_average = score_average
        self.num_threads = num_threads
        self.every_epoch = every_epoch

    @staticmethod
    def from_run_config(config):
        try:
            score_average = ScoreAverage.parse(config.config_get(Sections.Eval, 'score_average'))
        except ValueError as error:
            raise exceptions.ConfigError(str(error))
        return EvalSettings(num_images=config.config_get_int(Sections.Eval, 'num_images'),
                            num_videos=config.config_get_int(Sections.Eval, 'num_videos'),
                            num_clips=config.config_get_int(Sections.Eval, 'num_clips'),
                            video_len=config.config_get_int(Sections.Eval, 'video_len'),
                            seed=config.config_get_int(Sections.Eval, 'seed'),
                            batch_size=config.config_get_int(Sections.Eval, 'batch_size'),
                            score_average=score_average,
                            num_threads=config.config_get_int(Sections.Eval, 'num_threads'),
                            every_epoch=config.config_get_bool(Sections.Eval, 'every_epoch'))


def evaluate_sources(model, sources, settings):
    """
    Evaluate the main head of every source.

    :returns: dict source_id -> ImageMetrics or VideoMetrics.
    """
    results = {}
    for source in sources:
        if source.modality == Modality.Image:
            results[source.source_id] = evaluate_image(model, source, settings.num_images, settings.seed,
                                                       settings.batch_size, num_threads=settings.num_threads)
        else:
            results[source.source_id] = evaluate_video(model, source, settings.num_videos, settings.num_clips,
                                                       settings.video_len, settings.seed, settings.batch_size,
                                                       settings.score_average, num_threads=settings.num_threads)
    return results


class EpochRecord(object):
    def __init__(self, epoch, lr, losses=None, evaluation=None, seconds=None):
        self.epoch = epoch
        self.lr = lr
        self.losses = losses or {}
        self.evaluation = evaluation or {}
        self.seconds = seconds


class RunMetrics(object):
    """
    One record per completed epoch, laid out as CSV columns.

    The first image source fills loss_img, loss_aux_img, top1 and top5; the first video
    source fills loss_vid, loss_aux_vid, clip1 and video1. With more than two sources clip5
    and the columns of the further sources come after seconds.
    """

    def __init__(self, sources):
        self.records = []
        self.primary = {}
        for modality in (Modality.Image, Modality.Video):
            for source in sources:
                if source.modality == modality:
                    self.primary[modality] = source.source_id
                    break
        self.extra_sources = [s for s in sources if s.source_id not in self.primary.values()]
        self.header = list(CSV_HEADER)
        if self.extra_sources and Modality.Video in self.primary:
            self.header.append('clip5')
        for source in self.extra_sources:
            self.header += ['loss_%s' % source.source_id, 'loss_aux_%s' % source.source_id]
            if source.modality == Modality.Image:
                self.header += ['top1_%s' % source.source_id, 'top5_%s' % source.source_id]
            else:
                self.header += ['clip1_%s' % source.source_id, 'video1_%s' % source.source_id,
                                'clip5_%s' % source.source_id]

    def append(self, record):
        self.records.append(record)

    def row(self, record):
        values = dict((column, '') for column in self.header)
        values['epoch'] = record.epoch
        values['lr'] = repr(float(record.lr))
        if record.seconds is not None:
            values['seconds'] = '%.3f' % record.seconds

        def _fill(source_id, names):
            for kind, column in [(MAIN, names[0]), (AUX, names[1])]:
                if (kind, source_id) in record.losses:
                    values[column] = repr(float(record.losses[(kind, source_id)]))
            metrics = record.evaluation.get(source_id)
            if metrics is None:
                return
            for attribute, column in zip(['top1', 'top5', 'clip1', 'video1', 'clip5'], names[2:]):
                if column in values and hasattr(metrics, attribute):
                    values[column] = repr(float(getattr(metrics, attribute)))

        if Modality.Image in self.primary:
            _fill(self.primary[Modality.Image], ['loss_img', 'loss_aux_img', 'top1', 'top5', None, None, None])
        if Modality.Video in self.primary:
            _fill(self.primary[Modality.Video], ['loss_vid', 'loss_aux_vid', None, None, 'clip1', 'video1', 'clip5'])
        for source in self.extra_sources:
            sid = source.source_id
            _fill(sid, ['loss_%s' % sid, 'loss_aux_%s' % sid, 'top1_%s' % sid, 'top5_%s' % sid,
                        'clip1_%s' % sid, 'video1_%s' % sid, 'clip5_%s' % sid])
        return [values[column] for column in self.header]

    def last(self, column):
        if not self.records:
            return None
        return self.row(self.records[-1])[self.header.index(column)]


def read_metrics_csv(path):
    with open(path, 'r', newline='') as f:
        return list(csv.DictReader(f))


def median_over_runs(paths, columns=('top1', 'top5', 'clip1', 'video1')):
    """
    Median over runs of the final-epoch value of each column; empty columns are skipped.
    """
    finals = [read_metrics_csv(path)[-1] for path in paths]
    summary = {}
    for column in columns:
        values = [float(row[column]) for row in finals if row.get(column)]
        if values:
            summary[column] = float(np.median(values))
    return summary


class Trainer(object):
    """
    Runs the epoch loop of one training variant.
    """

    def __init__(self, net, plan, sources, schedule, epochs, epoch_size, batch_size, out_dir,
                 eval_settings=None, optimizer=None, data_seed=1, checkpoint_every_epoch=False,
                 record_seconds=False, log_every=50):
        self.net = net
        self.plan = plan
        self.sources = sources
        self.schedule = schedule
        self.epochs = epochs
        self.epoch_size = epoch_size
        self.batch_size = batch_size
        self.out_dir = out_dir
        self.eval_settings = eval_settings or EvalSettings()
        self.optimizer = optimizer or OptimizerState()
        self.data_seed = data_seed
        self.checkpoint_every_epoch = checkpoint_every_epoch
        self.record_seconds = record_seconds
        self.log_every = log_every
        self.metrics = RunMetrics(sources)
        self.logger = logging.getLogger(self.get_class_name())

    def get_class_name(self):
        return self.__class__.__name__

    @property
    def steps_per_epoch(self):
        return max(1, self.epoch_size // self.batch_size)

    @property
    def metrics_path(self):
        return os.path.join(self.out_dir, 'metrics.csv')

    @property
    def checkpoint_path(self):
        return os.path.join(self.out_dir, 'final.udck')

    def write_row(self, record, header=False):
        with open(self.metrics_path, 'w' if header else 'a', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            if header:
                writer.writerow(self.metrics.header)
            else:
                writer.writerow(self.metrics.row(record))

    def run(self):
        make_dirs(self.out_dir)
        self.write_row(None, header=True)
        stream = MixedStream(self.sources, self.batch_size, self.data_seed)
        steps = self.steps_per_epoch
        for epoch in range(self.epochs):
            started = time.time()
            sums, counts = {}, {}
            for step in range(steps):
                lr = lr_at(self.schedule, epoch + step / float(steps))
                batch = stream.next_batch()
                losses = train_step(self.net, self.plan, batch, self.optimizer, lr)
                for key, value in losses.items():
                    sums[key] = sums.get(key, 0.0) + value
                    counts[key] = counts.get(key, 0) + 1
                if self.log_every and batch.step % self.log_every == 0:
                    self.logger.debug("epoch %s step %s: %s" % (epoch + 1, batch.step, losses['total']))

            evaluation = {}
            if self.eval_settings.every_epoch or epoch == self.epochs - 1:
                evaluation = evaluate_sources(self.net, self.sources, self.eval_settings)
            record = EpochRecord(epoch + 1, lr_at(self.schedule, epoch),
                                 dict((key, sums[key] / counts[key]) for key in sums), evaluation,
                                 time.time() - started if self.record_seconds else None)
            self.metrics.append(record)
            self.write_row(record)
            self.logger.info("epoch %s/%s lr %.6f loss %.4f %s"
                             % (epoch + 1, self.epochs, record.lr, record.losses.get('total', float('nan')),
                                ' '.join('%s[%s]' % (k, v) for k, v in sorted(evaluation.items()))))
            if self.checkpoint_every_epoch:
                save_checkpoint(self.net, os.path.join(self.out_dir, 'epoch%s.udck' % (epoch + 1)), self.optimizer)

        ckpt = save_checkpoint(self.net, self.checkpoint_path, self.optimizer)
        self.logger.info("wrote %s and %s" % (self.metrics_path, self.checkpoint_path))
        return self.metrics, ckpt


def run_training(net, plan, sources, schedule, epochs, epoch_size, out_dir, batch_size=16, **kwargs):
    """
    Train net and write out_dir/metrics.csv and out_dir/final.udck.

    :returns: (RunMetrics, Checkpoint)
    """
    return Trainer(net, plan, sources, schedule, epochs, epoch_size, batch_size, out_dir, **kwargs).run()


def tasks_of(sources):
    return [TaskSpec(s.source_id, s.modality, s.num_classes) for s in sources]


def build_trainer(config, variant_name, out_dir, init_checkpoint=None):
    """
    Assemble a Trainer for a named variant from a RunConfig.
    """
    variant = get_variant(variant_name)
    sources = variant.select_sources(sources_from_config(config))
    model_config = model_config_from_run_config(config, tasks_of(sources), arch=variant.arch,
                                                aux_heads=variant.aux_heads, inflate_images=variant.inflate_images)
    net = Network(model_config)

    init_checkpoint = init_checkpoint or config.config_get(Sections.Train, 'init_checkpoint')
    if variant.needs_checkpoint and not init_checkpoint:
        raise exceptions.WrongParameterException("Variant %s needs train.init_checkpoint" % variant.name)
    if init_checkpoint:
        apply_checkpoint(net, read_checkpoint(init_checkpoint), strict=True, skip_prefixes=('head.',))
        net.logger.info("initialized from %s, heads reinitialized" % init_checkpoint)

    frozen = tuple(config.config_get_list(Sections.Train, 'freeze'))
    if frozen:
        for param in net.parameters():
            if param.name.startswith(frozen):
                param.set_trainable(False)

    epochs = config.config_get_int(Sections.Train, 'epochs')
    return Trainer(net, TrainingPlan.from_run_config(config, variant.mode, sources), sources,
                   Schedule.from_run_config(config, epochs), epochs,
                   config.config_get_int(Sections.Train, 'epoch_size'),
                   config.config_get_int(Sections.Train, 'batch_size'), out_dir,
                   eval_settings=EvalSettings.from_run_config(config),
                   optimizer=OptimizerState(config.config_get_float(Sections.Train, 'momentum'),
                                            config.config_get_float(Sections.Train, 'weight_decay')),
                   data_seed=config.config_get_int(Sections.Data, 'seed'),
                   checkpoint_every_epoch=config.config_get_bool(Sections.Train, 'checkpoint_every_epoch'),
                   record_seconds=config.config_get_bool(Sections.Train, 'record_seconds'),
                   log_every=config.config_get_int(Sections.Train, 'log_every'))
