#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0


"""
Test schedules, the optimizer, loss routing, evaluation and training runs.
"""

import os
import shutil
import tempfile
import unittest

import numpy as np

from unidual.autograd.tensor import Parameter
from unidual.common import exceptions
from unidual.common.config import RunConfig
from unidual.common.constants import (BlockKind, Modality, NormMode, ParamGroup, ScheduleKind, ScoreAverage, Sections,
                                      Split, TrainMode)
from unidual.common.utils import setup_logging
from unidual.data.stream import MixedBatch, SubBatch
from unidual.data.synth import gen_motion_clip, gen_motion_video, gen_shape_image, sources_from_config
from unidual.models.config import model_config_from_run_config
from unidual.models.network import Network
from unidual.surgery.checkpoint import load_checkpoint, save_checkpoint
from unidual.training import engine, evaluation, runner
from unidual.training.optimizer import OptimizerState, sgd_step
from unidual.training.schedule import Schedule, lr_at
from unidual.training.variants import VARIANTS, get_variant
from unidual.tests.common import (get_config_path, get_image_source, get_model_config, get_video_source,
                                  slow_tests_enabled)

setup_logging(__name__)


def mixed_batch(step=0, num_images=3, num_clips=2):
    sub_batches = []
    if num_images:
        source = get_image_source()
        sub_batches.append(SubBatch(source, [gen_shape_image(source, 0, i) for i in range(num_images)]))
    if num_clips:
        source = get_video_source()
        sub_batches.append(SubBatch(source, [gen_motion_clip(source, 0, i) for i in range(num_clips)]))
    return MixedBatch(step, sub_batches)


def gradient_of(param):
    return param.grad if param.grad is not None else np.zeros_like(param.values)


def group_gradient_norms(net):
    norms = dict((group, 0.0) for group in ParamGroup)
    for param in net.parameters():
        if param.grad is not None:
            norms[param.group] += float(np.abs(param.grad).sum())
    return norms


class OracleModel(object):
    """
    Answers with one-hot logits of the true label of every known input.
    """

    def __init__(self, num_classes):
        self.num_classes = num_classes
        self.labels = {}

    def learn(self, pixels, label):
        self.labels[np.ascontiguousarray(pixels).tobytes()] = label

    def predict(self, pixels, head, modality):
        logits = np.zeros((len(pixels), self.num_classes))
        for i, example in enumerate(pixels):
            logits[i, self.labels[np.ascontiguousarray(example).tobytes()]] = 1.0
        return logits


class RandomLogitModel(object):
    def __init__(self, num_classes, seed=0):
        self.num_classes = num_classes
        self.rng = np.random.default_rng(seed)

    def predict(self, pixels, head, modality):
        return self.rng.standard_normal((len(pixels), self.num_classes))


class TestSchedule(unittest.TestCase):

    def test_step_table(self):
        """ Schedule: step decay by 10 every 10 epochs """
        schedule = Schedule(ScheduleKind.WarmupStep, base_lr=0.1, warmup_epochs=0, total_epochs=40,
                            step_every=10, decay_factor=10).validate()
        for epoch, expected in [(0, 0.1), (9.99, 0.1), (10, 0.01), (20, 0.001), (30, 0.0001), (39.5, 0.0001)]:
            self.assertAlmostEqual(lr_at(schedule, epoch), expected, places=12)

    def test_warmup(self):
        """ Schedule: linear warm-up from base_lr times the start factor """
        schedule = Schedule(ScheduleKind.WarmupStep, base_lr=0.1, warmup_epochs=5, total_epochs=45,
                            step_every=10, decay_factor=10, warmup_start_factor=0.1).validate()
        self.assertAlmostEqual(lr_at(schedule, 0), 0.01, places=12)
        self.assertAlmostEqual(lr_at(schedule, 2.5), 0.055, places=12)
        self.assertAlmostEqual(lr_at(schedule, 5), 0.1, places=12)
        self.assertAlmostEqual(lr_at(schedule, 15), 0.01, places=12)

    def test_cosine(self):
        """ Schedule: cosine from base_lr to zero after the warm-up """
        schedule = Schedule(ScheduleKind.WarmupCosine, base_lr=0.2, warmup_epochs=0, total_epochs=10).validate()
        self.assertAlmostEqual(lr_at(schedule, 0), 0.2, places=12)
        self.assertAlmostEqual(lr_at(schedule, 5), 0.1, places=12)
        self.assertLess(lr_at(schedule, 9.9), 0.001)

    def test_errors(self):
        """ Schedule: invalid schedules and epochs """
        with self.assertRaises(exceptions.ScheduleError):
            Schedule(warmup_epochs=10, total_epochs=10).validate()
        with self.assertRaises(exceptions.ScheduleError):
            Schedule(base_lr=0).validate()
        with self.assertRaises(exceptions.ScheduleError):
            Schedule(step_every=0).validate()
        schedule = Schedule(warmup_epochs=0, total_epochs=10).validate()
        with self.assertRaises(exceptions.ScheduleError):
            lr_at(schedule, 10)
        with self.assertRaises(exceptions.ScheduleError):
            lr_at(schedule, -0.5)

    def test_from_run_config(self):
        """ Schedule: built from the [train] section """
        config = RunConfig.load(get_config_path())
        schedule = Schedule.from_run_config(config)
        self.assertEqual(schedule.kind, ScheduleKind.WarmupStep)
        self.assertEqual(schedule.total_epochs, 2)
        self.assertEqual(schedule.warmup_epochs, 1)
        config.set(Sections.Train, 'schedule', 'sawtooth')
        with self.assertRaises(exceptions.ScheduleError):
            Schedule.from_run_config(config)


class TestOptimizer(unittest.TestCase):

    def make_param(self, values, name='w'):
        param = Parameter(name, np.array(values, dtype=np.float64), ParamGroup.Shared)
        return param

    def test_momentum(self):
        """ Optimizer: momentum accumulates the velocity """
        param = self.make_param([1.0, 2.0])
        state = OptimizerState(momentum=0.9, weight_decay=0.0)
        param.tensor.grad = np.array([0.5, 0.5])
        sgd_step([param], state, 0.1)
        np.testing.assert_allclose(param.values, [0.95, 1.95], rtol=0, atol=1e-15)
        self.assertIsNone(param.grad)
        param.tensor.grad = np.array([0.5, 0.5])
        sgd_step([param], state, 0.1)
        np.testing.assert_allclose(param.values, [0.855, 1.855], rtol=0, atol=1e-15)
        self.assertEqual(state.steps, 2)

    def test_weight_decay(self):
        """ Optimizer: weight decay shrinks the weights """
        param = self.make_param([2.0])
        param.tensor.grad = np.zeros(1)
        sgd_step([param], OptimizerState(momentum=0.0, weight_decay=0.1), 0.5)
        np.testing.assert_allclose(param.values, [1.9], rtol=0, atol=1e-15)

    def test_skips(self):
        """ Optimizer: parameters without gradient or frozen are left alone """
        idle, frozen = self.make_param([1.0], 'idle'), self.make_param([1.0], 'frozen')
        frozen.tensor.grad = np.ones(1)
        frozen.set_trainable(False)
        sgd_step([idle, frozen], OptimizerState(weight_decay=0.1), 0.1)
        self.assertEqual(idle.values.tolist(), [1.0])
        self.assertEqual(frozen.values.tolist(), [1.0])

    def test_non_finite_gradient(self):
        """ Optimizer: a NaN gradient names the parameter and nothing is updated """
        first, second = self.make_param([1.0], 'first'), self.make_param([1.0], 'second')
        first.tensor.grad = np.ones(1)
        second.tensor.grad = np.array([np.nan])
        with self.assertRaises(exceptions.NonFiniteGradient) as context:
            sgd_step([first, second], OptimizerState(), 0.1)
        self.assertEqual(context.exception.kwargs['parameter'], 'second')
        self.assertEqual(first.values.tolist(), [1.0])

    def test_snapshot(self):
        """ Optimizer: snapshots restore the velocity buffers """
        param = self.make_param([1.0, 2.0])
        state = OptimizerState(momentum=0.5, weight_decay=0.0)
        param.tensor.grad = np.ones(2)
        sgd_step([param], state, 0.1)
        restored = OptimizerState.from_snapshot(state.to_snapshot())
        self.assertEqual((restored.momentum, restored.steps), (0.5, 1))
        np.testing.assert_array_equal(restored.buffers['w'], state.buffers['w'])


class TestVariants(unittest.TestCase):

    def test_variants(self):
        """ Variants: every variant names its architecture and mode """
        self.assertEqual(sorted(VARIANTS), ['finetune_image', 'finetune_video', 'r2d', 'r2d_multitask', 'r2p1d',
                                            'r2p1d_multitask', 'unidual', 'unidual_aux'])
        self.assertEqual(get_variant('unidual_aux').arch, BlockKind.UNIDUAL)
        self.assertTrue(get_variant('unidual_aux').aux_heads)
        self.assertEqual(get_variant('r2p1d').mode, TrainMode.SeparateVideo)
        with self.assertRaises(exceptions.WrongParameterException):
            get_variant('r3d')

    def test_select_sources(self):
        """ Variants: sources are picked by modality """
        sources = [get_image_source(), get_video_source()]
        self.assertEqual([s.source_id for s in get_variant('r2d').select_sources(sources)], ['image'])
        self.assertEqual(len(get_variant('unidual').select_sources(sources)), 2)
        with self.assertRaises(exceptions.ConfigError):
            get_variant('unidual').select_sources(sources[:1])
        with self.assertRaises(exceptions.ConfigError):
            get_variant('r2p1d').select_sources(sources[:1])


class TestEngine(unittest.TestCase):

    def test_loss_routing(self):
        """ Engine: main and auxiliary terms of every sub-batch """
        net = Network(get_model_config(aux_heads=True))
        terms = engine.compute_losses(net, engine.TrainingPlan(TrainMode.UniDualAux), mixed_batch())
        self.assertEqual(list(terms.keys()), [('main', 'image'), ('aux', 'image'), ('main', 'video'), ('aux', 'video')])
        for weight, loss in terms.values():
            self.assertEqual(weight, 1.0)
            self.assertEqual(loss.size, 1)

        terms = engine.compute_losses(net, engine.TrainingPlan(TrainMode.UniDual), mixed_batch())
        self.assertEqual(list(terms.keys()), [('main', 'image'), ('main', 'video')])

    def test_loss_weights(self):
        """ Engine: the total is the weighted sum of the terms """
        net = Network(get_model_config())
        plan = engine.TrainingPlan(TrainMode.UniDual, loss_weights={'image': 2.0})
        terms = engine.compute_losses(net, plan, mixed_batch())
        expected = 2.0 * terms[('main', 'image')][1].item() + terms[('main', 'video')][1].item()
        self.assertAlmostEqual(engine.total_loss(terms).item(), expected, places=12)

    def test_separate_mode_mismatch(self):
        """ Engine: a separate image model refuses video sub-batches """
        net = Network(get_model_config(BlockKind.R2D))
        with self.assertRaises(exceptions.ModalityMismatch):
            engine.compute_losses(net, engine.TrainingPlan(TrainMode.SeparateImage), mixed_batch())
        terms = engine.compute_losses(net, engine.TrainingPlan(TrainMode.SeparateImage), mixed_batch(num_clips=0))
        self.assertEqual(list(terms.keys()), [('main', 'image')])

    def test_aux_frames(self):
        """ Engine: auxiliary frames depend on the step only """
        plan = engine.TrainingPlan(TrainMode.UniDualAux, seed=4)
        sub_batch = mixed_batch().sub_batches[1]
        first = [f.pixels for f in engine.aux_frames(sub_batch, plan, 3)]
        again = [f.pixels for f in engine.aux_frames(sub_batch, plan, 3)]
        for a, b in zip(first, again):
            np.testing.assert_array_equal(a, b)
        self.assertEqual(first[0].shape, (1, 1, 8, 8))

    def test_image_step_keeps_video_branch(self):
        """ Engine: an image-only step leaves the video branches and head untouched """
        net = Network(get_model_config())
        video_params = [p for p in net.parameters() if p.group in (ParamGroup.VideoBranch, ParamGroup.HeadVideo)]
        before = [p.values.copy() for p in video_params]
        shared = net.registry['stem.spatial.weight'].values.copy()
        image_branch = net.registry['stem.image_branch.weight'].values.copy()
        losses = engine.train_step(net, engine.TrainingPlan(TrainMode.UniDual), mixed_batch(num_clips=0),
                                   OptimizerState(), 0.1)
        self.assertIn('total', losses)
        for param, values in zip(video_params, before):
            np.testing.assert_array_equal(param.values, values)
        self.assertFalse(np.array_equal(net.registry['stem.spatial.weight'].values, shared))
        self.assertFalse(np.array_equal(net.registry['stem.image_branch.weight'].values, image_branch))
        self.assertTrue(all(p.grad is None for p in net.parameters()))

    def test_aux_image_batch_reaches_video_branch(self):
        """ Engine: an image-only batch of the auxiliary mode trains the video branches """
        net = Network(get_model_config(aux_heads=True))
        engine.accumulate_gradients(net, engine.TrainingPlan(TrainMode.UniDualAux), mixed_batch(num_clips=0))
        norms = group_gradient_norms(net)
        self.assertGreater(norms[ParamGroup.VideoBranch], 0.0)
        self.assertGreater(norms[ParamGroup.HeadAuxImage], 0.0)
        self.assertEqual(norms[ParamGroup.HeadVideo], 0.0)

        net.zero_grad()
        engine.accumulate_gradients(net, engine.TrainingPlan(TrainMode.UniDual), mixed_batch(num_clips=0))
        self.assertEqual(group_gradient_norms(net)[ParamGroup.VideoBranch], 0.0)

    def test_group_routing(self):
        """ Engine: every loss term reaches the branches and heads of its pathway only """
        expected = {
            'image': {ParamGroup.Shared: True, ParamGroup.ImageBranch: True, ParamGroup.VideoBranch: True,
                      ParamGroup.HeadImage: True, ParamGroup.HeadVideo: False, ParamGroup.HeadAuxImage: True,
                      ParamGroup.HeadAuxVideo: False},
            'video': {ParamGroup.Shared: True, ParamGroup.ImageBranch: True, ParamGroup.VideoBranch: True,
                      ParamGroup.HeadImage: False, ParamGroup.HeadVideo: True, ParamGroup.HeadAuxImage: False,
                      ParamGroup.HeadAuxVideo: True},
        }
        batches = {'image': mixed_batch(num_clips=0), 'video': mixed_batch(num_images=0)}
        for source_id, batch in batches.items():
            net = Network(get_model_config(aux_heads=True))
            engine.accumulate_gradients(net, engine.TrainingPlan(TrainMode.UniDualAux), batch)
            norms = group_gradient_norms(net)
            for group, reached in expected[source_id].items():
                self.assertEqual(norms[group] > 0.0, reached, '%s %s' % (source_id, group.value))

        net = Network(get_model_config(aux_heads=True))
        plan = engine.TrainingPlan(TrainMode.UniDualAux, loss_weights={'image': 0.0, 'video': 0.0},
                                   aux_loss_weights={'image': 1.0, 'video': 0.0})
        engine.accumulate_gradients(net, plan, mixed_batch())
        norms = group_gradient_norms(net)
        self.assertGreater(norms[ParamGroup.HeadAuxImage], 0.0)
        self.assertGreater(norms[ParamGroup.VideoBranch], 0.0)
        for group in (ParamGroup.HeadImage, ParamGroup.HeadVideo, ParamGroup.HeadAuxVideo, ParamGroup.ImageBranch):
            self.assertEqual(norms[group], 0.0, group.value)

    def test_gradients_linear_in_weights(self):
        """ Engine: gradients are the weighted sum of the per-task gradients """
        def gradients(weights):
            net = Network(get_model_config())
            engine.accumulate_gradients(net, engine.TrainingPlan(TrainMode.UniDual, loss_weights=weights),
                                        mixed_batch())
            return dict((p.name, gradient_of(p)) for p in net.parameters())

        image = gradients({'image': 1.0, 'video': 0.0})
        video = gradients({'image': 0.0, 'video': 1.0})
        mixed = gradients({'image': 2.0, 'video': 0.5})
        for name, grad in mixed.items():
            np.testing.assert_allclose(grad, 2.0 * image[name] + 0.5 * video[name], rtol=1e-9, atol=1e-12,
                                       err_msg=name)
        self.assertTrue(np.any(image['stem.spatial.weight'] != 0))
        self.assertTrue(np.any(video['stem.spatial.weight'] != 0))

    def test_joint_update_is_sum(self):
        """ Engine: a joint step moves the shared convs by the sum of the per-pathway steps """
        def delta(batch):
            net = Network(get_model_config())
            before = dict((p.name, p.values.copy()) for p in net.parameters())
            engine.train_step(net, engine.TrainingPlan(TrainMode.UniDual), batch,
                              OptimizerState(momentum=0.0, weight_decay=0.0), 0.1)
            return dict((p.name, p.values - before[p.name]) for p in net.parameters())

        joint = delta(mixed_batch())
        image = delta(mixed_batch(num_clips=0))
        video = delta(mixed_batch(num_images=0))
        shared = [p.name for p in Network(get_model_config()).parameters() if p.group == ParamGroup.Shared]
        self.assertIn('stem.spatial.weight', shared)
        for name in shared:
            np.testing.assert_allclose(joint[name], image[name] + video[name], rtol=1e-9, atol=1e-12, err_msg=name)
        self.assertFalse(np.allclose(image['stem.spatial.weight'], 0.0))
        self.assertFalse(np.allclose(video['stem.spatial.weight'], 0.0))

    def test_non_finite_loss(self):
        """ Engine: a NaN forward names the step """
        net = Network(get_model_config())
        net.registry['head.image_main.weight'].values[...] = np.nan
        with self.assertRaises(exceptions.NonFiniteLoss) as context:
            engine.accumulate_gradients(net, engine.TrainingPlan(TrainMode.UniDual), mixed_batch(step=7))
        self.assertEqual(context.exception.kwargs['step'], 7)

    def test_plan_from_config(self):
        """ Engine: loss weights need one entry per source """
        config = RunConfig.load(get_config_path())
        sources = sources_from_config(config)
        config.set(Sections.Train, 'loss_weights', '1.0,0.5')
        plan = engine.TrainingPlan.from_run_config(config, TrainMode.UniDualAux, sources)
        self.assertEqual(plan.weight('main', 'video'), 0.5)
        self.assertEqual(plan.weight('aux', 'video'), 1.0)
        config.set(Sections.Train, 'loss_weights', '1.0')
        with self.assertRaises(exceptions.ConfigError):
            engine.TrainingPlan.from_run_config(config, TrainMode.UniDualAux, sources)


class TestEvaluation(unittest.TestCase):

    def test_top_k_hits(self):
        """ Evaluation: ties go to the lower class """
        logits = np.zeros((2, 3))
        self.assertEqual(evaluation.top_k_hits(logits, [0, 1], 1).tolist(), [True, False])
        self.assertEqual(evaluation.top_k_hits(logits, [2, 1], 5).tolist(), [True, True])
        self.assertEqual(evaluation.top_k_hits(np.array([[0.1, 0.7, 0.2]]), [2], 2).tolist(), [True])

    def test_clip_starts(self):
        """ Evaluation: evenly spaced clip offsets """
        self.assertEqual(evaluation.clip_starts(16, 8, 3).tolist(), [0, 4, 8])
        self.assertEqual(evaluation.clip_starts(4, 4, 3).tolist(), [0, 0, 0])
        with self.assertRaises(exceptions.WrongParameterException):
            evaluation.clip_starts(3, 4, 2)

    def test_single_clip_videos(self):
        """ Evaluation: with videos as long as a clip, video@1 equals clip@1 """
        net = Network(get_model_config())
        source = get_video_source()
        for average in (ScoreAverage.Softmax, ScoreAverage.Logits):
            metrics = evaluation.evaluate_video(net, source, num_videos=12, num_clips=3, video_len=4,
                                                batch_size=6, score_average=average)
            self.assertEqual(metrics.count, 12)
            self.assertEqual(metrics.video1, metrics.clip1)
            self.assertGreaterEqual(metrics.clip5, metrics.clip1)

    def test_oracle(self):
        """ Evaluation: a model that knows every answer scores 1.0 """
        image_source, video_source = get_image_source(), get_video_source()
        oracle = OracleModel(8)
        for index in range(10):
            image = gen_shape_image(image_source, 12345, index, Split.Eval)
            oracle.learn(image.pixels, image.label)
            video = gen_motion_video(video_source, 12345, index, 8, Split.Eval)
            for start in evaluation.clip_starts(8, 4, 3):
                oracle.learn(video.pixels[:, start:start + 4], video.label)
        image_metrics = evaluation.evaluate_image(oracle, image_source, num_images=10, batch_size=4)
        self.assertEqual((image_metrics.top1, image_metrics.top5, image_metrics.count), (1.0, 1.0, 10))
        video_metrics = evaluation.evaluate_video(oracle, video_source, num_videos=10, num_clips=3, video_len=8,
                                                  batch_size=6, num_threads=2)
        self.assertEqual((video_metrics.clip1, video_metrics.video1, video_metrics.clip5), (1.0, 1.0, 1.0))

    def test_random_logits(self):
        """ Evaluation: a model with random logits scores chance top-1 """
        model = RandomLogitModel(4, seed=11)
        metrics = evaluation.evaluate_image(model, get_image_source(), num_images=2000, batch_size=100)
        self.assertEqual(metrics.count, 2000)
        self.assertAlmostEqual(metrics.top1, 0.25, delta=0.03)
        self.assertEqual(metrics.top5, 1.0)

    def test_threads(self):
        """ Evaluation: worker threads give the same numbers """
        net = Network(get_model_config())
        source = get_image_source()
        single = evaluation.evaluate_image(net, source, num_images=20, batch_size=6)
        threaded = evaluation.evaluate_image(net, source, num_images=20, batch_size=6, num_threads=3)
        self.assertEqual((single.top1, single.top5), (threaded.top1, threaded.top5))

    def test_threaded_eval_keeps_running_stats(self):
        """ Evaluation: threaded eval of a training-mode network leaves the batch statistics alone """
        net = Network(get_model_config(norm=NormMode.Batch)).train()
        batch = mixed_batch()
        for sub_batch in batch.sub_batches:
            task = net.config.get_task(sub_batch.source.source_id)
            net.forward_pathway(sub_batch.pixels, task.main_head(), task.modality)
        stats = [(p.name, p.values.copy()) for p in net.parameters()
                 if 'running' in p.name or 'num_batches' in p.name]
        self.assertTrue(stats)
        self.assertTrue(all(values[0] > 0 for name, values in stats if 'num_batches' in name))

        source = get_image_source()
        runs = [evaluation.evaluate_image(net, source, num_images=32, batch_size=1, num_threads=8) for _ in range(3)]
        video = evaluation.evaluate_video(net, get_video_source(), num_videos=6, num_clips=2, video_len=6,
                                          batch_size=2, num_threads=4)
        self.assertEqual(video.count, 6)
        self.assertTrue(net.training)
        for name, values in stats:
            np.testing.assert_array_equal(net.registry[name].values, values, err_msg=name)
        self.assertEqual(set((m.top1, m.top5) for m in runs), set([(runs[0].top1, runs[0].top5)]))

        pixels = batch.sub_batches[0].pixels
        np.testing.assert_array_equal(net.predict(pixels, 'image_main'), net.predict(pixels, 'image_main'))
        self.assertTrue(net.training)


class TestRunMetrics(unittest.TestCase):

    def test_header(self):
        """ Run metrics: fixed columns, extra columns only for further sources """
        two = runner.RunMetrics([get_image_source(), get_video_source()])
        self.assertEqual(two.header, runner.CSV_HEADER)
        three = runner.RunMetrics([get_image_source(), get_video_source(), get_video_source(source_id='slow')])
        self.assertEqual(three.header[len(runner.CSV_HEADER):],
                         ['clip5', 'loss_slow', 'loss_aux_slow', 'clip1_slow', 'video1_slow', 'clip5_slow'])
        single = runner.RunMetrics([get_video_source()])
        self.assertEqual(single.header, runner.CSV_HEADER)

    def test_row(self):
        """ Run metrics: values of the primary sources """
        metrics = runner.RunMetrics([get_image_source(), get_video_source()])
        record = runner.EpochRecord(1, 0.05, {('main', 'image'): 1.5, ('aux', 'video'): 0.25, 'total': 2.0},
                                    {'image': evaluation.ImageMetrics(0.5, 0.75, 8)})
        metrics.append(record)
        row = dict(zip(metrics.header, metrics.row(record)))
        self.assertEqual(row['epoch'], 1)
        self.assertEqual(row['lr'], '0.05')
        self.assertEqual(row['loss_img'], '1.5')
        self.assertEqual(row['loss_aux_vid'], '0.25')
        self.assertEqual(row['loss_vid'], '')
        self.assertEqual((row['top1'], row['top5']), ('0.5', '0.75'))
        self.assertEqual((row['clip1'], row['seconds']), ('', ''))
        self.assertEqual(metrics.last('top5'), '0.75')

    def test_median_over_runs(self):
        """ Run metrics: medians of final epochs """
        tmp_dir = tempfile.mkdtemp()
        try:
            paths = []
            for run, top1 in enumerate([0.2, 0.6, 0.4]):
                path = os.path.join(tmp_dir, 'run%s.csv' % run)
                with open(path, 'w') as f:
                    f.write(','.join(runner.CSV_HEADER) + '\n')
                    f.write('1,0.1,,,,,0.1,0.5,,,\n')
                    f.write('2,0.1,,,,,%s,0.9,,,\n' % top1)
                paths.append(path)
            summary = runner.median_over_runs(paths)
            self.assertAlmostEqual(summary['top1'], 0.4)
            self.assertAlmostEqual(summary['top5'], 0.9)
            self.assertNotIn('clip1', summary)
        finally:
            shutil.rmtree(tmp_dir)


class TestRunner(unittest.TestCase):

    def setUp(self):
        self.tmp_dir = tempfile.mkdtemp()
        self.config = RunConfig.load(get_config_path())

    def tearDown(self):
        shutil.rmtree(self.tmp_dir)

    def test_run(self):
        """ Runner: a tiny run writes the metrics and a loadable checkpoint """
        out_dir = os.path.join(self.tmp_dir, 'run')
        metrics, ckpt = runner.build_trainer(self.config, 'unidual_aux', out_dir).run()
        with open(os.path.join(out_dir, 'metrics.csv')) as f:
            lines = f.read().splitlines()
        self.assertEqual(lines[0], ','.join(runner.CSV_HEADER))
        self.assertEqual(len(lines), 3)
        self.assertEqual([r.epoch for r in metrics.records], [1, 2])
        self.assertTrue(metrics.last('loss_aux_vid'))
        self.assertTrue(0.0 <= float(metrics.last('video1')) <= 1.0)
        self.assertEqual(metrics.last('seconds'), '')

        net = load_checkpoint(os.path.join(out_dir, 'final.udck'))
        self.assertIn('video_aux_on_image_path', net.heads)
        self.assertEqual(ckpt.optimizer['meta']['steps'], 4)
        self.assertFalse(os.path.exists(os.path.join(out_dir, 'epoch1.udck')))

    def test_reproducible(self):
        """ Runner: two runs of one config write identical files """
        outputs = []
        for name in ('a', 'b'):
            out_dir = os.path.join(self.tmp_dir, name)
            runner.build_trainer(self.config, 'unidual', out_dir).run()
            with open(os.path.join(out_dir, 'metrics.csv'), 'rb') as f, \
                    open(os.path.join(out_dir, 'final.udck'), 'rb') as g:
                outputs.append((f.read(), g.read()))
        self.assertEqual(outputs[0], outputs[1])

    def test_checkpoint_every_epoch(self):
        """ Runner: optional per-epoch checkpoints """
        self.config.set(Sections.Train, 'checkpoint_every_epoch', 'true')
        self.config.set(Sections.Train, 'epochs', '1')
        self.config.set(Sections.Train, 'warmup_epochs', '0')
        runner.build_trainer(self.config, 'r2p1d', self.tmp_dir).run()
        self.assertTrue(os.path.exists(os.path.join(self.tmp_dir, 'epoch1.udck')))

    def test_finetune(self):
        """ Runner: finetuning copies the trunk and needs a checkpoint """
        with self.assertRaises(exceptions.WrongParameterException):
            runner.build_trainer(self.config, 'finetune_image', self.tmp_dir)
        source = runner.build_trainer(self.config, 'r2d', self.tmp_dir).net
        path = os.path.join(self.tmp_dir, 'r2d.udck')
        save_checkpoint(source, path)
        self.config.set(Sections.Train, 'freeze', 'stem')
        trainer = runner.build_trainer(self.config, 'finetune_image', self.tmp_dir, init_checkpoint=path)
        np.testing.assert_array_equal(trainer.net.registry['stem.spatial.weight'].values,
                                      source.registry['stem.spatial.weight'].values)
        self.assertFalse(trainer.net.registry['stem.spatial.weight'].trainable)
        self.assertTrue(trainer.net.registry['stage1.unit1.block1.spatial.weight'].trainable)

    def test_evaluate_sources(self):
        """ Runner: every source is evaluated on its main head """
        trainer = runner.build_trainer(self.config, 'unidual', self.tmp_dir)
        results = runner.evaluate_sources(trainer.net, trainer.sources, trainer.eval_settings)
        self.assertEqual(sorted(results), ['image', 'video'])
        self.assertEqual(results['image'].count, 8)
        self.assertEqual(results['video'].count, 4)

    def test_final_checkpoint_reproduces_eval(self):
        """ Runner: the final checkpoint scores the numbers of the last metrics row """
        out_dir = os.path.join(self.tmp_dir, 'final')
        trainer = runner.build_trainer(self.config, 'unidual_aux', out_dir)
        metrics, _ = trainer.run()
        last = runner.read_metrics_csv(os.path.join(out_dir, 'metrics.csv'))[-1]
        loaded = load_checkpoint(os.path.join(out_dir, 'final.udck'))
        results = runner.evaluate_sources(loaded, trainer.sources, trainer.eval_settings)
        for column, value in [('top1', results['image'].top1), ('top5', results['image'].top5),
                              ('clip1', results['video'].clip1), ('video1', results['video'].video1)]:
            self.assertEqual(last[column], repr(float(value)), column)
            self.assertEqual(metrics.last(column), last[column])

    def test_run_training(self):
        """ Runner: run_training drives a hand built network, plan and schedule """
        sources = sources_from_config(self.config)
        net = Network(model_config_from_run_config(self.config, runner.tasks_of(sources), arch=BlockKind.UNIDUAL,
                                                   aux_heads=False))
        plan = engine.TrainingPlan.from_run_config(self.config, TrainMode.UniDual, sources)
        out_dir = os.path.join(self.tmp_dir, 'direct')
        metrics, ckpt = runner.run_training(net, plan, sources, Schedule.from_run_config(self.config, 2), 2, 16,
                                            out_dir, batch_size=8)
        self.assertEqual([r.epoch for r in metrics.records], [1, 2])
        self.assertEqual(ckpt.optimizer['meta']['steps'], 4)
        self.assertTrue(os.path.exists(os.path.join(out_dir, 'metrics.csv')))
        self.assertTrue(os.path.exists(os.path.join(out_dir, 'final.udck')))

    @unittest.skipIf(not slow_tests_enabled(), "set UNIDUAL_SLOW_TESTS=1 to run")
    def test_joint_training_learns(self):
        """ Runner (slow): joint training lowers the losses of both modalities """
        self.config.set(Sections.Train, 'epochs', '4')
        self.config.set(Sections.Train, 'epoch_size', '512')
        self.config.set(Sections.Eval, 'num_images', '200')
        self.config.set(Sections.Eval, 'num_videos', '100')
        metrics, _ = runner.build_trainer(self.config, 'unidual_aux', self.tmp_dir).run()
        first, last = metrics.records[0], metrics.records[-1]
        self.assertLess(last.losses['total'], first.losses['total'])
        self.assertEqual(last.evaluation['video'].count, 100)
        self.assertTrue(all(np.isfinite(list(r.losses.values())).all() for r in metrics.records))
        self.assertEqual(set(metrics.primary), set([Modality.Image, Modality.Video]))


class TestJointTraining(unittest.TestCase):
    """
    Joint training against the separately trained baselines, median over three seeds.
    """

    SEEDS = (1, 2, 3)

    def setUp(self):
        self.tmp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmp_dir)

    def median_of(self, variant):
        paths = []
        for seed in self.SEEDS:
            config = RunConfig.load(get_config_path())
            config.set(Sections.Model, 'seed', seed)
            config.set(Sections.Data, 'seed', seed)
            config.set(Sections.Train, 'epochs', '6')
            config.set(Sections.Train, 'epoch_size', '1024')
            config.set(Sections.Train, 'warmup_epochs', '1')
            config.set(Sections.Train, 'step_every', '4')
            config.set(Sections.Eval, 'num_images', '200')
            config.set(Sections.Eval, 'num_videos', '100')
            config.set(Sections.Eval, 'every_epoch', 'false')
            out_dir = os.path.join(self.tmp_dir, '%s_%s' % (variant, seed))
            runner.build_trainer(config, variant, out_dir).run()
            paths.append(os.path.join(out_dir, 'metrics.csv'))
        return runner.median_over_runs(paths)

    @unittest.skipIf(not slow_tests_enabled(), "set UNIDUAL_SLOW_TESTS=1 to run")
    def test_joint_against_separate(self):
        """ Joint training (slow): UniDual-Aux keeps up with the separate baselines on both tasks """
        separate_image = self.median_of('r2d')
        separate_video = self.median_of('r2p1d')
        joint = self.median_of('unidual')
        joint_aux = self.median_of('unidual_aux')

        self.assertGreaterEqual(separate_image['top1'], 0.9)
        self.assertGreaterEqual(separate_video['video1'], 0.9)
        self.assertGreaterEqual(joint_aux['top1'], separate_image['top1'] - 0.02)
        self.assertGreaterEqual(joint_aux['video1'], separate_video['video1'] - 0.02)
        self.assertGreaterEqual(joint_aux['video1'], joint['video1'])


if __name__ == '__main__':
    unittest.main()
