#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0


"""
Test networks, heads and activation inspection.
"""

import unittest

import numpy as np

from unidual.autograd import functional as F
from unidual.autograd.gradcheck import grad_check
from unidual.autograd.tensor import sum_tensors
from unidual.common import exceptions
from unidual.common.constants import BlockKind, Modality, NormMode
from unidual.common.utils import setup_logging
from unidual.models import inspection
from unidual.models.config import StageSpec, StemSpec, TaskSpec
from unidual.models.network import Network, build_network, forward_pathway, strip_aux_heads
from unidual.tests.common import get_model_config, get_three_stage_config, random_values

setup_logging(__name__)


def images(seed, n=2, size=8):
    return random_values(seed, n, 1, 1, size, size)


def clips(seed, n=2, length=4, size=8):
    return random_values(seed, n, 1, length, size, size)


def unidual_block_count(c_in, c_out, d=3, t=3):
    # spatial d x d conv with bias, 1-tap image branch, t-tap video branch
    return (c_out * c_in * d * d + c_out) + (c_out * c_out + c_out) + (c_out * c_out * t + c_out)


def unidual_parameter_count(in_channels, stem, stages, classes):
    total = unidual_block_count(in_channels, stem)
    channels = stem
    for units, out, stride in stages:
        for unit in range(units):
            total += unidual_block_count(channels, out) + unidual_block_count(out, out)
            if unit == 0 and (channels != out or stride > 1):
                total += out * channels + out
            channels = out
    return total + sum(k * channels + k for k in classes)


class TestNetwork(unittest.TestCase):

    def test_head_logits(self):
        """ Network: logits of main and auxiliary heads """
        net = build_network(get_model_config(aux_heads=True))
        self.assertEqual(sorted(net.heads), ['image_aux_on_video_path', 'image_main',
                                             'video_aux_on_image_path', 'video_main'])
        self.assertEqual(forward_pathway(net, images(1), 'image_main').shape, (2, 4))
        self.assertEqual(net.forward_pathway(images(1), 'image_aux_on_video_path').shape, (2, 4))
        self.assertEqual(net.forward_pathway(clips(2, n=3), 'video_main').shape, (3, 8))
        self.assertEqual(net.forward_pathway(clips(2, n=3), 'video_aux_on_image_path').shape, (3, 8))
        self.assertEqual(net.heads['image_aux_on_video_path'].pathway, Modality.Video)
        self.assertEqual(net.heads['video_aux_on_image_path'].pathway, Modality.Image)

    def test_deterministic_init(self):
        """ Network: the same config gives the same parameters in the same order """
        first, second = Network(get_model_config()), Network(get_model_config())
        self.assertEqual(first.registry.names(), second.registry.names())
        for (_, a), (_, b) in zip(first.named_values(), second.named_values()):
            np.testing.assert_array_equal(a, b)
        self.assertEqual(first.registry.names()[0], 'stem.spatial.weight')

    def test_prepare_input(self):
        """ Network: inputs are brought to the pathway of the head """
        net = Network(get_model_config(aux_heads=True))
        inflated, pathway = net.prepare_input(images(3), 'image_aux_on_video_path')
        self.assertEqual(pathway, Modality.Video)
        self.assertEqual(inflated.shape, (2, 1, 4, 8, 8))
        np.testing.assert_array_equal(inflated.values[:, :, 3], inflated.values[:, :, 0])

        video = clips(4, length=4)
        middle, pathway = net.prepare_input(video, 'video_aux_on_image_path')
        self.assertEqual(pathway, Modality.Image)
        np.testing.assert_array_equal(middle.values[:, :, 0], video[:, :, 2])

    def test_prepare_input_errors(self):
        """ Network: modality and shape errors """
        net = Network(get_model_config())
        with self.assertRaises(exceptions.ModalityMismatch):
            net.prepare_input(images(5), 'video_main')
        with self.assertRaises(exceptions.ModalityMismatch):
            net.prepare_input(clips(5), 'image_main')
        with self.assertRaises(exceptions.ModalityMismatch):
            net.prepare_input(clips(5, length=3), 'video_main')
        with self.assertRaises(exceptions.ModalityMismatch):
            net.prepare_input(random_values(5, 1, 8, 8), 'image_main')
        with self.assertRaises(exceptions.ModalityMismatch):
            net.forward_pathway(images(5), 'image_aux_on_video_path')

    def test_config_validation(self):
        """ Network: invalid model configs """
        with self.assertRaises(exceptions.ConfigError):
            Network(get_model_config(tasks=[TaskSpec('image', Modality.Image, 4)]))
        with self.assertRaises(exceptions.ConfigError):
            Network(get_model_config(BlockKind.R2D, aux_heads=True))
        with self.assertRaises(exceptions.ConfigError):
            Network(get_model_config(stages=[]))
        with self.assertRaises(exceptions.ConfigError):
            Network(get_model_config(temporal_kernel=2))

    def test_baselines(self):
        """ Network: R2D runs clips framewise, inflated images go through the video pathway """
        r2d = Network(get_model_config(BlockKind.R2D))
        self.assertEqual(r2d.forward_pathway(clips(6), 'video_main').shape, (2, 8))
        self.assertFalse(any('video_branch' in name for name in r2d.registry.names()))

        inflating = Network(get_model_config(BlockKind.R2P1D, inflate_images=True))
        self.assertEqual(inflating.heads['image_main'].pathway, Modality.Video)
        self.assertEqual(inflating.forward_pathway(images(6), 'image_main').shape, (2, 4))

    def test_strip_aux_heads(self):
        """ Network: stripping auxiliary heads keeps the main predictions """
        net = Network(get_model_config(aux_heads=True))
        stripped = strip_aux_heads(net)
        self.assertEqual(sorted(stripped.heads), ['image_main', 'video_main'])
        self.assertFalse(any('aux' in name for name in stripped.registry.names()))
        self.assertIs(stripped.registry['stem.spatial.weight'], net.registry['stem.spatial.weight'])
        np.testing.assert_array_equal(stripped.predict(clips(7), 'video_main'), net.predict(clips(7), 'video_main'))
        self.assertIn('video_aux_on_image_path', net.heads)
        plain = Network(get_model_config())
        self.assertIs(plain.strip_aux_heads(), plain)

    def test_parameter_count(self):
        """ Network: parameter count of a small UniDual network and of its stripped copy """
        stages = [(1, 8, 1), (1, 16, 2)]
        config = get_model_config(stem=StemSpec(channels=8), stages=[StageSpec(*s) for s in stages])
        net = Network(config)
        self.assertEqual(unidual_parameter_count(1, 8, stages, [4, 8]), 8012)
        self.assertEqual(net.num_parameters(), 8012)

        stages = [(2, 8, 1), (2, 16, 2), (1, 24, 2)]
        deeper = Network(get_model_config(stem=StemSpec(channels=8), stages=[StageSpec(*s) for s in stages]))
        self.assertEqual(deeper.num_parameters(), unidual_parameter_count(1, 8, stages, [4, 8]))

        with_aux = Network(get_model_config(stem=StemSpec(channels=8), stages=[StageSpec(1, 8, 1), StageSpec(1, 16, 2)],
                                            aux_heads=True))
        self.assertEqual(with_aux.num_parameters(), 8012 + (4 * 16 + 4) + (8 * 16 + 8))
        stripped = with_aux.strip_aux_heads()
        self.assertEqual(stripped.num_parameters(), 8012)
        self.assertLess(stripped.num_parameters(), with_aux.num_parameters())
        self.assertEqual(with_aux.num_parameters(), 8216)
        again = stripped.strip_aux_heads()
        self.assertIs(again, stripped)
        self.assertEqual(again.num_parameters(), 8012)
        self.assertEqual(again.registry.names(), net.registry.names())

    def test_shared_aux_image_head(self):
        """ Network: the auxiliary image head may reuse the main head parameters """
        net = Network(get_model_config(aux_heads=True, share_aux_image_head=True))
        self.assertNotIn('head.image_aux_on_video_path.weight', net.registry)
        self.assertEqual(net.heads['image_aux_on_video_path'].param_prefix, 'head.image_main')
        self.assertIn('head.video_aux_on_image_path.weight', net.registry)
        stripped = net.strip_aux_heads()
        self.assertIn('head.image_main.weight', stripped.registry)

    def test_predict_keeps_mode(self):
        """ Network: predict evaluates without recording and restores the mode """
        net = Network(get_model_config(norm=NormMode.Batch)).train()
        net.forward_pathway(images(8), 'image_main')
        logits = net.predict(images(8), 'image_main')
        self.assertIsInstance(logits, np.ndarray)
        self.assertTrue(net.training)
        self.assertTrue(all(p.grad is None for p in net.parameters()))

    def test_max_pool_stem(self):
        """ Network: the optional stem pooling halves the spatial size """
        net = Network(get_model_config(max_pool=True))
        inputs, pathway = net.prepare_input(images(9), 'image_main')
        self.assertEqual(net.trunk_forward(inputs, pathway).shape, (2, 6, 1, 2, 2))


class TestNetworkGradients(unittest.TestCase):

    def check_network(self, net, tol=1e-4):
        net.train()
        image_batch, video_batch = images(10), clips(11, length=net.config.clip_len)

        def loss():
            return sum_tensors([F.softmax_xent(net.forward_pathway(image_batch, 'image_main'), np.array([0, 3])),
                                F.softmax_xent(net.forward_pathway(video_batch, 'video_main'), np.array([5, 1]))])
        report = grad_check(loss, net.registry.trainable(), sample_size=8)
        self.assertLessEqual(report.max_error, tol, report.by_group())
        self.assertEqual(set(report.by_group()), set(['shared', 'image_branch', 'video_branch',
                                                      'head_image', 'head_video']))

    def test_three_stage_gradcheck(self):
        """ Network (gradcheck): three stage unidual network on both pathways """
        self.check_network(Network(get_three_stage_config(clip_len=4)))

    def test_batch_norm_gradcheck(self):
        """ Network (gradcheck): batch norm in training mode """
        self.check_network(Network(get_model_config(norm=NormMode.Batch)))


class TestInspection(unittest.TestCase):

    def test_rank_channels(self):
        """ Inspection: channels by peak activation, ties to the lower channel """
        order, peaks = inspection.rank_channels(np.array([[1.0, 0.5], [3.0, 0.0], [0.0, 3.0]]))
        self.assertEqual(list(order), [1, 2, 0])
        self.assertEqual(list(peaks), [1.0, 3.0, 3.0])

    def test_pathway_inputs(self):
        """ Inspection: both pathway inputs of an image and of a clip """
        image = random_values(12, 1, 1, 8, 8)
        inputs = inspection.pathway_inputs(image, 4)
        self.assertEqual(inputs[Modality.Image].shape, (1, 1, 1, 8, 8))
        self.assertEqual(inputs[Modality.Video].shape, (1, 1, 4, 8, 8))
        clip = random_values(13, 1, 5, 8, 8)
        inputs = inspection.pathway_inputs(clip, 5)
        np.testing.assert_array_equal(inputs[Modality.Image][0, :, 0], clip[:, 2])

    def test_top_activated_maps(self):
        """ Inspection: the same channels are reported for both pathways """
        net = Network(get_model_config())
        maps = inspection.top_activated_maps(net, random_values(14, 1, 1, 8, 8), k=3)
        image_maps, video_maps = maps[Modality.Image], maps[Modality.Video]
        self.assertEqual(len(image_maps), 3)
        self.assertEqual([m.channel for m in image_maps], [m.channel for m in video_maps])
        peaks = [m.peak for m in image_maps]
        self.assertEqual(peaks, sorted(peaks, reverse=True))
        self.assertEqual(image_maps[0].unit, 'stage2.unit1')
        self.assertEqual(image_maps[0].feature_map.shape, (1, 4, 4))
        self.assertEqual(video_maps[0].feature_map.shape, (4, 4, 4))
        self.assertFalse(net.training)

    def test_top_activated_maps_errors(self):
        """ Inspection: baselines, unit range and k """
        with self.assertRaises(exceptions.ConfigError):
            inspection.top_activated_maps(Network(get_model_config(BlockKind.R2D)), random_values(15, 1, 1, 8, 8))
        net = Network(get_model_config())
        with self.assertRaises(exceptions.WrongParameterException):
            inspection.top_activated_maps(net, random_values(15, 1, 1, 8, 8), unit_index=2)
        with self.assertRaises(exceptions.WrongParameterException):
            inspection.top_activated_maps(net, random_values(15, 1, 1, 8, 8), k=7)


if __name__ == '__main__':
    unittest.main()
