#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0

"""
Synthetic image and video sources.

Images show one shape class (times an intensity band) on a noisy background. Clips show
a shape of the same renderer moving with a per-class constant velocity; the clip label is
shape * directions + direction. Shapes live on a torus so that the position of a shape in
any single frame is uniform whatever its direction.

Every example is a pure function of (seed, split, source id, index).
"""

import zlib

import numpy as np

from unidual.common import exceptions
from unidual.common.constants import Modality, Sections, Split
from unidual.common.dict_class import DictClass


def _grid(size):
    r = (size - 1) / 2.0
    y, x = np.mgrid[0:size, 0:size]
    return y - r, x - r, r


def _square(size):
    y, x, r = _grid(size)
    return (np.abs(y) <= 0.8 * r) & (np.abs(x) <= 0.8 * r)


def _disc(size):
    y, x, r = _grid(size)
    return y ** 2 + x ** 2 <= r ** 2


def _cross(size):
    y, x, r = _grid(size)
    return (np.abs(y) <= 0.3 * r) | (np.abs(x) <= 0.3 * r)


def _triangle(size):
    y, x, r = _grid(size)
    return np.abs(x) <= (y + r) / 2.0


def _diamond(size):
    y, x, r = _grid(size)
    return np.abs(x) + np.abs(y) <= r


def _ring(size):
    y, x, r = _grid(size)
    d2 = y ** 2 + x ** 2
    return (d2 <= r ** 2) & (d2 >= (0.5 * r) ** 2)


SHAPES = {'square': _square, 'disc': _disc, 'cross': _cross, 'triangle': _triangle,
          'diamond': _diamond, 'ring': _ring}


class SourceSpec(DictClass):
    """
    One data source. Image sources have len(shapes) * bands classes, video sources
    len(shapes) * directions.
    """

    def __init__(self, source_id='image', modality=Modality.Image, shapes=None, bands=1, directions=4,
                 speed=1.5, noise=0.05, weight=1.0, shape_size=9, image_size=32, clip_len=8,
                 video_len=0, frame_stride=1, crop_margin=4, in_channels=1):
        self.source_id = source_id
        self.modality = modality
        self.shapes = list(shapes) if shapes is not None else ['square', 'disc', 'cross', 'triangle']
        self.bands = bands
        self.directions = directions
        self.speed = speed
        self.noise = noise
        self.weight = weight
        self.shape_size = shape_size
        self.image_size = image_size
        self.clip_len = clip_len
        self.video_len = video_len
        self.frame_stride = frame_stride
        self.crop_margin = crop_margin
        self.in_channels = in_channels

    @property
    def num_classes(self):
        if self.modality == Modality.Image:
            return len(self.shapes) * self.bands
        return len(self.shapes) * self.directions

    @property
    def canvas_size(self):
        return self.image_size + self.crop_margin

    def validate(self):
        unknown = [s for s in self.shapes if s not in SHAPES]
        if unknown or not self.shapes:
            raise exceptions.ConfigError("Unknown shapes for source %s" % self.source_id, shapes=unknown,
                                         choices=sorted(SHAPES.keys()))
        if self.weight < 0:
            raise exceptions.ConfigError("Source %s has a negative weight" % self.source_id)
        if self.modality == Modality.Video and (self.directions < 2 or self.directions % 2):
            raise exceptions.ConfigError("Source %s needs an even number of directions" % self.source_id)
        if self.bands < 1 or self.shape_size > self.canvas_size or self.crop_margin < 0:
            raise exceptions.ConfigError("Source %s has inconsistent sizes" % self.source_id)
        if self.frame_stride < 1 or (self.video_len and self.video_len < self.clip_len):
            raise exceptions.ConfigError("Source %s needs frame_stride >= 1 and video_len >= clip_len"
                                         % self.source_id)
        return self


class ImageExample(object):
    def __init__(self, pixels, label, source_id, shape=None):
        self.pixels = pixels
        self.label = label
        self.source_id = source_id
        self.shape = shape

    @property
    def modality(self):
        return Modality.Image


class ClipExample(object):
    def __init__(self, pixels, label, source_id, shape=None, direction=None):
        self.pixels = pixels
        self.label = label
        self.source_id = source_id
        self.shape = shape
        self.direction = direction

    @property
    def modality(self):
        return Modality.Video

    @property
    def length(self):
        return self.pixels.shape[1]


def example_rng(seed, split, source_id, index):
    split_code = 0 if Split.parse(split) == Split.Train else 1
    return np.random.default_rng([int(seed), split_code, zlib.crc32(source_id.encode('utf-8')), int(index)])


def velocity_table(directions, speed):
    """
    Velocities (vy, vx) in pixels per frame; direction d + n/2 is exactly -v_d.
    """
    half = directions // 2
    angles = 2 * np.pi * np.arange(half) / directions
    first = np.stack([speed * np.sin(angles), speed * np.cos(angles)], axis=1)
    return np.concatenate([first, -first], axis=0)


def opposite_direction(direction, directions):
    return (direction + directions // 2) % directions


def band_intensity(band, bands):
    if bands == 1:
        return 1.0
    return 0.4 + 0.6 * band / (bands - 1)


def render_shape(shape, size, canvas_size, position, intensity=1.0):
    """
    Draw a shape with its patch corner at a real-valued (y, x) position on a torus.
    The fractional part is rendered by a bilinear splat of the integer-placed shape.
    """
    canvas = np.zeros((canvas_size, canvas_size))
    canvas[:size, :size] = SHAPES[shape](size) * intensity
    iy, ix = int(np.floor(position[0])), int(np.floor(position[1]))
    fy, fx = position[0] - iy, position[1] - ix
    placed = np.roll(canvas, (iy % canvas_size, ix % canvas_size), axis=(0, 1))
    down = np.roll(placed, 1, axis=0)
    return ((1 - fy) * (1 - fx) * placed + (1 - fy) * fx * np.roll(placed, 1, axis=1)
            + fy * (1 - fx) * down + fy * fx * np.roll(down, 1, axis=1))


def _finish(frames, source, rng, split):
    """
    frames: L x S x S noise-free canvases -> C x L x H x W pixels in [0, 1] after noise and crop.
    """
    length, canvas = frames.shape[0], source.canvas_size
    pixels = np.repeat(frames[None], source.in_channels, axis=0)
    if source.noise > 0:
        pixels = pixels + source.noise * rng.standard_normal(pixels.shape)
    margin = source.crop_margin
    if Split.parse(split) == Split.Train:
        top, left = rng.integers(0, margin + 1, size=2)
    else:
        top = left = margin // 2
    pixels = pixels[:, :, top:top + source.image_size, left:left + source.image_size]
    return np.ascontiguousarray(np.clip(pixels, 0.0, 1.0))


def gen_shape_image(source, seed, index, split=Split.Train):
    """
    Render one image example.

    :returns: ImageExample with C x 1 x H x W pixels.
    """
    rng = example_rng(seed, split, source.source_id, index)
    label = int(rng.integers(source.num_classes))
    shape, band = divmod(label, source.bands)
    position = rng.uniform(0, source.canvas_size, size=2)
    frame = render_shape(source.shapes[shape], source.shape_size, source.canvas_size, position,
                         band_intensity(band, source.bands))
    return ImageExample(_finish(frame[None], source, rng, split), label, source.source_id, shape)


def _motion_frames(source, rng, starts, length, split):
    label = int(rng.integers(source.num_classes))
    shape, direction = divmod(label, source.directions)
    velocity = velocity_table(source.directions, source.speed)[direction] * source.frame_stride
    origin = rng.uniform(0, source.canvas_size, size=2)
    start = starts(rng)
    frames = np.stack([render_shape(source.shapes[shape], source.shape_size, source.canvas_size,
                                    origin + velocity * (start + f)) for f in range(length)])
    return ClipExample(_finish(frames, source, rng, split), label, source.source_id, shape, direction)


def gen_motion_clip(source, seed, index, split=Split.Train):
    """
    Render one clip of source.clip_len frames. When the source declares video_len T, the clip
    starts at a random frame of a T-frame video.

    :returns: ClipExample with C x L x H x W pixels.
    """
    rng = example_rng(seed, split, source.source_id, index)
    spare = max(source.video_len - source.clip_len, 0)
    return _motion_frames(source, rng, lambda r: int(r.integers(0, spare + 1)), source.clip_len, split)


def gen_motion_video(source, seed, index, length, split=Split.Eval):
    """
    Render a full video of length frames, from which evaluation cuts its clips.
    """
    if length < 1:
        raise exceptions.WrongParameterException("video length must be positive")
    rng = example_rng(seed, split, source.source_id, index)
    return _motion_frames(source, rng, lambda r: 0, length, split)


def generate(source, seed, index, split=Split.Train):
    if source.modality == Modality.Image:
        return gen_shape_image(source, seed, index, split)
    return gen_motion_clip(source, seed, index, split)


def sources_from_config(config):
    """
    Build the SourceSpecs of the [data] section.
    """
    sources = []
    for source_id in config.config_get_list(Sections.Data, 'sources'):
        modality = config.source_get(source_id, 'modality') or source_id
        try:
            modality = Modality.parse(modality)
        except ValueError:
            raise exceptions.ConfigError("Source %s needs data.%s.modality = image | video" % (source_id, source_id))
        source = SourceSpec(source_id=source_id, modality=modality,
                            shapes=config.source_get(source_id, 'shapes', 'list'),
                            bands=config.source_get(source_id, 'bands', 'int'),
                            directions=config.source_get(source_id, 'directions', 'int'),
                            speed=config.source_get(source_id, 'speed', 'float'),
                            noise=config.source_get(source_id, 'noise', 'float'),
                            weight=config.source_get(source_id, 'weight', 'float'),
                            shape_size=config.source_get(source_id, 'shape_size', 'int'),
                            image_size=config.config_get_int(Sections.Model, 'image_size'),
                            clip_len=config.config_get_int(Sections.Model, 'clip_len'),
                            video_len=config.source_get(source_id, 'video_len', 'int'),
                            frame_stride=config.source_get(source_id, 'frame_stride', 'int'),
                            crop_margin=config.source_get(source_id, 'crop_margin', 'int'),
                            in_channels=config.config_get_int(Sections.Model, 'in_channels'))
        sources.append(source.validate())
    if not sources:
        raise exceptions.ConfigError("data.sources is empty")
    return sources
