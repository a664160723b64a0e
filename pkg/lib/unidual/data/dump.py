#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0

"""
PGM/PPM dumps of examples and feature maps.
"""

import os

import numpy as np
from PIL import Image

from unidual.common.utils import make_dirs


def to_uint8(values, normalize=False):
    values = np.asarray(values, dtype=np.float64)
    if normalize:
        low, high = values.min(), values.max()
        values = (values - low) / (high - low) if high > low else np.zeros_like(values)
    return np.ascontiguousarray(np.round(np.clip(values, 0.0, 1.0) * 255).astype(np.uint8))


def write_frame(path, frame, normalize=False):
    """
    Write a C x H x W frame: one channel as PGM, three channels as PPM.
    """
    frame = np.asarray(frame)
    if frame.ndim == 3 and frame.shape[0] == 1:
        frame = frame[0]
    if frame.ndim == 2:
        image = Image.fromarray(to_uint8(frame, normalize))
    else:
        image = Image.fromarray(to_uint8(frame[:3].transpose(1, 2, 0), normalize))
    image.save(path, format='PPM')
    return path


def frame_extension(pixels):
    return 'pgm' if pixels.shape[0] == 1 else 'ppm'


def dump_example(example, out_dir, prefix):
    """
    Write every frame of an example; returns the written paths.
    """
    make_dirs(out_dir)
    pixels = example.pixels
    ext = frame_extension(pixels)
    paths = []
    for f in range(pixels.shape[1]):
        name = '%s.%s' % (prefix, ext) if pixels.shape[1] == 1 else '%s_f%02d.%s' % (prefix, f, ext)
        paths.append(write_frame(os.path.join(out_dir, name), pixels[:, f]))
    return paths


def dump_feature_map(feature_map, path):
    """
    Write the middle frame of an L x H x W feature map, scaled to its own range.
    """
    return write_frame(path, feature_map[feature_map.shape[0] // 2], normalize=True)
