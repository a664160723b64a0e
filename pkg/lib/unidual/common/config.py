#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0

"""
Configurations.

A run is configured by a key = value file with the sections
[common], [model], [data], [train] and [eval]. Every key has a typed default
listed in OPTIONS. Keys describing a data source are written <source>.<field>
inside [data] and default to SOURCE_FIELDS.

configuration file looking for path, when none is given explicitly:
    1. $UNIDUAL_CONFIG
    2. $UNIDUAL_HOME/etc/unidual/unidual.cfg
    3. /etc/unidual/unidual.cfg
    4. $VIRTUAL_ENV/etc/unidual/unidual.cfg
"""


import collections
import os

try:
    import ConfigParser
except ImportError:
    import configparser as ConfigParser

from unidual.common import exceptions
from unidual.common.constants import Sections


Option = collections.namedtuple('Option', ['section', 'key', 'default', 'kind', 'help'])


OPTIONS = [
    Option(Sections.Common, 'loglevel', 'INFO', 'str', 'logging level'),
    Option(Sections.Common, 'logdir', '', 'str', 'directory for log files; empty logs to stderr'),

    Option(Sections.Model, 'arch', 'unidual', 'str', 'r2d | r2p1d | unidual (the --mode variant may override it)'),
    Option(Sections.Model, 'stem_channels', '16', 'int', 'output channels of the stem block'),
    Option(Sections.Model, 'stem_spatial_kernel', '3', 'int', 'spatial kernel d of the stem'),
    Option(Sections.Model, 'stem_temporal_kernel', '3', 'int', 'temporal kernel t of the stem'),
    Option(Sections.Model, 'stem_stride', '1', 'int', 'spatial stride of the stem'),
    Option(Sections.Model, 'stem_max_pool', 'false', 'bool', '1x3x3 spatial max pooling with stride 2 after the stem'),
    Option(Sections.Model, 'stages', '1@16,1@32,1@64', 'list', 'residual stages as units@channels'),
    Option(Sections.Model, 'stage_strides', '1,2,2', 'list', 'spatial stride of the first unit of every stage'),
    Option(Sections.Model, 'stage_temporal_strides', '1,1,1', 'list', 'temporal stride of the first unit of every stage'),
    Option(Sections.Model, 'spatial_kernel', '3', 'int', 'spatial kernel d of residual blocks'),
    Option(Sections.Model, 'temporal_kernel', '3', 'int', 'temporal kernel t of residual blocks'),
    Option(Sections.Model, 'mid_channels', '0', 'int', 'intermediate width M; 0 means the block output width'),
    Option(Sections.Model, 'clip_len', '8', 'int', 'clip length L'),
    Option(Sections.Model, 'image_size', '32', 'int', 'input height and width'),
    Option(Sections.Model, 'in_channels', '1', 'int', 'input channels (1 grey, 3 colour)'),
    Option(Sections.Model, 'norm', 'batch', 'str', 'none | batch'),
    Option(Sections.Model, 'norm_stats', 'per_pathway', 'str', 'per_pathway | shared running statistics'),
    Option(Sections.Model, 'bn_eps', '1e-5', 'float', 'batch norm epsilon'),
    Option(Sections.Model, 'bn_momentum', '0.1', 'float', 'batch norm running statistics momentum'),
    Option(Sections.Model, 'aux_heads', 'true', 'bool', 'build auxiliary heads (unidual only)'),
    Option(Sections.Model, 'share_aux_image_head', 'false', 'bool', 'reuse the main image head as the auxiliary image head'),
    Option(Sections.Model, 'inflate_images', 'false', 'bool', 'feed images as static clips (multitask variants)'),
    Option(Sections.Model, 'precision', '32', 'int', '32 | 64 bit floats'),
    Option(Sections.Model, 'seed', '0', 'int', 'initialization seed'),

    Option(Sections.Data, 'sources', 'image,video', 'list', 'source ids; fields are set as <source>.<field>'),
    Option(Sections.Data, 'seed', '1', 'int', 'seed of the mixed stream and of generated training examples'),

    Option(Sections.Train, 'mode', 'unidual_aux', 'str',
           'r2d | r2p1d | r2d_multitask | r2p1d_multitask | unidual | unidual_aux | finetune_image | finetune_video'),
    Option(Sections.Train, 'epochs', '5', 'int', 'number of epochs'),
    Option(Sections.Train, 'epoch_size', '20000', 'int', 'examples per epoch'),
    Option(Sections.Train, 'batch_size', '16', 'int', 'examples per step'),
    Option(Sections.Train, 'schedule', 'warmup_step', 'str', 'warmup_step | warmup_cosine'),
    Option(Sections.Train, 'base_lr', '0.05', 'float', 'base learning rate'),
    Option(Sections.Train, 'warmup_epochs', '1', 'float', 'linear warm-up epochs'),
    Option(Sections.Train, 'step_every', '2', 'float', 'epochs between decays (warmup_step)'),
    Option(Sections.Train, 'decay_factor', '10', 'float', 'learning rate divisor per decay (warmup_step)'),
    Option(Sections.Train, 'warmup_start_factor', '0.1', 'float', 'warm-up starts at base_lr times this factor'),
    Option(Sections.Train, 'momentum', '0.9', 'float', 'SGD momentum'),
    Option(Sections.Train, 'weight_decay', '1e-4', 'float', 'SGD weight decay'),
    Option(Sections.Train, 'loss_weights', '', 'list', 'main loss weight per source; empty means 1.0 each'),
    Option(Sections.Train, 'aux_loss_weights', '', 'list', 'auxiliary loss weight per source; empty means 1.0 each'),
    Option(Sections.Train, 'aux_frame', 'random', 'str', 'center | random frame for the video auxiliary loss'),
    Option(Sections.Train, 'freeze', '', 'list', 'parameter name prefixes kept frozen'),
    Option(Sections.Train, 'init_checkpoint', '', 'str', 'checkpoint to start from (finetune variants)'),
    Option(Sections.Train, 'checkpoint_every_epoch', 'false', 'bool', 'also write epoch<N>.udck after every epoch'),
    Option(Sections.Train, 'record_seconds', 'false', 'bool', 'write wall time into the metrics csv'),
    Option(Sections.Train, 'log_every', '50', 'int', 'steps between debug log lines'),

    Option(Sections.Eval, 'num_images', '500', 'int', 'evaluation images per image source'),
    Option(Sections.Eval, 'num_videos', '200', 'int', 'evaluation videos per video source'),
    Option(Sections.Eval, 'num_clips', '10', 'int', 'uniformly spaced clips per video'),
    Option(Sections.Eval, 'video_len', '16', 'int', 'frames T of an evaluation video'),
    Option(Sections.Eval, 'score_average', 'softmax', 'str', 'softmax | logits averaging for video@1'),
    Option(Sections.Eval, 'batch_size', '32', 'int', 'examples per evaluation forward'),
    Option(Sections.Eval, 'seed', '12345', 'int', 'seed of the evaluation examples'),
    Option(Sections.Eval, 'num_threads', '1', 'int', 'evaluation worker threads'),
    Option(Sections.Eval, 'every_epoch', 'true', 'bool', 'evaluate after every epoch, otherwise after the last one'),
]


SOURCE_FIELDS = [
    Option(Sections.Data, 'modality', '', 'str', 'image | video; defaults to the source id for the sources image and video'),
    Option(Sections.Data, 'shapes', 'square,disc,cross,triangle', 'list', 'shape classes shared by all sources'),
    Option(Sections.Data, 'bands', '1', 'int', 'intensity bands per shape (image sources)'),
    Option(Sections.Data, 'directions', '4', 'int', 'motion directions, even (video sources)'),
    Option(Sections.Data, 'speed', '1.5', 'float', 'pixels per frame (video sources)'),
    Option(Sections.Data, 'noise', '0.05', 'float', 'background noise standard deviation'),
    Option(Sections.Data, 'weight', '1.0', 'float', 'sampling rate weight in the mixed stream'),
    Option(Sections.Data, 'shape_size', '9', 'int', 'shape extent in pixels'),
    Option(Sections.Data, 'video_len', '0', 'int', 'frames of the video a training clip is cut from; 0 means exactly one clip'),
    Option(Sections.Data, 'frame_stride', '1', 'int', 'a clip takes every frame_stride-th frame'),
    Option(Sections.Data, 'crop_margin', '4', 'int',
           'extra canvas pixels cropped away (random for training, centre for evaluation)'),
]


def find_config_file():
    """
    Find the configuration file

    :returns: the path of the first existing file, or None.
    """
    if os.environ.get('UNIDUAL_CONFIG', None):
        return os.environ['UNIDUAL_CONFIG']

    configfiles = ['%s/etc/unidual/unidual.cfg' % os.environ.get('UNIDUAL_HOME', ''),
                   '/etc/unidual/unidual.cfg',
                   '%s/etc/unidual/unidual.cfg' % os.environ.get('VIRTUAL_ENV', '')]
    for configfile in configfiles:
        if os.path.exists(configfile):
            return configfile
    return None


def get_option(section, key):
    """
    Return the Option declaring a key, or None.
    """
    for option in OPTIONS:
        if option.section == section and option.key == key:
            return option
    if section == Sections.Data and '.' in key:
        field = key.split('.', 1)[1]
        for option in SOURCE_FIELDS:
            if option.key == field:
                return option
    return None


def format_config_help():
    """
    Return the listing of every configuration key with its default.
    """
    lines = ['configuration keys (section.key = default):']
    for option in OPTIONS:
        lines.append('  %s.%s = %s    # %s' % (option.section, option.key, option.default, option.help))
    for option in SOURCE_FIELDS:
        lines.append('  %s.<source>.%s = %s    # %s' % (Sections.Data, option.key, option.default, option.help))
    return '\n'.join(lines)


def split_list(value):
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return list(value)
    return [item.strip() for item in str(value).split(',') if item.strip()]


def new_parser():
    """
    A ConfigParser that keeps the case of keys, so source ids are matched as written.
    """
    parser = ConfigParser.ConfigParser(interpolation=None)
    parser.optionxform = str
    return parser


class RunConfig(object):
    """
    Typed access to a run configuration.
    """

    def __init__(self, parser=None):
        self.__config = parser if parser is not None else new_parser()
        self.path = None

    @classmethod
    def load(cls, path=None, overrides=None, search=True):
        """
        Load a configuration.

        :param path: the config file; when None the standard locations are searched.
        :param overrides: list of 'section.key=value' strings applied after the file.
        :param search: whether to search the standard locations when path is None.

        :returns: RunConfig.
        :raises WrongParameterException: unreadable file, malformed override or unknown key.
        """
        parser = new_parser()
        for section in [Sections.Common, Sections.Model, Sections.Data, Sections.Train, Sections.Eval]:
            parser.add_section(section)

        if path is None and search:
            path = find_config_file()
        if path:
            try:
                read_ok = parser.read(path)
            except ConfigParser.Error as error:
                raise exceptions.WrongParameterException("Could not parse configuration file %s: %s" % (path, error))
            if read_ok != [path]:
                raise exceptions.WrongParameterException("Could not load configurations from %s" % path)

        for override in overrides or []:
            if '=' not in override or '.' not in override.split('=', 1)[0]:
                raise exceptions.WrongParameterException("Override must look like section.key=value: %s" % override)
            name, value = override.split('=', 1)
            section, key = name.strip().split('.', 1)
            if not parser.has_section(section):
                raise exceptions.WrongParameterException("Unknown configuration key: %s" % name.strip())
            parser.set(section, key.strip(), value.strip())

        config = cls(parser)
        config.path = path
        config.validate()
        return config

    def validate(self):
        for section in self.__config.sections():
            if section not in [Sections.Common, Sections.Model, Sections.Data, Sections.Train, Sections.Eval]:
                raise exceptions.WrongParameterException("Unknown configuration section: %s" % section)
            for key, _ in self.__config.items(section):
                if get_option(section, key) is None:
                    raise exceptions.WrongParameterException("Unknown configuration key: %s.%s" % (section, key))
                if section == Sections.Data and '.' in key:
                    source = key.split('.', 1)[0]
                    if source not in self.config_get_list(Sections.Data, 'sources'):
                        raise exceptions.WrongParameterException("Configuration key %s.%s names an undeclared source"
                                                                 % (section, key))
        for option in OPTIONS + SOURCE_FIELDS:
            if option.kind in ('int', 'float', 'bool'):
                for section, key in self._declared_keys(option):
                    self._typed(section, key, option.kind)

    def _declared_keys(self, option):
        if option in SOURCE_FIELDS:
            return [(Sections.Data, '%s.%s' % (source, option.key))
                    for source in self.config_get_list(Sections.Data, 'sources')]
        return [(option.section, option.key)]

    def _raw(self, section, option):
        if self.__config.has_option(section, option):
            return self.__config.get(section, option)
        declared = get_option(section, option)
        if declared is None:
            raise exceptions.WrongParameterException("Unknown configuration key: %s.%s" % (section, option))
        return declared.default

    def _typed(self, section, option, kind):
        value = self._raw(section, option)
        try:
            if kind == 'int':
                return int(value)
            if kind == 'float':
                return float(value)
            if kind == 'bool':
                lowered = str(value).strip().lower()
                if lowered not in ConfigParser.ConfigParser.BOOLEAN_STATES:
                    raise ValueError(value)
                return ConfigParser.ConfigParser.BOOLEAN_STATES[lowered]
        except ValueError:
            raise exceptions.WrongParameterException("Configuration key %s.%s expects %s, got %r"
                                                     % (section, option, kind, value))
        return value

    def config_has_section(self, section):
        """
        Return where there is a section

        :param section: the named section.

        :returns: True/False.
        """
        return self.__config.has_section(section)

    def config_has_option(self, section, option):
        """
        Return where there is an explicitly set option in a section

        :param section: the named section.
        :param option: the named option.

        :returns: True/False.
        """
        return self.__config.has_option(section, option)

    def config_list_options(self, section):
        """
        Return list of (name, value) explicitly set in a section
        """
        return self.__config.items(section)

    def config_get(self, section, option):
        """
        Return the string value for a given option in a section
        """
        return self._raw(section, option)

    def config_get_int(self, section, option):
        """
        Return the integer value for a given option in a section
        """
        return self._typed(section, option, 'int')

    def config_get_float(self, section, option):
        """
        Return the float value for a given option in a section
        """
        return self._typed(section, option, 'float')

    def config_get_bool(self, section, option):
        """
        Return the boolean value for a given option in a section
        """
        return self._typed(section, option, 'bool')

    def config_get_list(self, section, option):
        """
        Return the comma separated value for a given option in a section as a list
        """
        return split_list(self._raw(section, option))

    def source_get(self, source, field, kind='str'):
        """
        Return a data source field, e.g. source_get('video', 'speed', 'float')
        """
        key = '%s.%s' % (source, field)
        if kind == 'list':
            return self.config_get_list(Sections.Data, key)
        return self._typed(Sections.Data, key, kind)

    def set(self, section, option, value):
        if get_option(section, option) is None:
            raise exceptions.WrongParameterException("Unknown configuration key: %s.%s" % (section, option))
        self.__config.set(section, option, str(value))
