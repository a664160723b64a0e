#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0


import json
import logging
import os
import sys

from unidual.common.constants import Sections, UniDualEnum
from unidual.common.dict_class import DictClass


LOG_FORMAT = '%(asctime)s\t%(name)s\t%(levelname)s\t%(message)s'


def setup_logging(name, config=None, stream=None):
    """
    Setup logging

    :param name: log file name used when [common] logdir is configured.
    :param config: optional RunConfig carrying [common] loglevel and logdir.
    :param stream: stream for console logging, stdout by default.
    """
    loglevel = logging.INFO
    logdir = None
    if config is not None:
        loglevel = getattr(logging, config.config_get(Sections.Common, 'loglevel').upper(), logging.INFO)
        logdir = config.config_get(Sections.Common, 'logdir') or None

    if logdir:
        if not os.path.exists(logdir):
            os.makedirs(logdir)
        logging.basicConfig(filename=os.path.join(logdir, name),
                            level=loglevel,
                            format=LOG_FORMAT)
    else:
        logging.basicConfig(stream=stream if stream is not None else sys.stdout, level=loglevel,
                            format=LOG_FORMAT)
    logging.getLogger().setLevel(loglevel)


class DictClassEncoder(json.JSONEncoder):
    def default(self, obj):
        if isinstance(obj, UniDualEnum) or isinstance(obj, DictClass):
            return obj.to_dict()

        # Let the base class default method raise the TypeError
        return json.JSONEncoder.default(self, obj)


def as_has_dict(dct):
    if DictClass.is_class(dct):
        return DictClass.from_dict(dct)
    return dct


def json_dumps(obj):
    return json.dumps(obj, cls=DictClassEncoder, separators=(',', ':'))


def json_loads(obj):
    return json.loads(obj, object_hook=as_has_dict)


def make_dirs(path):
    if path and not os.path.exists(path):
        os.makedirs(path)
    return path
