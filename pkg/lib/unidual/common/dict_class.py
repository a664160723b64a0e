#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0

"""
Dict class.

Objects are written as {'class', 'module', 'attributes'} records so that configs can be
stored inside checkpoints and rebuilt into the same classes on load.
"""

import importlib

from enum import Enum

from unidual.common import exceptions


ALLOWED_MODULE_PREFIX = 'unidual.'


class DictClass(object):
    def to_dict_l(self, d):
        if d is None:
            return d

        if hasattr(d, 'to_dict'):
            return d.to_dict()
        elif isinstance(d, dict):
            return {k: self.to_dict_l(v) for k, v in d.items()}
        elif isinstance(d, (list, tuple)):
            return [self.to_dict_l(k) for k in d]
        return d

    def to_dict(self):
        ret = {'class': self.__class__.__name__,
               'module': self.__class__.__module__,
               'attributes': {}}
        for key, value in self.__dict__.items():
            if not key.startswith('_'):
                if key == 'logger':
                    value = None
                else:
                    value = self.to_dict_l(value)
                ret['attributes'][key] = value
        return ret

    @staticmethod
    def is_class(d):
        if d and isinstance(d, dict) and 'class' in d and 'module' in d and 'attributes' in d:
            return True
        return False

    @staticmethod
    def load_instance(d):
        """
        Rebuild the empty instance named by a record.

        Only DictClass and Enum subclasses defined in unidual modules are loaded.

        :raises WrongParameterException: the record names anything else or cannot be built.
        """
        module_name, class_name = d['module'], d['class']
        if not isinstance(module_name, str) or not module_name.startswith(ALLOWED_MODULE_PREFIX):
            raise exceptions.WrongParameterException("Refusing to load class from module %s" % module_name,
                                                     module=module_name)
        try:
            module = importlib.import_module(module_name)
            cls = getattr(module, class_name)
        except (ImportError, AttributeError, TypeError) as error:
            raise exceptions.WrongParameterException("Cannot load %s.%s: %s" % (module_name, class_name, error))
        if not isinstance(cls, type) or not issubclass(cls, (DictClass, Enum)):
            raise exceptions.WrongParameterException("%s.%s is not a dict class" % (module_name, class_name),
                                                     module=module_name)
        try:
            if issubclass(cls, Enum):
                impl = cls(d['attributes']['_value_'])
            else:
                impl = cls()
        except (TypeError, ValueError, KeyError) as error:
            raise exceptions.WrongParameterException("Cannot build %s.%s: %s" % (module_name, class_name, error))
        return impl

    @staticmethod
    def from_dict(d):
        if not d:
            return d

        if DictClass.is_class(d):
            impl = DictClass.load_instance(d)
            if isinstance(impl, Enum):
                return impl
            for key, value in d['attributes'].items():
                if key == 'logger' or key.startswith('_'):
                    continue
                setattr(impl, key, DictClass.from_dict(value))
            return impl
        elif isinstance(d, dict):
            return {k: DictClass.from_dict(v) for k, v in d.items()}
        elif isinstance(d, list):
            return [DictClass.from_dict(k) for k in d]
        return d
