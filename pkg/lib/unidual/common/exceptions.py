#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0

"""
UniDual Exceptions.

error codes:
    The fist the number is one of the main catagories.
    The second number and numbers after it are local defined for every catagory.

Catagories:
 1. common/unknown exception
 2. tensor and autograd exception
 3. model construction and dispatch exception
 4. checkpoint exception
 5. training exception

Every exception carries the process exit code the command line maps it to:
1 for validation errors (bad config, arguments or parameters), 2 for runtime failures.
"""


import traceback

from unidual.common.constants import EXIT_CODE


class UniDualException(Exception):
    """
    To correctly use this class, inherit from it and define
    a 'message' property. That message will get printf'd
    with the keyword arguments provided to the constructor.
    """

    def __init__(self, *args, **kwargs):
        super(UniDualException, self).__init__()
        self._message = "An unknown UniDual exception occurred."
        self.args = args
        self.kwargs = kwargs
        self.error_code = 100
        self.exit_code = EXIT_CODE.RuntimeFailure
        self._error_string = None

    def construct_error_string(self):
        try:
            if self.kwargs:
                self._error_string = "%s: %s" % (self._message, self.kwargs)
            else:
                self._error_string = self._message
        except Exception:
            # at least get the core message out if something happened
            self._error_string = self._message
        if len(self.args) > 0:
            args = ["%s" % arg for arg in self.args if arg]
            self._error_string = (self._error_string + "\nDetails: %s" % '\n'.join(args))
        return self._error_string.strip()

    def __str__(self):
        self.construct_error_string()
        return self._error_string.strip()

    def get_detail(self):
        self.construct_error_string()
        return self._error_string.strip() + "\nStacktrace: %s" % traceback.format_exc()


class NotImplementedException(UniDualException):
    def __init__(self, *args, **kwargs):
        super(NotImplementedException, self).__init__(*args, **kwargs)
        self._message = "Not implemented exception."
        self.error_code = 101


class WrongParameterException(UniDualException):
    def __init__(self, *args, **kwargs):
        super(WrongParameterException, self).__init__(*args, **kwargs)
        self._message = "Wrong parameter exception."
        self.error_code = 102
        self.exit_code = EXIT_CODE.ValidationError


class TensorException(UniDualException):
    def __init__(self, *args, **kwargs):
        super(TensorException, self).__init__(*args, **kwargs)
        self._message = "Tensor exception."
        self.error_code = 200


class ShapeMismatch(TensorException):
    def __init__(self, *args, **kwargs):
        super(ShapeMismatch, self).__init__(*args, **kwargs)
        self._message = "Shape mismatch."
        self.error_code = 201
        self.exit_code = EXIT_CODE.ValidationError


class NonFiniteError(TensorException):
    def __init__(self, *args, **kwargs):
        super(NonFiniteError, self).__init__(*args, **kwargs)
        self._message = "Non-finite values produced."
        self.error_code = 202


class GraphError(TensorException):
    def __init__(self, *args, **kwargs):
        super(GraphError, self).__init__(*args, **kwargs)
        self._message = "Gradient graph error."
        self.error_code = 203
        self.exit_code = EXIT_CODE.ValidationError


class GradCheckFailure(TensorException):
    def __init__(self, *args, **kwargs):
        super(GradCheckFailure, self).__init__(*args, **kwargs)
        self._message = "Gradient check failed."
        self.error_code = 204


class ModelException(UniDualException):
    def __init__(self, *args, **kwargs):
        super(ModelException, self).__init__(*args, **kwargs)
        self._message = "Model exception."
        self.error_code = 300
        self.exit_code = EXIT_CODE.ValidationError


class ConfigError(ModelException):
    def __init__(self, *args, **kwargs):
        super(ConfigError, self).__init__(*args, **kwargs)
        self._message = "Invalid configuration."
        self.error_code = 301


class ModalityMismatch(ModelException):
    def __init__(self, *args, **kwargs):
        super(ModalityMismatch, self).__init__(*args, **kwargs)
        self._message = "Input modality does not match the requested pathway or head."
        self.error_code = 302


class MissingParameter(ModelException):
    def __init__(self, *args, **kwargs):
        super(MissingParameter, self).__init__(*args, **kwargs)
        self._message = "Missing parameter."
        self.error_code = 303


class CheckpointException(UniDualException):
    def __init__(self, *args, **kwargs):
        super(CheckpointException, self).__init__(*args, **kwargs)
        self._message = "Checkpoint exception."
        self.error_code = 400


class BadMagic(CheckpointException):
    def __init__(self, *args, **kwargs):
        super(BadMagic, self).__init__(*args, **kwargs)
        self._message = "Bad checkpoint magic."
        self.error_code = 401


class UnsupportedVersion(CheckpointException):
    def __init__(self, *args, **kwargs):
        super(UnsupportedVersion, self).__init__(*args, **kwargs)
        self._message = "Unsupported checkpoint version."
        self.error_code = 402


class CorruptRecord(CheckpointException):
    def __init__(self, *args, **kwargs):
        super(CorruptRecord, self).__init__(*args, **kwargs)
        self._message = "Corrupt checkpoint record."
        self.error_code = 403


class UnknownTensor(CheckpointException):
    def __init__(self, *args, **kwargs):
        super(UnknownTensor, self).__init__(*args, **kwargs)
        self._message = "Checkpoint tensor is absent from the target network."
        self.error_code = 404


class ExtentMismatch(CheckpointException):
    def __init__(self, *args, **kwargs):
        super(ExtentMismatch, self).__init__(*args, **kwargs)
        self._message = "Checkpoint tensor extents do not match the target network."
        self.error_code = 405


class TrainingException(UniDualException):
    def __init__(self, *args, **kwargs):
        super(TrainingException, self).__init__(*args, **kwargs)
        self._message = "Training exception."
        self.error_code = 500


class NonFiniteLoss(TrainingException):
    def __init__(self, *args, **kwargs):
        super(NonFiniteLoss, self).__init__(*args, **kwargs)
        self._message = "Non-finite loss."
        self.error_code = 501


class NonFiniteGradient(TrainingException):
    def __init__(self, *args, **kwargs):
        super(NonFiniteGradient, self).__init__(*args, **kwargs)
        self._message = "Non-finite gradient."
        self.error_code = 502


class ScheduleError(TrainingException):
    def __init__(self, *args, **kwargs):
        super(ScheduleError, self).__init__(*args, **kwargs)
        self._message = "Learning rate schedule error."
        self.error_code = 503
        self.exit_code = EXIT_CODE.ValidationError
