#!/usr/bin/env python
# -*- coding: utf-8 -*-

# Created by pat on 5/6/18
"""
.. currentmodule:: depthkd.errors
.. moduleauthor:: Pat Daburu <pat@daburu.net>

Something went wrong?  OK.  Here's what we'll do...
"""


class DepthKDError(Exception):
    """
    A general error pertaining to things that happen in the `depthkd` package.
    """
    def __init__(self, message: str):
        """

        :param message: the error message
        """
        super().__init__(message)
        self._message = message

    @property
    def message(self) -> str:
        """
        Get the error message.

        :return: the error message
        """
        return self._message


class ConfigError(DepthKDError):
    """
    Raised when a configuration (or one of its fields) is invalid.
    """
    def __init__(self, message: str, field: str = None):
        """

        :param message: the error message
        :param field: the dotted name of the offending field (if known)
        """
        super().__init__(
            f'{field}: {message}' if field is not None else message
        )
        self._field = field

    @property
    def field(self) -> str or None:
        """
        Get the dotted name of the offending configuration field.

        :return: the field name, or `None` if the error isn't tied to a field
        """
        return self._field


class DatasetError(DepthKDError):
    """
    Raised when a dataset can't be written or read.
    """


class ShapeError(DepthKDError):
    """
    Raised when an array or tensor doesn't have the shape a contract requires.
    """


class NetworkError(DepthKDError):
    """
    Raised for invalid network specifications or unsupported network states.
    """


class CheckpointError(DepthKDError):
    """
    Raised when a checkpoint can't be restored.
    """


class LossError(DepthKDError):
    """
    Raised when a loss is evaluated with inputs that violate its contract.
    """


class MixError(DepthKDError):
    """
    Raised when two samples can't be mixed.
    """


class TrainingError(DepthKDError):
    """
    Raised when a training run can't continue (e.g. the loss is no longer
    finite).
    """


class AttackError(DepthKDError):
    """
    Raised when an adversarial attack can't proceed.
    """


class EvaluationError(DepthKDError):
    """
    Raised when an evaluation or report can't be produced.
    """
