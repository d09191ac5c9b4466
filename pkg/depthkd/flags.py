#!/usr/bin/env python
# -*- coding: utf-8 -*-

# Created by pat on 4/14/18
"""
.. currentmodule:: depthkd.flags
.. moduleauthor:: Pat Daburu <pat@daburu.net>

This module contains the enumerations shared across the package.
"""
from enum import Enum, IntFlag
from functools import reduce
from typing import Iterable, cast


class TextureStyle(Enum):
    """
    How an object's palette color is modulated across its surface.
    """
    FLAT = 'flat'  #: a single color
    STRIPED = 'striped'  #: alternating bright and dark vertical stripes
    NOISY = 'noisy'  #: per-pixel multiplicative noise


class StatKind(Enum):
    """
    Where a set of batch-normalization statistics came from.
    """
    RUNNING = 'running'  #: the statistics stored in the BN layers
    BATCHWISE = 'batchwise'  #: statistics of the features of one batch


class Method(Enum):
    """
    The training methods.  Declaration order is the order used for reports.
    """
    TEACHER_SUPERVISED = 'teacher_supervised'  #: the teacher, on target data
    STUDENT_SUPERVISED = 'student_supervised'  #: the student, on target data
    KD_DATA_AWARE = 'kd_data_aware'  #: λ-weighted KD with target data
    KD_OOD = 'kd_ood'  #: KD with the OOD simulated set
    RANDOM_NOISE_KD = 'random_noise_kd'  #: KD with Gaussian noise
    DATAFREE_FULL = 'datafree_full'  #: mixing + transformation network

    @property
    def rank(self) -> int:
        """
        Get the position of the method in the enumeration.

        :return: the position
        """
        return list(Method).index(self)

    @property
    def needs_teacher(self) -> bool:
        """
        Does the method distill from a trained teacher?

        :return: `True` if a teacher checkpoint is required
        """
        return self not in (
            Method.TEACHER_SUPERVISED, Method.STUDENT_SUPERVISED
        )


class AblationFlags(IntFlag):
    """
    The enhancements of the data-free method that may be switched off.
    """
    NONE = 0  #: plain KD with the OOD set
    USE_G = 1  #: adapt mixed images with the transformation network
    USE_MIXING = 2  #: mix objects between OOD images
    USE_REC = 4  #: keep the reconstruction term in the generator objective
    TRANSFORM_RAW_BRANCH = 8  #: feed G(x′) rather than x′ to the first branch
    DEFAULT = 7  #: the full method

    @classmethod
    def combine(cls, flags: 'AblationFlags' or Iterable) -> 'AblationFlags':
        """
        Combine flag values (or flag names) into a single value.

        :param flags: a flag value, or an iteration of flag values or names
        :return: a single flag value
        """
        if isinstance(flags, (int, str)):
            flags = [flags]
        # We may have been handed names (from a JSON file) rather than values.
        values = [
            cls[f.upper()] if isinstance(f, str) else cls(f)
            for f in cast(Iterable, flags)
        ]
        return reduce(lambda a, b: a | b, values, cls.NONE)

    @property
    def names(self):
        """
        Get the names of the individual flags that are set.

        :return: the names, in declaration order
        """
        return [
            f.name.lower() for f in (
                AblationFlags.USE_G, AblationFlags.USE_MIXING,
                AblationFlags.USE_REC, AblationFlags.TRANSFORM_RAW_BRANCH
            ) if self & f
        ]
