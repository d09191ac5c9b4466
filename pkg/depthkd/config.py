#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
.. currentmodule:: depthkd.config
.. moduleauthor:: Pat Daburu <pat@daburu.net>

This module loads experiment configurations.  Every default lives in the
packaged `defaults.json` document; a user's JSON file is merged over it and may
only name keys the defaults already have.
"""
import json
import os
from pathlib import Path
from typing import Any, Dict as TDict, List, Mapping
from addict import Dict
from .distiller import TrainConfig
from .errors import ConfigError
from .flags import Method
from .meta import Description
from .nets import DepthNetworkSpec, TransformNetworkSpec, build_network, \
    parameter_count
from .simworld import DomainConfig


DEFAULTS_FILE = Path(__file__).resolve().parent / 'defaults.json'
OUTPUT_ROOT_ENV = 'DEPTHKD_OUTPUT_ROOT'  #: supplies the default output root

#: every tunable setting, by its dotted key
TUNABLES = (
    [
        f'domains.{domain}.{key}'
        for domain in ('target', 'ood')
        for key in (
            'name', 'image_size', 'depth_range', 'num_objects', 'num_classes',
            'palette', 'texture_style', 'pixel_noise_sigma', 'seed_namespace'
        )
    ] + [
        'sizes.train_a', 'sizes.test_a', 'sizes.ood', 'sizes.ood_scale'
    ] + [
        f'networks.{role}.{key}'
        for role in ('teacher', 'student')
        for key in (
            'role', 'base_width', 'depth_stages', 'uses_batchnorm',
            'max_depth', 'image_size'
        )
    ] + [
        'networks.transform.base_width',
        'networks.transform.dilation_rates',
        'networks.transform.skip_connections'
    ] + [
        f'train.{key}' for key in TrainConfig.fields()
    ] + [
        'evaluation.batch_size', 'evaluation.histogram_bins',
        'evaluation.ifgsm_steps', 'evaluation.epsilons_255',
        'evaluation.inversion_steps', 'evaluation.inversion_lr'
    ] + [
        'gap_levels', 'methods', 'teacher_seed', 'output_root'
    ]
)


def default_document() -> Dict:
    """
    Get the default configuration document.

    :return: the defaults (a fresh copy)
    """
    return Dict(json.loads(DEFAULTS_FILE.read_text()))


def leaf_keys(document: Mapping, prefix: str = '') -> List[str]:
    """
    List the dotted keys of the leaves of a configuration document.

    :param document: the document
    :param prefix: prepended to every key
    :return: the keys
    """
    keys = []
    for key, value in document.items():
        dotted = f'{prefix}{key}'
        if isinstance(value, Mapping):
            keys.extend(leaf_keys(value, f'{dotted}.'))
        else:
            keys.append(dotted)
    return keys


def merge(base: Dict, overrides: Mapping, prefix: str = '') -> Dict:
    """
    Merge a document of overrides into a base document, in place.

    :param base: the base document
    :param overrides: the overrides
    :param prefix: the dotted key of `base` (for error messages)
    :return: the base document
    :raises depthkd.errors.ConfigError: if an override names an unknown key
    """
    for key, value in overrides.items():
        dotted = f'{prefix}{key}'
        if key not in base:
            raise ConfigError('unknown configuration key', field=dotted)
        if isinstance(base[key], Mapping):
            if not isinstance(value, Mapping):
                raise ConfigError('expected an object', field=dotted)
            merge(base[key], value, f'{dotted}.')
        elif isinstance(value, Mapping) and value:
            raise ConfigError('expected a value, not an object', field=dotted)
        else:
            base[key] = value
    return base


def _described(cls, values: Mapping, field: str):
    # Build a description and report invalid fields by their dotted key.
    try:
        description = cls.from_dict(values)
        description.validate()
    except ConfigError as cfe:
        raise ConfigError(
            cfe.message.split(': ', 1)[-1] if cfe.field else cfe.message,
            field=f'{field}.{cfe.field}' if cfe.field else field
        ) from cfe
    except (TypeError, ValueError, KeyError) as err:
        raise ConfigError(str(err), field=field) from err
    return description


class ExperimentConfig(Description):
    """
    Everything an experiment needs: the two domains, the dataset sizes, the
    networks, the training and evaluation settings, the methods and where the
    results go.
    """
    __slots__ = [
        'domain_a', 'domain_b', 'sizes', 'teacher_spec', 'student_spec',
        'transform_spec', 'train', 'evaluation', 'methods', 'teacher_seed',
        'output_root', 'gap_levels'
    ]

    def __init__(self,
                 domain_a: DomainConfig,
                 domain_b: DomainConfig,
                 sizes: Mapping[str, Any],
                 teacher_spec: DepthNetworkSpec,
                 student_spec: DepthNetworkSpec,
                 transform_spec: TransformNetworkSpec,
                 train: TrainConfig,
                 evaluation: Mapping[str, Any],
                 methods: List[Method],
                 teacher_seed: int = 0,
                 output_root: Path or str = 'experiments',
                 gap_levels: List[float] = (0.0, 0.5, 1.0)):
        """

        :param domain_a: the target domain
        :param domain_b: the OOD domain
        :param sizes: the dataset sizes (`train_a`, `test_a`, `ood` and the
            `ood_scale` list)
        :param teacher_spec: the teacher
        :param student_spec: the student
        :param transform_spec: the transformation network
        :param train: the training settings
        :param evaluation: the evaluation settings
        :param methods: the methods to run
        :param teacher_seed: the seed of the teacher the students distill from
        :param output_root: the directory that receives datasets and runs
        :param gap_levels: the positions between the target and the OOD
            domain that the domain-gap sweep distills from
        """
        self.domain_a = domain_a
        self.domain_b = domain_b
        self.sizes = Dict(sizes)
        self.teacher_spec = teacher_spec
        self.student_spec = student_spec
        self.transform_spec = transform_spec
        self.train = train
        self.evaluation = Dict(evaluation)
        self.methods = list(methods)
        self.teacher_seed = int(teacher_seed)
        self.output_root = Path(output_root)
        self.gap_levels = list(gap_levels)

    @classmethod
    def from_document(cls, document: Mapping) -> 'ExperimentConfig':
        """
        Create a configuration from a (merged) configuration document.

        :param document: the document
        :return: the validated configuration
        :raises depthkd.errors.ConfigError: if a field is invalid
        """
        document = Dict(document)
        try:
            methods = [Method(m) for m in document.methods]
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err), field='methods') from err
        config = cls(
            domain_a=_described(DomainConfig, document.domains.target,
                                'domains.target'),
            domain_b=_described(DomainConfig, document.domains.ood,
                                'domains.ood'),
            sizes=document.sizes,
            teacher_spec=_described(DepthNetworkSpec,
                                    document.networks.teacher,
                                    'networks.teacher'),
            student_spec=_described(DepthNetworkSpec,
                                    document.networks.student,
                                    'networks.student'),
            transform_spec=_described(TransformNetworkSpec,
                                      document.networks.transform,
                                      'networks.transform'),
            train=_described(TrainConfig, document.train, 'train'),
            evaluation=document.evaluation,
            methods=methods,
            teacher_seed=document.teacher_seed,
            output_root=document.output_root,
            gap_levels=document.gap_levels
        )
        config.validate()
        return config

    def validate(self):
        for key in ('train_a', 'test_a', 'ood'):
            if not isinstance(self.sizes.get(key), int) or self.sizes[key] < 1:
                raise ConfigError('expected an integer >= 1',
                                  field=f'sizes.{key}')
        scale = self.sizes.get('ood_scale')
        if not scale or any(not isinstance(n, int) or n < 1 for n in scale):
            raise ConfigError('expected a list of integers >= 1',
                              field='sizes.ood_scale')
        if not self.methods:
            raise ConfigError('expected at least one method', field='methods')
        if self.domain_a.image_size != self.domain_b.image_size:
            raise ConfigError('the domains must share an image size',
                              field='domains.ood.image_size')
        for role, spec in (('teacher', self.teacher_spec),
                           ('student', self.student_spec)):
            if spec.role != role:
                raise ConfigError(f"expected '{role}'",
                                  field=f'networks.{role}.role')
            if spec.image_size != self.domain_a.image_size:
                raise ConfigError('must match the domain image size',
                                  field=f'networks.{role}.image_size')
            # The depth head saturates at max_depth.
            if spec.max_depth != self.domain_a.depth_range[1]:
                raise ConfigError(
                    f"must equal the target domain's maximum depth "
                    f'({self.domain_a.depth_range[1]})',
                    field=f'networks.{role}.max_depth'
                )
        if (parameter_count(build_network(self.teacher_spec)) <=
                parameter_count(build_network(self.student_spec))):
            raise ConfigError('the teacher must be larger than the student',
                              field='networks.student.base_width')
        evaluation = self.evaluation
        for key in ('batch_size', 'histogram_bins', 'ifgsm_steps',
                    'inversion_steps'):
            if not isinstance(evaluation.get(key), int) or evaluation[key] < 1:
                raise ConfigError('expected an integer >= 1',
                                  field=f'evaluation.{key}')
        if evaluation.histogram_bins < 2:
            raise ConfigError('expected at least two bins',
                              field='evaluation.histogram_bins')
        if any(e < 0 for e in evaluation.epsilons_255):
            raise ConfigError('expected values >= 0',
                              field='evaluation.epsilons_255')
        if not isinstance(evaluation.inversion_lr, (int, float)) \
                or evaluation.inversion_lr <= 0:
            raise ConfigError('expected a value > 0',
                              field='evaluation.inversion_lr')
        if not self.gap_levels or any(
                not isinstance(t, (int, float)) or not 0 <= t <= 1
                for t in self.gap_levels):
            raise ConfigError('expected a list of values in [0, 1]',
                              field='gap_levels')
        if self.teacher_seed < 0:
            raise ConfigError('expected a value >= 0', field='teacher_seed')
        if self.output_root.exists() and not self.output_root.is_dir():
            raise ConfigError(f'{self.output_root} is not a directory',
                              field='output_root')

    def to_dict(self) -> TDict[str, Any]:
        values = super().to_dict()
        values['output_root'] = str(self.output_root)
        return values


def load_config(path: Path or str = None,
                overrides: Mapping = None) -> ExperimentConfig:
    """
    Load an experiment configuration.  The user's file is merged over the
    defaults; `DEPTHKD_OUTPUT_ROOT` (if set) replaces the default output root.

    :param path: the user's JSON configuration file (optional)
    :param overrides: further overrides, applied last
    :return: the configuration
    :raises depthkd.errors.ConfigError: if the file can't be read or names an
        unknown or invalid field
    """
    document = default_document()
    if os.environ.get(OUTPUT_ROOT_ENV):
        document.output_root = os.environ[OUTPUT_ROOT_ENV]
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, ValueError) as err:
            raise ConfigError(f'could not read {path}: {err}') from err
        if not isinstance(user, Mapping):
            raise ConfigError(f'{path} does not hold a JSON object')
        merge(document, user)
    if overrides:
        merge(document, overrides)
    return ExperimentConfig.from_document(document)
