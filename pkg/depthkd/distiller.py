#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
.. currentmodule:: depthkd.distiller
.. moduleauthor:: Pat Daburu <pat@daburu.net>

This module contains the training runs: supervised training of the teacher and
student, the distillation baselines, the data-free method with its
interleaved student and transformation-network updates, and checkpointing.

Every run returns a :py:class:`RunRecord` and, given an output directory,
writes it (along with the checkpoints) there.
"""
import csv
import json
import logging
import math
from collections import OrderedDict
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, \
    Tuple
import numpy as np
import torch
from torch import nn
from torch.optim import Adam
from torch.optim.lr_scheduler import StepLR
from torch.utils.data import DataLoader, TensorDataset
from tqdm import tqdm
from .errors import (
    CheckpointError, ConfigError, DatasetError, EvaluationError, ShapeError,
    TrainingError
)
from .evalkit import MetricsReport, evaluate_network, noise_images, \
    transform_discrepancy
from .flags import AblationFlags, Method
from .losses import (
    LossBreakdown, depth_loss, distillation_objective, generator_objective,
    kd_plain_loss, pixel_objective
)
from .meta import Description
from .mixer import mix_batch
from .nets import (
    DepthNet, DepthNetworkSpec, TransformNet, TransformNetworkSpec,
    build_network, forward_depth, freeze
)
from .simworld import DatasetManifest, Sample, SampleArrays, load_arrays, \
    load_manifest


CHECKPOINT_VERSION = 1  #: the checkpoint format version
RUN_FILE = 'run.json'  #: the name of a run's record file
CURVES_FILE = 'curves.csv'  #: the name of a run's loss-curve file
CKPT_DIR = 'ckpt'  #: the name of a run's checkpoint directory

_SPEC_KINDS = {
    'depth': (DepthNetworkSpec, DepthNet),
    'transform': (TransformNetworkSpec, TransformNet)
}


class TrainConfig(Description):
    """
    The settings of a training run.
    """
    __slots__ = [
        'epochs', 'batch_size', 'lr', 'lr_decay_every', 'lr_decay_factor',
        'adam_betas', 'alpha', 'beta', 'kd_lambda', 'seed', 'ablation_flags',
        'branch_weights', 'include_background', 'bn_layer_mask'
    ]

    def __init__(self,
                 epochs: int = 20,
                 batch_size: int = 8,
                 lr: float = 1e-4,
                 lr_decay_every: int = 5,
                 lr_decay_factor: float = 0.5,
                 adam_betas: Sequence[float] = (0.9, 0.999),
                 alpha: float = 0.001,
                 beta: float = 0.001,
                 kd_lambda: float = 0.9,
                 seed: int = 0,
                 ablation_flags: AblationFlags or Iterable = (
                     AblationFlags.DEFAULT),
                 branch_weights: Sequence[float] = (1.0, 1.0),
                 include_background: bool = True,
                 bn_layer_mask: Sequence[bool] or str = None):
        """

        :param epochs: the number of passes over the training set
        :param batch_size: the number of images per step
        :param lr: the initial learning rate
        :param lr_decay_every: the learning rate decays every so many epochs
        :param lr_decay_factor: the factor applied at each decay
        :param adam_betas: the optimizer's moment coefficients
        :param alpha: the weight of the BN alignment term
        :param beta: the weight of the reconstruction term
        :param kd_lambda: the weight of the teacher in data-aware KD
        :param seed: seeds initialization, batch order, mixing and noise
        :param ablation_flags: the enhancements of the data-free method
        :param branch_weights: the weights of the two distillation branches
        :param include_background: May mixing select the background class?
        :param bn_layer_mask: selects the teacher's BN layers (`None` for all,
            'encoder', or one boolean per layer)
        """
        self.epochs = int(epochs)
        self.batch_size = int(batch_size)
        self.lr = float(lr)
        self.lr_decay_every = int(lr_decay_every)
        self.lr_decay_factor = float(lr_decay_factor)
        self.adam_betas = tuple(float(b) for b in adam_betas)
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.kd_lambda = float(kd_lambda)
        self.seed = int(seed)
        self.ablation_flags = AblationFlags.combine(ablation_flags)
        self.branch_weights = tuple(float(w) for w in branch_weights)
        self.include_background = bool(include_background)
        self.bn_layer_mask = (
            list(bn_layer_mask)
            if isinstance(bn_layer_mask, (list, tuple)) else bn_layer_mask
        )

    def validate(self):
        if self.epochs < 1:
            raise ConfigError('expected a value >= 1', field='epochs')
        if self.batch_size < 1:
            raise ConfigError('expected a value >= 1', field='batch_size')
        # A zero learning rate is allowed (it leaves the weights untouched).
        if self.lr < 0:
            raise ConfigError('expected a value >= 0', field='lr')
        if self.lr_decay_every < 1:
            raise ConfigError('expected a value >= 1', field='lr_decay_every')
        if not 0 < self.lr_decay_factor <= 1:
            raise ConfigError('expected a value in (0, 1]',
                              field='lr_decay_factor')
        if len(self.adam_betas) != 2 or not all(
                0 <= b < 1 for b in self.adam_betas):
            raise ConfigError('expected two values in [0, 1)',
                              field='adam_betas')
        if self.alpha < 0:
            raise ConfigError('expected a value >= 0', field='alpha')
        if self.beta < 0:
            raise ConfigError('expected a value >= 0', field='beta')
        if not 0 <= self.kd_lambda <= 1:
            raise ConfigError('expected a value in [0, 1]', field='kd_lambda')
        if self.seed < 0:
            raise ConfigError('expected a value >= 0', field='seed')
        if len(self.branch_weights) != 2 or min(self.branch_weights) < 0:
            raise ConfigError('expected two values >= 0',
                              field='branch_weights')
        flags = self.ablation_flags
        if (AblationFlags.TRANSFORM_RAW_BRANCH in flags
                and AblationFlags.USE_G not in flags):
            raise ConfigError('transforming the raw branch needs use_g',
                              field='ablation_flags')

    def to_dict(self) -> Dict[str, Any]:
        values = super().to_dict()
        values['ablation_flags'] = self.ablation_flags.names
        return values


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """
    Get the learning rate of an epoch.

    :param cfg: the training configuration
    :param epoch: the (zero-based) epoch
    :return: the learning rate
    """
    return cfg.lr * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every)


class RunRecord(object):
    """
    The outcome of a training run.
    """
    __slots__ = [
        'method', 'seed', 'label', 'curves', 'checkpoints', 'metrics',
        'config', 'extras'
    ]

    def __init__(self,
                 method: Method,
                 seed: int,
                 curves: List[Dict[str, float]],
                 config: Dict[str, Any],
                 metrics: MetricsReport = None,
                 checkpoints: Dict[str, str] = None,
                 label: str = None,
                 extras: Dict[str, Any] = None):
        """

        :param method: the training method
        :param seed: the run's seed
        :param curves: one row of mean loss terms per epoch
        :param config: a snapshot of the run's configuration
        :param metrics: the metrics on the held-out target set (if any)
        :param checkpoints: the checkpoint files, by network name
        :param label: distinguishes runs of one method (e.g. ablations)
        :param extras: anything else worth recording
        """
        self.method = Method(method)
        self.seed = int(seed)
        self.curves = [OrderedDict(row) for row in curves]
        self.config = dict(config)
        self.metrics = metrics
        self.checkpoints = dict(checkpoints or {})
        self.label = label
        self.extras = dict(extras or {})

    @property
    def name(self) -> str:
        """
        Get the name of the run's directory.

        :return: `<method>[-<label>]-seed<seed>`
        """
        label = f'-{self.label}' if self.label else ''
        return f'{self.method.value}{label}-seed{self.seed}'

    def to_dict(self) -> Dict[str, Any]:
        """
        Get the JSON representation of the record.

        :return: the record as a dictionary
        """
        return OrderedDict(
            method=self.method.value,
            seed=self.seed,
            label=self.label,
            curves=self.curves,
            checkpoints=self.checkpoints,
            metrics=(
                self.metrics.to_dict() if self.metrics is not None else None
            ),
            config=self.config,
            extras=self.extras
        )

    def save(self, run_dir: Path or str) -> Path:
        """
        Write the record (`run.json`) and its loss curves (`curves.csv`).

        :param run_dir: the run directory
        :return: the path of `run.json`
        """
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        run_path = run_dir / RUN_FILE
        run_path.write_text(
            json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + '\n'
        )
        fieldnames = list(OrderedDict(
            (key, None) for row in self.curves for key in row
        ))
        with open(run_dir / CURVES_FILE, 'w', newline='') as fb:
            writer = csv.DictWriter(fb, fieldnames=fieldnames)
            writer.writeheader()
            writer.writerows(self.curves)
        return run_path

    @classmethod
    def load(cls, run_dir: Path or str) -> 'RunRecord':
        """
        Read a record written by :py:meth:`save`.

        :param run_dir: the run directory (or its `run.json`)
        :return: the record
        :raises depthkd.errors.EvaluationError: if the record is missing or
            malformed
        """
        path = Path(run_dir)
        path = path / RUN_FILE if path.is_dir() else path
        try:
            values = json.loads(path.read_text())
            metrics = values.get('metrics')
            return cls(
                method=values['method'],
                seed=values['seed'],
                curves=values['curves'],
                config=values['config'],
                metrics=(
                    MetricsReport.from_dict(metrics)
                    if metrics is not None else None
                ),
                checkpoints=values.get('checkpoints'),
                label=values.get('label'),
                extras=values.get('extras')
            )
        except (OSError, ValueError, KeyError, TypeError) as err:
            raise EvaluationError(
                f'Could not read the run record {path}: {err}'
            ) from err


def save_checkpoint(path: Path or str,
                    net: nn.Module,
                    config: Dict[str, Any] = None) -> Path:
    """
    Write a network to a checkpoint file.

    :param path: the checkpoint file
    :param net: the network
    :param config: a snapshot of the configuration that produced it
    :return: the path
    """
    path = Path(path)
    kind = 'depth' if isinstance(net, DepthNet) else 'transform'
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            'format_version': CHECKPOINT_VERSION,
            'kind': kind,
            'spec': net.spec.to_dict(),
            'state_dict': net.state_dict(),
            'config': config or {}
        },
        path
    )
    logging.getLogger(__name__).info(f'Saved a {kind} network to {path}.')
    return path


def load_checkpoint(path: Path or str,
                    expected_spec: Description = None
                    ) -> Tuple[nn.Module, Dict[str, Any]]:
    """
    Read a network from a checkpoint file.

    :param path: the checkpoint file
    :param expected_spec: if given, the checkpoint's specification must equal
        this one
    :return: the network (in training mode) and its configuration snapshot
    :raises depthkd.errors.CheckpointError: if the file can't be read, has
        another format version or doesn't match the expected specification
    """
    path = Path(path)
    try:
        payload = torch.load(path, map_location='cpu', weights_only=True)
    except (OSError, RuntimeError) as err:
        raise CheckpointError(
            f'Could not read the checkpoint {path}: {err}'
        ) from err
    version = payload.get('format_version')
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f'{path} has format version {version}; expected '
            f'{CHECKPOINT_VERSION}.'
        )
    if payload.get('kind') not in _SPEC_KINDS:
        raise CheckpointError(
            f'{path} holds an unknown kind of network: {payload.get("kind")}.'
        )
    spec_cls, _ = _SPEC_KINDS[payload['kind']]
    spec = spec_cls.from_dict(payload['spec'])
    if expected_spec is not None and spec != expected_spec:
        raise CheckpointError(
            f'{path} holds {spec!r}; expected {expected_spec!r}.'
        )
    net = build_network(spec)
    try:
        net.load_state_dict(payload['state_dict'])
    except RuntimeError as err:
        raise CheckpointError(
            f'The weights in {path} do not fit {spec!r}: {err}'
        ) from err
    return net, payload.get('config', {})


def as_arrays(dataset: SampleArrays or DatasetManifest or Path or str
              ) -> SampleArrays:
    """
    Get a dataset as stacked arrays.

    :param dataset: the arrays themselves, a manifest, or a dataset directory
    :return: the arrays
    """
    if isinstance(dataset, SampleArrays):
        return dataset
    if not isinstance(dataset, DatasetManifest):
        dataset = load_manifest(dataset)
    return load_arrays(dataset)


def _teacher(teacher_ckpt,
             student_spec: DepthNetworkSpec = None,
             teacher_spec: DepthNetworkSpec = None) -> nn.Module:
    """
    Get the frozen teacher.

    :param teacher_ckpt: the teacher or its checkpoint
    :param student_spec: the student it teaches (its images must fit both)
    :param teacher_spec: if given, the teacher must match it
    :return: the teacher
    :raises depthkd.errors.CheckpointError: if the teacher doesn't match
        `teacher_spec`
    :raises depthkd.errors.ShapeError: if the teacher and the student take
        images of different sizes
    """
    if isinstance(teacher_ckpt, nn.Module):
        net = teacher_ckpt
        if teacher_spec is not None and net.spec != teacher_spec:
            raise CheckpointError(
                f'The teacher is {net.spec!r}; expected {teacher_spec!r}.'
            )
    else:
        net, _ = load_checkpoint(teacher_ckpt, expected_spec=teacher_spec)
    if (student_spec is not None
            and tuple(net.spec.image_size) != tuple(student_spec.image_size)):
        raise ShapeError(
            f'The teacher takes {net.spec.image_size} images but the student '
            f'takes {student_spec.image_size} images.'
        )
    return freeze(net)


def _progress_disabled() -> Optional[bool]:
    # Quiet runs (logging above INFO) draw no progress bars; otherwise tqdm
    # draws them only on a terminal.
    if logging.getLogger(__name__).isEnabledFor(logging.INFO):
        return None
    return True


def _loader(tensors: Sequence[torch.Tensor],
            cfg: TrainConfig) -> DataLoader:
    return DataLoader(
        TensorDataset(*tensors),
        batch_size=cfg.batch_size,
        shuffle=True,
        generator=torch.Generator().manual_seed(cfg.seed)
    )


def _optimizer(net: nn.Module, cfg: TrainConfig) -> Adam:
    return Adam(net.parameters(), lr=cfg.lr, betas=cfg.adam_betas)


def _update(optimizer: Adam,
            breakdown: LossBreakdown,
            epoch: int,
            step: int,
            what: str):
    if not breakdown.is_finite():
        raise TrainingError(
            f'The {what} loss is not finite at epoch {epoch}, step {step}: '
            f'{breakdown!r}'
        )
    optimizer.zero_grad()
    breakdown.total.backward()
    optimizer.step()


def _fit(batches: Callable[[int], Iterable],
         step: Callable[[Any, int, int], Dict[str, float]],
         optimizers: Sequence[Adam],
         cfg: TrainConfig,
         desc: str) -> List[Dict[str, float]]:
    """
    Run the epochs of a training run.

    :param batches: produces the batches of an epoch
    :param step: performs one step and returns its loss terms
    :param optimizers: the optimizers (their learning rates follow the
        schedule)
    :param cfg: the training configuration
    :param desc: describes the run in progress bars and logs
    :return: the loss curves (one row of means per epoch)
    """
    logger = logging.getLogger(__name__)
    schedulers = [
        StepLR(o, step_size=cfg.lr_decay_every, gamma=cfg.lr_decay_factor)
        for o in optimizers
    ]
    curves = []
    step_no = 0
    for epoch in range(cfg.epochs):
        lr = optimizers[0].param_groups[0]['lr']
        sums: Dict[str, float] = OrderedDict()
        count = 0
        for batch in tqdm(batches(epoch), desc=f'{desc} {epoch + 1}',
                          leave=False, disable=_progress_disabled()):
            for key, value in step(batch, epoch, step_no).items():
                sums[key] = sums.get(key, 0.0) + value
            count += 1
            step_no += 1
        row = OrderedDict(epoch=epoch, lr=lr)
        row.update((key, value / count) for key, value in sums.items())
        curves.append(row)
        for scheduler in schedulers:
            scheduler.step()
        logger.info(
            f'{desc}: epoch {epoch + 1}/{cfg.epochs}, '
            f"loss {row.get('total', float('nan')):.5f}, lr {lr:.3g}"
        )
    return curves


def _finish(record: RunRecord,
            nets: Dict[str, nn.Module],
            test,
            out_dir: Path or str or None,
            eval_batch_size: int = 32) -> RunRecord:
    logger = logging.getLogger(__name__)
    if test is not None:
        test = as_arrays(test)
        record.metrics = evaluate_network(
            nets['student'] if 'student' in nets else nets['teacher'],
            test.rgb, test.depth, eval_batch_size
        )
        logger.info(f'{record.name}: {record.metrics}')
    if out_dir is not None:
        out_dir = Path(out_dir)
        for name, net in nets.items():
            path = save_checkpoint(
                out_dir / CKPT_DIR / f'{name}.pt', net, record.config
            )
            record.checkpoints[name] = str(path)
        record.save(out_dir)
    return record


def _snapshot(cfg: TrainConfig, **specs: Description) -> Dict[str, Any]:
    snapshot = {'train': cfg.to_dict()}
    snapshot.update(
        (name, spec.to_dict()) for name, spec in specs.items()
        if spec is not None
    )
    return snapshot


def train_supervised(dataset,
                     cfg: TrainConfig,
                     spec: DepthNetworkSpec,
                     method: Method = Method.STUDENT_SUPERVISED,
                     test=None,
                     out_dir: Path or str = None) -> RunRecord:
    """
    Train a depth network on labelled data with the depth loss.

    :param dataset: the training set (arrays, manifest or directory)
    :param cfg: the training configuration
    :param spec: the network to train
    :param method: the method being run (`teacher_supervised` or
        `student_supervised`)
    :param test: the held-out evaluation set
    :param out_dir: the run directory
    :return: the run record (the checkpoint is named after `spec.role`)
    :raises depthkd.errors.DatasetError: if the dataset has no depth
    """
    cfg.validate()
    data = as_arrays(dataset)
    if data.depth is None or not bool(np.any(data.depth > 0)):
        raise DatasetError('Supervised training needs depth ground truth.')
    net = build_network(spec, seed=cfg.seed)
    net.train()
    optimizer = _optimizer(net, cfg)
    loader = _loader(
        [torch.from_numpy(data.rgb), torch.from_numpy(data.depth)], cfg
    )

    def step(batch, epoch, step_no):
        rgb, depth = batch
        loss = depth_loss(forward_depth(net, rgb), depth)
        _update(optimizer, loss, epoch, step_no, spec.role)
        return loss.to_dict()

    curves = _fit(lambda _: loader, step, [optimizer], cfg, method.value)
    record = RunRecord(
        method=method, seed=cfg.seed, curves=curves,
        config=_snapshot(cfg, **{spec.role: spec})
    )
    return _finish(record, {spec.role: net}, test, out_dir)


def train_teacher(dataset,
                  cfg: TrainConfig,
                  spec: DepthNetworkSpec,
                  test=None,
                  out_dir: Path or str = None) -> RunRecord:
    """
    Train the teacher on the target domain.

    :param dataset: the target-domain training set
    :param cfg: the training configuration
    :param spec: the teacher specification
    :param test: the held-out evaluation set
    :param out_dir: the run directory
    :return: the run record
    """
    return train_supervised(dataset, cfg, spec, Method.TEACHER_SUPERVISED,
                            test=test, out_dir=out_dir)


def run_kd_data_aware(teacher_ckpt,
                      dataset,
                      cfg: TrainConfig,
                      student_spec: DepthNetworkSpec,
                      test=None,
                      out_dir: Path or str = None,
                      teacher_spec: DepthNetworkSpec = None) -> RunRecord:
    """
    Distill with the target training set: the student follows the teacher
    (weight `λ`) and the ground truth (`1 - λ`).

    :param teacher_ckpt: the teacher (or its checkpoint)
    :param dataset: the labelled target-domain training set
    :param cfg: the training configuration
    :param student_spec: the student specification
    :param test: the held-out evaluation set
    :param out_dir: the run directory
    :param teacher_spec: if given, the teacher must match it
    :return: the run record
    :raises depthkd.errors.CheckpointError: if the teacher doesn't match
        `teacher_spec`
    """
    cfg.validate()
    teacher = _teacher(teacher_ckpt, student_spec, teacher_spec)
    data = as_arrays(dataset)
    student = build_network(student_spec, seed=cfg.seed)
    student.train()
    optimizer = _optimizer(student, cfg)
    loader = _loader(
        [torch.from_numpy(data.rgb), torch.from_numpy(data.depth)], cfg
    )

    def step(batch, epoch, step_no):
        rgb, depth = batch
        with torch.no_grad():
            target = forward_depth(teacher, rgb)
        loss = kd_plain_loss(target, forward_depth(student, rgb), depth,
                             cfg.kd_lambda)
        _update(optimizer, loss, epoch, step_no, 'student')
        return loss.to_dict()

    curves = _fit(lambda _: loader, step, [optimizer], cfg,
                  Method.KD_DATA_AWARE.value)
    record = RunRecord(
        method=Method.KD_DATA_AWARE, seed=cfg.seed, curves=curves,
        config=_snapshot(cfg, student=student_spec)
    )
    return _finish(record, {'student': student}, test, out_dir)


def _distill(teacher: nn.Module,
             ood: SampleArrays,
             cfg: TrainConfig,
             student_spec: DepthNetworkSpec,
             transform_spec: TransformNetworkSpec or None,
             flags: AblationFlags,
             desc: str) -> Tuple[List[Dict[str, float]], Dict[str, nn.Module]]:
    """
    Distill a student from OOD images.  With no enhancements this is plain KD
    with the OOD set; the enhancements add the second (mixed and transformed)
    branch and the updates of `G`.
    """
    use_g = AblationFlags.USE_G in flags
    use_mixing = AblationFlags.USE_MIXING in flags
    second_branch = use_g or use_mixing
    if use_mixing and ood.semantics is None:
        raise DatasetError('Mixing needs the semantic maps of the OOD set.')
    student = build_network(student_spec, seed=cfg.seed)
    student.train()
    optimizer = _optimizer(student, cfg)
    optimizers = [optimizer]
    nets = OrderedDict(student=student)
    g = None
    g_optimizer = None
    if use_g:
        g = build_network(transform_spec or TransformNetworkSpec(),
                          seed=cfg.seed + 1)
        g.train()
        g_optimizer = _optimizer(g, cfg)
        optimizers.append(g_optimizer)
        nets['g'] = g
    beta = cfg.beta if AblationFlags.USE_REC in flags else 0.0
    tensors = [torch.from_numpy(ood.rgb)]
    if use_mixing:
        tensors.append(torch.from_numpy(ood.semantics))
    loader = _loader(tensors, cfg)
    logger = logging.getLogger(__name__)

    def step(batch, epoch, step_no):
        raw = batch[0]
        mixed = None
        # A lone sample has no partner, so it isn't mixed.
        can_mix = raw.shape[0] >= 2
        if second_branch:
            mixed = raw
            if use_mixing and can_mix:
                results = mix_batch(
                    [
                        Sample(rgb=rgb.numpy(), depth=None,
                               semantics=sem.numpy())
                        for rgb, sem in zip(raw, batch[1])
                    ],
                    seed=[cfg.seed, step_no],
                    include_background=cfg.include_background
                )
                mixed = torch.from_numpy(
                    np.stack([r.mixed_rgb for r in results])
                )
        loss = distillation_objective(
            teacher, student, g, raw, mixed,
            branch_weights=cfg.branch_weights,
            transform_raw_branch=(
                AblationFlags.TRANSFORM_RAW_BRANCH in flags
            )
        )
        _update(optimizer, loss, epoch, step_no, 'student')
        terms = loss.to_dict()
        if g is not None and can_mix:
            g_loss = generator_objective(
                g, teacher, mixed, alpha=cfg.alpha, beta=beta,
                layer_mask=cfg.bn_layer_mask
            )
            _update(g_optimizer, g_loss, epoch, step_no, 'G')
            terms.update(
                (f'g_{key}', value) for key, value in g_loss.to_dict().items()
            )
        logger.debug(f'{desc}: step {step_no}: {terms}')
        return terms

    curves = _fit(lambda _: loader, step, optimizers, cfg, desc)
    return curves, nets


def run_kd_ood(teacher_ckpt,
               ood_dataset,
               cfg: TrainConfig,
               student_spec: DepthNetworkSpec,
               test=None,
               out_dir: Path or str = None,
               teacher_spec: DepthNetworkSpec = None) -> RunRecord:
    """
    Distill with the OOD set as a proxy for the target data: the student
    follows the teacher's predictions on the raw OOD images.

    :param teacher_ckpt: the teacher (or its checkpoint)
    :param ood_dataset: the OOD set
    :param cfg: the training configuration
    :param student_spec: the student specification
    :param test: the held-out evaluation set
    :param out_dir: the run directory
    :param teacher_spec: if given, the teacher must match it
    :return: the run record
    :raises depthkd.errors.CheckpointError: if the teacher doesn't match
        `teacher_spec`
    """
    cfg.validate()
    teacher = _teacher(teacher_ckpt, student_spec, teacher_spec)
    curves, nets = _distill(
        teacher, as_arrays(ood_dataset), cfg, student_spec, None,
        AblationFlags.NONE, Method.KD_OOD.value
    )
    record = RunRecord(
        method=Method.KD_OOD, seed=cfg.seed, curves=curves,
        config=_snapshot(cfg, student=student_spec)
    )
    return _finish(record, nets, test, out_dir)


def run_random_noise_kd(teacher_ckpt,
                        cfg: TrainConfig,
                        student_spec: DepthNetworkSpec,
                        num_samples: int = 1800,
                        test=None,
                        out_dir: Path or str = None,
                        teacher_spec: DepthNetworkSpec = None
                        ) -> RunRecord:
    """
    Distill with Gaussian noise images (clamped to `[0, 1]`), drawn fresh for
    every batch.

    :param teacher_ckpt: the teacher (or its checkpoint)
    :param cfg: the training configuration
    :param student_spec: the student specification
    :param num_samples: the number of noise images per epoch
    :param test: the held-out evaluation set
    :param out_dir: the run directory
    :param teacher_spec: if given, the teacher must match it
    :return: the run record
    :raises depthkd.errors.CheckpointError: if the teacher doesn't match
        `teacher_spec`
    """
    cfg.validate()
    if num_samples < 1:
        raise ConfigError('expected at least one sample', field='num_samples')
    teacher = _teacher(teacher_ckpt, student_spec, teacher_spec)
    student = build_network(student_spec, seed=cfg.seed)
    student.train()
    optimizer = _optimizer(student, cfg)
    generator = torch.Generator().manual_seed(cfg.seed)
    steps = math.ceil(num_samples / cfg.batch_size)

    def batches(_):
        for k in range(steps):
            size = min(cfg.batch_size, num_samples - k * cfg.batch_size)
            yield noise_images(size, student_spec.image_size, generator)

    def step(batch, epoch, step_no):
        loss = distillation_objective(teacher, student, None, batch, None)
        _update(optimizer, loss, epoch, step_no, 'student')
        return loss.to_dict()

    curves = _fit(batches, step, [optimizer], cfg,
                  Method.RANDOM_NOISE_KD.value)
    record = RunRecord(
        method=Method.RANDOM_NOISE_KD, seed=cfg.seed, curves=curves,
        config=_snapshot(cfg, student=student_spec),
        extras={'num_samples': num_samples}
    )
    return _finish(record, {'student': student}, test, out_dir)


def run_datafree_distillation(teacher_ckpt,
                              ood_dataset,
                              cfg: TrainConfig,
                              student_spec: DepthNetworkSpec,
                              transform_spec: TransformNetworkSpec = None,
                              test=None,
                              out_dir: Path or str = None,
                              label: str = None,
                              teacher_spec: DepthNetworkSpec = None
                              ) -> RunRecord:
    """
    Distill with mixed and transformed OOD images.  Each step draws a batch,
    mixes it with a seeded shuffle of itself, updates the student on both
    branches and then updates `G` on the same mixed batch.

    The configuration's ablation flags switch the enhancements off: without
    `use_g` the mixed images go to the networks directly, without `use_mixing`
    `G` sees the raw images, without `use_rec` the reconstruction term is
    dropped and `transform_raw_branch` passes the first branch through `G` as
    well.  With every enhancement off the run is exactly :py:func:`run_kd_ood`.

    :param teacher_ckpt: the teacher (or its checkpoint)
    :param ood_dataset: the OOD set (with semantic maps if mixing)
    :param cfg: the training configuration
    :param student_spec: the student specification
    :param transform_spec: the transformation network specification
    :param test: the held-out evaluation set
    :param out_dir: the run directory
    :param label: distinguishes this run (e.g. an ablation) in reports
    :param teacher_spec: if given, the teacher must match it
    :return: the run record (with `G`, its extras hold the mean image and
        depth discrepancies `G` introduces on the OOD set)
    :raises depthkd.errors.CheckpointError: if the teacher doesn't match
        `teacher_spec`
    :raises depthkd.errors.TrainingError: if a loss isn't finite
    """
    cfg.validate()
    teacher = _teacher(teacher_ckpt, student_spec, teacher_spec)
    transform_spec = transform_spec or TransformNetworkSpec()
    ood = as_arrays(ood_dataset)
    curves, nets = _distill(
        teacher, ood, cfg, student_spec, transform_spec,
        cfg.ablation_flags, Method.DATAFREE_FULL.value
    )
    extras = {}
    if 'g' in nets:
        extras['image_discrepancy'], extras['depth_discrepancy'] = (
            transform_discrepancy(teacher, nets['g'], ood.rgb)
        )
    record = RunRecord(
        method=Method.DATAFREE_FULL, seed=cfg.seed, curves=curves,
        config=_snapshot(cfg, student=student_spec, transform=transform_spec),
        label=label, extras=extras
    )
    return _finish(record, nets, test, out_dir)


def invert_images(teacher_ckpt,
                  images,
                  alpha: float = 0.001,
                  beta: float = 0.001,
                  steps: int = 100,
                  lr: float = 0.01,
                  layer_mask: Sequence[bool] or str = None
                  ) -> Tuple[torch.Tensor, List[float]]:
    """
    Optimize the pixels of a batch directly so that the teacher's feature
    statistics on it match its running statistics.

    :param teacher_ckpt: the teacher (or its checkpoint)
    :param images: the starting images (a batch of at least two)
    :param alpha: the weight of the BN alignment term
    :param beta: the weight of the reconstruction term
    :param steps: the number of optimizer steps
    :param lr: the learning rate
    :param layer_mask: selects the teacher's BN layers
    :return: the optimized images and the loss after each step
    """
    teacher = _teacher(teacher_ckpt)
    reference = torch.as_tensor(images).detach()
    pixels = reference.clone().requires_grad_(True)
    optimizer = Adam([pixels], lr=lr)
    history = []
    for step in range(steps):
        loss = pixel_objective(pixels, teacher, reference, alpha, beta,
                               layer_mask)
        _update(optimizer, loss, 0, step, 'pixel')
        with torch.no_grad():
            pixels.clamp_(0.0, 1.0)
        history.append(float(loss.total))
    return pixels.detach(), history


def invert_dataset(teacher_ckpt,
                   dataset,
                   alpha: float = 0.001,
                   beta: float = 0.001,
                   steps: int = 100,
                   lr: float = 0.01,
                   batch_size: int = 32,
                   layer_mask: Sequence[bool] or str = None) -> SampleArrays:
    """
    Invert a whole set of images with :py:func:`invert_images`, a batch at a
    time.

    :param teacher_ckpt: the teacher (or its checkpoint)
    :param dataset: the images to start from
    :param alpha: the weight of the BN alignment term
    :param beta: the weight of the reconstruction term
    :param steps: the number of optimizer steps per batch
    :param lr: the learning rate
    :param batch_size: the number of images optimized together
    :param layer_mask: selects the teacher's BN layers
    :return: the dataset with its images replaced by the optimized ones
    """
    teacher = _teacher(teacher_ckpt)
    data = as_arrays(dataset)
    logger = logging.getLogger(__name__)
    batches = []
    for i in tqdm(range(0, data.rgb.shape[0], batch_size), desc='invert',
                  leave=False, disable=_progress_disabled()):
        pixels, history = invert_images(
            teacher, data.rgb[i:i + batch_size], alpha, beta, steps, lr,
            layer_mask
        )
        logger.debug(f'invert: batch {i // batch_size}: {history[-1]:.6f}')
        batches.append(pixels.numpy().astype(data.rgb.dtype))
    return data._replace(rgb=np.concatenate(batches))
