#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
.. currentmodule:: depthkd.losses
.. moduleauthor:: Pat Daburu <pat@daburu.net>

This module contains the training objectives.

Every objective returns a :py:class:`LossBreakdown` whose `total` is the
weighted sum of its named `components`.  Depth losses ignore pixels whose target
depth is 0.
"""
from collections import OrderedDict
from typing import Dict, Mapping, Sequence
import torch
import torch.nn.functional as F
from torch import nn
from .errors import LossError, ShapeError
from .flags import StatKind
from .nets import (
    BNStatSet, capture_batchwise_stats, evaluating, forward_depth,
    forward_transform, running_stats
)


LOG_OFFSET = 0.5  #: the offset inside the depth loss logarithm


class LossBreakdown(object):
    """
    A loss value along with the named terms it was made from.
    """
    __slots__ = ['total', 'components', 'weights']

    def __init__(self,
                 components: Mapping[str, torch.Tensor],
                 weights: Mapping[str, float] = None):
        """

        :param components: the named loss terms
        :param weights: the weight of each term (1 for terms that aren't
            listed)
        """
        self.components: Dict[str, torch.Tensor] = OrderedDict(components)
        self.weights: Dict[str, float] = OrderedDict(
            (name, float((weights or {}).get(name, 1.0)))
            for name in self.components
        )
        self.total: torch.Tensor = sum(
            self.weights[name] * value
            for name, value in self.components.items()
        )

    def to_dict(self) -> Dict[str, float]:
        """
        Get the loss as plain numbers (for logs and JSON).

        :return: the total and every component
        """
        values = OrderedDict(total=float(self.total))
        values.update(
            (name, float(value)) for name, value in self.components.items()
        )
        return values

    def is_finite(self) -> bool:
        """
        Are the total and every component finite?

        :return: `True` if all the values are finite
        """
        return all(
            bool(torch.isfinite(torch.as_tensor(v)).all())
            for v in [self.total, *self.components.values()]
        )

    def __repr__(self):
        terms = ', '.join(f'{k}={v:.6g}' for k, v in self.to_dict().items())
        return f'LossBreakdown({terms})'


def _log_error(values: torch.Tensor) -> torch.Tensor:
    return torch.log(values + LOG_OFFSET)


def _masked_mean(values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    count = mask.sum()
    if count == 0:
        return values.new_zeros(())
    return torch.where(mask, values, torch.zeros_like(values)).sum() / count


def _surface_normals(depth: torch.Tensor) -> torch.Tensor:
    # Forward differences on the (H - 1) x (W - 1) grid where both exist.
    dx = depth[:, :-1, 1:] - depth[:, :-1, :-1]
    dy = depth[:, 1:, :-1] - depth[:, :-1, :-1]
    return torch.stack([-dx, -dy, torch.ones_like(dx)], dim=-1)


def depth_loss(pred: torch.Tensor,
               target: torch.Tensor,
               valid_mask: torch.Tensor = None) -> LossBreakdown:
    """
    The composite depth loss: a log-error term, a gradient term and a surface
    normal term.  With `e = |pred - target|` and `F(a) = ln(a + 0.5)`:

    * `depth  = mean F(e)`
    * `grad   = mean F(|dx e|) + mean F(|dy e|)` (forward differences)
    * `normal = mean (1 - cos(n(pred), n(target)))` with
      `n(d) = (-dx d, -dy d, 1)`

    Each mean runs over the pixels (or pixel pairs) that are valid.

    :param pred: the predicted depths (batch x height x width)
    :param target: the target depths
    :param valid_mask: the pixels to score (by default, `target > 0`)
    :return: the loss
    :raises depthkd.errors.ShapeError: if the shapes don't match
    :raises depthkd.errors.LossError: if a sample has no valid pixels or a valid
        pixel has a non-positive target
    """
    if valid_mask is None:
        valid_mask = target > 0
    valid = valid_mask.bool()
    if pred.shape != target.shape or valid.shape != target.shape:
        raise ShapeError(
            f'Shape mismatch: pred {tuple(pred.shape)}, target '
            f'{tuple(target.shape)}, mask {tuple(valid.shape)}.'
        )
    if pred.dim() != 3:
        raise ShapeError('Expected batch x height x width depth maps.')
    if not bool(valid.flatten(1).any(dim=1).all()):
        raise LossError('Every sample needs at least one valid pixel.')
    if bool((target[valid] <= 0).any()):
        raise LossError('Valid pixels must have positive target depths.')
    error = (pred - target).abs()
    l_depth = _masked_mean(_log_error(error), valid)
    valid_x = valid[:, :, 1:] & valid[:, :, :-1]
    valid_y = valid[:, 1:, :] & valid[:, :-1, :]
    l_grad = (
        _masked_mean(
            _log_error((error[:, :, 1:] - error[:, :, :-1]).abs()), valid_x
        ) +
        _masked_mean(
            _log_error((error[:, 1:, :] - error[:, :-1, :]).abs()), valid_y
        )
    )
    valid_n = valid[:, :-1, :-1] & valid[:, :-1, 1:] & valid[:, 1:, :-1]
    cosine = F.cosine_similarity(
        _surface_normals(pred), _surface_normals(target), dim=-1
    )
    l_normal = _masked_mean(1.0 - cosine, valid_n)
    return LossBreakdown(
        OrderedDict(depth=l_depth, grad=l_grad, normal=l_normal)
    )


def kd_plain_loss(teacher_pred: torch.Tensor,
                  student_pred: torch.Tensor,
                  ground_truth: torch.Tensor,
                  kd_lambda: float = 0.9) -> LossBreakdown:
    """
    Knowledge distillation with labelled target data: the student is pulled
    toward the teacher (weight `λ`) and toward the ground truth (`1 - λ`).

    :param teacher_pred: the teacher's predictions
    :param student_pred: the student's predictions
    :param ground_truth: the ground-truth depths (0 is invalid)
    :param kd_lambda: the weight of the teacher term, in [0, 1]
    :return: the loss (components `teacher` and `ground_truth`)
    :raises depthkd.errors.LossError: if `kd_lambda` is out of range
    """
    if not 0.0 <= kd_lambda <= 1.0:
        raise LossError(f'λ must be in [0, 1]; got {kd_lambda}.')
    teacher_term = depth_loss(
        student_pred, teacher_pred.detach(),
        torch.ones_like(teacher_pred, dtype=torch.bool)
    )
    truth_term = depth_loss(student_pred, ground_truth, ground_truth > 0)
    return LossBreakdown(
        OrderedDict(teacher=teacher_term.total,
                    ground_truth=truth_term.total),
        weights={'teacher': kd_lambda, 'ground_truth': 1.0 - kd_lambda}
    )


def bn_alignment_loss(batch_stats: BNStatSet,
                      running: BNStatSet) -> torch.Tensor:
    """
    Compare batch-wise feature statistics with running statistics: the sum,
    over layers, of the (unsquared) Euclidean distance between the mean
    vectors plus that between the variance vectors.

    :param batch_stats: the batch-wise statistics
    :param running: the running statistics
    :return: the loss (a scalar tensor)
    :raises depthkd.errors.LossError: if the stat sets don't line up
    """
    if (batch_stats.kind != StatKind.BATCHWISE
            or running.kind != StatKind.RUNNING):
        raise LossError('Expected batch-wise and running statistics.')
    if not batch_stats.aligned_with(running):
        raise LossError(
            f'Misaligned statistics: {batch_stats.channel_counts} vs '
            f'{running.channel_counts}.'
        )
    terms = [
        torch.linalg.vector_norm(b.mean - r.mean) +
        torch.linalg.vector_norm(b.variance - r.variance)
        for b, r in zip(batch_stats, running)
    ]
    return torch.stack(terms).sum()


def reconstruction_loss(original: torch.Tensor,
                        transformed: torch.Tensor) -> torch.Tensor:
    """
    The mean absolute difference between two image batches.

    :param original: the original images
    :param transformed: the transformed images
    :return: the loss (a scalar tensor)
    :raises depthkd.errors.ShapeError: if the shapes don't match
    """
    if original.shape != transformed.shape:
        raise ShapeError(
            f'Cannot compare {tuple(original.shape)} with '
            f'{tuple(transformed.shape)} images.'
        )
    return (original - transformed).abs().mean()


def _check_weights(alpha: float, beta: float):
    if alpha < 0 or beta < 0:
        raise LossError(f'α and β must be >= 0; got {alpha}, {beta}.')


def generator_objective(g: nn.Module,
                        teacher: nn.Module,
                        mixed_batch: torch.Tensor,
                        alpha: float = 0.001,
                        beta: float = 0.001,
                        layer_mask: Sequence[bool] or str = None
                        ) -> LossBreakdown:
    """
    The objective of the transformation network: align the teacher's feature
    statistics on transformed images with its running statistics while
    keeping the transformed images close to the originals.

    :param g: the transformation network
    :param teacher: the (frozen) teacher
    :param mixed_batch: the images to transform
    :param alpha: the weight of the BN alignment term
    :param beta: the weight of the reconstruction term
    :param layer_mask: selects the teacher's BN layers
    :return: the loss (components `bn` and `rec`)
    :raises depthkd.errors.NetworkError: if the teacher has no BN layers
    """
    _check_weights(alpha, beta)
    transformed = forward_transform(g, mixed_batch)
    stats = capture_batchwise_stats(teacher, transformed, layer_mask)
    return LossBreakdown(
        OrderedDict(
            bn=bn_alignment_loss(stats, running_stats(teacher, layer_mask)),
            rec=reconstruction_loss(mixed_batch, transformed)
        ),
        weights={'bn': alpha, 'rec': beta}
    )


def pixel_objective(pixels: torch.Tensor,
                    teacher: nn.Module,
                    reference: torch.Tensor,
                    alpha: float = 0.001,
                    beta: float = 0.001,
                    layer_mask: Sequence[bool] or str = None
                    ) -> LossBreakdown:
    """
    The generator objective with the network replaced by free pixels: the
    images themselves are optimized to match the teacher's statistics.

    :param pixels: the images being optimized
    :param teacher: the (frozen) teacher
    :param reference: the images the pixels started from
    :param alpha: the weight of the BN alignment term
    :param beta: the weight of the reconstruction term
    :param layer_mask: selects the teacher's BN layers
    :return: the loss (components `bn` and `rec`)
    """
    _check_weights(alpha, beta)
    stats = capture_batchwise_stats(teacher, pixels, layer_mask)
    return LossBreakdown(
        OrderedDict(
            bn=bn_alignment_loss(stats, running_stats(teacher, layer_mask)),
            rec=reconstruction_loss(reference, pixels)
        ),
        weights={'bn': alpha, 'rec': beta}
    )


def distillation_objective(teacher: nn.Module,
                           student: nn.Module,
                           g: nn.Module or None,
                           raw_batch: torch.Tensor,
                           mixed_batch: torch.Tensor or None,
                           branch_weights: Sequence[float] = (1.0, 1.0),
                           transform_raw_branch: bool = False
                           ) -> LossBreakdown:
    """
    The student's objective.  The first branch distills on the raw OOD images;
    the second on the mixed images after the transformation network.  The
    teacher's predictions (and `G`'s outputs) are constants here, so no
    gradient reaches the teacher or `G`.

    :param teacher: the (frozen) teacher
    :param student: the student
    :param g: the transformation network (`None` feeds the mixed images to
        both networks directly)
    :param raw_batch: the OOD images
    :param mixed_batch: the mixed images (`None` drops the second branch)
    :param branch_weights: the weights of the two branches
    :param transform_raw_branch: Pass the raw images through `G` as well?
    :return: the loss (components `branch1` and, if present, `branch2`)
    :raises depthkd.errors.ShapeError: if the branches' shapes differ
    """
    if mixed_batch is not None and mixed_batch.shape != raw_batch.shape:
        raise ShapeError(
            f'The branches differ: {tuple(raw_batch.shape)} vs '
            f'{tuple(mixed_batch.shape)}.'
        )
    if transform_raw_branch and g is None:
        raise LossError('Transforming the raw branch needs a network G.')
    with torch.no_grad(), evaluating(teacher):
        inputs = [
            forward_transform(g, raw_batch) if transform_raw_branch
            else raw_batch
        ]
        if mixed_batch is not None:
            inputs.append(
                forward_transform(g, mixed_batch) if g is not None
                else mixed_batch
            )
        targets = [forward_depth(teacher, x) for x in inputs]
    components = OrderedDict()
    for k, (x, target) in enumerate(zip(inputs, targets), start=1):
        components[f'branch{k}'] = depth_loss(
            forward_depth(student, x), target,
            torch.ones_like(target, dtype=torch.bool)
        ).total
    return LossBreakdown(
        components,
        weights={'branch1': branch_weights[0], 'branch2': branch_weights[1]}
    )
