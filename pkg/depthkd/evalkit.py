#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
.. currentmodule:: depthkd.evalkit
.. moduleauthor:: Pat Daburu <pat@daburu.net>

This module contains evaluation tools: depth metrics, depth histograms and
their comparison, the IFGSM robustness probe, the analysis of the
transformation network, and report generation.

The δ thresholds (`1.25`, `1.25²`, `1.25³`) follow the definition used
throughout the monocular depth estimation literature.
"""
import json
import logging
from collections import OrderedDict
from pathlib import Path
from typing import Iterable, List, NamedTuple, Sequence, Tuple
import matplotlib
import numpy as np
import torch
from scipy.spatial.distance import jensenshannon
from titlecase import titlecase
from torch import nn
from .errors import AttackError, CheckpointError, EvaluationError, \
    ShapeError
from .flags import Method
from .losses import depth_loss
from .meta import Description
from .nets import evaluating, forward_depth, forward_transform

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402  pylint: disable=wrong-import-position


DELTA_BASE = 1.25  #: the base of the δ threshold accuracies
MIN_PREDICTION = 1e-6  #: predictions are clamped to at least this depth (m)
METRIC_NAMES = ('rel', 'delta1', 'delta2', 'delta3', 'rmse', 'log10')


class MetricsReport(Description):
    """
    Depth metrics over an evaluation set.
    """
    __slots__ = [
        'rel', 'delta1', 'delta2', 'delta3', 'rmse', 'log10', 'n_pixels'
    ]

    def __init__(self,
                 rel: float,
                 delta1: float,
                 delta2: float,
                 delta3: float,
                 rmse: float,
                 log10: float,
                 n_pixels: int):
        """

        :param rel: the mean relative error
        :param delta1: the fraction of pixels within a ratio of 1.25
        :param delta2: the fraction of pixels within a ratio of 1.25²
        :param delta3: the fraction of pixels within a ratio of 1.25³
        :param rmse: the root mean squared error (m)
        :param log10: the mean absolute log10 error
        :param n_pixels: the number of pixels evaluated
        """
        self.rel = float(rel)
        self.delta1 = float(delta1)
        self.delta2 = float(delta2)
        self.delta3 = float(delta3)
        self.rmse = float(rmse)
        self.log10 = float(log10)
        self.n_pixels = int(n_pixels)

    def validate(self):
        if not 0.0 <= self.delta1 <= self.delta2 <= self.delta3 <= 1.0:
            raise EvaluationError('Expected 0 <= δ1 <= δ2 <= δ3 <= 1.')
        if not all(np.isfinite(getattr(self, m)) for m in METRIC_NAMES):
            raise EvaluationError('Every metric must be finite.')
        if self.n_pixels <= 0:
            raise EvaluationError('A report needs at least one pixel.')


def depth_metrics(pred, gt, valid_mask=None) -> MetricsReport:
    """
    Compute depth metrics over the valid pixels of a set of depth maps.

    :param pred: predicted depths (array or tensor)
    :param gt: ground-truth depths, same shape
    :param valid_mask: the pixels to score (by default, `gt > 0`)
    :return: the metrics
    :raises depthkd.errors.ShapeError: if the shapes don't match
    :raises depthkd.errors.EvaluationError: if no pixel is valid or a valid
        pixel has a non-positive ground truth
    """
    pred = torch.as_tensor(pred).detach().to(torch.float64).cpu()
    gt = torch.as_tensor(gt).detach().to(torch.float64).cpu()
    valid = (
        gt > 0 if valid_mask is None
        else torch.as_tensor(valid_mask).bool().cpu()
    )
    if pred.shape != gt.shape or valid.shape != gt.shape:
        raise ShapeError(
            f'Shape mismatch: pred {tuple(pred.shape)}, gt {tuple(gt.shape)}.'
        )
    if not bool(valid.any()):
        raise EvaluationError('There are no valid pixels to evaluate.')
    p = pred[valid].clamp(min=MIN_PREDICTION)
    g = gt[valid]
    if bool((g <= 0).any()):
        raise EvaluationError('Valid pixels must have positive ground truth.')
    ratio = torch.maximum(p / g, g / p)
    return MetricsReport(
        rel=float(((p - g).abs() / g).mean()),
        delta1=float((ratio < DELTA_BASE).double().mean()),
        delta2=float((ratio < DELTA_BASE ** 2).double().mean()),
        delta3=float((ratio < DELTA_BASE ** 3).double().mean()),
        rmse=float(((p - g) ** 2).mean().sqrt()),
        log10=float((torch.log10(p) - torch.log10(g)).abs().mean()),
        n_pixels=int(valid.sum())
    )


def predict_depth(net: nn.Module,
                  images,
                  batch_size: int = 32) -> torch.Tensor:
    """
    Run a depth network over a set of images in evaluation mode.

    :param net: the depth network
    :param images: N x height x width x 3 images (array or tensor)
    :param batch_size: the number of images per forward pass
    :return: the N x height x width predictions
    """
    images = torch.as_tensor(images)
    dtype = next(net.parameters()).dtype
    with torch.no_grad(), evaluating(net):
        return torch.cat([
            forward_depth(net, images[i:i + batch_size].to(dtype))
            for i in range(0, images.shape[0], batch_size)
        ])


def evaluate_network(net: nn.Module,
                     rgb,
                     depth,
                     batch_size: int = 32) -> MetricsReport:
    """
    Evaluate a depth network on a labelled set (metrics pool every pixel).

    :param net: the depth network
    :param rgb: N x height x width x 3 images
    :param depth: N x height x width ground truth (0 is invalid)
    :param batch_size: the number of images per forward pass
    :return: the metrics
    """
    return depth_metrics(predict_depth(net, rgb, batch_size), depth)


class DepthHistogram(NamedTuple):
    """
    A histogram of depths.
    """
    bin_edges: np.ndarray  #: the monotone bin edges (m)
    counts: np.ndarray  #: the pixel count of each bin
    normalized: np.ndarray  #: the probability mass of each bin


def depth_histogram(depths: Iterable,
                    bins: int = 20,
                    value_range: Tuple[float, float] = (0.0, 10.0)
                    ) -> DepthHistogram:
    """
    Histogram the valid (positive) pixels of a collection of depth maps.
    Depths outside the range are counted in the first or last bin.

    :param depths: depth maps (arrays or tensors)
    :param bins: the number of bins (>= 2)
    :param value_range: the (low, high) range of the bins
    :return: the histogram
    :raises depthkd.errors.EvaluationError: if there's nothing to count or the
        bins are invalid
    """
    lo, hi = value_range
    if bins < 2 or not hi > lo:
        raise EvaluationError(
            f'Invalid histogram: {bins} bins over ({lo}, {hi}).'
        )
    values = [
        np.asarray(torch.as_tensor(d).detach().cpu(), dtype=np.float64).ravel()
        for d in depths
    ]
    values = np.concatenate(values) if values else np.empty(0)
    values = values[values > 0]
    if values.size == 0:
        raise EvaluationError('There are no valid depths to histogram.')
    counts, edges = np.histogram(np.clip(values, lo, hi), bins=bins,
                                 range=(lo, hi))
    return DepthHistogram(
        bin_edges=edges,
        counts=counts,
        normalized=counts / counts.sum()
    )


def jensen_shannon(first: DepthHistogram, second: DepthHistogram) -> float:
    """
    Get the Jensen-Shannon divergence (base 2) between two histograms.

    :param first: a histogram
    :param second: another histogram over the same bins
    :return: the divergence, in [0, 1]
    """
    if not np.array_equal(first.bin_edges, second.bin_edges):
        raise EvaluationError('The histograms have different bins.')
    return float(
        jensenshannon(first.normalized, second.normalized, base=2) ** 2
    )


def noise_images(count: int,
                 image_size: Sequence[int],
                 generator: torch.Generator) -> torch.Tensor:
    """
    Draw unit Gaussian noise images clamped to [0, 1].

    :param count: the number of images
    :param image_size: (height, width)
    :param generator: the random source
    :return: the images
    """
    return torch.randn(
        (count, *image_size, 3), generator=generator
    ).clamp_(0.0, 1.0)


class HistogramAnalysis(NamedTuple):
    """
    The teacher's depth histograms on OOD images and on noise, compared with
    the target-domain ground truth.
    """
    target: DepthHistogram  #: ground truth in the target domain
    ood: DepthHistogram  #: teacher predictions on OOD images
    noise: DepthHistogram  #: teacher predictions on noise
    jsd_ood: float  #: JSD(ood, target)
    jsd_noise: float  #: JSD(noise, target)


def histogram_analysis(teacher: nn.Module,
                       target_depth,
                       ood_images,
                       noise_count: int = None,
                       seed: int = 0,
                       bins: int = 20,
                       batch_size: int = 32) -> HistogramAnalysis:
    """
    Compare the teacher's predictions on OOD images and on noise with the
    depths of the target domain.

    :param teacher: the teacher
    :param target_depth: target-domain ground-truth depth maps
    :param ood_images: OOD images
    :param noise_count: the number of noise images (by default, as many as
        there are OOD images)
    :param seed: seeds the noise
    :param bins: the number of histogram bins
    :param batch_size: the number of images per forward pass
    :return: the analysis
    """
    ood_images = torch.as_tensor(ood_images)
    noise_count = noise_count or ood_images.shape[0]
    value_range = (0.0, teacher.spec.max_depth)
    noise = noise_images(
        noise_count, teacher.spec.image_size,
        torch.Generator().manual_seed(seed)
    )
    target = depth_histogram([target_depth], bins, value_range)
    ood = depth_histogram(
        [predict_depth(teacher, ood_images, batch_size)], bins, value_range
    )
    noisy = depth_histogram(
        [predict_depth(teacher, noise, batch_size)], bins, value_range
    )
    return HistogramAnalysis(
        target=target, ood=ood, noise=noisy,
        jsd_ood=jensen_shannon(ood, target),
        jsd_noise=jensen_shannon(noisy, target)
    )


def _load_teacher(teacher, expected_spec=None):
    # Accept a network or a checkpoint path.
    from .distiller import load_checkpoint  # pylint: disable=cyclic-import
    if isinstance(teacher, nn.Module):
        if expected_spec is not None and teacher.spec != expected_spec:
            raise CheckpointError(
                f'The teacher is {teacher.spec!r}; expected {expected_spec!r}.'
            )
        return teacher
    net, _ = load_checkpoint(teacher, expected_spec=expected_spec)
    return net


def ifgsm_attack(teacher,
                 images: torch.Tensor,
                 epsilon: float,
                 steps: int = 10,
                 targets: torch.Tensor = None,
                 seed: int = 0) -> torch.Tensor:
    """
    Perturb images with the iterative fast gradient sign method: `steps`
    sign-gradient ascent steps of size `epsilon / steps` on the depth loss,
    keeping the perturbation within `epsilon` (∞-norm) and the pixels within
    `[0, 1]`.

    When no targets are given the loss is measured against the teacher's
    predictions on the clean images; as that loss has no gradient at the clean
    images, the attack then starts from a seeded uniform point in the
    `epsilon` ball.

    :param teacher: the teacher (or the path to its checkpoint)
    :param images: the clean images
    :param epsilon: the perturbation bound (>= 0)
    :param steps: the number of steps (>= 1)
    :param targets: the depths the loss is measured against (0 is invalid)
    :param seed: seeds the random start
    :return: the perturbed images (the input itself, cloned, when
        `epsilon` is 0)
    :raises depthkd.errors.AttackError: if the arguments are invalid or a
        gradient isn't finite
    """
    if epsilon < 0 or steps < 1:
        raise AttackError(
            f'Expected epsilon >= 0 and steps >= 1; got {epsilon}, {steps}.'
        )
    images = torch.as_tensor(images)
    if epsilon == 0:
        return images.clone()
    net = _load_teacher(teacher)
    with evaluating(net):
        if targets is None:
            with torch.no_grad():
                targets = forward_depth(net, images)
            start = torch.rand(
                images.shape, generator=torch.Generator().manual_seed(seed)
            ).to(images.dtype)
            adversarial = (images + epsilon * (2.0 * start - 1.0)).clamp(0, 1)
        else:
            adversarial = images.clone()
        targets = torch.as_tensor(targets).to(images.dtype)
        lower, upper = images - epsilon, images + epsilon
        step_size = epsilon / steps
        for step in range(steps):
            adversarial.requires_grad_(True)
            loss = depth_loss(
                forward_depth(net, adversarial), targets, targets > 0
            ).total
            grad, = torch.autograd.grad(loss, adversarial)
            if not bool(torch.isfinite(grad).all()):
                raise AttackError(
                    f'The gradient is not finite at step {step}.'
                )
            adversarial = adversarial.detach() + step_size * grad.sign()
            adversarial = torch.min(torch.max(adversarial, lower), upper)
            adversarial = adversarial.clamp(0.0, 1.0)
    return adversarial.detach()


def attack_dataset(teacher,
                   images,
                   targets=None,
                   epsilon: float = 0.0,
                   steps: int = 10,
                   batch_size: int = 32,
                   seed: int = 0) -> torch.Tensor:
    """
    Attack a whole set of images, a batch at a time.

    :param teacher: the teacher (or the path to its checkpoint)
    :param images: the clean images
    :param targets: the depths the loss is measured against (optional)
    :param epsilon: the perturbation bound
    :param steps: the number of steps
    :param batch_size: the number of images per batch
    :param seed: seeds the random starts
    :return: the perturbed images
    """
    images = torch.as_tensor(images)
    if epsilon == 0:
        return images.clone()
    net = _load_teacher(teacher)
    batches = []
    for i in range(0, images.shape[0], batch_size):
        batch_targets = (
            torch.as_tensor(targets)[i:i + batch_size]
            if targets is not None else None
        )
        batches.append(
            ifgsm_attack(net, images[i:i + batch_size], epsilon, steps,
                         batch_targets, seed=seed + i)
        )
    return torch.cat(batches)


def attack_probe(teacher,
                 images,
                 epsilons: Sequence[float],
                 steps: int = 10,
                 batch_size: int = 32,
                 seed: int = 0) -> List[float]:
    """
    Measure how far the teacher's predictions drift under attack: for every
    `epsilon`, the depth loss between its predictions on attacked and clean
    images.

    :param teacher: the teacher (or the path to its checkpoint)
    :param images: the clean images
    :param epsilons: the perturbation bounds
    :param steps: the number of attack steps
    :param batch_size: the number of images per batch
    :param seed: seeds the random starts
    :return: one self-inconsistency value per bound
    """
    net = _load_teacher(teacher)
    images = torch.as_tensor(images)
    clean = predict_depth(net, images, batch_size)
    drift = []
    for epsilon in epsilons:
        attacked = attack_dataset(net, images, None, epsilon, steps,
                                  batch_size, seed)
        with torch.no_grad():
            loss = depth_loss(
                predict_depth(net, attacked, batch_size), clean,
                torch.ones_like(clean, dtype=torch.bool)
            )
        drift.append(float(loss.total))
    return drift


def attack_then_distill(teacher_ckpt,
                        ood_dataset,
                        epsilons: Sequence[float],
                        cfg,
                        student_spec,
                        test=None,
                        out_root: Path or str = None,
                        steps: int = 10,
                        batch_size: int = 32,
                        teacher_spec=None) -> list:
    """
    For every perturbation bound, attack the OOD images (against their
    simulated depths) and distill a student on the attacked images, labelled
    by the teacher.

    :param teacher_ckpt: the teacher (or its checkpoint)
    :param ood_dataset: the OOD dataset (manifest or arrays)
    :param epsilons: the perturbation bounds
    :param cfg: the training configuration
    :param student_spec: the student specification
    :param test: the target-domain evaluation set
    :param out_root: a directory that receives one run directory (with the
        student's checkpoint) per bound
    :param steps: the number of attack steps
    :param batch_size: the number of images per attack batch
    :param teacher_spec: if given, the teacher must match it
    :return: one run record per bound
    :raises depthkd.errors.CheckpointError: if the teacher doesn't match
        `teacher_spec`
    """
    from . import distiller  # pylint: disable=cyclic-import
    logger = logging.getLogger(__name__)
    teacher = _load_teacher(teacher_ckpt, teacher_spec)
    ood = distiller.as_arrays(ood_dataset)
    records = []
    for epsilon in epsilons:
        label = f'eps{epsilon * 255:g}'
        attacked = attack_dataset(
            teacher, ood.rgb, ood.depth, epsilon, steps, batch_size, cfg.seed
        )
        out_dir = (
            Path(out_root) / f'{Method.KD_OOD.value}-{label}-seed{cfg.seed}'
            if out_root is not None else None
        )
        record = distiller.run_kd_ood(
            teacher,
            ood._replace(rgb=attacked.numpy().astype(ood.rgb.dtype)),
            cfg, student_spec, test=test, out_dir=out_dir
        )
        record.label = label
        record.extras['epsilon'] = float(epsilon)
        record.config['epsilon'] = float(epsilon)
        if out_dir is not None:
            record.save(out_dir)
        logger.info(f'ε = {epsilon:.5f}: {record.metrics}')
        records.append(record)
    return records


def transform_discrepancy(teacher: nn.Module,
                          g: nn.Module,
                          images,
                          batch_size: int = 32) -> Tuple[float, float]:
    """
    Measure what the transformation network changes: the mean absolute image
    difference `|x - G(x)|` and the mean absolute difference of the teacher's
    predictions on both.

    :param teacher: the teacher
    :param g: the transformation network
    :param images: the images
    :param batch_size: the number of images per forward pass
    :return: (image discrepancy, depth discrepancy)
    """
    images = torch.as_tensor(images)
    d_image, d_depth = 0.0, 0.0
    with torch.no_grad(), evaluating(teacher), evaluating(g):
        for i in range(0, images.shape[0], batch_size):
            batch = images[i:i + batch_size]
            transformed = forward_transform(g, batch)
            d_image += float((batch - transformed).abs().sum())
            d_depth += float((
                forward_depth(teacher, batch) -
                forward_depth(teacher, transformed)
            ).abs().sum())
    return d_image / images.numel(), d_depth / images[..., 0].numel()


def load_record(run_dir: Path or str):
    """
    Read the record of a finished run.

    :param run_dir: the run directory (or its `run.json`)
    :return: the run record
    :raises depthkd.errors.EvaluationError: if the record is missing or
        malformed
    """
    from .distiller import RunRecord  # pylint: disable=cyclic-import
    return RunRecord.load(run_dir)


def _row_names(records) -> List[str]:
    names = [
        f'{r.method.value}:{r.label}' if r.label else r.method.value
        for r in records
    ]
    duplicated = {n for n in names if names.count(n) > 1}
    return [
        f'{name}-seed{r.seed}' if name in duplicated else name
        for name, r in zip(names, records)
    ]


def _decorate(ax, title: str, xlabel: str, ylabel: str, unit: str = None):
    # Headings are title-cased; units are appended as written.
    ax.set_xlabel(
        titlecase(xlabel) + (f' ({unit})' if unit is not None else '')
    )
    ax.set_ylabel(titlecase(ylabel))
    ax.set_title(titlecase(title))


def _plot_curves(records, names, path: Path):
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, record in zip(names, records):
        ax.plot(
            [row['epoch'] + 1 for row in record.curves],
            [row['total'] for row in record.curves],
            label=name
        )
    _decorate(ax, 'training loss', 'epoch', 'loss')
    ax.legend(fontsize='small')
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_histograms(analysis: HistogramAnalysis, path: Path):
    """
    Plot the histograms of an analysis.

    :param analysis: the histogram analysis
    :param path: the image file
    """
    fig, ax = plt.subplots(figsize=(7, 4))
    centers = 0.5 * (analysis.target.bin_edges[1:] +
                     analysis.target.bin_edges[:-1])
    for label, hist in (('target ground truth', analysis.target),
                        (f'teacher on OOD (JSD {analysis.jsd_ood:.3f})',
                         analysis.ood),
                        (f'teacher on noise (JSD {analysis.jsd_noise:.3f})',
                         analysis.noise)):
        ax.plot(centers, hist.normalized, marker='o', label=titlecase(label))
    _decorate(ax, 'depth histograms', 'depth', 'fraction of pixels', unit='m')
    ax.legend(fontsize='small')
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


#: the sweeps a report plots: the extra swept, its scale, the axis heading,
#: the unit, the title and the plot's file name
SWEEPS = (
    ('epsilon', 255.0, 'perturbation bound', '1/255',
     'student accuracy under attack', 'epsilon_sweep.png'),
    ('gap', 1.0, 'domain gap', None,
     'student accuracy across the domain gap', 'gap_sweep.png'),
    ('ood_size', 1.0, 'OOD images', None,
     'student accuracy by OOD set size', 'scale_sweep.png')
)

#: the extras a report tabulates when any of its runs carries them
REPORTED_EXTRAS = (
    'epsilon', 'teacher_drift', 'ood_size', 'gap', 'image_discrepancy',
    'depth_discrepancy'
)


def _plot_sweep(records, path: Path, key: str = 'epsilon',
                scale: float = 255.0, xlabel: str = 'perturbation bound',
                unit: str = '1/255',
                title: str = 'student accuracy under attack'):
    swept = sorted(records, key=lambda r: r.extras[key])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([r.extras[key] * scale for r in swept],
            [r.metrics.delta1 for r in swept], marker='o')
    _decorate(ax, title, xlabel, 'accuracy within 1.25', unit=unit)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _cell(value) -> str:
    if value is None:
        return '-'
    if isinstance(value, float):
        return f'{value:.4f}'
    return str(value)


def make_report(records: Sequence,
                out_dir: Path or str,
                histograms: HistogramAnalysis = None) -> List[Path]:
    """
    Write a report: a metrics table (`metrics.json` and the aligned
    `metrics.txt`), a loss-curve plot, a histogram plot (if an analysis is
    supplied) and a sweep plot for each extra in :py:data:`SWEEPS` that two or
    more records carry.

    Rows are ordered by method, then label, then seed; records that would share
    a name are suffixed with their seed.  The extras in
    :py:data:`REPORTED_EXTRAS` that any record carries get a column of their
    own (`-` where a record lacks them).

    :param records: the run records
    :param out_dir: the report directory
    :param histograms: an optional histogram analysis
    :return: the paths of the files that were written
    :raises depthkd.errors.EvaluationError: if there are no records or the
        report can't be written
    """
    if not records:
        raise EvaluationError('A report needs at least one run record.')
    out_dir = Path(out_dir)
    records = sorted(
        records, key=lambda r: (Method(r.method).rank, r.label or '', r.seed)
    )
    names = _row_names(records)
    extras = [
        key for key in REPORTED_EXTRAS
        if any(key in r.extras for r in records)
    ]
    rows = []
    for name, record in zip(names, records):
        row = OrderedDict(
            name=name, method=record.method.value, label=record.label,
            seed=record.seed
        )
        row['metrics'] = (
            record.metrics.to_dict() if record.metrics is not None else None
        )
        row['extras'] = dict(record.extras)
        rows.append(row)
    headers = ['Run', 'REL', 'δ1', 'δ2', 'δ3', 'RMSE', 'log10'] + extras
    table = [headers] + [
        [row['name']] + (
            [f"{row['metrics'][m]:.4f}" for m in METRIC_NAMES]
            if row['metrics'] is not None else ['-'] * len(METRIC_NAMES)
        ) + [_cell(row['extras'].get(key)) for key in extras]
        for row in rows
    ]
    widths = [max(len(line[c]) for line in table) for c in range(len(headers))]
    text = '\n'.join(
        '  '.join(
            cell.ljust(w) if c == 0 else cell.rjust(w)
            for c, (cell, w) in enumerate(zip(line, widths))
        ).rstrip()
        for line in table
    ) + '\n'
    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        json_path = out_dir / 'metrics.json'
        json_path.write_text(
            json.dumps({'rows': rows}, indent=2, ensure_ascii=False) + '\n'
        )
        txt_path = out_dir / 'metrics.txt'
        txt_path.write_text(text)
        written.extend([json_path, txt_path])
        if any(r.curves for r in records):
            written.append(out_dir / 'loss_curves.png')
            _plot_curves(records, names, written[-1])
        if histograms is not None:
            written.append(out_dir / 'histograms.png')
            plot_histograms(histograms, written[-1])
        for key, scale, xlabel, unit, title, file_name in SWEEPS:
            swept = [
                r for r in records
                if key in r.extras and r.metrics is not None
            ]
            if len(swept) >= 2:
                written.append(out_dir / file_name)
                _plot_sweep(swept, written[-1], key, scale, xlabel, unit,
                            title)
    except OSError as ose:
        raise EvaluationError(
            f'Could not write the report to {out_dir}: {ose}'
        ) from ose
    logging.getLogger(__name__).info(
        f'Wrote a report of {len(records)} runs to {out_dir}.'
    )
    return written
