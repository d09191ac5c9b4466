#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
.. currentmodule:: depthkd.mixer
.. moduleauthor:: Pat Daburu <pat@daburu.net>

Object-wise mixing: the pixels of half the classes observed in one image are
pasted over a second image.
"""
import math
from pathlib import Path
from typing import Iterable, List, NamedTuple, Sequence, Tuple
import numpy as np
from ordered_set import OrderedSet
from PIL import Image
from .errors import MixError
from .simworld import Sample


class MixResult(NamedTuple):
    """
    The outcome of mixing two samples.
    """
    mixed_rgb: np.ndarray  #: height x width x 3, in [0, 1]
    mask: np.ndarray  #: height x width, 1 where pixels come from source i
    selected_classes: OrderedSet  #: the classes copied from source i
    source_ids: Tuple[int, int]  #: the indices of the sources (i, j)


def classmix(x_i: Sample,
             x_j: Sample,
             seed: int or np.random.SeedSequence,
             include_background: bool = True,
             source_ids: Tuple[int, int] = (0, 1),
             selected_classes: Iterable[int] = None) -> MixResult:
    """
    Mix two samples.  Half (rounded up) of the classes present in `x_i` are
    chosen uniformly at random; their pixels are taken from `x_i` and all other
    pixels from `x_j`.

    With the background excluded, a background-only `x_i` has no classes to
    offer: nothing is selected and the result is `x_j`.

    :param x_i: the sample that contributes the selected classes
    :param x_j: the sample that fills in the rest
    :param seed: seeds the class selection
    :param include_background: May the background class (0) be selected?
    :param source_ids: the batch indices of the two samples (bookkeeping)
    :param selected_classes: use these classes rather than drawing them
    :return: the mixed image, its mask and the selected classes
    :raises depthkd.errors.MixError: if the samples' sizes differ or `x_i`'s
        semantic map is empty
    """
    if (x_i.rgb.shape != x_j.rgb.shape
            or x_i.semantics.shape != x_i.rgb.shape[:2]):
        raise MixError(
            f'Cannot mix a {x_i.rgb.shape} image with a {x_j.rgb.shape} image.'
        )
    if x_i.semantics.size == 0:
        raise MixError('The semantic map is empty.')
    classes = np.unique(x_i.semantics)
    if not include_background:
        classes = classes[classes != 0]
    if selected_classes is not None:
        chosen = np.asarray(list(selected_classes), dtype=np.int64)
    elif classes.size == 0:
        chosen = np.empty(0, dtype=np.int64)
    else:
        rng = np.random.default_rng(seed)
        chosen = rng.choice(classes, size=math.ceil(classes.size / 2),
                            replace=False)
    selected = OrderedSet(sorted(int(c) for c in chosen))
    mask = np.isin(x_i.semantics, list(selected))
    mixed = np.where(mask[..., None], x_i.rgb, x_j.rgb)
    return MixResult(
        mixed_rgb=mixed,
        mask=mask.astype(np.uint8),
        selected_classes=selected,
        source_ids=tuple(source_ids)
    )


def mix_batch(batch: Sequence[Sample],
              seed: int,
              include_background: bool = True) -> List[MixResult]:
    """
    Mix every sample of a batch with a partner drawn from a seeded shuffle of
    the batch.

    :param batch: the samples
    :param seed: seeds the shuffle and every class selection
    :param include_background: May the background class (0) be selected?
    :return: one result per sample, in batch order
    :raises depthkd.errors.MixError: if the batch has fewer than two samples
    """
    if len(batch) < 2:
        raise MixError('Mixing needs a batch of at least two samples.')
    seq = np.random.SeedSequence(seed)
    perm_seq, *class_seqs = seq.spawn(len(batch) + 1)
    perm = np.random.default_rng(perm_seq).permutation(len(batch))
    return [
        classmix(
            batch[b], batch[int(perm[b])],
            seed=class_seqs[b],
            include_background=include_background,
            source_ids=(b, int(perm[b]))
        )
        for b in range(len(batch))
    ]


def _to_png(rgb: np.ndarray) -> Image.Image:
    return Image.fromarray(
        np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    )


def dump_mix(result: MixResult,
             out_dir: Path or str,
             stem: str,
             transformed: np.ndarray = None) -> List[Path]:
    """
    Write a mixed image and its mask (and, if given, the mixed image after the
    transformation network) as PNGs for inspection.

    :param result: the mix
    :param out_dir: the target directory
    :param stem: the file name stem
    :param transformed: the mixed image after the transformation network
    :return: the paths of the files that were written
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / f'{stem}_mixed.png', out_dir / f'{stem}_mask.png']
    _to_png(result.mixed_rgb).save(paths[0])
    Image.fromarray(result.mask * 255).save(paths[1])
    if transformed is not None:
        paths.append(out_dir / f'{stem}_transformed.png')
        _to_png(np.asarray(transformed)).save(paths[-1])
    return paths
