#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
.. currentmodule:: depthkd.simworld
.. moduleauthor:: Pat Daburu <pat@daburu.net>

This module generates paired RGB / depth / semantic scenes in configurable
visual domains and reads and writes them as datasets.

A scene is a 2.5-D composition: a floor whose inverse depth grows linearly
toward the bottom of the image, and a handful of flat rectangles and ellipses
standing on it.  Every object has one class and one depth, its apparent size
shrinks with distance, and the painter's algorithm (far to near) resolves
occlusion.  Two domains that share the geometry but differ in palette, texture
and sensor noise stand in for "real" target imagery and simulated OOD imagery.

Dataset layout::

    <out_dir>/manifest.json
    <out_dir>/rgb/<id>.png      8-bit RGB
    <out_dir>/depth/<id>.png    16-bit grayscale, millimeters (0 is invalid)
    <out_dir>/sem/<id>.png      8-bit grayscale, class ids
"""
import json
import logging
import shutil
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Iterable, List, NamedTuple, Sequence, Tuple
import numpy as np
from PIL import Image, UnidentifiedImageError
from .errors import ConfigError, DatasetError
from .flags import TextureStyle
from .meta import Description


FORMAT_VERSION = 1  #: the dataset format version
MANIFEST_FILE = 'manifest.json'  #: the name of the manifest file
MAX_ENCODED_DEPTH = 65.535  #: the deepest depth (m) the 16-bit encoding holds
FOG_STRENGTH = 0.4  #: how much the farthest surfaces are darkened
STRIPE_PERIOD = 3  #: the width (px) of a stripe
STRIPE_GAIN = 0.7  #: the brightness of the dark stripes
NOISY_TEXTURE_SIGMA = 0.2  #: the strength of the noisy texture
NEAR_HALF_HEIGHT = 0.6  #: half-height of the nearest objects (image fraction)


class DomainConfig(Description):
    """
    The parameters of a procedural scene domain.
    """
    __slots__ = [
        'name', 'image_size', 'depth_range', 'num_objects', 'num_classes',
        'palette', 'texture_style', 'pixel_noise_sigma', 'seed_namespace'
    ]

    def __init__(self,
                 name: str = 'domain',
                 image_size: Sequence[int] = (48, 64),
                 depth_range: Sequence[float] = (0.5, 10.0),
                 num_objects: Sequence[int] = (3, 7),
                 num_classes: int = 6,
                 palette: Sequence[Sequence[float]] = None,
                 texture_style: TextureStyle or str = TextureStyle.FLAT,
                 pixel_noise_sigma: float = 0.02,
                 seed_namespace: int = 0):
        """

        :param name: an identifier for the domain
        :param image_size: (height, width) in pixels
        :param depth_range: (min, max) object depth in meters
        :param num_objects: (min, max) number of objects per scene
        :param num_classes: the number of classes (class 0 is the background)
        :param palette: one base RGB color in [0, 1] per class
        :param texture_style: how colors are modulated
        :param pixel_noise_sigma: the standard deviation of RGB noise
        :param seed_namespace: offsets the seeds of the domain's samples
        """
        self.name = name
        self.image_size: Tuple[int, int] = tuple(int(v) for v in image_size)
        self.depth_range: Tuple[float, float] = tuple(
            float(v) for v in depth_range
        )
        self.num_objects: Tuple[int, int] = tuple(
            int(v) for v in num_objects
        )
        self.num_classes = int(num_classes)
        self.palette: Tuple[Tuple[float, ...], ...] = (
            tuple(tuple(float(c) for c in color) for color in palette)
            if palette is not None
            else _gray_ramp(self.num_classes)
        )
        self.texture_style = TextureStyle(texture_style)
        self.pixel_noise_sigma = float(pixel_noise_sigma)
        self.seed_namespace = int(seed_namespace)

    def validate(self):
        if len(self.image_size) != 2 or min(self.image_size) < 2:
            raise ConfigError('expected (height, width), each >= 2',
                              field='image_size')
        if len(self.depth_range) != 2:
            raise ConfigError('expected (min, max)', field='depth_range')
        lo, hi = self.depth_range
        if not 0 < lo < hi:
            raise ConfigError('expected 0 < min < max', field='depth_range')
        if hi > MAX_ENCODED_DEPTH:
            raise ConfigError(
                f'max depth must not exceed {MAX_ENCODED_DEPTH} m',
                field='depth_range'
            )
        if (len(self.num_objects) != 2
                or not 0 <= self.num_objects[0] <= self.num_objects[1]):
            raise ConfigError('expected 0 <= min <= max', field='num_objects')
        if not 2 <= self.num_classes <= 256:
            raise ConfigError('expected 2 <= num_classes <= 256',
                              field='num_classes')
        if len(self.palette) != self.num_classes:
            raise ConfigError(
                f'expected {self.num_classes} colors, '
                f'got {len(self.palette)}',
                field='palette'
            )
        for color in self.palette:
            if len(color) != 3 or not all(0.0 <= c <= 1.0 for c in color):
                raise ConfigError(f'invalid color {color}', field='palette')
        if not 0.0 <= self.pixel_noise_sigma <= 0.2:
            raise ConfigError('expected a value in [0, 0.2]',
                              field='pixel_noise_sigma')
        if self.seed_namespace < 0:
            raise ConfigError('expected a non-negative integer',
                              field='seed_namespace')


def _gray_ramp(num_classes: int) -> Tuple[Tuple[float, ...], ...]:
    return tuple(
        (v, v, v) for v in np.linspace(0.3, 0.9, num_classes).tolist()
    )


def blend_domains(near: DomainConfig,
                  far: DomainConfig,
                  t: float,
                  name: str = None) -> DomainConfig:
    """
    Interpolate between two domains to control the gap between them.  Colors,
    noise, depths and object counts move linearly from `near` (`t = 0`) to
    `far` (`t = 1`); the texture switches at `t = 0.5`.  Scenes are drawn from
    `far`'s seed namespace, so even `t = 0` gives images that aren't in
    `near`'s datasets.

    :param near: the domain at `t = 0`
    :param far: the domain at `t = 1`
    :param t: the position between them, in [0, 1]
    :param name: the name of the blend (by default, derived from `t`)
    :return: the blended domain
    :raises depthkd.errors.ConfigError: if `t` is outside [0, 1] or the domains
        can't be blended
    """
    if not 0.0 <= t <= 1.0:
        raise ConfigError('expected a value in [0, 1]', field='t')
    if near.num_classes != far.num_classes:
        raise ConfigError(
            f'cannot blend {near.num_classes} classes with '
            f'{far.num_classes}',
            field='num_classes'
        )
    if tuple(near.image_size) != tuple(far.image_size):
        raise ConfigError('the domains must share an image size',
                          field='image_size')

    def lerp(a, b):
        return (1.0 - t) * np.asarray(a, dtype=np.float64) + \
            t * np.asarray(b, dtype=np.float64)

    blended = DomainConfig(
        name=name or f'{near.name}-{far.name}-t{t:g}',
        image_size=far.image_size,
        depth_range=lerp(near.depth_range, far.depth_range).tolist(),
        num_objects=np.round(
            lerp(near.num_objects, far.num_objects)
        ).astype(int).tolist(),
        num_classes=far.num_classes,
        palette=np.clip(lerp(near.palette, far.palette), 0.0, 1.0).tolist(),
        texture_style=near.texture_style if t < 0.5 else far.texture_style,
        pixel_noise_sigma=float(
            lerp(near.pixel_noise_sigma, far.pixel_noise_sigma)
        ),
        seed_namespace=far.seed_namespace
    )
    blended.validate()
    return blended


class Sample(NamedTuple):
    """
    One registered triplet.
    """
    rgb: np.ndarray  #: height x width x 3, float32 in [0, 1]
    depth: np.ndarray  #: height x width, float32 meters (0 is invalid)
    semantics: np.ndarray  #: height x width, uint8 class ids


class SampleArrays(NamedTuple):
    """
    A whole dataset stacked into arrays.
    """
    rgb: np.ndarray  #: N x height x width x 3
    depth: np.ndarray  #: N x height x width
    semantics: np.ndarray  #: N x height x width


class SceneObject(NamedTuple):
    """
    One object of a scene layout.
    """
    class_id: int  #: the object's class
    depth: float  #: the object's (constant) depth in meters
    shape: str  #: 'rect' or 'ellipse'
    center: Tuple[float, float]  #: (row, column) of the center
    half_size: Tuple[float, float]  #: (half height, half width) in pixels

    def mask(self, height: int, width: int) -> np.ndarray:
        """
        Rasterize the object.

        :param height: the image height
        :param width: the image width
        :return: a boolean mask of the pixels the object covers
        """
        rows = np.arange(height, dtype=np.float64)[:, None]
        cols = np.arange(width, dtype=np.float64)[None, :]
        dr = (rows - self.center[0]) / self.half_size[0]
        dc = (cols - self.center[1]) / self.half_size[1]
        if self.shape == 'rect':
            return (np.abs(dr) <= 1.0) & (np.abs(dc) <= 1.0)
        return dr * dr + dc * dc <= 1.0


def floor_depth(config: DomainConfig) -> np.ndarray:
    """
    Get the depth of the floor at every row.  Inverse depth is linear in the
    row index, from the far end of the depth range on the top row to the near
    end on the bottom row.

    :param config: the domain
    :return: a vector of per-row depths
    """
    height = config.image_size[0]
    lo, hi = config.depth_range
    t = np.arange(height, dtype=np.float64) / max(height - 1, 1)
    return 1.0 / (1.0 / hi + (1.0 / lo - 1.0 / hi) * t)


def _floor_row(config: DomainConfig, depth: float) -> float:
    height = config.image_size[0]
    lo, hi = config.depth_range
    return (1.0 / depth - 1.0 / hi) / (1.0 / lo - 1.0 / hi) * (height - 1)


def _rngs(config: DomainConfig, seed: int) -> List[np.random.Generator]:
    # Layout and texture draw from independent streams so the layout of a
    # scene doesn't depend on its texture style.
    seq = np.random.SeedSequence([config.seed_namespace, seed])
    return [np.random.default_rng(s) for s in seq.spawn(2)]


def layout_scene(config: DomainConfig, seed: int) -> List[SceneObject]:
    """
    Lay out the objects of a scene.  Objects stand on the floor: an object's
    bottom edge sits on the floor row whose depth equals the object's depth.

    :param config: the domain
    :param seed: the sample seed
    :return: the objects (in generation order)
    """
    config.validate()
    if seed < 0:
        raise ConfigError('expected a non-negative seed', field='seed')
    rng, _ = _rngs(config, seed)
    height, width = config.image_size
    lo, hi = config.depth_range
    count = int(rng.integers(config.num_objects[0], config.num_objects[1] + 1))
    objects = []
    for _ in range(count):
        depth = float(rng.uniform(lo, hi))
        class_id = int(rng.integers(1, config.num_classes))
        shape = 'rect' if rng.integers(0, 2) == 0 else 'ellipse'
        half_h = max(
            1.0,
            NEAR_HALF_HEIGHT * height * (lo / depth) * rng.uniform(0.5, 1.0)
        )
        half_w = max(1.0, half_h * rng.uniform(0.6, 1.6))
        bottom = _floor_row(config, depth)
        col = float(rng.uniform(0, width - 1))
        objects.append(
            SceneObject(
                class_id=class_id,
                depth=depth,
                shape=shape,
                center=(bottom - half_h, col),
                half_size=(half_h, half_w)
            )
        )
    return objects


def _texture(config: DomainConfig, rng: np.random.Generator) -> np.ndarray:
    height, width = config.image_size
    if config.texture_style == TextureStyle.STRIPED:
        cols = np.arange(width)
        gain = np.where((cols // STRIPE_PERIOD) % 2 == 1, STRIPE_GAIN, 1.0)
        return np.broadcast_to(gain[None, :], (height, width)).copy()
    if config.texture_style == TextureStyle.NOISY:
        return 1.0 + NOISY_TEXTURE_SIGMA * rng.standard_normal((height, width))
    return np.ones((height, width))


def generate_sample(config: DomainConfig, seed: int) -> Sample:
    """
    Generate one sample.  The sample is a deterministic function of the domain
    and the seed.

    :param config: the domain
    :param seed: the sample seed (>= 0)
    :return: the sample
    :raises depthkd.errors.ConfigError: if the domain (or seed) is invalid
    """
    objects = layout_scene(config, seed)
    _, rng = _rngs(config, seed)
    height, width = config.image_size
    lo, hi = config.depth_range
    palette = np.asarray(config.palette, dtype=np.float64)
    # Start with the floor...
    depth = np.repeat(floor_depth(config)[:, None], width, axis=1)
    semantics = np.zeros((height, width), dtype=np.uint8)
    color = np.broadcast_to(palette[0], (height, width, 3)).copy()
    # ...and paint the objects from back to front so nearer ones win.
    for obj in sorted(objects, key=lambda o: -o.depth):
        mask = obj.mask(height, width)
        depth[mask] = obj.depth
        semantics[mask] = obj.class_id
        color[mask] = palette[obj.class_id]
    # Farther surfaces are darker.
    fog = 1.0 - FOG_STRENGTH * (depth - lo) / (hi - lo)
    rgb = color * (fog * _texture(config, rng))[..., None]
    if config.pixel_noise_sigma > 0:
        rgb = rgb + config.pixel_noise_sigma * rng.standard_normal(rgb.shape)
    return Sample(
        rgb=np.clip(rgb, 0.0, 1.0).astype(np.float32),
        depth=depth.astype(np.float32),
        semantics=semantics
    )


class SampleRecord(NamedTuple):
    """
    The files that hold one sample (relative to the dataset directory).
    """
    id: int  #: the sample id
    rgb: str  #: the RGB image file
    depth: str  #: the depth image file
    sem: str  #: the semantic map file


class DatasetManifest(object):
    """
    Describes a dataset on disk.
    """
    __slots__ = ['domain', 'count', 'sample_records', 'format_version', 'root']

    def __init__(self,
                 domain: DomainConfig,
                 sample_records: Sequence[SampleRecord],
                 root: Path = None,
                 format_version: int = FORMAT_VERSION,
                 count: int = None):
        """

        :param domain: the domain the samples were drawn from
        :param sample_records: the sample records, ordered by id
        :param root: the dataset directory
        :param format_version: the dataset format version
        :param count: the sample count (checked against the records)
        """
        self.domain = domain
        self.sample_records: List[SampleRecord] = list(sample_records)
        self.count = len(self.sample_records) if count is None else int(count)
        self.format_version = int(format_version)
        self.root = Path(root) if root is not None else None
        if self.count != len(self.sample_records):
            raise DatasetError(
                f'The manifest declares {self.count} samples but lists '
                f'{len(self.sample_records)}.'
            )
        if [r.id for r in self.sample_records] != list(range(self.count)):
            raise DatasetError('Sample ids must be dense and ordered.')

    def to_dict(self) -> dict:
        """
        Get the JSON representation of the manifest.

        :return: the manifest as a dictionary
        """
        return {
            'domain': self.domain.to_dict(),
            'count': self.count,
            'sample_records': [r._asdict() for r in self.sample_records],
            'format_version': self.format_version
        }

    @classmethod
    def from_dict(cls, values: dict, root: Path = None) -> 'DatasetManifest':
        """
        Create a manifest from its JSON representation.

        :param values: the manifest as a dictionary
        :param root: the dataset directory
        :return: the manifest
        """
        return cls(
            domain=DomainConfig.from_dict(values['domain']),
            sample_records=[
                SampleRecord(**r) for r in values['sample_records']
            ],
            root=root,
            format_version=values['format_version'],
            count=values['count']
        )


def _record(sample_id: int) -> SampleRecord:
    return SampleRecord(
        id=sample_id,
        rgb=f'rgb/{sample_id}.png',
        depth=f'depth/{sample_id}.png',
        sem=f'sem/{sample_id}.png'
    )


def encode_depth(depth: np.ndarray) -> np.ndarray:
    """
    Encode depth (meters) as 16-bit millimeters.

    :param depth: the depth map
    :return: the encoded map
    """
    return np.round(depth.astype(np.float64) * 1000.0).astype(np.uint16)


def decode_depth(encoded: np.ndarray) -> np.ndarray:
    """
    Decode 16-bit millimeters to depth in meters.

    :param encoded: the encoded map
    :return: the depth map
    """
    return (encoded.astype(np.float64) / 1000.0).astype(np.float32)


def write_sample(sample: Sample, out_dir: Path, record: SampleRecord):
    """
    Write a sample's files.

    :param sample: the sample
    :param out_dir: the dataset directory
    :param record: where the files go
    """
    rgb = np.round(sample.rgb * 255.0).astype(np.uint8)
    Image.fromarray(rgb).save(out_dir / record.rgb)
    Image.fromarray(encode_depth(sample.depth)).save(out_dir / record.depth)
    Image.fromarray(sample.semantics.astype(np.uint8)).save(
        out_dir / record.sem
    )


def _generate_seeded(args: Tuple[DomainConfig, int]) -> Sample:
    config, seed = args
    return generate_sample(config, seed)


def generate_dataset(config: DomainConfig,
                     count: int,
                     out_dir: Path or str,
                     workers: int = 1) -> DatasetManifest:
    """
    Generate a dataset and write it to a directory.  Sample `i` is generated
    with seed `seed_namespace + i`.

    :param config: the domain
    :param count: the number of samples (>= 1)
    :param out_dir: the dataset directory
    :param workers: the number of processes that generate samples (files are
        always written by this process)
    :return: the manifest
    :raises depthkd.errors.DatasetError: if the dataset can't be written; the
        partial output is removed
    """
    config.validate()
    if count < 1:
        raise ConfigError('expected at least one sample', field='count')
    out_dir = Path(out_dir)
    existed = out_dir.exists()
    logger = logging.getLogger(__name__)
    records = [_record(i) for i in range(count)]
    seeds = [(config, config.seed_namespace + i) for i in range(count)]
    try:
        for sub in ('rgb', 'depth', 'sem'):
            (out_dir / sub).mkdir(parents=True, exist_ok=True)
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                samples = pool.map(_generate_seeded, seeds, chunksize=16)
                for record, sample in zip(records, samples):
                    write_sample(sample, out_dir, record)
        else:
            for record, args in zip(records, seeds):
                write_sample(_generate_seeded(args), out_dir, record)
        manifest = DatasetManifest(
            domain=config, sample_records=records, root=out_dir
        )
        (out_dir / MANIFEST_FILE).write_text(
            json.dumps(manifest.to_dict(), indent=2, sort_keys=True)
        )
    except OSError as ose:
        # Don't leave a partial dataset behind.
        if existed:
            for sub in ('rgb', 'depth', 'sem'):
                shutil.rmtree(out_dir / sub, ignore_errors=True)
            (out_dir / MANIFEST_FILE).unlink(missing_ok=True)
        else:
            shutil.rmtree(out_dir, ignore_errors=True)
        raise DatasetError(
            f'Could not write the dataset to {out_dir}: {ose}'
        ) from ose
    logger.info(f'Wrote {count} {config.name} samples to {out_dir}.')
    return manifest


def load_manifest(path: Path or str) -> DatasetManifest:
    """
    Read a dataset manifest.

    :param path: the dataset directory (or the manifest file itself)
    :return: the manifest
    :raises depthkd.errors.DatasetError: if the manifest is missing or corrupt
    """
    path = Path(path)
    manifest_path = path / MANIFEST_FILE if path.is_dir() else path
    try:
        values = json.loads(manifest_path.read_text())
    except (OSError, ValueError) as err:
        raise DatasetError(
            f'Could not read the manifest {manifest_path}: {err}'
        ) from err
    if values.get('format_version') != FORMAT_VERSION:
        raise DatasetError(
            f'{manifest_path} has format version '
            f'{values.get("format_version")}; expected {FORMAT_VERSION}.'
        )
    try:
        return DatasetManifest.from_dict(values, root=manifest_path.parent)
    except (KeyError, TypeError) as err:
        raise DatasetError(
            f'The manifest {manifest_path} is malformed: {err}'
        ) from err


def _read_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.array(img)
    except (OSError, UnidentifiedImageError) as err:
        raise DatasetError(f'Could not read {path}: {err}') from err


def load_sample(manifest: DatasetManifest, sample_id: int) -> Sample:
    """
    Read one sample of a dataset.

    :param manifest: the dataset manifest
    :param sample_id: the sample id
    :return: the sample
    :raises depthkd.errors.DatasetError: if the id is out of range or a file is
        missing or corrupt
    """
    if not 0 <= sample_id < manifest.count:
        raise DatasetError(
            f'Sample {sample_id} is out of range [0, {manifest.count}).'
        )
    record = manifest.sample_records[sample_id]
    root = manifest.root if manifest.root is not None else Path('.')
    rgb = _read_png(root / record.rgb)
    depth = _read_png(root / record.depth)
    sem = _read_png(root / record.sem)
    expected = tuple(manifest.domain.image_size)
    if (rgb.shape != expected + (3,) or depth.shape != expected
            or sem.shape != expected):
        raise DatasetError(
            f'Sample {sample_id} in {root} does not have the size {expected}.'
        )
    return Sample(
        rgb=(rgb.astype(np.float32) / 255.0),
        depth=decode_depth(depth),
        semantics=sem.astype(np.uint8)
    )


def load_arrays(manifest: DatasetManifest,
                ids: Iterable[int] = None) -> SampleArrays:
    """
    Read samples of a dataset into stacked arrays.

    :param manifest: the dataset manifest
    :param ids: the ids to read (all of them by default)
    :return: the stacked arrays
    """
    ids = list(range(manifest.count)) if ids is None else list(ids)
    samples = [load_sample(manifest, i) for i in ids]
    return SampleArrays(
        rgb=np.stack([s.rgb for s in samples]),
        depth=np.stack([s.depth for s in samples]),
        semantics=np.stack([s.semantics for s in samples])
    )
