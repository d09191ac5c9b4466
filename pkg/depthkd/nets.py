#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
.. currentmodule:: depthkd.nets
.. moduleauthor:: Pat Daburu <pat@daburu.net>

This module contains the desk-scale networks: the teacher and student depth
estimators (encoder-decoders whose batch-normalization layers can be read and
probed) and the image-to-image transformation network `G`.

Images are passed around as `batch x height x width x 3` tensors with values in
`[0, 1]`; depth maps as `batch x height x width` tensors in meters.  Everything
outside this module touches the networks only through :py:func:`build_network`,
:py:func:`forward_depth`, :py:func:`forward_transform`,
:py:func:`capture_batchwise_stats` and :py:func:`running_stats`.
"""
import logging
from contextlib import contextmanager
from typing import Iterator, List, NamedTuple, Sequence, Union
import torch
import torch.nn.functional as F
from torch import nn
from .errors import ConfigError, NetworkError, ShapeError
from .flags import StatKind
from .meta import Description


MIN_DEPTH_FRACTION = 1e-6  #: the smallest output, as a fraction of max_depth
ROLES = ('teacher', 'student')  #: the roles a depth network may play


class DepthNetworkSpec(Description):
    """
    Describes a depth estimation network.
    """
    __slots__ = [
        'role', 'base_width', 'depth_stages', 'uses_batchnorm', 'max_depth',
        'image_size'
    ]

    def __init__(self,
                 role: str = 'student',
                 base_width: int = 8,
                 depth_stages: int = 4,
                 uses_batchnorm: bool = True,
                 max_depth: float = 10.0,
                 image_size: Sequence[int] = (48, 64)):
        """

        :param role: 'teacher' or 'student'
        :param base_width: the channel count of the first stage
        :param depth_stages: the number of downsampling stages
        :param uses_batchnorm: Does the network normalize its features?
        :param max_depth: the largest depth (m) the network can predict
        :param image_size: the (height, width) the network accepts
        """
        self.role = role
        self.base_width = int(base_width)
        self.depth_stages = int(depth_stages)
        self.uses_batchnorm = bool(uses_batchnorm)
        self.max_depth = float(max_depth)
        self.image_size = tuple(int(v) for v in image_size)

    def validate(self):
        if self.role not in ROLES:
            raise ConfigError(f'expected one of {ROLES}', field='role')
        if self.base_width < 4:
            raise ConfigError('expected a value >= 4', field='base_width')
        if self.depth_stages < 2:
            raise ConfigError('expected a value >= 2', field='depth_stages')
        if self.role == 'teacher' and not self.uses_batchnorm:
            raise ConfigError('a teacher must use batch normalization',
                              field='uses_batchnorm')
        if self.max_depth <= 0:
            raise ConfigError('expected a positive depth', field='max_depth')
        if len(self.image_size) != 2 or min(self.image_size) < 2:
            raise ConfigError('expected (height, width), each >= 2',
                              field='image_size')


class TransformNetworkSpec(Description):
    """
    Describes the transformation network.
    """
    __slots__ = ['base_width', 'dilation_rates', 'skip_connections']

    def __init__(self,
                 base_width: int = 16,
                 dilation_rates: Sequence[int] = (1, 2, 4),
                 skip_connections: Sequence[Sequence[int]] = None):
        """

        :param base_width: the channel count of the first stage
        :param dilation_rates: the dilation rate of each encoder stage
        :param skip_connections: (encoder stage, decoder stage) pairs; by
            default every encoder stage feeds its mirror-image decoder stage
        """
        self.base_width = int(base_width)
        self.dilation_rates = tuple(int(d) for d in dilation_rates)
        n = len(self.dilation_rates)
        self.skip_connections = (
            tuple(tuple(int(v) for v in pair) for pair in skip_connections)
            if skip_connections is not None
            else tuple((i, n - 1 - i) for i in range(n))
        )

    def validate(self):
        if self.base_width < 1:
            raise ConfigError('expected a positive value', field='base_width')
        n = len(self.dilation_rates)
        if n < 1 or any(d < 1 for d in self.dilation_rates):
            raise ConfigError('expected one or more positive rates',
                              field='dilation_rates')
        symmetric = {(i, n - 1 - i) for i in range(n)}
        if (len(self.skip_connections) != n
                or set(self.skip_connections) != symmetric):
            raise ConfigError(
                'skip connections must join each encoder stage i to decoder '
                f'stage {n - 1}-i',
                field='skip_connections'
            )


NetworkSpec = Union[DepthNetworkSpec, TransformNetworkSpec]


def _conv(cin: int, cout: int, batchnorm: bool, dilation: int = 1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=dilation, dilation=dilation,
                  bias=not batchnorm),
        nn.BatchNorm2d(cout) if batchnorm else nn.Identity(),
        nn.ReLU(inplace=True)
    )


class DepthNet(nn.Module):
    """
    A U-Net style depth estimator with a scaled-sigmoid output.
    """
    def __init__(self, spec: DepthNetworkSpec):
        super().__init__()
        self.spec = spec
        bn = spec.uses_batchnorm
        widths = [
            min(spec.base_width * 2 ** i, spec.base_width * 8)
            for i in range(spec.depth_stages)
        ]
        self.encoder = nn.ModuleList()
        cin = 3
        for width in widths:
            self.encoder.append(
                nn.Sequential(_conv(cin, width, bn), _conv(width, width, bn))
            )
            cin = width
        self.pool = nn.MaxPool2d(2, ceil_mode=True)
        self.bottleneck = _conv(cin, cin, bn)
        self.decoder = nn.ModuleList()
        for width in reversed(widths):
            self.decoder.append(_conv(cin + width, width, bn))
            cin = width
        self.head = nn.Conv2d(cin, 1, 1)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = images.permute(0, 3, 1, 2)
        skips = []
        for stage in self.encoder:
            x = stage(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for stage, skip in zip(self.decoder, reversed(skips)):
            x = F.interpolate(x, size=skip.shape[-2:], mode='bilinear',
                              align_corners=False)
            x = stage(torch.cat([x, skip], dim=1))
        depth = torch.sigmoid(self.head(x)).clamp(min=MIN_DEPTH_FRACTION)
        return self.spec.max_depth * depth[:, 0]


class TransformNet(nn.Module):
    """
    A dilated-convolution encoder-decoder with symmetric skip connections that
    predicts a correction which is added to its input.
    """
    def __init__(self, spec: TransformNetworkSpec):
        super().__init__()
        self.spec = spec
        widths = [spec.base_width * 2 ** i for i in range(
            len(spec.dilation_rates))]
        self.encoder = nn.ModuleList()
        cin = 3
        for width, rate in zip(widths, spec.dilation_rates):
            self.encoder.append(
                nn.Sequential(
                    _conv(cin, width, False, dilation=rate),
                    _conv(width, width, False, dilation=rate)
                )
            )
            cin = width
        self.pool = nn.AvgPool2d(2, ceil_mode=True)
        self.bottleneck = _conv(cin, cin, False)
        # Decoder stage k reads the encoder stage that's wired to it.
        self._skip_of = {dec: enc for enc, dec in spec.skip_connections}
        self.decoder = nn.ModuleList()
        for k in range(len(widths)):
            width = widths[self._skip_of[k]]
            self.decoder.append(_conv(cin + width, width, False))
            cin = width
        self.head = nn.Conv2d(cin, 3, 1)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = images.permute(0, 3, 1, 2)
        inputs = x
        skips = []
        for stage in self.encoder:
            x = stage(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for k, stage in enumerate(self.decoder):
            skip = skips[self._skip_of[k]]
            x = F.interpolate(x, size=skip.shape[-2:], mode='bilinear',
                              align_corners=False)
            x = stage(torch.cat([x, skip], dim=1))
        out = (inputs + self.head(x)).clamp(0.0, 1.0)
        return out.permute(0, 2, 3, 1)


def build_network(spec: NetworkSpec, seed: int = 0) -> nn.Module:
    """
    Build a network.  Initialization is a deterministic function of the seed
    and doesn't disturb the global random state.

    :param spec: a depth network or transformation network specification
    :param seed: the initialization seed
    :return: the network
    :raises depthkd.errors.ConfigError: if the specification is invalid
    """
    spec.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        if isinstance(spec, DepthNetworkSpec):
            net = DepthNet(spec)
        elif isinstance(spec, TransformNetworkSpec):
            net = TransformNet(spec)
        else:
            raise NetworkError(f'Unsupported specification {spec!r}.')
    logging.getLogger(__name__).debug(
        f'Built {type(net).__name__} with {parameter_count(net)} parameters.'
    )
    return net


def parameter_count(net: nn.Module) -> int:
    """
    Count a network's parameters.

    :param net: the network
    :return: the number of scalar parameters
    """
    return sum(p.numel() for p in net.parameters())


def freeze(net: nn.Module) -> nn.Module:
    """
    Put a network in evaluation mode and stop gradients to its parameters.

    :param net: the network
    :return: the same network
    """
    net.eval()
    net.requires_grad_(False)
    return net


@contextmanager
def evaluating(net: nn.Module) -> Iterator[nn.Module]:
    """
    Temporarily put a network in evaluation mode.

    :param net: the network
    """
    was_training = net.training
    net.eval()
    try:
        yield net
    finally:
        net.train(was_training)


def _check_images(images: torch.Tensor, size: Sequence[int] = None):
    if images.dim() != 4 or images.shape[-1] != 3:
        raise ShapeError(
            f'Expected a batch x height x width x 3 tensor; got '
            f'{tuple(images.shape)}.'
        )
    if size is not None and tuple(images.shape[1:3]) != tuple(size):
        raise ShapeError(
            f'The network accepts {tuple(size)} images; got '
            f'{tuple(images.shape[1:3])}.'
        )


def forward_depth(net: DepthNet, images: torch.Tensor) -> torch.Tensor:
    """
    Estimate depth.

    :param net: the depth network
    :param images: a batch x height x width x 3 batch in [0, 1]
    :return: a batch x height x width batch of depths in (0, max_depth]
    :raises depthkd.errors.ShapeError: if the images don't fit the network
    """
    _check_images(images, net.spec.image_size)
    return net(images)


def forward_transform(g: TransformNet, images: torch.Tensor) -> torch.Tensor:
    """
    Transform images.

    :param g: the transformation network
    :param images: a batch x height x width x 3 batch in [0, 1]
    :return: the transformed batch (same shape, values in [0, 1])
    :raises depthkd.errors.ShapeError: if the batch isn't shaped like images
    """
    _check_images(images)
    return g(images)


class BNLayerStats(NamedTuple):
    """
    The statistics of one batch-normalization layer.
    """
    mean: torch.Tensor  #: per-channel mean
    variance: torch.Tensor  #: per-channel (biased) variance
    channel_count: int  #: the number of channels


class BNStatSet(object):
    """
    Per-layer batch-normalization statistics, in forward traversal order.
    """
    __slots__ = ['layers', 'kind']

    def __init__(self, layers: Sequence[BNLayerStats], kind: StatKind):
        """

        :param layers: the per-layer statistics
        :param kind: running or batch-wise statistics
        """
        self.layers: List[BNLayerStats] = list(layers)
        self.kind = StatKind(kind)

    def __len__(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    @property
    def channel_counts(self) -> List[int]:
        """
        Get the channel count of every layer.

        :return: the channel counts
        """
        return [layer.channel_count for layer in self.layers]

    def aligned_with(self, other: 'BNStatSet') -> bool:
        """
        Do two stat sets describe the same layers?

        :param other: the other stat set
        :return: `True` if the layer counts and channel counts agree
        """
        return self.channel_counts == other.channel_counts

    def __repr__(self):
        return (f'BNStatSet(kind={self.kind.value}, '
                f'channel_counts={self.channel_counts})')


def bn_layers(net: nn.Module,
              layer_mask: Sequence[bool] or str = None) -> List[nn.BatchNorm2d]:
    """
    Get a network's batch-normalization layers in forward traversal order.

    :param net: the network
    :param layer_mask: `None` (all layers), 'encoder' (the encoder's layers
        only), or one flag per layer
    :return: the selected layers
    :raises depthkd.errors.NetworkError: if the network has no BN layers or
        the mask doesn't fit
    """
    layers = [m for m in net.modules() if isinstance(m, nn.BatchNorm2d)]
    if not layers:
        raise NetworkError(
            f'{type(net).__name__} has no batch-normalization layers.'
        )
    if layer_mask is None:
        return layers
    if layer_mask == 'encoder':
        encoder = getattr(net, 'encoder', None)
        keep = {
            id(m) for m in encoder.modules() if isinstance(m, nn.BatchNorm2d)
        } if encoder is not None else set()
        return [m for m in layers if id(m) in keep]
    if isinstance(layer_mask, str) or len(layer_mask) != len(layers):
        raise NetworkError(
            f'Expected a mask of {len(layers)} flags; got {layer_mask!r}.'
        )
    return [m for m, keep in zip(layers, layer_mask) if keep]


def running_stats(net: nn.Module,
                  layer_mask: Sequence[bool] or str = None) -> BNStatSet:
    """
    Read the running statistics stored in a network's BN layers.

    :param net: the network
    :param layer_mask: selects BN layers (see :py:func:`bn_layers`)
    :return: the running statistics
    :raises depthkd.errors.NetworkError: if the network has no BN layers
    """
    return BNStatSet(
        layers=[
            BNLayerStats(
                mean=layer.running_mean.detach().clone(),
                variance=layer.running_var.detach().clone(),
                channel_count=layer.num_features
            ) for layer in bn_layers(net, layer_mask)
        ],
        kind=StatKind.RUNNING
    )


def capture_batchwise_stats(
        net: nn.Module,
        images: torch.Tensor,
        layer_mask: Sequence[bool] or str = None) -> BNStatSet:
    """
    Compute the per-channel mean and (biased) variance of the features that
    enter each BN layer when a batch passes through the network.  The network
    runs in evaluation mode, so its running statistics aren't touched; the
    returned statistics stay attached to the autograd graph of `images`.

    :param net: the network
    :param images: a batch of two or more images
    :param layer_mask: selects BN layers (see :py:func:`bn_layers`)
    :return: the batch-wise statistics
    :raises depthkd.errors.ShapeError: if the batch has fewer than two images
    """
    _check_images(images)
    if images.shape[0] < 2:
        raise ShapeError('Batch-wise statistics need at least two images.')
    layers = bn_layers(net, layer_mask)
    captured = {}

    def make_hook(index: int):
        def hook(_module, inputs, _output):
            features = inputs[0]
            captured[index] = BNLayerStats(
                mean=features.mean(dim=(0, 2, 3)),
                variance=features.var(dim=(0, 2, 3), unbiased=False),
                channel_count=features.shape[1]
            )
        return hook

    handles = [
        layer.register_forward_hook(make_hook(i))
        for i, layer in enumerate(layers)
    ]
    try:
        with evaluating(net):
            net(images)
    finally:
        for handle in handles:
            handle.remove()
    return BNStatSet(
        layers=[captured[i] for i in range(len(layers))],
        kind=StatKind.BATCHWISE
    )
