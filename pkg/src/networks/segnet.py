"""
Compact patch-based 3D encoder-decoder segmentation network.

A miniature U-Net: `depth` encoder stages of two conv-norm-activation
blocks with max-pooling, a bottleneck, and a mirrored decoder with
transposed-convolution upsampling and skip connections. Parameters are
addressable by named groups for partial adaptation.
"""

import logging
from typing import Iterator, List, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..exceptions import InvalidArgumentError
from ..models.config_models import NormKind, ParamGroup, SegNetConfig

logger = logging.getLogger(__name__)

NORM_TYPES = (nn.BatchNorm3d, nn.InstanceNorm3d)


def _norm(kind: NormKind, channels: int, affine: bool) -> nn.Module:
    if kind == NormKind.BATCH:
        return nn.BatchNorm3d(channels, affine=affine)
    return nn.InstanceNorm3d(channels, affine=affine)


class ConvBlock(nn.Sequential):
    """Two (conv 3^3, norm, leaky ReLU) layers."""

    def __init__(self, c_in: int, c_out: int, cfg: SegNetConfig):
        super().__init__(
            nn.Conv3d(c_in, c_out, kernel_size=3, padding=1),
            _norm(cfg.norm_kind, c_out, cfg.norm_affine),
            nn.LeakyReLU(0.01),
            nn.Conv3d(c_out, c_out, kernel_size=3, padding=1),
            _norm(cfg.norm_kind, c_out, cfg.norm_affine),
            nn.LeakyReLU(0.01),
        )


class SegNet(nn.Module):
    """Encoder-decoder f_theta mapping (N, in_channels, D, H, W) to class logits."""

    def __init__(self, cfg: SegNetConfig):
        super().__init__()
        self.cfg = cfg
        widths = [min(cfg.base_width * 2**i, cfg.max_width) for i in range(cfg.depth + 1)]

        self.encoder = nn.ModuleList()
        c_in = cfg.in_channels
        for w in widths[:-1]:
            self.encoder.append(ConvBlock(c_in, w, cfg))
            c_in = w
        self.bottleneck = ConvBlock(widths[-2], widths[-1], cfg)

        self.upsamplers = nn.ModuleList()
        self.decoder = nn.ModuleList()
        for i in reversed(range(cfg.depth)):
            self.upsamplers.append(nn.ConvTranspose3d(widths[i + 1], widths[i], kernel_size=2, stride=2))
            self.decoder.append(ConvBlock(2 * widths[i], widths[i], cfg))
        self.head = nn.Conv3d(widths[0], cfg.num_classes, kernel_size=1)

    @property
    def in_channels(self) -> int:
        return self.cfg.in_channels

    @property
    def num_classes(self) -> int:
        return self.cfg.num_classes

    def _check_input(self, x: torch.Tensor) -> None:
        if x.ndim != 5:
            raise InvalidArgumentError(f"Expected (N, C, D, H, W) input, got {tuple(x.shape)}")
        if x.shape[1] != self.cfg.in_channels:
            raise InvalidArgumentError(
                f"Model expects {self.cfg.in_channels} input channels, got {x.shape[1]}"
            )
        factor = 2**self.cfg.depth
        if any(s % factor for s in x.shape[2:]):
            raise InvalidArgumentError(
                f"Patch shape {tuple(x.shape[2:])} must be divisible by {factor}"
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Class logits with the input's spatial shape."""
        self._check_input(x)
        skips = []
        for stage in self.encoder:
            x = stage(x)
            skips.append(x)
            x = F.max_pool3d(x, kernel_size=2)
        x = self.bottleneck(x)
        for up, block, skip in zip(self.upsamplers, self.decoder, reversed(skips)):
            x = block(torch.cat([up(x), skip], dim=1))
        return self.head(x)

    def probabilities(self, x: torch.Tensor) -> torch.Tensor:
        """Softmax over the class channel."""
        return torch.softmax(self.forward(x), dim=1)


def build_segnet(cfg: SegNetConfig) -> SegNet:
    """Instantiate a SegNet with weights seeded by cfg.seed."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        model = SegNet(cfg)
    logger.debug(
        f"Built SegNet depth={cfg.depth} base={cfg.base_width} norm={cfg.norm_kind.value} "
        f"({sum(p.numel() for p in model.parameters())} parameters)"
    )
    return model


def _norm_parameters(model: nn.Module) -> Iterator[nn.Parameter]:
    for module in model.modules():
        if isinstance(module, NORM_TYPES):
            yield from (p for p in module.parameters(recurse=False) if p.requires_grad)


def parameter_subset(model: SegNet, group: Union[ParamGroup, str]) -> List[nn.Parameter]:
    """
    Trainable parameters of a named group.

    Args:
        model: Segmentation network
        group: norm, encoder (bottleneck included), decoder (upsamplers and
            head included) or all

    Returns:
        List of parameters in module registration order
    """
    try:
        group = ParamGroup(group)
    except ValueError as e:
        raise InvalidArgumentError(f"Unknown parameter group '{group}'") from e

    if group == ParamGroup.ALL:
        params = [p for p in model.parameters() if p.requires_grad]
    elif group == ParamGroup.NORM:
        params = list(_norm_parameters(model))
        if not params:
            logger.warning("Parameter group 'norm' is empty: the model has no affine normalization layers")
    elif group == ParamGroup.ENCODER:
        params = [p for m in (model.encoder, model.bottleneck) for p in m.parameters() if p.requires_grad]
    else:
        params = [
            p for m in (model.upsamplers, model.decoder, model.head) for p in m.parameters() if p.requires_grad
        ]
    return params


def use_batch_statistics(model: nn.Module) -> int:
    """
    Make batch-norm layers normalize with current-input statistics.

    Running statistics are discarded, so the layers use batch statistics in
    both train and eval mode. Returns the number of layers switched.
    """
    count = 0
    for module in model.modules():
        if isinstance(module, nn.BatchNorm3d):
            module.track_running_stats = False
            module.running_mean = None
            module.running_var = None
            module.num_batches_tracked = None
            count += 1
    return count
