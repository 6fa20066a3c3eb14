"""Small 3-level 3D UNet: encoder-decoder with skip connections, sigmoid
probability output. The two variants differ only in input channel count
(DE: 1, DE-Shape: 2), so their parameter counts differ exactly by the first
convolution's extra-kernel weights."""

import torch
from torch import nn

from .errors import ChannelMismatchError

VARIANTS = {"DE": 1, "DE-Shape": 2}


def _block(in_ch, out_ch):
    def conv(i, o):
        return [nn.Conv3d(i, o, 3, padding=1),
                nn.GroupNorm(min(4, o), o),
                nn.ReLU(inplace=True)]

    return nn.Sequential(*conv(in_ch, out_ch), *conv(out_ch, out_ch))


class UNet3D(nn.Module):
    """Input (N, in_channels, D, H, W) with D/H/W divisible by 4; output a
    1-channel probability volume of the same spatial size."""

    def __init__(self, in_channels: int, base_width: int = 8):
        super().__init__()
        self.in_channels = in_channels
        w = base_width
        self.enc1 = _block(in_channels, w)
        self.enc2 = _block(w, 2 * w)
        self.bottom = _block(2 * w, 4 * w)
        self.pool = nn.MaxPool3d(2)
        self.up2 = nn.ConvTranspose3d(4 * w, 2 * w, 2, stride=2)
        self.dec2 = _block(4 * w, 2 * w)
        self.up1 = nn.ConvTranspose3d(2 * w, w, 2, stride=2)
        self.dec1 = _block(2 * w, w)
        self.head = nn.Conv3d(w, 1, 1)

    def forward(self, x):
        if x.ndim != 5 or x.shape[1] != self.in_channels:
            raise ChannelMismatchError(
                f"expected (N, {self.in_channels}, D, H, W), got "
                f"{tuple(x.shape)}")
        if any(d % 4 for d in x.shape[2:]):
            raise ChannelMismatchError(
                f"spatial dims must be divisible by 4, got {tuple(x.shape[2:])}")
        s1 = self.enc1(x)
        s2 = self.enc2(self.pool(s1))
        b = self.bottom(self.pool(s2))
        d2 = self.dec2(torch.cat([self.up2(b), s2], dim=1))
        d1 = self.dec1(torch.cat([self.up1(d2), s1], dim=1))
        return torch.sigmoid(self.head(d1))


def build_model(variant: str, base_width: int = 8) -> UNet3D:
    """DE (1 input channel) or DE-Shape (2: defected mask + atlas prior)."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; "
                         f"expected one of {sorted(VARIANTS)}")
    return UNet3D(VARIANTS[variant], base_width)
