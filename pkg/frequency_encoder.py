"""
Frequency Encoder Module

Merges the twelve per-channel Haar subbands of an RGB image into a
3-channel, half-resolution feature map through three learnable 1x1 merges:

    channel 0 (low)    <- ll of the three colour channels        (3 inputs)
    channel 1 (high)   <- lh, hl, hh of the three colour channels (9 inputs)
    channel 2 (global) <- all twelve subbands                     (12 inputs)

The encoder is trained with the first task and frozen afterwards.

Plane order inside the merges is fixed and shared by the module, the numpy
reference `encode` and the weight serialization:
    low:    ll_0, ll_1, ll_2
    high:   lh_0, hl_0, hh_0, lh_1, hl_1, hh_1, lh_2, hl_2, hh_2
    global: low planes followed by high planes
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn as nn

from errors import PreconditionError, ShapeMismatchError
from wavelet_transform import dwt_batch, dwt_image

logger = logging.getLogger(__name__)

INPUT_MODES = ('ffe', 'll', 'lh', 'hl', 'hh', 'spatial')

# w_low[3], bias_low, w_high[9], bias_high, w_global[12], bias_global
_WEIGHT_COUNT = 27


@dataclass
class EncoderWeights:
    """Coefficients and biases of the three merges."""

    w_low: np.ndarray
    bias_low: float
    w_high: np.ndarray
    bias_high: float
    w_global: np.ndarray
    bias_global: float
    frozen: bool = False

    def __post_init__(self):
        self.w_low = np.asarray(self.w_low, dtype=np.float32).reshape(-1)
        self.w_high = np.asarray(self.w_high, dtype=np.float32).reshape(-1)
        self.w_global = np.asarray(self.w_global, dtype=np.float32).reshape(-1)
        if (self.w_low.size, self.w_high.size, self.w_global.size) != (3, 9, 12):
            raise ShapeMismatchError(
                f"expected 3/9/12 coefficients, got "
                f"{self.w_low.size}/{self.w_high.size}/{self.w_global.size}"
            )

    def flat(self):
        """All 27 values in serialization order as little-endian float32."""
        return np.concatenate([
            self.w_low, [self.bias_low],
            self.w_high, [self.bias_high],
            self.w_global, [self.bias_global],
        ]).astype('<f4')

    def to_bytes(self):
        return self.flat().tobytes() + bytes([1 if self.frozen else 0])

    @classmethod
    def from_bytes(cls, payload):
        if len(payload) != _WEIGHT_COUNT * 4 + 1:
            raise ShapeMismatchError(f"encoder weight payload has {len(payload)} bytes")
        values = np.frombuffer(payload[:-1], dtype='<f4').astype(np.float32)
        return cls(
            w_low=values[0:3], bias_low=float(values[3]),
            w_high=values[4:13], bias_high=float(values[13]),
            w_global=values[14:26], bias_global=float(values[26]),
            frozen=bool(payload[-1]),
        )

    @classmethod
    def initial(cls, rng):
        """Uniform +-1/sqrt(fan_in) coefficients, zero biases."""
        def draw(fan_in):
            bound = 1.0 / math.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=fan_in)
        return cls(w_low=draw(3), bias_low=0.0, w_high=draw(9), bias_high=0.0,
                   w_global=draw(12), bias_global=0.0)


@dataclass
class EncodedMap:
    """A 3-channel half-resolution frequency feature map."""

    values: np.ndarray
    source_shape: tuple = field(default=(0, 0))

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3 or self.values.shape[0] != 3:
            raise ShapeMismatchError(f"encoded map must be 3xhxw, got {self.values.shape}")


def _stack_planes(subbands):
    """Return the (low, high, global) input stacks for a batch of subbands."""
    n, c, h, w = subbands.ll.shape
    low = subbands.ll
    high = torch.stack([subbands.lh, subbands.hl, subbands.hh], dim=2).reshape(n, 3 * c, h, w)
    return low, high, torch.cat([low, high], dim=1)


def encode(image, weights):
    """
    Reference (numpy) encoding of one image.

    Args:
        image (array-like): Volume of shape (3, H, W) with H, W even.
        weights (EncoderWeights): Merge coefficients.

    Returns:
        EncodedMap: Values of shape (3, H/2, W/2).
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeMismatchError(f"expected a 3xHxW image, got shape {image.shape}")
    bands = dwt_image(image)
    low = np.stack([b.ll for b in bands])
    high = np.stack([p for b in bands for p in (b.lh, b.hl, b.hh)])
    every = np.concatenate([low, high])
    merged = np.stack([
        np.tensordot(weights.w_low.astype(np.float64), low, axes=1) + weights.bias_low,
        np.tensordot(weights.w_high.astype(np.float64), high, axes=1) + weights.bias_high,
        np.tensordot(weights.w_global.astype(np.float64), every, axes=1) + weights.bias_global,
    ])
    return EncodedMap(values=merged, source_shape=image.shape[1:])


def freeze(weights):
    """Return a frozen copy of the weights. Freezing twice is a no-op."""
    return weights if weights.frozen else replace(weights, frozen=True)


def apply_update(weights, gradients, lr):
    """
    One plain gradient step on EncoderWeights, guarded by the freeze flag.

    Args:
        weights (EncoderWeights): Current weights.
        gradients (numpy.ndarray): 27 gradient values in serialization order.
        lr (float): Step size.

    Returns:
        EncoderWeights: Updated weights, or the same object when frozen.
    """
    if weights.frozen:
        return weights
    values = weights.flat().astype(np.float64) - lr * np.asarray(gradients, dtype=np.float64)
    return EncoderWeights(
        w_low=values[0:3], bias_low=float(values[3]),
        w_high=values[4:13], bias_high=float(values[13]),
        w_global=values[14:26], bias_global=float(values[26]),
    )


def weights_digest(weights):
    """sha256 hex digest of the 27 coefficient values."""
    return hashlib.sha256(weights.flat().tobytes()).hexdigest()


class FrequencyEncoder(nn.Module):
    """
    Trainable encoder: batched Haar transform followed by three 1x1 merges.
    """

    downsamples = True

    def __init__(self, bias=True):
        super().__init__()
        self.use_bias = bias
        self.merge_low = nn.Conv2d(3, 1, kernel_size=1, bias=bias)
        self.merge_high = nn.Conv2d(9, 1, kernel_size=1, bias=bias)
        self.merge_global = nn.Conv2d(12, 1, kernel_size=1, bias=bias)
        self.frozen = False
        self.reset_parameters()

    def reset_parameters(self):
        for conv in (self.merge_low, self.merge_high, self.merge_global):
            bound = 1.0 / math.sqrt(conv.in_channels)
            nn.init.uniform_(conv.weight, -bound, bound)
            if conv.bias is not None:
                nn.init.zeros_(conv.bias)

    def forward(self, images):
        low, high, every = _stack_planes(dwt_batch(images))
        return torch.cat([self.merge_low(low), self.merge_high(high), self.merge_global(every)], dim=1)

    def freeze(self):
        if self.frozen:
            return
        for param in self.parameters():
            param.requires_grad_(False)
        self.frozen = True
        logger.info(f"Frequency encoder frozen (digest {self.digest()[:12]})")

    def get_weights(self):
        def bias_of(conv):
            return 0.0 if conv.bias is None else float(conv.bias.detach().cpu()[0])
        return EncoderWeights(
            w_low=self.merge_low.weight.detach().cpu().numpy(),
            bias_low=bias_of(self.merge_low),
            w_high=self.merge_high.weight.detach().cpu().numpy(),
            bias_high=bias_of(self.merge_high),
            w_global=self.merge_global.weight.detach().cpu().numpy(),
            bias_global=bias_of(self.merge_global),
            frozen=self.frozen,
        )

    def load_weights(self, weights):
        if self.frozen:
            raise PreconditionError("cannot load weights into a frozen encoder")
        pairs = ((self.merge_low, weights.w_low, weights.bias_low),
                 (self.merge_high, weights.w_high, weights.bias_high),
                 (self.merge_global, weights.w_global, weights.bias_global))
        with torch.no_grad():
            for conv, coeffs, bias in pairs:
                conv.weight.copy_(torch.as_tensor(coeffs, dtype=conv.weight.dtype).view_as(conv.weight))
                if conv.bias is not None:
                    conv.bias.fill_(bias)
        if weights.frozen:
            self.freeze()

    def digest(self):
        return weights_digest(self.get_weights())


class SubbandPassthrough(nn.Module):
    """Feeds a single Haar subband of each colour channel to the backbone."""

    downsamples = True

    def __init__(self, band):
        super().__init__()
        if band not in ('ll', 'lh', 'hl', 'hh'):
            raise ValueError(f"unknown subband '{band}'")
        self.band = band
        self.frozen = True

    def forward(self, images):
        return getattr(dwt_batch(images), self.band)

    def freeze(self):
        pass

    def digest(self):
        return hashlib.sha256(self.band.encode()).hexdigest()


class SpatialPassthrough(nn.Module):
    """Full-resolution baseline: images reach the backbone unchanged."""

    downsamples = False

    def __init__(self):
        super().__init__()
        self.frozen = True

    def forward(self, images):
        return images

    def freeze(self):
        pass

    def digest(self):
        return hashlib.sha256(b'spatial').hexdigest()


def build_input_encoder(input_mode='ffe', bias=True):
    """
    Create the module that turns raw images into backbone inputs.

    Args:
        input_mode (str): One of INPUT_MODES.
        bias (bool): Whether the three merges carry a bias term.

    Returns:
        nn.Module: Encoder with `downsamples`, `frozen`, `freeze()` and `digest()`.
    """
    if input_mode == 'ffe':
        return FrequencyEncoder(bias=bias)
    if input_mode == 'spatial':
        return SpatialPassthrough()
    if input_mode in INPUT_MODES:
        return SubbandPassthrough(input_mode)
    raise ValueError(f"unknown input mode '{input_mode}'")


def save_weights(encoder, path):
    """Write the merge weights of a FrequencyEncoder to `path`."""
    with open(path, 'wb') as f:
        f.write(encoder.get_weights().to_bytes())


def load_weights(path):
    with open(path, 'rb') as f:
        return EncoderWeights.from_bytes(f.read())
