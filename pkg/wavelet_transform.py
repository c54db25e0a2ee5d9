"""
Wavelet Transform Module

Single-level orthonormal 2D Haar discrete wavelet transform and its inverse.

Each non-overlapping 2x2 block [[a, b], [c, d]] of a plane maps to one
coefficient in each of the four subbands:

    ll = (a + b + c + d) / 2
    lh = (a - b + c - d) / 2
    hl = (a + b - c - d) / 2
    hh = (a - b - c + d) / 2

The block form works unchanged on numpy arrays and torch tensors, so the
same arithmetic serves the per-plane reference functions and the batched
path used by the frequency encoder during training.
"""

from dataclasses import dataclass

import numpy as np
import torch

from errors import DimensionError, NonFiniteValueError, ShapeMismatchError


@dataclass
class SubbandSet:
    """The four Haar subbands of one plane (or of a batch of planes).

    All four arrays share one shape: the input shape with the last two axes halved.
    """

    ll: object
    lh: object
    hl: object
    hh: object

    @property
    def shape(self):
        return tuple(self.ll.shape)

    def as_tuple(self):
        return self.ll, self.lh, self.hl, self.hh


def _check_even(height, width):
    if height < 2 or height % 2:
        raise DimensionError('height', height)
    if width < 2 or width % 2:
        raise DimensionError('width', width)


def _blocks_forward(x):
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    return SubbandSet(
        ll=(a + b + c + d) / 2,
        lh=(a - b + c - d) / 2,
        hl=(a + b - c - d) / 2,
        hh=(a - b - c + d) / 2,
    )


def haar_forward(plane):
    """
    Transform one image plane into its four Haar subbands.

    Args:
        plane (array-like): Real matrix of shape (height, width), both even.

    Returns:
        SubbandSet: Subbands of shape (height/2, width/2).

    Raises:
        DimensionError: If either axis is odd or smaller than 2.
        NonFiniteValueError: If the plane holds NaN or infinite values.
    """
    plane = np.asarray(plane)
    plane = plane.astype(np.result_type(plane.dtype, np.float32), copy=False)
    if plane.ndim != 2:
        raise ShapeMismatchError(f"expected a 2D plane, got shape {plane.shape}")
    _check_even(*plane.shape)
    if not np.isfinite(plane).all():
        raise NonFiniteValueError("plane contains non-finite values")
    return _blocks_forward(plane)


def haar_inverse(subbands):
    """
    Rebuild the plane whose forward transform equals the given subbands.

    Args:
        subbands (SubbandSet): Four equally shaped 2D subbands.

    Returns:
        numpy.ndarray: Plane of shape (2*h, 2*w).

    Raises:
        ShapeMismatchError: If the subbands do not share one shape.
    """
    ll, lh, hl, hh = (np.asarray(s) for s in subbands.as_tuple())
    if not (ll.shape == lh.shape == hl.shape == hh.shape):
        raise ShapeMismatchError(
            f"subband shapes differ: {ll.shape}, {lh.shape}, {hl.shape}, {hh.shape}"
        )
    dtype = np.result_type(ll.dtype, lh.dtype, hl.dtype, hh.dtype, np.float32)
    plane = np.empty(ll.shape[:-2] + (2 * ll.shape[-2], 2 * ll.shape[-1]), dtype=dtype)
    plane[..., 0::2, 0::2] = (ll + lh + hl + hh) / 2
    plane[..., 0::2, 1::2] = (ll - lh + hl - hh) / 2
    plane[..., 1::2, 0::2] = (ll + lh - hl - hh) / 2
    plane[..., 1::2, 1::2] = (ll - lh - hl + hh) / 2
    return plane


def dwt_image(image):
    """
    Apply the Haar transform to every channel of a channel-major volume.

    Args:
        image (array-like): Volume of shape (channels, height, width).

    Returns:
        list[SubbandSet]: One subband set per channel, in channel order.
    """
    image = np.asarray(image)
    if image.ndim != 3:
        raise ShapeMismatchError(f"expected a CxHxW volume, got shape {image.shape}")
    return [haar_forward(channel) for channel in image]


def dwt_batch(images):
    """
    Batched Haar transform for tensors of shape (N, C, H, W).

    Gradients flow through the result, and the values equal dwt_image
    applied to each sample.

    Returns:
        SubbandSet: Four tensors of shape (N, C, H/2, W/2).
    """
    if images.dim() != 4:
        raise ShapeMismatchError(f"expected an NxCxHxW batch, got shape {tuple(images.shape)}")
    _check_even(images.shape[-2], images.shape[-1])
    return _blocks_forward(images)


def ll_flat(images):
    """Flattened low-frequency subbands of a batch, shape (N, C*H/2*W/2)."""
    with torch.no_grad():
        return dwt_batch(images).ll.reshape(images.shape[0], -1)
