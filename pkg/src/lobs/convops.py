"""Patch extraction (im2col) and its adjoint for convolutional layers.

A patch column lists the receptive field in (channel, row, col) order,
matching the vectorized-filter columns of ``ConvLayer.weights``, so a
convolution is one matrix product between the two.
"""

import numpy as np


def conv_geometry(conv, in_shape):
    """Precompute gather indices mapping padded input -> patch columns.

    Returns (indices, out_shape, padded_shape) where ``indices`` has shape
    (taps, positions) and indexes the flattened padded (c, h, w) volume.
    Positions run over the output grid in row-major order.
    """
    c, h, w = in_shape
    _, oh, ow = conv.out_shape(in_shape)
    kh, kw = conv.kernel
    sh, sw = conv.stride
    ph, pw = conv.padding
    hp, wp = h + 2 * ph, w + 2 * pw

    ci, ki, kj = np.meshgrid(np.arange(c), np.arange(kh), np.arange(kw),
                             indexing="ij")
    tap_offsets = (ci * hp * wp + ki * wp + kj).reshape(-1)  # (c*kh*kw,)
    oi, oj = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
    pos_offsets = (oi * sh * wp + oj * sw).reshape(-1)       # (oh*ow,)
    indices = tap_offsets[:, None] + pos_offsets[None, :]
    return indices, (conv.out_channels, oh, ow), (c, hp, wp)


def pad_maps(maps, padding):
    """Zero-pad (n, c, h, w) feature maps spatially."""
    ph, pw = padding
    if ph == 0 and pw == 0:
        return maps
    return np.pad(maps, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def im2col(maps, conv, in_shape):
    """Extract patch columns with a trailing bias row of ones.

    ``maps`` is (n, c, h, w).  Returns (taps + 1, n * positions); columns are
    ordered sample-major, positions row-major within a sample.
    """
    indices, _, padded_shape = conv_geometry(conv, in_shape)
    n = maps.shape[0]
    padded = pad_maps(maps, conv.padding).reshape(n, -1)
    cols = padded[:, indices]                       # (n, taps, positions)
    taps, positions = indices.shape
    cols = cols.transpose(1, 0, 2).reshape(taps, n * positions)
    out = np.empty((taps + 1, n * positions))
    out[:-1, :] = cols
    out[-1, :] = 1.0
    return out


def col2im(grad_cols, conv, in_shape, n):
    """Adjoint of :func:`im2col` (without the bias row): scatter-add patch
    gradients back onto the (n, c, h, w) input volume."""
    indices, _, padded_shape = conv_geometry(conv, in_shape)
    taps, positions = indices.shape
    grad_cols = grad_cols.reshape(taps, n, positions).transpose(1, 0, 2)
    cp, hp, wp = padded_shape
    flat = np.zeros((n, cp * hp * wp))
    for j in range(n):
        np.add.at(flat[j], indices.reshape(-1), grad_cols[j].reshape(-1))
    grads = flat.reshape(n, cp, hp, wp)
    ph, pw = conv.padding
    c, h, w = in_shape
    return grads[:, :, ph:ph + h, pw:pw + w]


def conv_forward_cols(conv, maps, in_shape):
    """Pre-activations as (out_channels, n * positions) plus the patch matrix."""
    patches = im2col(maps, conv, in_shape)
    z_cols = conv.masked_weights().T @ patches
    return z_cols, patches


def cols_to_maps(z_cols, out_shape, n):
    """Reshape (out_channels, n * positions) columns into (n, c_out, oh, ow)."""
    c_out, oh, ow = out_shape
    return z_cols.reshape(c_out, n, oh * ow).transpose(1, 0, 2).reshape(
        n, c_out, oh, ow)


def maps_to_cols(maps):
    """Inverse of :func:`cols_to_maps`."""
    n, c, oh, ow = maps.shape
    return maps.reshape(n, c, oh * ow).transpose(1, 0, 2).reshape(c, n * oh * ow)
