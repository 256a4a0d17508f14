# Copyright (c) 2024, The atrousnet developers
# All rights reserved.

# Redistribution and use in source and binary forms, with or without
# modification, are permitted provided that the following conditions are met:

# 1. Redistributions of source code must retain the above copyright notice,
# this list of conditions and the following disclaimer.

# 2. Redistributions in binary form must reproduce the above copyright notice,
# this list of conditions and the following disclaimer in the documentation
# and/or other materials provided with the distribution.

# 3. Neither the name of the copyright holder nor the names of its contributors
# may be used to endorse or promote products derived from this software without
# specific prior written permission.

# THIS SOFTWARE IS PROVIDED BY THE COPYRIGHT HOLDERS AND CONTRIBUTORS "AS IS"
# AND ANY EXPRESS OR IMPLIED WARRANTIES, INCLUDING, BUT NOT LIMITED TO,
# THE IMPLIED WARRANTIES OF MERCHANTABILITY AND FITNESS FOR A PARTICULAR
# PURPOSE ARE DISCLAIMED. IN NO EVENT SHALL THE COPYRIGHT HOLDER OR CONTRIBUTORS
# BE LIABLE FOR ANY DIRECT, INDIRECT, INCIDENTAL, SPECIAL, EXEMPLARY,
# OR CONSEQUENTIAL DAMAGES (INCLUDING, BUT NOT LIMITED TO, PROCUREMENT
# OF SUBSTITUTE GOODS OR SERVICES; LOSS OF USE, DATA, OR PROFITS; OR BUSINESS
# INTERRUPTION) HOWEVER CAUSED AND ON ANY THEORY OF LIABILITY,
# WHETHER IN CONTRACT, STRICT LIABILITY, OR TORT (INCLUDING NEGLIGENCE
# OR OTHERWISE) ARISING IN ANY WAY OUT OF THE USE OF THIS SOFTWARE,
# EVEN IF ADVISED OF THE POSSIBILITY OF SUCH DAMAGE.

"""This module contains the definition of:

  * ConvSpec class
  * BatchNormParams class
  * conv2d, pool2d and bilinear_resize with naive and optimized paths
  * batchnorm_inference, fold_batchnorm, activation, global_avg_pool, linear

The naive path is the definitional loop, compiled in the native extension
or, when the extension is not built, executed by `atrousnet.reference`.
The optimized path repacks the input (im2col) and relies on blocked
matrix multiplication, with a tap-accumulation specialization for depthwise
convolutions. Both accumulate in double precision.

"""

import logging

import numpy
from numpy.lib.stride_tricks import sliding_window_view

from atrousnet import reference
from atrousnet.tensor import Tensor, wrap
from atrousnet.common import ShapeError, KernelPath, PoolKind, ActivationKind
from atrousnet.common import ConfigurationError

try:
    from atrousnet._atrousnet import lib, ffi
except ImportError:  # extension not compiled
    lib = ffi = None


LOGGER = logging.getLogger(__name__)
BN_EPSILON = 1e-5
LEAKY_SLOPE = 0.01
IM2COL_BUDGET = 1 << 22

if lib is None:
    LOGGER.debug("native kernels not compiled, the naive path runs in Python")


def native_available() -> bool:
    """True if the compiled reference kernels are importable."""
    return lib is not None


class ConvSpec:
    """Geometry of a (possibly grouped, strided or atrous) convolution."""

    __slots__ = ('kernel', 'atrous_rate', 'stride', 'padding', 'groups',
                 'in_channels', 'out_channels')

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3,
                 atrous_rate: int = 1, stride: int = 1, padding: int = 0,
                 groups: int = 1):
        self.kernel = int(kernel)
        self.atrous_rate = int(atrous_rate)
        self.stride = int(stride)
        self.padding = int(padding)
        self.groups = int(groups)
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)

        if min(self.kernel, self.atrous_rate, self.stride, self.groups,
               self.in_channels, self.out_channels) < 1:
            raise ShapeError("non-positive convolution parameter in %r" % self)
        if self.padding < 0:
            raise ShapeError("negative padding in %r" % self)
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ShapeError("channels not divisible by groups in %r" % self)

    def __repr__(self):
        return ("ConvSpec(%d->%d, k=%d, d=%d, s=%d, pad=%d, g=%d)"
                % (self.in_channels, self.out_channels, self.kernel,
                   self.atrous_rate, self.stride, self.padding, self.groups))

    def __eq__(self, other):
        return all(getattr(self, a) == getattr(other, a)
                   for a in self.__slots__)

    __hash__ = None

    @classmethod
    def same(cls, in_channels: int, out_channels: int, kernel: int = 3,
             atrous_rate: int = 1, stride: int = 1,
             groups: int = 1) -> 'ConvSpec':
        """Convolution padded to preserve resolution at stride 1."""
        if kernel % 2 == 0:
            raise ShapeError("same padding requires an odd kernel")

        return cls(in_channels, out_channels, kernel=kernel,
                   atrous_rate=atrous_rate, stride=stride,
                   padding=atrous_rate * (kernel - 1) // 2, groups=groups)

    @property
    def effective_extent(self) -> int:
        return self.kernel + (self.kernel - 1) * (self.atrous_rate - 1)

    @property
    def depthwise(self) -> bool:
        return self.groups == self.in_channels == self.out_channels

    @property
    def weight_shape(self) -> tuple:
        return (self.out_channels, self.in_channels // self.groups,
                self.kernel, self.kernel)

    def output_size(self, height: int, width: int) -> tuple:
        size = tuple((dim + 2 * self.padding - self.effective_extent)
                     // self.stride + 1 for dim in (height, width))
        if min(size) < 1:
            raise ShapeError("%r yields a non-positive output for %dx%d input"
                             % (self, height, width))

        return size


class BatchNormParams:
    """Inference-time batch normalization parameters of one layer."""

    __slots__ = 'gamma', 'beta', 'mean', 'variance', 'epsilon'

    def __init__(self, gamma, beta, mean, variance,
                 epsilon: float = BN_EPSILON):
        self.gamma = _vector(gamma)
        self.beta = _vector(beta)
        self.mean = _vector(mean)
        self.variance = _vector(variance)
        self.epsilon = float(epsilon)

        if not (self.gamma.size == self.beta.size == self.mean.size ==
                self.variance.size):
            raise ShapeError("batch norm vectors differ in length")
        if (self.variance < 0).any():
            raise ShapeError("batch norm variance must not be negative")
        if self.epsilon < 0 or ((self.variance + self.epsilon) <= 0).any():
            raise ShapeError("batch norm variance + epsilon must be positive")

    def __repr__(self):
        return "BatchNormParams(channels=%d, epsilon=%g)" % (self.channels,
                                                             self.epsilon)

    def __eq__(self, other):
        return (self.epsilon == other.epsilon and
                all(numpy.array_equal(getattr(self, a), getattr(other, a))
                    for a in ('gamma', 'beta', 'mean', 'variance')))

    __hash__ = None

    @classmethod
    def identity(cls, channels: int,
                 epsilon: float = BN_EPSILON) -> 'BatchNormParams':
        return cls(numpy.ones(channels), numpy.zeros(channels),
                   numpy.zeros(channels), numpy.ones(channels), epsilon)

    @property
    def channels(self) -> int:
        return self.gamma.size

    def scale(self) -> numpy.ndarray:
        """Per-channel multiplier gamma / sqrt(variance + epsilon)."""
        return self.gamma.astype(numpy.float64) / numpy.sqrt(
            self.variance.astype(numpy.float64) + self.epsilon)


def _vector(values) -> numpy.ndarray:
    array = numpy.array(values, dtype=numpy.float32).reshape(-1)
    array.setflags(write=False)

    return array


def _pointer(array: numpy.ndarray):
    return ffi.cast("float *", ffi.from_buffer(array))


def conv2d(x: Tensor, weights, bias=None, spec: ConvSpec = None,
           path: KernelPath = KernelPath.OPTIMIZED,
           budget: int = IM2COL_BUDGET) -> Tensor:
    """Zero-padded grouped atrous convolution.

    out[n,o,i,j] = sum_c sum_m sum_q
                   x_pad[n, c, i*s + d*m, j*s + d*q] * W[o, c, m, q] + bias[o]

    """
    weights = numpy.ascontiguousarray(weights, dtype=numpy.float32)
    if spec is None:
        spec = ConvSpec(x.channels, weights.shape[0], kernel=weights.shape[2],
                        groups=x.channels // weights.shape[1])
    if x.channels != spec.in_channels:
        raise ShapeError("conv2d: input has %d channels, %r expects %d"
                         % (x.channels, spec, spec.in_channels))
    if weights.shape != spec.weight_shape:
        raise ShapeError("conv2d: weight shape %s, %r expects %s"
                         % (weights.shape, spec, spec.weight_shape))
    if bias is not None:
        bias = numpy.ascontiguousarray(bias, dtype=numpy.float32).reshape(-1)
        if bias.size != spec.out_channels:
            raise ShapeError("conv2d: %d biases for %d output channels"
                             % (bias.size, spec.out_channels))

    out_height, out_width = spec.output_size(x.height, x.width)

    if path == KernelPath.NAIVE:
        return wrap(_conv2d_naive(x.array, weights, bias, spec,
                                  out_height, out_width))

    return wrap(_conv2d_optimized(x.array, weights, bias, spec,
                                  out_height, out_width, budget))


def _conv2d_naive(x, weights, bias, spec, out_height, out_width):
    if lib is None:
        return reference.conv2d(x, weights, bias, spec.stride,
                                spec.atrous_rate, spec.padding, spec.groups,
                                out_height, out_width)

    out = numpy.empty((x.shape[0], spec.out_channels, out_height, out_width),
                      dtype=numpy.float32)
    lib.conv2d_naive(_pointer(x), _pointer(weights),
                     ffi.NULL if bias is None else _pointer(bias),
                     _pointer(out), x.shape[0], x.shape[1], x.shape[2],
                     x.shape[3], spec.out_channels, spec.kernel,
                     spec.atrous_rate, spec.stride, spec.padding, spec.groups,
                     out_height, out_width)

    return out


def _taps(plane, spec, first_row, rows, out_width, m, q):
    """Strided view of the input samples met by kernel tap (m, q)."""
    stride, rate = spec.stride, spec.atrous_rate
    top = first_row * stride + m * rate
    left = q * rate

    return plane[..., top:top + stride * (rows - 1) + 1:stride,
                 left:left + stride * (out_width - 1) + 1:stride]


def _conv2d_optimized(x, weights, bias, spec, out_height, out_width, budget):
    batch = x.shape[0]
    kernel, groups = spec.kernel, spec.groups
    pad = spec.padding
    data = x.astype(numpy.float64)
    weights = weights.astype(numpy.float64)

    if pad:
        data = numpy.pad(data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))

    if spec.depthwise:
        out = numpy.zeros((batch, spec.out_channels, out_height, out_width))
        for m in range(kernel):
            for q in range(kernel):
                out += _taps(data, spec, 0, out_height, out_width, m, q) * \
                    weights[None, :, 0, m, q, None, None]
    elif kernel == 1 and spec.stride == 1 and groups == 1 and not pad:
        matrix = weights.reshape(spec.out_channels, spec.in_channels)
        out = numpy.matmul(matrix, data.reshape(batch, spec.in_channels, -1))
        out = out.reshape(batch, spec.out_channels, out_height, out_width)
    else:
        out = _im2col_gemm(data, weights, spec, out_height, out_width, budget)

    if bias is not None:
        out += bias.astype(numpy.float64)[None, :, None, None]

    return out.astype(numpy.float32)


def _im2col_gemm(data, weights, spec, out_height, out_width, budget):
    """Grouped convolution as matrix products over blocks of output rows."""
    batch = data.shape[0]
    kernel, groups = spec.kernel, spec.groups
    group_in = spec.in_channels // groups
    group_out = spec.out_channels // groups
    depth = group_in * kernel * kernel
    rows = max(1, min(out_height, budget // (depth * out_width)))
    matrices = weights.reshape(groups, group_out, depth)

    out = numpy.empty((batch, spec.out_channels, out_height, out_width))
    for n in range(batch):
        for group in range(groups):
            plane = data[n, group * group_in:(group + 1) * group_in]
            channels = slice(group * group_out, (group + 1) * group_out)
            for first in range(0, out_height, rows):
                count = min(rows, out_height - first)
                columns = numpy.empty((group_in, kernel, kernel, count,
                                       out_width))
                for m in range(kernel):
                    for q in range(kernel):
                        columns[:, m, q] = _taps(plane, spec, first, count,
                                                 out_width, m, q)
                block = matrices[group] @ columns.reshape(depth, -1)
                out[n, channels, first:first + count] = block.reshape(
                    group_out, count, out_width)

    return out


def batchnorm_inference(x: Tensor, params: BatchNormParams) -> Tensor:
    """out = gamma * (x - mean) / sqrt(variance + epsilon) + beta."""
    if params.channels != x.channels:
        raise ShapeError("batch norm has %d channels, input has %d"
                         % (params.channels, x.channels))

    def column(vector):
        return numpy.asarray(vector, dtype=numpy.float64)[None, :, None, None]

    out = (x.array - column(params.mean)) * column(params.scale()) + \
        column(params.beta)

    return wrap(out.astype(numpy.float32))


def fold_batchnorm(weights, bias, params: BatchNormParams) -> tuple:
    """Fold a batch norm into the convolution preceding it.

    Returns the (weights, bias) pair of the equivalent convolution.

    """
    weights = numpy.asarray(weights, dtype=numpy.float64)
    if weights.shape[0] != params.channels:
        raise ShapeError("cannot fold %d-channel batch norm into %d filters"
                         % (params.channels, weights.shape[0]))
    if bias is None:
        bias = numpy.zeros(params.channels)

    scale = params.scale()
    folded_weights = weights * scale.reshape((-1, ) + (1, ) *
                                             (weights.ndim - 1))
    folded_bias = (numpy.asarray(bias, dtype=numpy.float64) -
                   params.mean.astype(numpy.float64)) * scale + \
        params.beta.astype(numpy.float64)

    return (folded_weights.astype(numpy.float32),
            folded_bias.astype(numpy.float32))


def activation(x: Tensor, kind: ActivationKind,
               slope: float = LEAKY_SLOPE) -> Tensor:
    data = x.array

    if kind == ActivationKind.RELU:
        out = numpy.maximum(data, 0)
    elif kind == ActivationKind.RELU6:
        out = numpy.clip(data, 0, 6)
    elif kind == ActivationKind.LEAKY_RELU:
        if not 0 < slope < 1:
            raise ConfigurationError("leaky slope must lie in (0, 1)")
        out = numpy.where(data > 0, data, data * numpy.float32(slope))
    elif kind == ActivationKind.SIGMOID:
        out = numpy.exp(-numpy.logaddexp(0.0, -data.astype(numpy.float64)))
    else:
        raise ConfigurationError("unknown activation %r" % (kind, ))

    return wrap(out)


def pool_output_size(height: int, width: int, kernel: int, stride: int,
                     padding: int) -> tuple:
    if padding > kernel // 2:
        raise ShapeError("pool padding %d exceeds half the %d window"
                         % (padding, kernel))

    size = tuple((dim + 2 * padding - kernel) // stride + 1
                 for dim in (height, width))
    if min(size) < 1:
        raise ShapeError("pool %dx%d/%d yields a non-positive output for "
                         "%dx%d input" % (kernel, kernel, stride, height,
                                          width))

    return size


def pool2d(x: Tensor, kind: PoolKind, kernel: int, stride: int = 1,
           padding: int = 0,
           path: KernelPath = KernelPath.OPTIMIZED) -> Tensor:
    """Window pooling, padding never enters an average's denominator."""
    out_height, out_width = pool_output_size(x.height, x.width, kernel,
                                             stride, padding)

    if path == KernelPath.NAIVE:
        if lib is None:
            return wrap(reference.pool2d(x.array, kind == PoolKind.AVG,
                                         kernel, stride, padding,
                                         out_height, out_width))
        out = numpy.empty((x.batch, x.channels, out_height, out_width),
                          dtype=numpy.float32)
        lib.pool2d_naive(_pointer(x.array), _pointer(out), x.batch,
                         x.channels, x.height, x.width, int(kind), kernel,
                         stride, padding, out_height, out_width)
        return wrap(out)

    fill = 0.0 if kind == PoolKind.AVG else -numpy.inf
    widths = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    data = numpy.pad(x.array.astype(numpy.float64), widths,
                     constant_values=fill)
    windows = sliding_window_view(data, (kernel, kernel), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :out_height, :out_width]

    if kind == PoolKind.MAX:
        return wrap(windows.max(axis=(-2, -1)).astype(numpy.float32))

    ones = numpy.pad(numpy.ones((x.height, x.width)), widths[2:])
    counts = sliding_window_view(ones, (kernel, kernel))
    counts = counts[::stride, ::stride][:out_height, :out_width]
    out = windows.sum(axis=(-2, -1)) / counts.sum(axis=(-2, -1))

    return wrap(out.astype(numpy.float32))


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel mean over all positions, shaped (batch, channels, 1, 1)."""
    out = x.array.mean(axis=(2, 3), dtype=numpy.float64, keepdims=True)

    return wrap(out.astype(numpy.float32))


def _source_indices(in_size: int, out_size: int) -> tuple:
    dst = numpy.arange(out_size, dtype=numpy.float64)
    src = (dst + 0.5) * (in_size / out_size) - 0.5
    src = numpy.clip(src, 0.0, in_size - 1)
    low = numpy.floor(src).astype(numpy.intp)

    return low, numpy.minimum(low + 1, in_size - 1), src - low


def bilinear_resize(x: Tensor, out_height: int, out_width: int,
                    path: KernelPath = KernelPath.OPTIMIZED) -> Tensor:
    """Bilinear resize sampling at half-pixel centers.

    The source coordinate of output index i is (i + 0.5) * in / out - 0.5,
    clamped to the borders.

    """
    if out_height < 1 or out_width < 1:
        raise ShapeError("resize target %dx%d is empty"
                         % (out_height, out_width))

    if path == KernelPath.NAIVE:
        if lib is None:
            return wrap(reference.bilinear(x.array, out_height, out_width))
        out = numpy.empty((x.batch, x.channels, out_height, out_width),
                          dtype=numpy.float32)
        lib.bilinear_naive(_pointer(x.array), _pointer(out), x.batch,
                           x.channels, x.height, x.width,
                           out_height, out_width)
        return wrap(out)

    top, bottom, fy = _source_indices(x.height, out_height)
    left, right, fx = _source_indices(x.width, out_width)
    data = x.array.astype(numpy.float64)
    fx = fx[None, None, None, :]
    fy = fy[None, None, :, None]

    upper = data[:, :, top]
    lower = data[:, :, bottom]
    upper = (1.0 - fx) * upper[..., left] + fx * upper[..., right]
    lower = (1.0 - fx) * lower[..., left] + fx * lower[..., right]

    return wrap(((1.0 - fy) * upper + fy * lower).astype(numpy.float32))


def linear(x, weights, bias=None) -> numpy.ndarray:
    """Fully-connected layer out = W x + b over the last axis of x."""
    x = numpy.asarray(x, dtype=numpy.float64)
    weights = numpy.asarray(weights, dtype=numpy.float64)
    if weights.ndim != 2 or x.shape[-1] != weights.shape[1]:
        raise ShapeError("linear: input width %d, weight shape %s"
                         % (x.shape[-1], weights.shape))

    out = x @ weights.T
    if bias is not None:
        bias = numpy.asarray(bias, dtype=numpy.float64).reshape(-1)
        if bias.size != weights.shape[0]:
            raise ShapeError("linear: %d biases for %d outputs"
                             % (bias.size, weights.shape[0]))
        out = out + bias

    return out.astype(numpy.float32)
