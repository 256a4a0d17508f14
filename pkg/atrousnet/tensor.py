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

  * Tensor class
  * Uniform and Constant fill distributions
  * concat_channels, split_channels, elementwise_add, scale_channels
  * seeded_fill and relative_error

All tensors are 4-D float32 arrays in (batch, channel, row, column) order.

"""

from collections import namedtuple

import numpy

from atrousnet.common import ShapeError


DTYPE = numpy.float32

Uniform = namedtuple('Uniform', ('bound', ))
Constant = namedtuple('Constant', ('value', ))


class Tensor:
    """Dense immutable 4-D tensor in (batch, channel, row, column) order.

    The underlying numpy array is C-contiguous float32 and read-only. With
    `copy` false a contiguous float32 array is shared: the tensor holds a
    read-only view, the caller keeps its own writable handle and must not
    modify it afterwards.

    """

    __slots__ = '_array',

    def __init__(self, array, copy: bool = True):
        if copy:
            array = numpy.array(array, dtype=DTYPE, order='C')
        else:
            array = numpy.ascontiguousarray(array, dtype=DTYPE).view()
        if array.ndim != 4:
            raise ShapeError("tensors are 4-D, got shape %s" % (array.shape, ))
        if any(dim < 1 for dim in array.shape):
            raise ShapeError("all tensor dimensions must be >= 1, got %s"
                             % (array.shape, ))

        array.setflags(write=False)
        self._array = array

    def __repr__(self):
        return "%s%s" % (self.__class__.__name__, self.shape)

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented

        return numpy.array_equal(self._array, other._array)

    __hash__ = None

    @classmethod
    def zeros(cls, shape: tuple) -> 'Tensor':
        return cls(numpy.zeros(shape, dtype=DTYPE), copy=False)

    @classmethod
    def full(cls, shape: tuple, value: float) -> 'Tensor':
        return cls(numpy.full(shape, value, dtype=DTYPE), copy=False)

    @property
    def shape(self) -> tuple:
        return self._array.shape

    @property
    def batch(self) -> int:
        return self._array.shape[0]

    @property
    def channels(self) -> int:
        return self._array.shape[1]

    @property
    def height(self) -> int:
        return self._array.shape[2]

    @property
    def width(self) -> int:
        return self._array.shape[3]

    @property
    def array(self) -> numpy.ndarray:
        """Read-only view of the data."""
        return self._array

    @property
    def data(self) -> numpy.ndarray:
        """Flat row-major view of the data."""
        return self._array.reshape(-1)

    def isfinite(self) -> bool:
        return bool(numpy.isfinite(self._array).all())


def wrap(array: numpy.ndarray) -> Tensor:
    """Wrap a freshly computed array without copying it."""
    return Tensor(array, copy=False)


def concat_channels(inputs: list) -> Tensor:
    """Concatenate the tensors along the channel axis, in list order."""
    if not inputs:
        raise ShapeError("concat_channels requires at least one input")

    first = inputs[0]
    for index, tensor in enumerate(inputs):
        if (tensor.batch, tensor.height, tensor.width) != \
           (first.batch, first.height, first.width):
            raise ShapeError("concat_channels: input %d has shape %s, "
                             "expected batch/height/width of %s"
                             % (index, tensor.shape, first.shape))

    if len(inputs) == 1:
        return first

    return wrap(numpy.concatenate([t.array for t in inputs], axis=1))


def split_channels(tensor: Tensor, sizes: list) -> list:
    """Split a tensor along the channel axis into blocks of given sizes."""
    if sum(sizes) != tensor.channels:
        raise ShapeError("split sizes %s do not add up to %d channels"
                         % (list(sizes), tensor.channels))

    bounds = numpy.cumsum([0] + list(sizes))

    return [Tensor(tensor.array[:, start:stop])
            for start, stop in zip(bounds[:-1], bounds[1:])]


def elementwise_add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError("elementwise_add: shapes %s and %s differ"
                         % (a.shape, b.shape))

    return wrap(numpy.add(a.array, b.array))


def scale_channels(x: Tensor, weights) -> Tensor:
    """Multiply every channel of x by the matching weight."""
    weights = numpy.asarray(weights, dtype=DTYPE).reshape(-1)
    if weights.size != x.channels:
        raise ShapeError("scale_channels: %d weights for %d channels"
                         % (weights.size, x.channels))

    return wrap(x.array * weights[None, :, None, None])


def seeded_array(shape: tuple, seed: int, distribution,
                 stream: int = 0) -> numpy.ndarray:
    """Deterministic float32 array of any rank.

    Random values come from numpy's PCG64 generator seeded through
    ``SeedSequence((seed, stream))``: uniform doubles are drawn in
    row-major order and rounded to float32.

    """
    if isinstance(distribution, Constant):
        return numpy.full(shape, distribution.value, dtype=DTYPE)
    if not isinstance(distribution, Uniform):
        raise TypeError("unknown distribution %r" % (distribution, ))

    sequence = numpy.random.SeedSequence((int(seed), int(stream)))
    generator = numpy.random.Generator(numpy.random.PCG64(sequence))
    bound = float(distribution.bound)

    return generator.uniform(-bound, bound, size=shape).astype(DTYPE)


def seeded_fill(shape: tuple, seed: int, distribution,
                stream: int = 0) -> Tensor:
    """Tensor filled from the given distribution, see `seeded_array`."""
    return wrap(seeded_array(tuple(shape), seed, distribution, stream=stream))


def relative_error(actual: Tensor, expected: Tensor) -> float:
    """max |actual - expected| / max |expected|.

    Falls back to the absolute error when `expected` is all zeros.

    """
    if actual.shape != expected.shape:
        raise ShapeError("cannot compare shapes %s and %s"
                         % (actual.shape, expected.shape))

    a = actual.array.astype(numpy.float64)
    b = expected.array.astype(numpy.float64)
    error = float(numpy.abs(a - b).max())
    scale = float(numpy.abs(b).max())

    return error / scale if scale > 0 else error
