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

"""This module contains the definition of the WeightStore class."""

import numpy

from atrousnet.common import WeightError
from atrousnet.kernels import BatchNormParams


class WeightStore:
    """Named container of every learned parameter of a network.

    Tensors (convolution and linear weights, biases) are read-only float32
    arrays keyed by ``<layer path>.weight`` or ``<layer path>.bias``. Batch
    normalization records are keyed by the layer path.

    """

    __slots__ = '_tensors', '_batchnorms'

    def __init__(self):
        self._tensors = {}
        self._batchnorms = {}

    def __len__(self):
        return len(self._tensors) + len(self._batchnorms)

    def __contains__(self, name: str):
        return name in self._tensors or name in self._batchnorms

    def __eq__(self, other):
        if not isinstance(other, WeightStore):
            return NotImplemented
        if self._tensors.keys() != other._tensors.keys() or \
           self._batchnorms.keys() != other._batchnorms.keys():
            return False

        return (all(numpy.array_equal(a, other._tensors[n])
                    for n, a in self._tensors.items()) and
                all(p == other._batchnorms[n]
                    for n, p in self._batchnorms.items()))

    __hash__ = None

    def __repr__(self):
        return "%s(%d tensors, %d batch norms)" % (
            self.__class__.__name__, len(self._tensors),
            len(self._batchnorms))

    def names(self) -> list:
        return sorted(list(self._tensors) + list(self._batchnorms))

    def tensors(self) -> iter:
        """Iterate over the (name, array) pairs."""
        return iter(self._tensors.items())

    def batchnorms(self) -> iter:
        """Iterate over the (name, BatchNormParams) pairs."""
        return iter(self._batchnorms.items())

    def tensor(self, name: str) -> numpy.ndarray:
        try:
            return self._tensors[name]
        except KeyError:
            raise WeightError("unbound weight '%s'" % name)

    def batchnorm(self, name: str) -> BatchNormParams:
        try:
            return self._batchnorms[name]
        except KeyError:
            raise WeightError("unbound batch norm '%s'" % name)

    def set_tensor(self, name: str, array):
        if name in self._batchnorms:
            raise WeightError("'%s' is bound to a batch norm" % name)

        array = numpy.array(array, dtype=numpy.float32)
        array.setflags(write=False)
        self._tensors[name] = array

    def set_batchnorm(self, name: str, params: BatchNormParams):
        if name in self._tensors:
            raise WeightError("'%s' is bound to a tensor" % name)

        self._batchnorms[name] = params

    def remove(self, name: str):
        self._tensors.pop(name, None)
        self._batchnorms.pop(name, None)

    def copy(self) -> 'WeightStore':
        """Shallow copy, the arrays themselves are immutable."""
        store = WeightStore()
        store._tensors.update(self._tensors)
        store._batchnorms.update(self._batchnorms)

        return store

    def bind(self, graph, strict: bool = True):
        """Check that every graph parameter is bound with the right shape.

        In strict mode entries the graph does not use are rejected too.

        """
        expected = set()

        for parameter in graph.parameters():
            expected.add(parameter.name)
            if parameter.kind == 'batchnorm':
                channels = self.batchnorm(parameter.name).channels
                if (channels, ) != parameter.shape:
                    raise WeightError("'%s' has %d channels, expected %d"
                                      % (parameter.name, channels,
                                         parameter.shape[0]))
            elif self.tensor(parameter.name).shape != parameter.shape:
                raise WeightError("'%s' has shape %s, expected %s"
                                  % (parameter.name,
                                     self.tensor(parameter.name).shape,
                                     parameter.shape))

        unused = set(self.names()) - expected
        if strict and unused:
            raise WeightError("unused weights: %s"
                              % ', '.join(sorted(unused)))
