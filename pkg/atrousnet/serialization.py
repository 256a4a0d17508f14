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

  * WeightEntry record
  * WeightFileHeader class
  * save_weights and load_weights functions

Weight files are little-endian throughout::

    magic 'ATRW' | version u32 | header length u64 | entry count u32
    entries: name length u16 | name utf-8 | rank u8 | dims u32 * rank
             | type tag u8 | data offset u64
    data: raw arrays, offsets relative to the end of the header

Batch norms are stored as five entries: ``<path>.gamma``, ``.beta``,
``.mean`` and ``.var`` in float32 and ``.eps`` as a float64 scalar.

"""

import struct
from collections import namedtuple

import numpy

from atrousnet.weights import WeightStore
from atrousnet.kernels import BatchNormParams
from atrousnet.common import WeightFileError, ShapeError


MAGIC = b'ATRW'
VERSION = 1
PREAMBLE = struct.Struct('<4sIQI')
ENTRY_HEAD = struct.Struct('<H')
ENTRY_TAIL = struct.Struct('<BQ')
DTYPES = {1: numpy.dtype('<f4'), 2: numpy.dtype('<f8')}
DTYPE_TAGS = {dtype.str: tag for tag, dtype in DTYPES.items()}
BATCHNORM_FIELDS = ('gamma', 'beta', 'mean', 'var', 'eps')

WeightEntry = namedtuple('WeightEntry', ('name', 'shape', 'dtype', 'offset'))


class WeightFileHeader:
    """Directory of the arrays held by a weight file."""

    __slots__ = 'version', 'entries'

    def __init__(self, entries: list, version: int = VERSION):
        self.version = version
        self.entries = list(entries)

    def __repr__(self):
        return "%s(version=%d, %d entries)" % (
            self.__class__.__name__, self.version, len(self.entries))

    @staticmethod
    def nbytes(entry: WeightEntry) -> int:
        return int(numpy.prod(entry.shape, dtype=numpy.int64)) * \
            DTYPES[entry.dtype].itemsize

    @property
    def data_size(self) -> int:
        return max((e.offset + self.nbytes(e) for e in self.entries),
                   default=0)

    def pack(self) -> bytes:
        body = bytearray()

        for entry in self.entries:
            name = entry.name.encode()
            body += ENTRY_HEAD.pack(len(name)) + name
            body += struct.pack('<B%dI' % len(entry.shape), len(entry.shape),
                                *entry.shape)
            body += ENTRY_TAIL.pack(entry.dtype, entry.offset)

        length = PREAMBLE.size + len(body)

        return PREAMBLE.pack(MAGIC, self.version, length,
                             len(self.entries)) + bytes(body)

    @classmethod
    def unpack(cls, buffer: bytes) -> tuple:
        """Parse and validate the header.

        Returns the header and its length in bytes.

        """
        if len(buffer) < PREAMBLE.size:
            raise WeightFileError("truncated weight file header")

        magic, version, length, count = PREAMBLE.unpack_from(buffer)
        if magic != MAGIC:
            raise WeightFileError("not a weight file, bad magic %r" % magic)
        if version != VERSION:
            raise WeightFileError("unknown weight file version %d" % version)
        if length > len(buffer):
            raise WeightFileError("truncated weight file header")

        entries = []
        position = PREAMBLE.size
        try:
            for _ in range(count):
                entry, position = _unpack_entry(buffer, position, length)
                entries.append(entry)
        except struct.error:
            raise WeightFileError("truncated weight file header")
        if position != length:
            raise WeightFileError("corrupt header, %d bytes declared, %d read"
                                  % (length, position))

        header = cls(entries, version)
        header.validate(len(buffer) - length)

        return header, length

    def validate(self, data_size: int):
        names = set()
        end = 0

        for entry in self.entries:
            if entry.name in names:
                raise WeightFileError("duplicate entry '%s'" % entry.name)
            names.add(entry.name)

        for entry in sorted(self.entries, key=lambda e: e.offset):
            if entry.offset < end:
                raise WeightFileError("entry '%s' overlaps the previous one"
                                      % entry.name)
            end = entry.offset + self.nbytes(entry)
            if end > data_size:
                raise WeightFileError("truncated data for entry '%s'"
                                      % entry.name)


def _unpack_entry(buffer, position, limit):
    size, = ENTRY_HEAD.unpack_from(buffer, position)
    position += ENTRY_HEAD.size
    if position + size > limit:
        raise struct.error("name past the header end")
    try:
        name = bytes(buffer[position:position + size]).decode()
    except UnicodeDecodeError:
        raise WeightFileError("corrupt entry name at byte %d" % position)
    position += size

    rank, = struct.unpack_from('<B', buffer, position)
    shape = struct.unpack_from('<%dI' % rank, buffer, position + 1)
    position += 1 + 4 * rank
    dtype, offset = ENTRY_TAIL.unpack_from(buffer, position)
    position += ENTRY_TAIL.size
    if position > limit:
        raise struct.error("entry past the header end")
    if dtype not in DTYPES:
        raise WeightFileError("entry '%s' has unknown type tag %d"
                              % (name, dtype))

    return WeightEntry(name, tuple(shape), dtype, offset), position


def _arrays(store: WeightStore) -> iter:
    for name, array in store.tensors():
        yield name, numpy.asarray(array, dtype='<f4')

    for name, params in store.batchnorms():
        yield name + '.gamma', params.gamma.astype('<f4')
        yield name + '.beta', params.beta.astype('<f4')
        yield name + '.mean', params.mean.astype('<f4')
        yield name + '.var', params.variance.astype('<f4')
        yield name + '.eps', numpy.array([params.epsilon], dtype='<f8')


def save_weights(store: WeightStore, path: str):
    """Write the store to `path`, float32 values are kept bit for bit."""
    arrays = list(_arrays(store))
    entries = []
    offset = 0

    for name, array in arrays:
        entries.append(WeightEntry(name, array.shape,
                                   DTYPE_TAGS[array.dtype.str], offset))
        offset += array.nbytes

    with open(path, 'wb') as stream:
        stream.write(WeightFileHeader(entries).pack())
        for _, array in arrays:
            stream.write(numpy.ascontiguousarray(array).tobytes())


def read_header(path: str) -> WeightFileHeader:
    with open(path, 'rb') as stream:
        return WeightFileHeader.unpack(stream.read())[0]


def load_weights(path: str) -> WeightStore:
    """Read a weight file, the header is validated before any data."""
    with open(path, 'rb') as stream:
        buffer = stream.read()

    header, length = WeightFileHeader.unpack(buffer)
    arrays = {}
    for entry in header.entries:
        count = int(numpy.prod(entry.shape, dtype=numpy.int64))
        arrays[entry.name] = numpy.frombuffer(
            buffer, dtype=DTYPES[entry.dtype], count=count,
            offset=length + entry.offset).reshape(entry.shape)

    return _store(arrays)


def _store(arrays: dict) -> WeightStore:
    store = WeightStore()
    groups = {}

    for name, array in arrays.items():
        base, _, field = name.rpartition('.')
        if field in BATCHNORM_FIELDS:
            groups.setdefault(base, {})[field] = array
        else:
            store.set_tensor(name, array.astype(numpy.float32))

    for base, fields in groups.items():
        missing = [f for f in BATCHNORM_FIELDS if f not in fields]
        if missing:
            raise WeightFileError("batch norm '%s' lacks %s"
                                  % (base, ', '.join(missing)))
        if fields['eps'].size != 1:
            raise WeightFileError("batch norm '%s' has a non-scalar epsilon"
                                  % base)
        try:
            store.set_batchnorm(base, BatchNormParams(
                fields['gamma'], fields['beta'], fields['mean'],
                fields['var'], float(fields['eps'].reshape(-1)[0])))
        except ShapeError as error:
            raise WeightFileError("batch norm '%s': %s" % (base, error))

    return store
