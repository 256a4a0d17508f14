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

  * Palette class and the CITYSCAPES palette
  * read_image, write_image and write_labels functions
  * colorize function

Images are binary Netpbm files: 8-bit RGB PPM (P6) for pictures, 8-bit
grayscale PGM (P5) for raw label maps.

"""

import re

import numpy

from atrousnet.tensor import Tensor
from atrousnet.common import ImageFormatError, ShapeError


MAX_DIMENSION = 1 << 15
HEADER = re.compile(rb'\A(P[1-7])'
                    rb'((?:\s+(?:#[^\n]*\n)*\s*\d+){3})\s')
COMMENT = re.compile(rb'#[^\n]*\n')


class Palette:
    """Ordered class names with their RGB colors."""

    __slots__ = '_names', '_colors'

    def __init__(self, entries: list):
        self._names = tuple(name for name, _ in entries)
        colors = numpy.array([color for _, color in entries],
                             dtype=numpy.uint8)
        if colors.ndim != 2 or colors.shape[1] != 3:
            raise ShapeError("palette colors must be RGB triples")
        colors.setflags(write=False)
        self._colors = colors

    def __len__(self):
        return len(self._names)

    def __getitem__(self, index: int) -> tuple:
        return tuple(int(c) for c in self._colors[index])

    def __repr__(self):
        return "%s(%d classes)" % (self.__class__.__name__, len(self))

    @property
    def names(self) -> tuple:
        return self._names

    @property
    def colors(self) -> numpy.ndarray:
        """(classes, 3) uint8 array."""
        return self._colors


CITYSCAPES = Palette((('road', (128, 64, 128)),
                      ('sidewalk', (244, 35, 232)),
                      ('building', (70, 70, 70)),
                      ('wall', (102, 102, 156)),
                      ('fence', (190, 153, 153)),
                      ('pole', (153, 153, 153)),
                      ('traffic light', (250, 170, 30)),
                      ('traffic sign', (220, 220, 0)),
                      ('vegetation', (107, 142, 35)),
                      ('terrain', (152, 251, 152)),
                      ('sky', (70, 130, 180)),
                      ('person', (220, 20, 60)),
                      ('rider', (255, 0, 0)),
                      ('car', (0, 0, 142)),
                      ('truck', (0, 0, 70)),
                      ('bus', (0, 60, 100)),
                      ('train', (0, 80, 100)),
                      ('motorcycle', (0, 0, 230)),
                      ('bicycle', (119, 11, 32))))


def read_pixels(path: str) -> numpy.ndarray:
    """Raw (height, width, 3) uint8 pixels of a binary PPM file."""
    with open(path, 'rb') as stream:
        buffer = stream.read()

    match = HEADER.match(buffer)
    if match is None:
        raise ImageFormatError("'%s' is not a Netpbm image" % path)
    if match.group(1) != b'P6':
        raise ImageFormatError("unsupported format %s, binary PPM (P6) only"
                               % match.group(1).decode())

    width, height, maxval = (int(v) for v in
                             COMMENT.sub(b' ', match.group(2)).split())
    if not 0 < maxval < 256:
        raise ImageFormatError("unsupported maximum value %d, 8-bit only"
                               % maxval)
    if not (0 < width <= MAX_DIMENSION and 0 < height <= MAX_DIMENSION):
        raise ImageFormatError("image dimensions %dx%d out of range"
                               % (width, height))

    size = width * height * 3
    data = buffer[match.end():match.end() + size]
    if len(data) < size:
        raise ImageFormatError("truncated image data, %d of %d bytes"
                               % (len(data), size))

    pixels = numpy.frombuffer(data, dtype=numpy.uint8)
    pixels = pixels.reshape(height, width, 3)
    if maxval != 255:
        pixels = numpy.round(pixels * (255.0 / maxval)).astype(numpy.uint8)

    return pixels


def read_image(path: str, mean: tuple = (0.5, 0.5, 0.5),
               std: tuple = (0.5, 0.5, 0.5),
               normalize: bool = True) -> Tensor:
    """Image as a (1, 3, height, width) tensor.

    Channels are scaled to [0, 1] then, if `normalize` is set, shifted by
    `mean` and divided by `std`.

    """
    data = read_pixels(path).transpose(2, 0, 1)[None] / 255.0
    if normalize:
        data = (data - numpy.reshape(mean, (1, 3, 1, 1))) / \
            numpy.reshape(std, (1, 3, 1, 1))

    return Tensor(data)


def write_image(image, path: str):
    """Write a binary PPM.

    `image` is either a (height, width, 3) uint8 array or a (1, 3, height,
    width) tensor of values in [0, 1].

    """
    if isinstance(image, Tensor):
        if image.batch != 1 or image.channels != 3:
            raise ShapeError("cannot write a %s tensor as an RGB image"
                             % (image.shape, ))
        pixels = numpy.clip(numpy.round(image.array[0] * 255.0), 0, 255)
        pixels = pixels.astype(numpy.uint8).transpose(1, 2, 0)
    else:
        pixels = numpy.asarray(image)
        if pixels.dtype != numpy.uint8 or pixels.ndim != 3 or \
           pixels.shape[2] != 3:
            raise ShapeError("RGB images are (height, width, 3) uint8 arrays")

    height, width = pixels.shape[:2]
    with open(path, 'wb') as stream:
        stream.write(b'P6\n%d %d\n255\n' % (width, height))
        stream.write(numpy.ascontiguousarray(pixels).tobytes())


def write_labels(labels: numpy.ndarray, path: str):
    """Write a (height, width) label map as a binary PGM of class ids."""
    labels = numpy.asarray(labels)
    if labels.ndim != 2:
        raise ShapeError("label maps are 2-D, got shape %s" % (labels.shape, ))
    if labels.size and (labels.min() < 0 or labels.max() > 255):
        raise ShapeError("class ids must lie in 0..255 to fit a PGM")

    height, width = labels.shape
    with open(path, 'wb') as stream:
        stream.write(b'P5\n%d %d\n255\n' % (width, height))
        stream.write(labels.astype(numpy.uint8).tobytes())


def colorize(labels: numpy.ndarray,
             palette: Palette = CITYSCAPES) -> numpy.ndarray:
    """Map every class id to its palette color, (height, width, 3) uint8."""
    labels = numpy.asarray(labels)
    if labels.size:
        low, high = int(labels.min()), int(labels.max())
        if low < 0 or high >= len(palette):
            raise ShapeError("class id %d outside the %d-entry palette"
                             % (high if high >= len(palette) else low,
                                len(palette)))

    return palette.colors[labels.astype(numpy.intp)]
