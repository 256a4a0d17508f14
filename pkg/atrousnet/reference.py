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

"""Pure Python rendition of the native reference kernels.

Used by the naive path when the compiled ``_atrousnet`` extension is not
available. Loop order and accumulation match ``lib/atrousnet.c`` so both
produce identical float32 results.

"""

import math

import numpy


def conv2d(x: numpy.ndarray, w: numpy.ndarray, bias, stride: int, rate: int,
           padding: int, groups: int, out_height: int,
           out_width: int) -> numpy.ndarray:
    batch, in_channels, height, width = x.shape
    out_channels, group_in, kernel, _ = w.shape
    group_out = out_channels // groups

    data = x.tolist()
    weights = w.tolist()
    biases = None if bias is None else [float(b) for b in bias]
    out = numpy.empty((batch, out_channels, out_height, out_width),
                      dtype=numpy.float32)

    for n in range(batch):
        for o in range(out_channels):
            first = (o // group_out) * group_in
            for i in range(out_height):
                for j in range(out_width):
                    acc = 0.0
                    for c in range(group_in):
                        plane = data[n][first + c]
                        taps = weights[o][c]
                        for m in range(kernel):
                            row = i * stride + m * rate - padding
                            if row < 0 or row >= height:
                                continue
                            line = plane[row]
                            for q in range(kernel):
                                col = j * stride + q * rate - padding
                                if col < 0 or col >= width:
                                    continue
                                acc += line[col] * taps[m][q]
                    if biases is not None:
                        acc += biases[o]
                    out[n, o, i, j] = acc

    return out


def pool2d(x: numpy.ndarray, average: bool, kernel: int, stride: int,
           padding: int, out_height: int, out_width: int) -> numpy.ndarray:
    batch, channels, height, width = x.shape
    data = x.tolist()
    out = numpy.empty((batch, channels, out_height, out_width),
                      dtype=numpy.float32)

    for n in range(batch):
        for c in range(channels):
            plane = data[n][c]
            for i in range(out_height):
                for j in range(out_width):
                    acc = 0.0 if average else -math.inf
                    count = 0
                    for m in range(kernel):
                        row = i * stride + m - padding
                        if row < 0 or row >= height:
                            continue
                        for q in range(kernel):
                            col = j * stride + q - padding
                            if col < 0 or col >= width:
                                continue
                            value = plane[row][col]
                            if average:
                                acc += value
                            elif value > acc:
                                acc = value
                            count += 1
                    if average:
                        acc = acc / count if count else 0.0
                    elif not count:
                        acc = 0.0
                    out[n, c, i, j] = acc

    return out


def source_index(dst: int, in_size: int, out_size: int) -> tuple:
    """Half-pixel source coordinate clamped to the borders."""
    src = (dst + 0.5) * (in_size / out_size) - 0.5
    src = min(max(src, 0.0), float(in_size - 1))
    low = int(math.floor(src))

    return low, min(low + 1, in_size - 1), src - low


def bilinear(x: numpy.ndarray, out_height: int,
             out_width: int) -> numpy.ndarray:
    batch, channels, height, width = x.shape
    data = x.tolist()
    rows = [source_index(i, height, out_height) for i in range(out_height)]
    cols = [source_index(j, width, out_width) for j in range(out_width)]
    out = numpy.empty((batch, channels, out_height, out_width),
                      dtype=numpy.float32)

    for n in range(batch):
        for c in range(channels):
            plane = data[n][c]
            for i, (top, bottom, fy) in enumerate(rows):
                for j, (left, right, fx) in enumerate(cols):
                    upper = (1.0 - fx) * plane[top][left] + \
                        fx * plane[top][right]
                    lower = (1.0 - fx) * plane[bottom][left] + \
                        fx * plane[bottom][right]
                    out[n, c, i, j] = (1.0 - fy) * upper + fy * lower

    return out
