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

  * AtrousNetError exception hierarchy
  * Engine enumerations
  * Engine shared state helpers

"""

from enum import IntEnum
from collections import namedtuple


class AtrousNetError(RuntimeError):
    """An error occurred within the inference engine."""

    def __init__(self, message: str, code: int = None):
        super(AtrousNetError, self).__init__(message)

        self.code = code


class ShapeError(AtrousNetError):
    """A tensor or layer shape contract was violated."""


class WeightError(AtrousNetError):
    """Parameters are missing, unused or inconsistent with the graph."""


class WeightFileError(AtrousNetError):
    """A weight file could not be decoded."""


class ImageFormatError(AtrousNetError):
    """An image file is malformed or not supported."""


class ConfigurationError(AtrousNetError):
    """Invalid engine settings."""


class ProbeError(AtrousNetError):
    """A graph prefix cannot be probed by brute force."""


class VerificationError(AtrousNetError):
    """One or more verification checks failed."""


class KernelPath(IntEnum):
    NAIVE = 0
    OPTIMIZED = 1


class PoolKind(IntEnum):
    AVG = 0
    MAX = 1


class ActivationKind(IntEnum):
    RELU = 0
    RELU6 = 1
    LEAKY_RELU = 2
    SIGMOID = 3


class MergeMode(IntEnum):
    CONCAT = 0
    SUM = 1


class FusionMode(IntEnum):
    FFN = 0
    ADD = 1


class RateMode(IntEnum):
    HOLD = 0
    FIRST = 1


class AttentionKind(IntEnum):
    CAM = 0
    SE = 1
    NONE = 2


class ContextKind(IntEnum):
    DASPP = 0
    ASPP = 1


class SpatialKind(IntEnum):
    SPN = 0
    NONE = 1


class Op(IntEnum):
    INPUT = 0
    CONV = 1
    BN = 2
    ACT = 3
    POOL = 4
    GAP = 5
    RESIZE = 6
    CONCAT = 7
    ADD = 8
    SCALE = 9
    LINEAR = 10


class Branch(IntEnum):
    SEMANTIC = 0
    SPATIAL = 1
    FUSION = 2


class ExitCode(IntEnum):
    SUCCESS = 0
    USAGE = 1
    DATA = 2
    VERIFICATION = 3


def enum_value(enum: type, value) -> IntEnum:
    """Resolve an enumeration member from itself, its value or its name.

    Names are case insensitive and dashes are accepted for underscores.

    """
    if isinstance(value, enum):
        return value
    if isinstance(value, int):
        return enum(value)

    try:
        return enum[str(value).strip().upper().replace('-', '_')]
    except KeyError:
        raise ConfigurationError("invalid %s '%s'" % (enum.__name__, value))


EXIT_CODES = {ShapeError: ExitCode.DATA,
              WeightError: ExitCode.DATA,
              WeightFileError: ExitCode.DATA,
              ImageFormatError: ExitCode.DATA,
              ProbeError: ExitCode.DATA,
              ConfigurationError: ExitCode.USAGE,
              VerificationError: ExitCode.VERIFICATION}


def exit_code(error: BaseException) -> ExitCode:
    """Map an exception to the process exit code."""
    for error_class in type(error).__mro__:
        if error_class in EXIT_CODES:
            return EXIT_CODES[error_class]

    return ExitCode.DATA


class EngineData:
    """State shared by an Engine and its namespaces."""

    __slots__ = 'graph', 'store', 'settings', 'routers'

    def __init__(self, graph, settings, store=None):
        self.graph = graph
        self.store = store
        self.settings = settings
        self.routers = {}


NETWORK_TAPS = ('block0_out', 'block1_out', 'block2_out', 'block3_out',
                'block4_out', 'block5_out', 'block6_out', 'block7_out',
                'dense_skip', 'daspp_in', 'daspp_out',
                'spn_layer0', 'spn_layer1', 'spn_out', 'fused', 'logits')

TimingEntry = namedtuple('TimingEntry', ('name', 'seconds'))
