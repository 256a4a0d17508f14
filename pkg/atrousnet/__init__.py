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


__author__ = 'The atrousnet developers'
__version__ = '0.1.0'
__license__ = 'BSD-3'


__all__ = ('AtrousNetError',
           'ShapeError',
           'WeightError',
           'WeightFileError',
           'ImageFormatError',
           'ConfigurationError',
           'ProbeError',
           'VerificationError',
           'Engine',
           'Settings',
           'Tensor',
           'ConvSpec',
           'BatchNormParams',
           'BottleneckSpec',
           'DasppConfig',
           'WeightStore',
           'NetworkGraph',
           'Router',
           'LoggingRouter',
           'TimingRouter',
           'Palette',
           'KernelPath',
           'PoolKind',
           'MergeMode',
           'FusionMode',
           'ActivationKind',
           'RateMode',
           'AttentionKind',
           'ContextKind',
           'SpatialKind')


from atrousnet.engine import Engine
from atrousnet.config import Settings
from atrousnet.tensor import Tensor
from atrousnet.images import Palette
from atrousnet.graph import NetworkGraph
from atrousnet.weights import WeightStore
from atrousnet.kernels import ConvSpec, BatchNormParams
from atrousnet.blocks import BottleneckSpec, DasppConfig
from atrousnet.routers import Router, LoggingRouter, TimingRouter
from atrousnet.common import KernelPath, PoolKind, MergeMode, FusionMode
from atrousnet.common import ActivationKind, RateMode, AttentionKind
from atrousnet.common import ContextKind, SpatialKind
from atrousnet.common import AtrousNetError, ShapeError, WeightError
from atrousnet.common import WeightFileError, ImageFormatError, ProbeError
from atrousnet.common import ConfigurationError, VerificationError
