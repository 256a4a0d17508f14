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

  * BottleneckSpec class
  * DasppConfig class
  * emit_* functions adding composite blocks to a GraphBuilder
  * bottleneck, cam, squeeze_excitation, aspp, daspp, spn and ffn operations

Each operation builds the sub-graph of its block, named under the given
prefix, and evaluates it against the weights bound under that prefix.

"""

from atrousnet.graph import GraphBuilder, execute
from atrousnet.kernels import ConvSpec
from atrousnet.common import ShapeError, ActivationKind, PoolKind, MergeMode
from atrousnet.common import FusionMode, Branch, enum_value


SPN_CHANNELS = 64
CONTEXT_CHANNELS = 128
SPATIAL_CHANNELS = 88
FUSION_RATE = 2


class BottleneckSpec:
    """Inverted residual unit: expansion t, output channels c, stride s
    and atrous rate d of the depthwise convolution."""

    __slots__ = 'expansion', 'out_channels', 'stride', 'atrous_rate'

    def __init__(self, expansion: int, out_channels: int, stride: int = 1,
                 atrous_rate: int = 1):
        self.expansion = int(expansion)
        self.out_channels = int(out_channels)
        self.stride = int(stride)
        self.atrous_rate = int(atrous_rate)

        if self.expansion < 1 or self.out_channels < 1 or \
           self.atrous_rate < 1:
            raise ShapeError("invalid %r" % self)
        if self.stride not in (1, 2):
            raise ShapeError("bottleneck stride must be 1 or 2")
        if self.stride != 1 and self.atrous_rate != 1:
            raise ShapeError("atrous bottlenecks keep stride 1")

    def __repr__(self):
        return "BottleneckSpec(t=%d, c=%d, s=%d, d=%d)" % (
            self.expansion, self.out_channels, self.stride, self.atrous_rate)

    def residual(self, in_channels: int) -> bool:
        """True if the unit adds its input to the projection."""
        return self.stride == 1 and in_channels == self.out_channels


class DasppConfig:
    """Distinctive pyramid pooling layout.

    Branch i pools with window pool_sizes[i] before a 3x3 convolution of
    rate rates[i]; an image-level branch and a 1x1 + 3x3 branch complete
    the pyramid.

    """

    __slots__ = 'pool_sizes', 'rates', 'channels', 'pool_kind', 'merge'

    def __init__(self, pool_sizes: tuple = (3, 5, 7),
                 rates: tuple = (12, 24, 36),
                 channels: int = CONTEXT_CHANNELS,
                 pool_kind: PoolKind = PoolKind.AVG,
                 merge: MergeMode = MergeMode.CONCAT):
        self.pool_sizes = tuple(int(p) for p in pool_sizes)
        self.rates = tuple(int(r) for r in rates)
        self.channels = int(channels)
        self.pool_kind = enum_value(PoolKind, pool_kind)
        self.merge = enum_value(MergeMode, merge)

        if len(self.pool_sizes) != len(self.rates):
            raise ShapeError("one atrous rate per pooling size is required")
        if any(p % 2 == 0 for p in self.pool_sizes):
            raise ShapeError("pooling sizes must be odd")

    def __repr__(self):
        return ("DasppConfig(pool_sizes=%s, rates=%s, channels=%d, %s, %s)"
                % (self.pool_sizes, self.rates, self.channels,
                   self.pool_kind.name.lower(), self.merge.name.lower()))

    @property
    def branches(self) -> int:
        return len(self.rates) + 2


def emit_conv(builder: GraphBuilder, source: str, prefix: str,
              spec: ConvSpec, act: ActivationKind = None) -> str:
    """Convolution followed by batch norm and an optional activation."""
    out = builder.conv(prefix + '.conv', source, spec)
    out = builder.batchnorm(prefix + '.bn', out)
    if act is not None:
        out = builder.activation(prefix + '.act', out, act)

    return out


def emit_bottleneck(builder: GraphBuilder, source: str, prefix: str,
                    spec: BottleneckSpec) -> str:
    in_channels = builder.channels(source)
    hidden = in_channels * spec.expansion
    out = source

    if spec.expansion != 1:
        out = emit_conv(builder, out, prefix + '.expand',
                        ConvSpec(in_channels, hidden, kernel=1),
                        ActivationKind.RELU6)
    out = emit_conv(builder, out, prefix + '.depthwise',
                    ConvSpec.same(hidden, hidden, kernel=3,
                                  atrous_rate=spec.atrous_rate,
                                  stride=spec.stride, groups=hidden),
                    ActivationKind.RELU6)
    out = emit_conv(builder, out, prefix + '.project',
                    ConvSpec(hidden, spec.out_channels, kernel=1))

    if spec.residual(in_channels):
        out = builder.add(prefix + '.residual', [source, out])

    return out


def attention_width(channels: int, reduction: int = 4,
                    minimum: int = 8) -> int:
    return max(channels // reduction, minimum)


def emit_cam(builder: GraphBuilder, source: str, prefix: str) -> str:
    """Channel attention: gap, 1x1 conv, BN, LeakyReLU, linear, sigmoid."""
    channels = builder.channels(source)
    width = attention_width(channels)

    out = builder.global_pool(prefix + '.pool', source)
    out = emit_conv(builder, out, prefix + '.reduce',
                    ConvSpec(channels, width, kernel=1),
                    ActivationKind.LEAKY_RELU)
    out = builder.linear(prefix + '.fc', out, channels)
    out = builder.activation(prefix + '.gate', out, ActivationKind.SIGMOID)

    return builder.scale(prefix + '.scale', source, out)


def emit_squeeze_excitation(builder: GraphBuilder, source: str,
                            prefix: str) -> str:
    """Squeeze-and-excitation gate: gap, linear, ReLU, linear, sigmoid."""
    channels = builder.channels(source)

    out = builder.global_pool(prefix + '.pool', source)
    out = builder.linear(prefix + '.squeeze', out, attention_width(channels))
    out = builder.activation(prefix + '.act', out, ActivationKind.RELU)
    out = builder.linear(prefix + '.excite', out, channels)
    out = builder.activation(prefix + '.gate', out, ActivationKind.SIGMOID)

    return builder.scale(prefix + '.scale', source, out)


def emit_aspp(builder: GraphBuilder, source: str, prefix: str,
              rates: tuple = (6, 12, 18),
              channels: int = CONTEXT_CHANNELS) -> str:
    """Parallel 1x1 and atrous 3x3 convolutions, concatenated in order."""
    in_channels = builder.channels(source)
    branches = [builder.conv(prefix + '.branch0.conv', source,
                             ConvSpec(in_channels, channels, kernel=1),
                             bias=True)]

    for index, rate in enumerate(rates, start=1):
        branches.append(builder.conv(
            '%s.branch%d.conv' % (prefix, index), source,
            ConvSpec.same(in_channels, channels, kernel=3, atrous_rate=rate),
            bias=True))

    return builder.concat(prefix + '.concat', branches)


def emit_daspp(builder: GraphBuilder, source: str, prefix: str,
               config: DasppConfig) -> str:
    channels = config.channels
    if builder.channels(source) != channels:
        raise ShapeError("%s: DASPP expects %d input channels, got %d"
                         % (prefix, channels, builder.channels(source)))

    image = builder.global_pool(prefix + '.image.pool', source)
    image = emit_conv(builder, image, prefix + '.image',
                      ConvSpec(channels, channels, kernel=1),
                      ActivationKind.RELU)
    branches = [builder.resize(prefix + '.image.resize', image, like=source)]

    for index, (size, rate) in enumerate(zip(config.pool_sizes, config.rates),
                                         start=1):
        branch = '%s.branch%d' % (prefix, index)
        out = builder.pool(branch + '.pool', source, config.pool_kind, size,
                           stride=1, padding=size // 2)
        branches.append(emit_conv(builder, out, branch,
                                  ConvSpec.same(channels, channels,
                                                atrous_rate=rate),
                                  ActivationKind.RELU))

    out = emit_conv(builder, source, prefix + '.local.reduce',
                    ConvSpec(channels, channels, kernel=1),
                    ActivationKind.RELU)
    branches.append(emit_conv(builder, out, prefix + '.local',
                              ConvSpec.same(channels, channels),
                              ActivationKind.RELU))

    if config.merge == MergeMode.SUM:
        return builder.add(prefix + '.shortcut', branches + [source])

    out = builder.concat(prefix + '.concat', branches)
    out = emit_conv(builder, out, prefix + '.merge',
                    ConvSpec(channels * config.branches, channels, kernel=1))

    return builder.add(prefix + '.shortcut', [out, source])


def emit_basic_block(builder: GraphBuilder, source: str, prefix: str) -> str:
    channels = builder.channels(source)

    out = emit_conv(builder, source, prefix + '.conv1',
                    ConvSpec.same(channels, channels), ActivationKind.RELU)
    out = emit_conv(builder, out, prefix + '.conv2',
                    ConvSpec.same(channels, channels))
    out = builder.add(prefix + '.residual', [out, source])

    return builder.activation(prefix + '.act', out, ActivationKind.RELU)


def emit_spn(builder: GraphBuilder, image: str, features: str,
             prefix: str) -> tuple:
    """Shallow residual stem at 1/4 resolution joined with `features`.

    Returns the (layer0, layer1, output) node paths.

    """
    branch = builder.branch
    builder.branch = Branch.SPATIAL

    out = emit_conv(builder, image, prefix + '.layer0',
                    ConvSpec(builder.channels(image), SPN_CHANNELS, kernel=7,
                             stride=2, padding=3),
                    ActivationKind.RELU)
    layer0 = builder.pool(prefix + '.layer0.pool', out, PoolKind.MAX, 3,
                          stride=2, padding=1)
    out = emit_basic_block(builder, layer0, prefix + '.layer1.block0')
    layer1 = emit_basic_block(builder, out, prefix + '.layer1.block1')

    builder.branch = Branch.FUSION
    out = builder.concat(prefix + '.concat', [layer1, features])
    builder.branch = branch

    return layer0, layer1, out


def emit_ffn(builder: GraphBuilder, semantic: str, spatial: str, prefix: str,
             num_classes: int, like: str = None) -> tuple:
    """Fusion head producing class logits at the resolution of `like`,
    or four times the spatial resolution when `like` is not given.

    Returns the (fused features, logits) node paths.

    """
    channels = builder.channels(semantic) + builder.channels(spatial)

    out = builder.resize(prefix + '.upsample', semantic, like=spatial,
                         ratio=2)
    out = builder.concat(prefix + '.concat', [out, spatial])
    out = builder.batchnorm(prefix + '.concat.bn', out)
    fused = emit_conv(builder, out, prefix + '.fuse',
                      ConvSpec.same(channels, channels,
                                    atrous_rate=FUSION_RATE))
    out = builder.conv(prefix + '.classifier.conv', fused,
                       ConvSpec(channels, num_classes, kernel=1), bias=True)

    return fused, _emit_final_resize(builder, out, prefix, like)


def emit_fuse_add(builder: GraphBuilder, semantic: str, spatial: str,
                  prefix: str, num_classes: int, like: str = None) -> tuple:
    """Element-wise addition of per-branch 1x1 class projections."""
    out = builder.resize(prefix + '.upsample', semantic, like=spatial,
                         ratio=2)
    out = builder.conv(prefix + '.semantic.conv', out,
                       ConvSpec(builder.channels(semantic), num_classes,
                                kernel=1), bias=True)
    projected = builder.conv(prefix + '.spatial.conv', spatial,
                             ConvSpec(builder.channels(spatial), num_classes,
                                      kernel=1), bias=True)
    fused = builder.add(prefix + '.add', [out, projected])

    return fused, _emit_final_resize(builder, fused, prefix, like)


def emit_semantic_head(builder: GraphBuilder, semantic: str, prefix: str,
                       num_classes: int, like: str = None) -> tuple:
    """Class projection of the semantic features alone, upsampled to the
    resolution of `like` or eight times their own.

    Returns the (class projection, logits) node paths.

    """
    out = builder.conv(prefix + '.classifier.conv', semantic,
                       ConvSpec(builder.channels(semantic), num_classes,
                                kernel=1), bias=True)
    if like is None:
        return out, builder.resize(prefix + '.resize', out, factor=8)

    return out, builder.resize(prefix + '.resize', out, like=like)


def _emit_final_resize(builder, source, prefix, like):
    if like is None:
        return builder.resize(prefix + '.resize', source, factor=4)

    return builder.resize(prefix + '.resize', source, like=like)


def bottleneck_graph(in_channels: int, spec: BottleneckSpec,
                     prefix: str = 'bottleneck'):
    builder = GraphBuilder()
    source = builder.input('input', in_channels)

    return builder.build(emit_bottleneck(builder, source, prefix, spec))


def cam_graph(channels: int, prefix: str = 'cam'):
    builder = GraphBuilder()
    source = builder.input('input', channels)

    return builder.build(emit_cam(builder, source, prefix))


def squeeze_excitation_graph(channels: int, prefix: str = 'se'):
    builder = GraphBuilder()
    source = builder.input('input', channels)

    return builder.build(emit_squeeze_excitation(builder, source, prefix))


def aspp_graph(in_channels: int, rates: tuple = (6, 12, 18),
               channels: int = CONTEXT_CHANNELS, prefix: str = 'aspp'):
    builder = GraphBuilder()
    source = builder.input('input', in_channels)

    return builder.build(emit_aspp(builder, source, prefix, rates, channels))


def daspp_graph(config: DasppConfig = None, prefix: str = 'daspp'):
    config = config if config is not None else DasppConfig()
    builder = GraphBuilder()
    source = builder.input('input', config.channels)

    return builder.build(emit_daspp(builder, source, prefix, config))


def spn_graph(features_channels: int = 24, prefix: str = 'spn'):
    builder = GraphBuilder()
    image = builder.input('image', 3, multiple=4)
    features = builder.input('features', features_channels)
    layer0, layer1, out = emit_spn(builder, image, features, prefix)
    builder.tap('spn_layer0', layer0)
    builder.tap('spn_layer1', layer1)

    return builder.build(out)


def ffn_graph(num_classes: int = 19, fusion: FusionMode = FusionMode.FFN,
              semantic_channels: int = CONTEXT_CHANNELS,
              spatial_channels: int = SPATIAL_CHANNELS, prefix: str = 'ffn'):
    builder = GraphBuilder()
    semantic = builder.input('semantic', semantic_channels)
    spatial = builder.input('spatial', spatial_channels)
    emit = emit_fuse_add if fusion == FusionMode.ADD else emit_ffn
    fused, logits = emit(builder, semantic, spatial, prefix, num_classes)
    builder.tap('fused', fused)

    return builder.build(logits)


def bottleneck(x, weights, spec: BottleneckSpec, prefix: str = 'bottleneck',
               settings=None):
    """Inverted residual unit: 1x1 expansion (omitted when t = 1),
    depthwise 3x3 at stride s and rate d, linear 1x1 projection, each
    followed by batch norm, with a shortcut when shapes allow."""
    graph = bottleneck_graph(x.channels, spec, prefix)

    return execute(graph, weights, x, settings).output


def cam(x, weights, prefix: str = 'cam', settings=None):
    return execute(cam_graph(x.channels, prefix), weights, x,
                   settings).output


def squeeze_excitation(x, weights, prefix: str = 'se', settings=None):
    return execute(squeeze_excitation_graph(x.channels, prefix), weights, x,
                   settings).output


def aspp(x, weights, rates: tuple = (6, 12, 18),
         channels: int = CONTEXT_CHANNELS, prefix: str = 'aspp',
         settings=None):
    graph = aspp_graph(x.channels, rates, channels, prefix)

    return execute(graph, weights, x, settings).output


def daspp(x, weights, config: DasppConfig = None, prefix: str = 'daspp',
          settings=None):
    config = config if config is not None else DasppConfig()
    if x.channels != config.channels:
        raise ShapeError("DASPP expects %d input channels, got %d"
                         % (config.channels, x.channels))

    return execute(daspp_graph(config, prefix), weights, x, settings).output


def spn(image, features, weights, prefix: str = 'spn', settings=None):
    """Spatial branch output at 1/4 resolution: residual stem features
    concatenated with the given backbone features."""
    if image.height % 4 or image.width % 4:
        raise ShapeError("SPN input %dx%d is not divisible by 4"
                         % (image.height, image.width))
    if (features.height, features.width) != (image.height // 4,
                                             image.width // 4):
        raise ShapeError("SPN features are %dx%d, expected %dx%d"
                         % (features.height, features.width,
                            image.height // 4, image.width // 4))

    graph = spn_graph(features.channels, prefix)
    feeds = {'image': image, 'features': features}

    return execute(graph, weights, feeds, settings).output


def ffn(semantic, spatial, weights, num_classes: int = 19,
        fusion: FusionMode = FusionMode.FFN, prefix: str = 'ffn',
        settings=None):
    """Class logits at four times the spatial branch resolution."""
    if (semantic.channels, spatial.channels) != (CONTEXT_CHANNELS,
                                                 SPATIAL_CHANNELS):
        raise ShapeError("fusion expects (%d, %d) channels, got (%d, %d)"
                         % (CONTEXT_CHANNELS, SPATIAL_CHANNELS,
                            semantic.channels, spatial.channels))
    if (spatial.height, spatial.width) != (2 * semantic.height,
                                           2 * semantic.width):
        raise ShapeError("spatial features must be twice the semantic "
                         "resolution")

    graph = ffn_graph(num_classes, enum_value(FusionMode, fusion),
                      prefix=prefix)
    feeds = {'semantic': semantic, 'spatial': spatial}

    return execute(graph, weights, feeds, settings).output
