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

  * build_network function assembling the segmentation graph
  * forward, run and predict_labels functions
  * random_init, fold_network and backbone_rates functions
  * Network namespace class

"""

import math
import logging
from collections import namedtuple

import numpy

from atrousnet import blocks
from atrousnet.config import Settings
from atrousnet.routers import Routers
from atrousnet.weights import WeightStore
from atrousnet.graph import GraphBuilder, NetworkGraph, execute
from atrousnet.kernels import ConvSpec, BatchNormParams, fold_batchnorm
from atrousnet.tensor import Tensor, Uniform, seeded_array
from atrousnet.common import Op, Branch, ShapeError, WeightError, enum_value
from atrousnet.common import AttentionKind, ContextKind, PoolKind, MergeMode
from atrousnet.common import FusionMode, RateMode, ActivationKind
from atrousnet.common import SpatialKind, ConfigurationError


LOGGER = logging.getLogger(__name__)
NUM_CLASSES = 19
INPUT_MULTIPLE = 8

Stage = namedtuple('Stage', ('name', 'expansion', 'channels', 'repeats',
                             'stride', 'atrous_rate'))

STEM = Stage('block0', None, 32, 1, 2, 1)
STAGES = (Stage('block1', 1, 16, 1, 1, 1),
          Stage('block2', 6, 24, 2, 2, 1),
          Stage('block3', 6, 32, 3, 2, 1),
          Stage('block4', 6, 64, 4, 1, 2),
          Stage('block5', 6, 96, 3, 1, 4),
          Stage('block6', 6, 160, 3, 1, 8),
          Stage('block7', 6, 320, 1, 1, 16))
ATTENTION_STAGES = ('block4', 'block5', 'block6', 'block7')


def build_network(num_classes: int = NUM_CLASSES,
                  attention: AttentionKind = AttentionKind.CAM,
                  context: ContextKind = ContextKind.DASPP,
                  pool: PoolKind = PoolKind.AVG,
                  merge: MergeMode = MergeMode.CONCAT,
                  fusion: FusionMode = FusionMode.FFN,
                  rate_mode: RateMode = RateMode.HOLD,
                  spatial: SpatialKind = SpatialKind.SPN) -> NetworkGraph:
    """Build the two-branch segmentation network.

    The semantic branch is the atrous MobileNetV2 backbone with attention on
    blocks 4 to 7, the dense skip concatenation of their outputs, a 1x1
    reduction to 128 channels and the context module. The spatial branch is
    a shallow residual stem joined with the block2 features. The fusion head
    maps both to `num_classes` logits at input resolution.

    With `spatial` set to none the spatial branch is left out and the
    semantic features alone are projected to classes and upsampled.

    """
    if num_classes < 1:
        raise ShapeError("num_classes must be positive")

    options = {'num_classes': int(num_classes),
               'attention': enum_value(AttentionKind, attention),
               'context': enum_value(ContextKind, context),
               'pool': enum_value(PoolKind, pool),
               'merge': enum_value(MergeMode, merge),
               'fusion': enum_value(FusionMode, fusion),
               'rate_mode': enum_value(RateMode, rate_mode),
               'spatial': enum_value(SpatialKind, spatial)}
    if options['spatial'] == SpatialKind.NONE and \
       options['fusion'] != FusionMode.FFN:
        raise ConfigurationError("the %s fusion needs the spatial branch"
                                 % options['fusion'].name.lower())

    builder = GraphBuilder()
    image = builder.input('image', 3, multiple=INPUT_MULTIPLE)

    out = blocks.emit_conv(builder, image, 'lbn.' + STEM.name,
                           ConvSpec.same(3, STEM.channels, stride=STEM.stride),
                           ActivationKind.RELU6)
    builder.tap('block0_out', out)

    skips = []
    outputs = {}
    for stage in STAGES:
        out = _emit_stage(builder, out, stage, options['rate_mode'])
        if stage.name in ATTENTION_STAGES:
            out = _emit_attention(builder, out,
                                  'lbn.%s.attention' % stage.name,
                                  options['attention'])
            skips.append(out)
        builder.tap(stage.name + '_out', out)
        outputs[stage.name] = out

    out = builder.concat('lbn.dense_skip', skips)
    builder.tap('dense_skip', out)
    out = blocks.emit_conv(builder, out, 'lbn.reduce',
                           ConvSpec(builder.channels(out),
                                    blocks.CONTEXT_CHANNELS, kernel=1),
                           ActivationKind.RELU)
    builder.tap('daspp_in', out)

    if options['context'] == ContextKind.ASPP:
        out = blocks.emit_aspp(builder, out, 'aspp')
        out = blocks.emit_conv(builder, out, 'aspp.project',
                               ConvSpec(builder.channels(out),
                                        blocks.CONTEXT_CHANNELS, kernel=1),
                               ActivationKind.RELU)
    else:
        out = blocks.emit_daspp(builder, out, 'daspp', blocks.DasppConfig(
            pool_kind=options['pool'], merge=options['merge']))
    semantic = out
    builder.tap('daspp_out', semantic)

    if options['spatial'] == SpatialKind.NONE:
        builder.branch = Branch.FUSION
        fused, logits = blocks.emit_semantic_head(builder, semantic, 'head',
                                                  num_classes, like=image)
        builder.tap('fused', fused)
        builder.tap('logits', logits)

        return builder.build(logits, **options)

    layer0, layer1, detail = blocks.emit_spn(
        builder, image, outputs['block2'], 'spn')
    builder.tap('spn_layer0', layer0)
    builder.tap('spn_layer1', layer1)
    builder.tap('spn_out', detail)

    builder.branch = Branch.FUSION
    if options['fusion'] == FusionMode.ADD:
        fused, logits = blocks.emit_fuse_add(builder, semantic, detail,
                                             'fuse', num_classes, like=image)
    else:
        fused, logits = blocks.emit_ffn(builder, semantic, detail, 'ffn',
                                        num_classes, like=image)
    builder.tap('fused', fused)
    builder.tap('logits', logits)

    return builder.build(logits, **options)


def _emit_stage(builder: GraphBuilder, source: str, stage: Stage,
                rate_mode: RateMode) -> str:
    """Repeated bottleneck units, only the first one strides."""
    out = source

    for unit in range(stage.repeats):
        rate = stage.atrous_rate
        if unit > 0 and rate_mode == RateMode.FIRST:
            rate = 1
        spec = blocks.BottleneckSpec(stage.expansion, stage.channels,
                                     stage.stride if unit == 0 else 1, rate)
        out = blocks.emit_bottleneck(builder, out, 'lbn.%s.unit%d'
                                     % (stage.name, unit), spec)

    return out


def _emit_attention(builder, source, prefix, kind):
    if kind == AttentionKind.CAM:
        return blocks.emit_cam(builder, source, prefix)
    if kind == AttentionKind.SE:
        return blocks.emit_squeeze_excitation(builder, source, prefix)

    return source


def backbone_rates(graph: NetworkGraph) -> list:
    """Atrous rates of the depthwise convolutions of blocks 4 to 7, in
    evaluation order."""
    prefixes = tuple('lbn.%s.' % stage for stage in ATTENTION_STAGES)

    return [node.attrs['spec'].atrous_rate for node in graph
            if node.op == Op.CONV and node.name.startswith(prefixes) and
            node.name.endswith('.depthwise.conv')]


def run(graph: NetworkGraph, weights: WeightStore, image: Tensor,
        settings: Settings = None, routers=None, keep_all: bool = False):
    """Evaluate the network returning its Activations.

    Every tap stays retrievable from the result.

    """
    settings = settings if settings is not None else Settings()
    weights.bind(graph, strict=settings.strict_weights)

    return execute(graph, weights, {graph.inputs[0]: image}, settings,
                   routers=routers, keep_all=keep_all)


def forward(graph: NetworkGraph, weights: WeightStore, image: Tensor,
            settings: Settings = None, routers=None) -> Tensor:
    """Class logits of the image, same height and width as the input."""
    return run(graph, weights, image, settings, routers).output


def predict_labels(logits: Tensor) -> numpy.ndarray:
    """Per-pixel argmax over the classes, ties go to the lowest index.

    Returns a (height, width) map for a single image, a
    (batch, height, width) stack otherwise.

    """
    labels = numpy.argmax(logits.array, axis=1).astype(numpy.int32)

    return labels[0] if logits.batch == 1 else labels


def random_init(graph: NetworkGraph, seed: int,
                epsilon: float = 1e-5) -> WeightStore:
    """Seeded weights drawn uniformly in +/- 1 / sqrt(fan_in).

    Every parameter draws from its own stream so that the values of one
    layer do not depend on the layers preceding it. Batch norms start as
    the identity.

    """
    store = WeightStore()
    fan_in = {}

    for stream, parameter in enumerate(graph.parameters()):
        if parameter.kind == 'batchnorm':
            store.set_batchnorm(parameter.name, BatchNormParams.identity(
                parameter.shape[0], epsilon))
            continue

        layer, _, kind = parameter.name.rpartition('.')
        if kind == 'weight':
            fan_in[layer] = int(numpy.prod(parameter.shape[1:]))
        bound = 1.0 / math.sqrt(fan_in[layer])
        store.set_tensor(parameter.name, seeded_array(
            parameter.shape, seed, Uniform(bound), stream=stream))

    return store


def fold_network(graph: NetworkGraph, weights: WeightStore) -> tuple:
    """Fold every batch norm directly and exclusively fed by a convolution.

    Returns the rewritten (graph, weights) pair: the convolution absorbs
    the normalization and gains a bias, taps naming a folded batch norm
    refer to the convolution instead.

    """
    consumers = graph.consumers()
    pinned = set(graph.taps.values()) | {graph.output}
    folded = {}

    for node in graph:
        if node.op != Op.BN:
            continue
        source = graph.node(node.inputs[0])
        if (source.op == Op.CONV and consumers[source.name] == [node.name]
                and source.name not in pinned):
            folded[node.name] = source.name

    absorbed = {conv: bn for bn, conv in folded.items()}
    store = weights.copy()
    nodes = []
    for node in graph:
        if node.name in folded:
            continue
        if node.name in absorbed:
            bn = absorbed[node.name]
            bias = (weights.tensor(node.name + '.bias')
                    if node.attrs['bias'] else None)
            folded_weights, folded_bias = fold_batchnorm(
                weights.tensor(node.name + '.weight'), bias,
                weights.batchnorm(bn))
            store.set_tensor(node.name + '.weight', folded_weights)
            store.set_tensor(node.name + '.bias', folded_bias)
            store.remove(bn)
            node = node._replace(attrs=dict(node.attrs, bias=True))
        nodes.append(node._replace(inputs=tuple(folded.get(n, n)
                                                for n in node.inputs)))

    taps = {tap: folded.get(name, name) for tap, name in graph.taps.items()}
    output = folded.get(graph.output, graph.output)
    LOGGER.debug("folded %d batch norms", len(folded))

    return NetworkGraph(nodes, output, taps, graph.options), store


class Network:
    """Inference over the network bound to an Engine.

    This class is meant to be accessed through the Engine only.

    """

    __slots__ = '_engine'

    def __init__(self, engine):
        self._engine = engine

    @property
    def graph(self) -> NetworkGraph:
        """The network graph."""
        return self._engine.graph

    @property
    def weights(self) -> WeightStore:
        """The bound weights, None until initialized or loaded."""
        return self._engine.store

    def _bound(self) -> WeightStore:
        if self._engine.store is None:
            raise WeightError("no weights bound, initialize or load them")

        return self._engine.store

    def _routers(self):
        return Routers(self._engine) if self._engine.routers else None

    def forward(self, image: Tensor) -> Tensor:
        """Class logits for the given normalized image."""
        return forward(self._engine.graph, self._bound(), image,
                       self._engine.settings, self._routers())

    def activations(self, image: Tensor, keep_all: bool = False):
        """Run the network and return every tap along with the logits."""
        return run(self._engine.graph, self._bound(), image,
                   self._engine.settings, self._routers(), keep_all)

    def predict(self, image: Tensor) -> numpy.ndarray:
        """Label map of the given normalized image."""
        return predict_labels(self.forward(image))

    def manifest(self) -> str:
        """Every parameter name, kind and shape, one per line."""
        return self._engine.graph.manifest()
