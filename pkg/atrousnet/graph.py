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

  * Node record
  * NetworkGraph class
  * GraphBuilder class
  * Activations class
  * execute function

A graph is an ordered list of primitive nodes. Insertion order is a
topological order: a node only consumes nodes added before it. Parameters
are bound by canonical node path, ``<path>.weight`` and ``<path>.bias`` for
convolutions and linear layers, ``<path>`` for batch normalizations.

"""

import time
import threading
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor

from atrousnet import kernels
from atrousnet import tensor as tensors
from atrousnet.config import Settings
from atrousnet.kernels import ConvSpec
from atrousnet.common import Op, Branch, PoolKind, ActivationKind
from atrousnet.common import ShapeError, TimingEntry


Node = namedtuple('Node', ('name', 'op', 'inputs', 'attrs', 'branch'))
Parameter = namedtuple('Parameter', ('name', 'kind', 'shape'))


class NetworkGraph:
    """Immutable, validated graph of primitive operations."""

    __slots__ = '_nodes', '_index', '_inputs', '_output', '_taps', '_options'

    def __init__(self, nodes: list, output: str, taps: dict = None,
                 options: dict = None):
        self._nodes = tuple(nodes)
        self._index = {n.name: n for n in self._nodes}
        self._inputs = tuple(n.name for n in self._nodes if n.op == Op.INPUT)
        self._output = output
        self._taps = dict(taps or {})
        self._options = dict(options or {})

        self._validate()

    def __iter__(self):
        return iter(self._nodes)

    def __len__(self):
        return len(self._nodes)

    def __contains__(self, name: str):
        return name in self._index

    def __repr__(self):
        return "%s(%d nodes, output=%s)" % (self.__class__.__name__,
                                            len(self._nodes), self._output)

    @property
    def inputs(self) -> tuple:
        return self._inputs

    @property
    def output(self) -> str:
        return self._output

    @property
    def taps(self) -> dict:
        """Mapping of tap names to node paths."""
        return dict(self._taps)

    @property
    def options(self) -> dict:
        """The options the graph was built with."""
        return dict(self._options)

    def node(self, name: str) -> Node:
        try:
            return self._index[self._taps.get(name, name)]
        except KeyError:
            raise LookupError("node '%s' not found" % name)

    def _validate(self):
        seen = set()

        for node in self._nodes:
            if node.name in seen:
                raise ShapeError("duplicate node '%s'" % node.name)
            for name in node.inputs:
                if name not in seen:
                    raise ShapeError("node '%s' consumes '%s' before it is "
                                     "defined" % (node.name, name))
                source = self._index[name]
                if (node.branch != Branch.FUSION and
                        source.op != Op.INPUT and
                        source.branch != node.branch):
                    raise ShapeError("node '%s' crosses branches through '%s'"
                                     % (node.name, name))
            seen.add(node.name)

        if self._output not in seen:
            raise ShapeError("output node '%s' not in graph" % self._output)
        for tap, name in self._taps.items():
            if name not in seen:
                raise ShapeError("tap '%s' refers to unknown node '%s'"
                                 % (tap, name))

    def consumers(self) -> dict:
        """Mapping of node paths to the paths consuming them."""
        consumers = {n.name: [] for n in self._nodes}
        for node in self._nodes:
            for name in node.inputs:
                consumers[name].append(node.name)

        return consumers

    def parameters(self) -> list:
        """Learned parameters in graph order."""
        parameters = []

        for node in self._nodes:
            if node.op == Op.CONV:
                spec = node.attrs['spec']
                parameters.append(Parameter(node.name + '.weight', 'tensor',
                                            spec.weight_shape))
                if node.attrs['bias']:
                    parameters.append(Parameter(node.name + '.bias', 'tensor',
                                                (spec.out_channels, )))
            elif node.op == Op.LINEAR:
                shape = (node.attrs['out_features'],
                         node.attrs['in_features'])
                parameters.append(Parameter(node.name + '.weight', 'tensor',
                                            shape))
                parameters.append(Parameter(node.name + '.bias', 'tensor',
                                            shape[:1]))
            elif node.op == Op.BN:
                parameters.append(Parameter(node.name, 'batchnorm',
                                            (node.attrs['channels'], )))

        return parameters

    def manifest(self) -> str:
        """Human-readable listing of every parameter name and shape."""
        return ''.join('%s\t%s\t%s\n' % (p.name, p.kind,
                                         'x'.join(str(d) for d in p.shape))
                       for p in self.parameters())

    def prefix(self, name: str) -> 'NetworkGraph':
        """Sub-graph of the given node and all its ancestors."""
        target = self.node(name).name
        needed = {target}

        for node in reversed(self._nodes):
            if node.name in needed:
                needed.update(node.inputs)

        nodes = [n._replace(branch=Branch.SEMANTIC)
                 for n in self._nodes if n.name in needed]

        return NetworkGraph(nodes, target, options=self._options)

    def infer_shapes(self, input_shapes) -> dict:
        """Output shape of every node for the given input shape(s).

        A single shape is accepted when the graph has exactly one input.

        """
        if isinstance(input_shapes, tuple):
            input_shapes = {self._inputs[0]: input_shapes}

        shapes = {}
        for node in self._nodes:
            try:
                shapes[node.name] = _node_shape(node, shapes, input_shapes)
            except ShapeError as error:
                raise ShapeError("%s: %s" % (node.name, error))

        return shapes


def _node_shape(node: Node, shapes: dict, feeds: dict) -> tuple:
    attrs = node.attrs
    inputs = [shapes[name] for name in node.inputs]

    if node.op == Op.INPUT:
        if node.name not in feeds:
            raise ShapeError("no value fed")
        shape = tuple(feeds[node.name])
        if len(shape) != 4 or min(shape) < 1:
            raise ShapeError("invalid input shape %s" % (shape, ))
        if shape[1] != attrs['channels']:
            raise ShapeError("expected %d channels, got %d"
                             % (attrs['channels'], shape[1]))
        multiple = attrs.get('multiple', 1)
        if shape[2] % multiple or shape[3] % multiple:
            raise ShapeError("height and width must be divisible by %d, "
                             "got %dx%d" % (multiple, shape[2], shape[3]))
        return shape

    batch, channels, height, width = inputs[0]

    if node.op == Op.CONV:
        spec = attrs['spec']
        if channels != spec.in_channels:
            raise ShapeError("%r fed %d channels" % (spec, channels))
        return (batch, spec.out_channels) + spec.output_size(height, width)
    elif node.op in (Op.BN, Op.ACT):
        return inputs[0]
    elif node.op == Op.POOL:
        return (batch, channels) + kernels.pool_output_size(
            height, width, attrs['kernel'], attrs['stride'], attrs['padding'])
    elif node.op == Op.GAP:
        return (batch, channels, 1, 1)
    elif node.op == Op.RESIZE:
        if len(inputs) > 1:
            size = inputs[1][2:]
        else:
            size = (height * attrs['factor'], width * attrs['factor'])
        ratio = attrs.get('ratio')
        if ratio is not None and size != (height * ratio, width * ratio):
            raise ShapeError("resolution ratio must be %d, got %dx%d to %dx%d"
                             % (ratio, height, width, size[0], size[1]))
        return (batch, channels) + tuple(size)
    elif node.op == Op.CONCAT:
        for index, shape in enumerate(inputs):
            if (shape[0], shape[2], shape[3]) != (batch, height, width):
                raise ShapeError("concat input %d has shape %s, expected %s"
                                 % (index, shape, inputs[0]))
        return (batch, sum(s[1] for s in inputs), height, width)
    elif node.op == Op.ADD:
        for shape in inputs[1:]:
            if shape != inputs[0]:
                raise ShapeError("add inputs %s and %s differ"
                                 % (inputs[0], shape))
        return inputs[0]
    elif node.op == Op.SCALE:
        if inputs[1] != (batch, channels, 1, 1):
            raise ShapeError("attention shape %s for input %s"
                             % (inputs[1], inputs[0]))
        return inputs[0]
    elif node.op == Op.LINEAR:
        if (height, width) != (1, 1) or channels != attrs['in_features']:
            raise ShapeError("linear layer of width %d fed %s"
                             % (attrs['in_features'], inputs[0]))
        return (batch, attrs['out_features'], 1, 1)

    raise ShapeError("unknown operation %r" % (node.op, ))


class GraphBuilder:
    """Incremental construction of a NetworkGraph.

    Channel counts are tracked while nodes are added so that parameter
    shapes are known before any spatial size is.

    """

    __slots__ = '_nodes', '_channels', '_taps', 'branch'

    def __init__(self):
        self._nodes = []
        self._channels = {}
        self._taps = {}
        self.branch = Branch.SEMANTIC

    def channels(self, name: str) -> int:
        return self._channels[name]

    def _add(self, name: str, op: Op, inputs: tuple, width: int,
             **attrs) -> str:
        if name in self._channels:
            raise ShapeError("duplicate node '%s'" % name)
        for source in inputs:
            if source not in self._channels:
                raise ShapeError("node '%s' consumes unknown '%s'"
                                 % (name, source))

        self._nodes.append(Node(name, op, tuple(inputs), attrs, self.branch))
        self._channels[name] = width

        return name

    def input(self, name: str, channels: int, multiple: int = 1) -> str:
        return self._add(name, Op.INPUT, (), channels, channels=channels,
                         multiple=multiple)

    def conv(self, name: str, source: str, spec: ConvSpec,
             bias: bool = False) -> str:
        if self._channels[source] != spec.in_channels:
            raise ShapeError("%s: %r fed by '%s' with %d channels"
                             % (name, spec, source, self._channels[source]))

        return self._add(name, Op.CONV, (source, ), spec.out_channels,
                         spec=spec, bias=bias)

    def batchnorm(self, name: str, source: str) -> str:
        channels = self._channels[source]

        return self._add(name, Op.BN, (source, ), channels, channels=channels)

    def activation(self, name: str, source: str, kind: ActivationKind) -> str:
        return self._add(name, Op.ACT, (source, ), self._channels[source],
                         kind=kind)

    def pool(self, name: str, source: str, kind: PoolKind, kernel: int,
             stride: int = 1, padding: int = 0) -> str:
        return self._add(name, Op.POOL, (source, ), self._channels[source],
                         kind=kind, kernel=kernel, stride=stride,
                         padding=padding)

    def global_pool(self, name: str, source: str) -> str:
        return self._add(name, Op.GAP, (source, ), self._channels[source])

    def resize(self, name: str, source: str, like: str = None,
               factor: int = None, ratio: int = None) -> str:
        """Bilinear resize to the size of node `like` or by `factor`."""
        inputs = (source, like) if like is not None else (source, )

        return self._add(name, Op.RESIZE, inputs, self._channels[source],
                         factor=factor, ratio=ratio)

    def concat(self, name: str, sources: list) -> str:
        return self._add(name, Op.CONCAT, sources,
                         sum(self._channels[s] for s in sources))

    def add(self, name: str, sources: list) -> str:
        channels = {self._channels[s] for s in sources}
        if len(channels) != 1:
            raise ShapeError("%s: adding tensors of %s channels"
                             % (name, sorted(channels)))

        return self._add(name, Op.ADD, sources, channels.pop())

    def scale(self, name: str, source: str, weights: str) -> str:
        return self._add(name, Op.SCALE, (source, weights),
                         self._channels[source])

    def linear(self, name: str, source: str, out_features: int) -> str:
        return self._add(name, Op.LINEAR, (source, ), out_features,
                         in_features=self._channels[source],
                         out_features=out_features)

    def tap(self, tap: str, name: str):
        self._taps[tap] = name

    def build(self, output: str, **options) -> NetworkGraph:
        return NetworkGraph(self._nodes, output, self._taps, options)


class Activations:
    """Values produced by one graph execution."""

    __slots__ = '_graph', '_values'

    def __init__(self, graph: NetworkGraph, values: dict):
        self._graph = graph
        self._values = values

    def __getitem__(self, name: str) -> tensors.Tensor:
        name = self._graph.taps.get(name, name)
        try:
            return self._values[name]
        except KeyError:
            raise KeyError("'%s' was not retained" % name)

    def __contains__(self, name: str):
        return self._graph.taps.get(name, name) in self._values

    @property
    def output(self) -> tensors.Tensor:
        return self._values[self._graph.output]

    def taps(self) -> dict:
        return {tap: self._values[name]
                for tap, name in self._graph.taps.items()
                if name in self._values}


def execute(graph: NetworkGraph, store, feeds, settings=None,
            routers=None, keep_all: bool = False) -> Activations:
    """Evaluate the graph.

    Semantic and spatial branch nodes run concurrently when the settings
    allow more than one thread; fusion nodes run once both are done.
    Intermediate values are released as soon as they are consumed unless
    they are taps, the output or `keep_all` is set.

    """
    settings = settings if settings is not None else Settings()
    if isinstance(feeds, tensors.Tensor):
        feeds = {graph.inputs[0]: feeds}

    graph.infer_shapes({name: t.shape for name, t in feeds.items()})

    values = dict(feeds)
    retained = set(graph.taps.values()) | {graph.output} | set(feeds)
    pending = {name: len(users) for name, users in graph.consumers().items()}
    lock = threading.Lock()

    def run(nodes):
        for node in nodes:
            start = time.perf_counter()
            value = evaluate(node, [values[n] for n in node.inputs],
                             store, settings)
            values[node.name] = value

            if routers is not None:
                routers.write_router('trace', "%s %s %s" % (
                    node.name, node.op.name.lower(), value.shape))
                routers.write_router('timing', TimingEntry(
                    node.name, time.perf_counter() - start))

            if keep_all:
                continue
            with lock:
                for name in node.inputs:
                    pending[name] -= 1
                    if pending[name] == 0 and name not in retained:
                        values.pop(name, None)

    stages = {branch: [n for n in graph
                       if n.op != Op.INPUT and n.branch == branch]
              for branch in Branch}
    concurrent = stages[Branch.SEMANTIC], stages[Branch.SPATIAL]

    if settings.threads > 1 and all(concurrent):
        with ThreadPoolExecutor(max_workers=2) as pool:
            for future in [pool.submit(run, nodes) for nodes in concurrent]:
                future.result()
    else:
        for nodes in concurrent:
            run(nodes)
    run(stages[Branch.FUSION])

    return Activations(graph, values)


def evaluate(node: Node, inputs: list, store, settings) -> tensors.Tensor:
    """Evaluate a single node on its input values."""
    attrs = node.attrs
    path = settings.kernel_path

    if node.op == Op.CONV:
        bias = store.tensor(node.name + '.bias') if attrs['bias'] else None
        return kernels.conv2d(inputs[0], store.tensor(node.name + '.weight'),
                              bias, attrs['spec'], path=path,
                              budget=settings.im2col_budget)
    elif node.op == Op.BN:
        return kernels.batchnorm_inference(inputs[0],
                                           store.batchnorm(node.name))
    elif node.op == Op.ACT:
        return kernels.activation(inputs[0], attrs['kind'],
                                  slope=settings.leaky_slope)
    elif node.op == Op.POOL:
        return kernels.pool2d(inputs[0], attrs['kind'], attrs['kernel'],
                              attrs['stride'], attrs['padding'], path=path)
    elif node.op == Op.GAP:
        return kernels.global_avg_pool(inputs[0])
    elif node.op == Op.RESIZE:
        source = inputs[0]
        if len(inputs) > 1:
            height, width = inputs[1].height, inputs[1].width
        else:
            height = source.height * attrs['factor']
            width = source.width * attrs['factor']
        return kernels.bilinear_resize(source, height, width, path=path)
    elif node.op == Op.CONCAT:
        return tensors.concat_channels(inputs)
    elif node.op == Op.ADD:
        out = inputs[0]
        for other in inputs[1:]:
            out = tensors.elementwise_add(out, other)
        return out
    elif node.op == Op.SCALE:
        source, weights = inputs
        if source.batch == 1:
            return tensors.scale_channels(source, weights.data)
        return tensors.wrap(source.array * weights.array)
    elif node.op == Op.LINEAR:
        source = inputs[0]
        out = kernels.linear(source.array.reshape(source.batch, -1),
                             store.tensor(node.name + '.weight'),
                             store.tensor(node.name + '.bias'))
        return tensors.wrap(out.reshape(source.batch, -1, 1, 1))

    raise ShapeError("%s: unknown operation %r" % (node.name, node.op))
