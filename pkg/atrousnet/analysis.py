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

  * LayerRecord and TimingSummary records
  * AnalysisReport class
  * receptive_field, footprint_probe and gridding_coverage functions
  * count_params_flops, profile_forward and compare_paths functions
  * Analysis namespace class

"""

import json
import math
import time
import logging
from fractions import Fraction
from collections import namedtuple

import numpy

from atrousnet import network
from atrousnet.config import Settings
from atrousnet.weights import WeightStore
from atrousnet.graph import NetworkGraph, execute
from atrousnet.kernels import BatchNormParams
from atrousnet.routers import Routers, TimingRouter
from atrousnet.tensor import Tensor, relative_error
from atrousnet.common import Op, KernelPath, ProbeError, ShapeError
from atrousnet.common import ConfigurationError, WeightError, EngineData
from atrousnet.common import VerificationError, enum_value


LOGGER = logging.getLogger(__name__)
REFERENCE_PARAMS = 6.2e6
REFERENCE_FLOPS = 49.5e9
FLOPS_TOLERANCE = 0.2
PARAMS_TOLERANCE = 0.2
PATH_TOLERANCE = 1e-4
AUX_OPS = {Op.BN: 2, Op.ACT: 1, Op.POOL: 1, Op.GAP: 1, Op.SCALE: 1,
           Op.RESIZE: 7}
PROBE_CHUNK = 64

LayerRecord = namedtuple('LayerRecord', ('name', 'op', 'shape', 'rf',
                                         'params', 'macs', 'aux_ops'))
TimingSummary = namedtuple('TimingSummary', ('path', 'mean', 'stddev',
                                             'repeats', 'layers',
                                             'max_error'))
Field = namedtuple('Field', ('size', 'jump', 'local'))


class AnalysisReport:
    """Per-layer shapes, receptive fields, parameter and operation counts,
    optionally completed by the gridding density of atrous rate stacks.

    MACs count multiply-accumulates of convolutions and linear layers,
    FLOPs are reported as twice the MACs. Normalization, activation,
    pooling, attention scaling and resize operations are counted apart as
    auxiliary operations.

    """

    __slots__ = 'input_shape', 'layers', 'coverage'

    def __init__(self, input_shape: tuple, layers: list,
                 coverage: dict = None):
        self.input_shape = tuple(input_shape)
        self.layers = list(layers)
        self.coverage = dict(coverage or {})

    def __repr__(self):
        return "%s(%d layers, %d params, %d MACs)" % (
            self.__class__.__name__, len(self.layers), self.total_params,
            self.total_macs)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.layers)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.layers)

    @property
    def total_flops(self) -> int:
        return 2 * self.total_macs

    @property
    def total_aux_ops(self) -> int:
        return sum(r.aux_ops for r in self.layers)

    def flops_bracket(self) -> tuple:
        """The (MACs, 2 x MACs) range the operation count lies in
        depending on the counting convention."""
        return self.total_macs, self.total_flops

    def within_reference(self, flops: float = REFERENCE_FLOPS,
                         tolerance: float = FLOPS_TOLERANCE) -> bool:
        """True if the FLOPs bracket meets `flops` +/- `tolerance`."""
        low, high = self.flops_bracket()

        return (low <= flops * (1 + tolerance) and
                high >= flops * (1 - tolerance))

    def params_within_reference(self, params: float = REFERENCE_PARAMS,
                                tolerance: float = PARAMS_TOLERANCE) -> bool:
        """True if the parameter count lies within `params` +/- `tolerance`."""
        return abs(self.total_params - params) <= params * tolerance

    def to_dict(self) -> dict:
        return {'input_shape': list(self.input_shape),
                'layers': [{'name': r.name,
                            'op': r.op,
                            'shape': list(r.shape),
                            'rf': r.rf,
                            'params': r.params,
                            'macs': r.macs,
                            'aux_ops': r.aux_ops} for r in self.layers],
                'totals': {'params': self.total_params,
                           'macs': self.total_macs,
                           'flops': self.total_flops,
                           'aux_ops': self.total_aux_ops},
                'coverage': self.coverage}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        """Line-oriented table followed by the totals."""
        lines = ['%-48s %-7s %-20s %8s %10s %14s' % (
            'layer', 'op', 'shape', 'rf', 'params', 'macs')]

        for record in self.layers:
            lines.append('%-48s %-7s %-20s %8s %10d %14d' % (
                record.name, record.op, 'x'.join(map(str, record.shape)),
                'global' if record.rf is None else record.rf,
                record.params, record.macs))

        lines.append(self.summary())
        for label, density in self.coverage.items():
            lines.append('coverage %s: %.5f' % (label, density))

        return '\n'.join(lines) + '\n'

    def summary(self) -> str:
        return ('params: %d (%.3f M, %.2fx of %.1f M)\n'
                'MACs: %d (%.2f G)\n'
                'FLOPs: %d (%.2f G)\n'
                'auxiliary ops: %d (%.2f G)' % (
                    self.total_params, self.total_params / 1e6,
                    self.total_params / REFERENCE_PARAMS,
                    REFERENCE_PARAMS / 1e6,
                    self.total_macs, self.total_macs / 1e9,
                    self.total_flops, self.total_flops / 1e9,
                    self.total_aux_ops, self.total_aux_ops / 1e9))


def receptive_field(graph: NetworkGraph) -> dict:
    """Receptive field side, in input pixels, of every node.

    RF grows by (k - 1) * d * jump per convolution or pooling window, jump
    being the product of the strides met so far. Merges take the largest
    field of their inputs. Global pooling depends on the whole input: its
    field is None, as is the field of any node fed by global values only.

    """
    return {name: field.size for name, field in _fields(graph).items()}


def _fields(graph: NetworkGraph) -> dict:
    fields = {}

    for node in graph:
        inputs = [fields[name] for name in node.inputs]
        local = [f for f in inputs if f.local]

        if node.op == Op.INPUT:
            fields[node.name] = Field(1, Fraction(1), True)
            continue
        if node.op == Op.GAP or not local:
            fields[node.name] = Field(None, None, False)
            continue

        size = max(f.size for f in local)
        jump = max(f.jump for f in local)

        if node.op == Op.CONV:
            spec = node.attrs['spec']
            size += (spec.kernel - 1) * spec.atrous_rate * jump
            jump *= spec.stride
        elif node.op == Op.POOL:
            size += (node.attrs['kernel'] - 1) * jump
            jump *= node.attrs['stride']
        elif node.op == Op.RESIZE:
            source = inputs[0]
            if not source.local:
                fields[node.name] = Field(None, None, False)
                continue
            size = source.size + source.jump
            if len(inputs) > 1 and inputs[1].local:
                jump = inputs[1].jump
            else:
                jump = source.jump / node.attrs['factor']

        fields[node.name] = Field(math.ceil(size), jump, True)

    return fields


def _probe_weights(graph: NetworkGraph) -> WeightStore:
    store = WeightStore()

    for parameter in graph.parameters():
        if parameter.kind == 'batchnorm':
            store.set_batchnorm(parameter.name,
                                BatchNormParams.identity(parameter.shape[0]))
        elif parameter.name.endswith('.bias'):
            store.set_tensor(parameter.name, numpy.zeros(parameter.shape))
        else:
            store.set_tensor(parameter.name, numpy.ones(parameter.shape))

    return store


def footprint_probe(graph: NetworkGraph, output_position: tuple,
                    input_size: tuple, settings: Settings = None) -> frozenset:
    """Input pixels influencing the output at `output_position`.

    Every input pixel is perturbed in turn on a zero image while all
    weights are ones, biases zeros and batch norms the identity: an output
    changes exactly where the pixel contributes.

    """
    settings = settings if settings is not None else Settings()
    height, width = input_size

    if len(graph.inputs) != 1:
        raise ProbeError("footprint probing needs a single-input graph")
    if any(node.op == Op.GAP for node in graph):
        raise ProbeError("global pooling depends on every input pixel")
    if height * width > settings.probe_cap:
        raise ProbeError("%dx%d input exceeds the probe cap of %d pixels"
                         % (height, width, settings.probe_cap))

    channels = graph.node(graph.inputs[0]).attrs['channels']
    shape = graph.infer_shapes((1, channels, height, width))[graph.output]
    row, column = output_position
    if not (0 <= row < shape[2] and 0 <= column < shape[3]):
        raise ProbeError("output position %s outside %dx%d output"
                         % (tuple(output_position), shape[2], shape[3]))

    store = _probe_weights(graph)
    pixels = [(y, x) for y in range(height) for x in range(width)]
    footprint = set()

    for start in range(0, len(pixels), PROBE_CHUNK):
        chunk = pixels[start:start + PROBE_CHUNK]
        data = numpy.zeros((len(chunk), channels, height, width),
                           dtype=numpy.float32)
        for index, (y, x) in enumerate(chunk):
            data[index, :, y, x] = 1.0

        out = execute(graph, store, Tensor(data, copy=False), settings).output
        values = out.array[:, :, row, column]
        touched = (values != 0).any(axis=1) | numpy.isnan(values).any(axis=1)
        footprint.update(p for p, hit in zip(chunk, touched) if hit)

    return frozenset(footprint)


def offset_set(rate_stack: list) -> frozenset:
    """1-D input offsets sampled by a stack of stride-1 (k, d) layers."""
    offsets = {0}

    for kernel, rate in rate_stack:
        if kernel < 1 or kernel % 2 == 0 or rate < 1:
            raise ShapeError("layer (%d, %d) needs an odd kernel and a "
                             "positive rate" % (kernel, rate))
        taps = [rate * (j - kernel // 2) for j in range(kernel)]
        offsets = {o + t for o in offsets for t in taps}

    return frozenset(offsets)


def gridding_coverage(rate_stack: list) -> float:
    """Share of the input window actually sampled by the stack.

    The 2-D sampled set is the product of the 1-D offset sets, the window
    is the square receptive field.

    """
    offsets = offset_set(rate_stack)
    extent = max(offsets) - min(offsets) + 1

    return (len(offsets) / extent) ** 2


def count_params_flops(graph: NetworkGraph, input_shape: tuple,
                       with_fields: bool = True,
                       rate_stacks: dict = None) -> AnalysisReport:
    """Parameter and operation counts of every layer for the input shape.

    `input_shape` is either (height, width) or a full 4-D shape.
    Batch norms count two learned parameters per channel. The gridding
    coverage of every labelled stack of `rate_stacks` completes the report.

    """
    if len(input_shape) == 2:
        channels = graph.node(graph.inputs[0]).attrs['channels']
        input_shape = (1, channels) + tuple(input_shape)

    shapes = graph.infer_shapes(tuple(input_shape))
    fields = receptive_field(graph) if with_fields else {}
    records = []

    for node in graph:
        if node.op == Op.INPUT:
            continue
        shape = shapes[node.name]
        elements = int(numpy.prod(shape))
        params = macs = 0

        if node.op == Op.CONV:
            spec = node.attrs['spec']
            params = int(numpy.prod(spec.weight_shape))
            if node.attrs['bias']:
                params += spec.out_channels
            macs = (elements * spec.kernel ** 2 *
                    spec.in_channels // spec.groups)
        elif node.op == Op.LINEAR:
            params = node.attrs['out_features'] * (node.attrs['in_features']
                                                   + 1)
            macs = elements * node.attrs['in_features']
        elif node.op == Op.BN:
            params = 2 * node.attrs['channels']

        aux = AUX_OPS.get(node.op, 0) * elements
        if node.op == Op.ADD:
            aux = (len(node.inputs) - 1) * elements

        records.append(LayerRecord(node.name, node.op.name.lower(), shape,
                                   fields.get(node.name), params, macs, aux))

    coverage = {label: gridding_coverage(stack)
                for label, stack in (rate_stacks or {}).items()}

    return AnalysisReport(input_shape, records, coverage)


def _forward(graph, weights, image, settings, routers=None):
    return execute(graph, weights, {graph.inputs[0]: image}, settings,
                   routers=routers).output


def profile_forward(graph: NetworkGraph, weights: WeightStore, image: Tensor,
                    repeats: int = 5, path: KernelPath = None,
                    settings: Settings = None,
                    timer: TimingRouter = None,
                    tolerance: float = PATH_TOLERANCE) -> TimingSummary:
    """Wall time of `repeats` forward passes after one warm-up run.

    When a TimingRouter is given, the mean time spent in every layer is
    reported as well. The naive and optimized outputs on the profiled
    image must agree within `tolerance` relative error, VerificationError
    is raised otherwise.

    """
    if repeats < 3:
        raise ConfigurationError("profiling needs at least 3 repeats")

    settings = settings if settings is not None else Settings()
    if path is not None:
        settings = settings.replace(kernel_path=enum_value(KernelPath, path))
    weights.bind(graph, strict=settings.strict_weights)

    routers = None
    if timer is not None:
        data = EngineData(graph, settings, weights)
        routers = Routers(data)
        routers.add_router(timer)

    _forward(graph, weights, image, settings)
    if timer is not None:
        timer.reset()

    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        _forward(graph, weights, image, settings, routers)
        samples.append(time.perf_counter() - start)

    layers = {}
    if timer is not None:
        layers = {n: s / repeats for n, s in timer.totals.items()}

    error = compare_paths(graph, weights, image, settings)
    if error > tolerance:
        raise VerificationError(
            "naive and optimized outputs differ by %.3g, above %.3g"
            % (error, tolerance))

    summary = TimingSummary(settings.kernel_path.name.lower(),
                            float(numpy.mean(samples)),
                            float(numpy.std(samples, ddof=1)),
                            repeats, layers, error)
    LOGGER.info("%s path: %.4fs +/- %.4fs, paths agree within %.3g",
                summary.path, summary.mean, summary.stddev, error)

    return summary


def compare_paths(graph: NetworkGraph, weights: WeightStore, image: Tensor,
                  settings: Settings = None) -> float:
    """Relative deviation of the optimized output from the naive one."""
    settings = settings if settings is not None else Settings()
    weights.bind(graph, strict=settings.strict_weights)

    naive = _forward(graph, weights, image,
                     settings.replace(kernel_path=KernelPath.NAIVE))
    optimized = _forward(graph, weights, image,
                         settings.replace(kernel_path=KernelPath.OPTIMIZED))

    return relative_error(optimized, naive)


class Analysis:
    """Architecture analyzers over the network of an Engine.

    .. note::

       All the Analysis methods are accessible through the Engine class.

    """

    __slots__ = '_engine'

    def __init__(self, engine):
        self._engine = engine

    def receptive_field(self) -> dict:
        """Receptive field of every layer of the network."""
        return receptive_field(self._engine.graph)

    def count(self, input_size: tuple) -> AnalysisReport:
        """Parameters and operations for the given (height, width), with
        the gridding coverage of the atrous backbone."""
        graph = self._engine.graph
        stack = [(3, rate) for rate in network.backbone_rates(graph)]

        return count_params_flops(graph, input_size,
                                  rate_stacks={'backbone': stack})

    def footprint(self, node: str, output_position: tuple,
                  input_size: tuple) -> frozenset:
        """Input pixels influencing `output_position` of the given layer."""
        return footprint_probe(self._engine.graph.prefix(node),
                               output_position, input_size,
                               self._engine.settings)

    def gridding_coverage(self, rate_stack: list) -> float:
        return gridding_coverage(rate_stack)

    def profile(self, image: Tensor, repeats: int = 5,
                path: KernelPath = None) -> TimingSummary:
        """Time the forward pass of the bound weights on the image."""
        weights = self._engine.store
        if weights is None:
            raise WeightError("no weights bound, initialize or load them")

        return profile_forward(self._engine.graph, weights, image, repeats,
                               path, self._engine.settings, TimingRouter())

    def compare_paths(self, image: Tensor) -> float:
        """Relative deviation between the optimized and naive forwards."""
        weights = self._engine.store
        if weights is None:
            raise WeightError("no weights bound, initialize or load them")

        return compare_paths(self._engine.graph, weights, image,
                             self._engine.settings)
