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

  * CheckResult record
  * run_suite function and the checks it runs

Each check compares a kernel or a block against an independent oracle on
seeded random inputs.

"""

import logging
from collections import namedtuple

import numpy

from atrousnet import blocks, kernels, network, reference
from atrousnet.config import Settings
from atrousnet.weights import WeightStore
from atrousnet.analysis import gridding_coverage, receptive_field
from atrousnet.analysis import footprint_probe, offset_set
from atrousnet.graph import GraphBuilder
from atrousnet.kernels import ConvSpec, BatchNormParams
from atrousnet.tensor import Tensor, relative_error
from atrousnet.common import KernelPath, PoolKind


LOGGER = logging.getLogger(__name__)
RATES = (1, 2, 4, 8, 16)
NETWORK_PREFIXES = ('lbn.block0.conv', 'lbn.block1.unit0.depthwise.conv',
                    'lbn.block2.unit0.depthwise.conv',
                    'lbn.block2.unit1.depthwise.conv',
                    'lbn.block3.unit0.depthwise.conv', 'spn.layer0.pool')

CheckResult = namedtuple('CheckResult', ('name', 'passed', 'detail'))


def run_suite(settings: Settings = None, cases: int = 100,
              seed: int = 0) -> list:
    """Run every check, returning one CheckResult per check."""
    settings = settings if settings is not None else Settings()
    results = []

    for check in CHECKS:
        generator = numpy.random.default_rng((seed, len(results)))
        try:
            passed, detail = check(generator, cases, settings)
        except Exception as error:
            passed, detail = False, "%s: %s" % (type(error).__name__, error)

        result = CheckResult(check.__name__.replace('check_', ''),
                             bool(passed), detail)
        LOGGER.info("%s %s: %s", 'PASS' if passed else 'FAIL',
                    result.name, detail)
        results.append(result)

    return results


def _random_tensor(generator, shape) -> Tensor:
    return Tensor(generator.standard_normal(shape))


def _random_conv(generator):
    rate = int(generator.choice(RATES))
    stride = int(generator.integers(1, 3))
    channels = int(generator.integers(1, 5))
    depthwise = bool(generator.integers(0, 2))
    out_channels = channels if depthwise else int(generator.integers(1, 5))
    spec = ConvSpec.same(channels, out_channels, kernel=3, atrous_rate=rate,
                         stride=stride, groups=channels if depthwise else 1)
    x = _random_tensor(generator, (1, channels) +
                       tuple(generator.integers(3, 13, size=2)))
    weights = generator.standard_normal(spec.weight_shape)
    weights = weights.astype(numpy.float32)
    bias = generator.standard_normal(out_channels).astype(numpy.float32)

    return x, weights, bias, spec


def check_conv_paths(generator, cases, _settings):
    """Optimized convolutions match the naive loops."""
    worst = 0.0

    for _ in range(cases):
        x, weights, bias, spec = _random_conv(generator)
        naive = kernels.conv2d(x, weights, bias, spec, path=KernelPath.NAIVE)
        fast = kernels.conv2d(x, weights, bias, spec,
                              path=KernelPath.OPTIMIZED)
        worst = max(worst, relative_error(fast, naive))

    return worst <= 1e-5, "max relative error %.3g over %d cases" % (worst,
                                                                     cases)


def check_unit_rate(generator, cases, _settings):
    """Rate 1 atrous convolutions are standard convolutions.

    The compiled loops must match the pure Python ones exactly. Without the
    native extension both would be the same code, the naive path is then
    compared with the optimized one.

    """
    native = kernels.native_available()
    worst = 0.0

    for _ in range(max(cases // 5, 1)):
        x, weights, bias, spec = _random_conv(generator)
        spec = ConvSpec.same(spec.in_channels, spec.out_channels,
                             stride=spec.stride, groups=spec.groups)
        out = kernels.conv2d(x, weights, bias, spec, path=KernelPath.NAIVE)
        if native:
            height, width = spec.output_size(x.height, x.width)
            expected = reference.conv2d(x.array, weights, bias, spec.stride,
                                        1, spec.padding, spec.groups, height,
                                        width)
            if not numpy.array_equal(out.array, expected):
                return False, "mismatch for %r" % spec
        else:
            worst = max(worst, relative_error(out, kernels.conv2d(
                x, weights, bias, spec, path=KernelPath.OPTIMIZED)))

    if native:
        return True, "exact on %d cases" % max(cases // 5, 1)

    return worst <= 1e-5, "native kernels missing, optimized path within " \
        "%.3g on %d cases" % (worst, max(cases // 5, 1))


def check_dilated_kernels(generator, cases, _settings):
    """Rate d equals rate 1 with the kernel spread d pixels apart."""
    for _ in range(max(cases // 5, 1)):
        x, weights, bias, spec = _random_conv(generator)
        extent = spec.effective_extent
        spread = numpy.zeros(spec.weight_shape[:2] + (extent, extent))
        spread[..., ::spec.atrous_rate, ::spec.atrous_rate] = weights
        plain = ConvSpec(spec.in_channels, spec.out_channels, kernel=extent,
                         stride=spec.stride, padding=spec.padding,
                         groups=spec.groups)
        out = kernels.conv2d(x, weights, bias, spec, path=KernelPath.NAIVE)
        expected = kernels.conv2d(x, spread, bias, plain,
                                  path=KernelPath.NAIVE)
        if not numpy.array_equal(out.array, expected.array):
            return False, "mismatch for %r" % spec

    return True, "exact on %d cases" % max(cases // 5, 1)


def check_pool_and_resize(generator, cases, _settings):
    """Optimized pooling and resize match the naive loops."""
    worst = 0.0

    for _ in range(max(cases // 5, 1)):
        x = _random_tensor(generator, (1, 2) +
                           tuple(generator.integers(3, 12, size=2)))
        kernel = int(generator.choice((3, 5, 7)))
        kind = PoolKind(int(generator.integers(0, 2)))
        stride = int(generator.integers(1, 3))
        padding = kernel // 2
        worst = max(worst, relative_error(
            kernels.pool2d(x, kind, kernel, stride, padding),
            kernels.pool2d(x, kind, kernel, stride, padding,
                           path=KernelPath.NAIVE)))

        height, width = (int(v) for v in generator.integers(1, 20, size=2))
        worst = max(worst, relative_error(
            kernels.bilinear_resize(x, height, width),
            kernels.bilinear_resize(x, height, width, path=KernelPath.NAIVE)))

    return worst <= 1e-6, "max relative error %.3g" % worst


def zero_weights(graph) -> WeightStore:
    """Zero convolutions and linear layers, identity batch norms."""
    store = WeightStore()

    for parameter in graph.parameters():
        if parameter.kind == 'batchnorm':
            store.set_batchnorm(parameter.name,
                                BatchNormParams.identity(parameter.shape[0]))
        else:
            store.set_tensor(parameter.name, numpy.zeros(parameter.shape))

    return store


def check_block_identities(generator, _cases, settings):
    """Zeroed blocks reduce to their shortcut or to a constant gate."""
    x = _random_tensor(generator, (1, blocks.CONTEXT_CHANNELS, 8, 8))
    daspp = blocks.daspp(x, zero_weights(blocks.daspp_graph()),
                         settings=settings)

    y = _random_tensor(generator, (1, 16, 8, 8))
    spec = blocks.BottleneckSpec(6, 16)
    unit = blocks.bottleneck(
        y, zero_weights(blocks.bottleneck_graph(16, spec)), spec,
        settings=settings)
    cam = blocks.cam(y, zero_weights(blocks.cam_graph(16)), settings=settings)

    errors = (float(numpy.abs(daspp.array - x.array).max()),
              float(numpy.abs(unit.array - y.array).max()),
              float(numpy.abs(cam.array - y.array / 2).max()))

    return max(errors) <= 1e-6, \
        "daspp %.3g, bottleneck %.3g, cam %.3g" % errors


def check_batchnorm_folding(generator, cases, settings):
    """Folded networks match the unfolded ones."""
    graph = network.build_network()
    worst = 0.0

    for case in range(max(cases // 50, 1)):
        store = network.random_init(graph, int(generator.integers(1 << 31)))
        for name, params in list(store.batchnorms()):
            channels = params.channels
            store.set_batchnorm(name, BatchNormParams(
                generator.uniform(0.5, 1.5, channels),
                generator.uniform(-0.1, 0.1, channels),
                generator.uniform(-0.1, 0.1, channels),
                generator.uniform(0.5, 1.5, channels), settings.bn_epsilon))

        image = _random_tensor(generator, (1, 3, 32, 32))
        folded_graph, folded_store = network.fold_network(graph, store)
        worst = max(worst, relative_error(
            network.forward(folded_graph, folded_store, image, settings),
            network.forward(graph, store, image, settings)))

    return worst <= 1e-4, "max relative error %.3g" % worst


def check_gridding(_generator, _cases, settings):
    """Stacked rates sample the window more densely than a single rate
    and probed footprints match the analytic offset sets."""
    single = gridding_coverage([(3, 16)])
    ladder = gridding_coverage([(3, 2), (3, 4), (3, 8), (3, 16)])
    if not (ladder > single and abs(single - 9 / 33 ** 2) < 1e-12):
        return False, "ladder %.5f, single %.5f" % (ladder, single)

    for rates in ((16, ), (2, 4), (1, 2, 4)):
        offsets = offset_set([(3, rate) for rate in rates])
        expected = {(16 + y, 16 + x) for y in offsets for x in offsets
                    if 0 <= 16 + y < 32 and 0 <= 16 + x < 32}
        footprint = footprint_probe(_conv_stack(rates), (16, 16), (32, 32),
                                    settings)
        if footprint != expected:
            return False, "rates %s: footprint differs from offsets" % (
                rates, )

    return True, "ladder %.5f, single %.5f" % (ladder, single)


def _conv_stack(rates):
    builder = GraphBuilder()
    out = builder.input('input', 1)
    for index, rate in enumerate(rates):
        out = builder.conv('conv%d' % index, out,
                           ConvSpec.same(1, 1, atrous_rate=rate))

    return builder.build(out)


def _probe_graphs():
    graphs = [_conv_stack(rates) for rates in ((1, ), (2, ), (2, 4), (1, 3))]

    builder = GraphBuilder()
    out = builder.input('image', 1)
    out = builder.conv('conv', out, ConvSpec(1, 1, kernel=7, stride=2,
                                             padding=3))
    out = builder.pool('pool', out, PoolKind.MAX, 3, stride=2, padding=1)
    graphs.append(builder.build(out))

    graph = network.build_network()
    graphs.extend(graph.prefix(name) for name in NETWORK_PREFIXES)

    return graphs


def check_receptive_fields(_generator, _cases, settings):
    """Receptive fields match the extent of probed footprints."""
    graphs = _probe_graphs()

    for graph in graphs:
        size = receptive_field(graph)[graph.output]
        channels = graph.node(graph.inputs[0]).attrs['channels']
        shape = graph.infer_shapes((1, channels, 32, 32))[graph.output]
        center = shape[2] // 2, shape[3] // 2
        footprint = footprint_probe(graph, center, (32, 32), settings)
        rows = [y for y, _ in footprint]
        columns = [x for _, x in footprint]
        extents = (max(rows) - min(rows) + 1,
                   max(columns) - min(columns) + 1)
        if extents != (size, size):
            return False, "%s: rf %d, footprint %dx%d" % (
                graph.output, size, extents[0], extents[1])

    return True, "%d prefixes" % len(graphs)


CHECKS = (check_conv_paths, check_unit_rate, check_dilated_kernels,
          check_pool_and_resize, check_block_identities,
          check_batchnorm_folding, check_gridding, check_receptive_fields)
