import json
import unittest

from atrousnet import analysis, blocks, network
from atrousnet import ProbeError, ShapeError, ConfigurationError
from atrousnet import VerificationError
from atrousnet import Settings, PoolKind, KernelPath, TimingRouter
from atrousnet.graph import GraphBuilder
from atrousnet.kernels import ConvSpec
from atrousnet.tensor import Uniform, seeded_fill


def conv_stack(rates, kernel=3):
    builder = GraphBuilder()
    out = builder.input('input', 1)
    for index, rate in enumerate(rates):
        out = builder.conv('conv%d' % index, out,
                           ConvSpec.same(1, 1, kernel=kernel,
                                         atrous_rate=rate))

    return builder.build(out)


def spn_stem():
    builder = GraphBuilder()
    out = builder.input('image', 1)
    conv = builder.conv('conv', out, ConvSpec(1, 1, kernel=7, stride=2,
                                              padding=3))
    pool = builder.pool('pool', conv, PoolKind.MAX, 3, stride=2, padding=1)

    return builder.build(pool)


class TestReceptiveField(unittest.TestCase):
    def test_single_conv(self):
        """A 3x3 convolution sees 3 pixels."""
        self.assertEqual(analysis.receptive_field(conv_stack([1]))['conv0'],
                         3)

    def test_atrous(self):
        """Atrous rates widen the field without adding taps."""
        fields = analysis.receptive_field(conv_stack([2, 4]))

        self.assertEqual(fields['conv0'], 5)
        self.assertEqual(fields['conv1'], 13)

    def test_strided(self):
        """Strides multiply the growth of the following layers."""
        fields = analysis.receptive_field(spn_stem())

        self.assertEqual(fields['conv'], 7)
        self.assertEqual(fields['pool'], 11)

    def test_global(self):
        """Globally pooled values have no local field."""
        fields = analysis.receptive_field(blocks.daspp_graph())

        self.assertIsNone(fields['daspp.image.pool'])
        self.assertIsNone(fields['daspp.image.resize'])
        self.assertEqual(fields['daspp.branch1.pool'], 3)
        self.assertEqual(fields['daspp.branch1.conv'], 3 + 24)

    def test_network(self):
        """The stem and the spatial branch fields."""
        fields = analysis.receptive_field(network.build_network())

        self.assertEqual(fields['lbn.block0.conv'], 3)
        self.assertEqual(fields['spn.layer0.pool'], 11)
        self.assertGreater(fields['lbn.block7.unit0.depthwise.conv'],
                           fields['lbn.block4.unit0.depthwise.conv'])


class TestFootprint(unittest.TestCase):
    def test_dense(self):
        """A 3x3 convolution depends on a 3x3 block."""
        footprint = analysis.footprint_probe(conv_stack([1]), (4, 4), (9, 9))

        self.assertEqual(footprint, {(y, x) for y in (3, 4, 5)
                                     for x in (3, 4, 5)})

    def test_atrous(self):
        """A rate 2 convolution skips every other pixel."""
        footprint = analysis.footprint_probe(conv_stack([2]), (4, 4), (9, 9))

        self.assertEqual(footprint, {(y, x) for y in (2, 4, 6)
                                     for x in (2, 4, 6)})

    def test_matches_offsets(self):
        """Stacked atrous footprints are products of the offset sets."""
        for rates in ((2, 4), (1, 2, 4), (3, 5)):
            offsets = analysis.offset_set([(3, rate) for rate in rates])
            footprint = analysis.footprint_probe(
                conv_stack(rates), (16, 16), (32, 32),
                Settings(probe_cap=1024))

            self.assertEqual(footprint, {(16 + y, 16 + x) for y in offsets
                                         for x in offsets})

    def test_matches_field(self):
        """Footprint extents equal the computed receptive fields."""
        graphs = [conv_stack(rates) for rates in ((1, ), (2, ), (1, 2),
                                                  (2, 4), (1, 3), (4, ))]
        graphs.append(spn_stem())

        for graph in graphs:
            size = analysis.receptive_field(graph)[graph.output]
            shape = graph.infer_shapes((1, 1, 32, 32))[graph.output]
            footprint = analysis.footprint_probe(
                graph, (shape[2] // 2, shape[3] // 2), (32, 32),
                Settings(probe_cap=1024))
            rows = [y for y, _ in footprint]
            columns = [x for _, x in footprint]

            self.assertEqual(max(rows) - min(rows) + 1, size)
            self.assertEqual(max(columns) - min(columns) + 1, size)

    def test_network_prefixes(self):
        """Footprints of network prefixes span their receptive fields."""
        graph = network.build_network()
        fields = analysis.receptive_field(graph)

        for name in ('lbn.block0.conv', 'lbn.block1.unit0.depthwise.conv',
                     'lbn.block2.unit0.depthwise.conv',
                     'lbn.block2.unit1.depthwise.conv',
                     'lbn.block3.unit0.depthwise.conv', 'spn.layer0.pool'):
            prefix = graph.prefix(name)
            shape = prefix.infer_shapes((1, 3, 32, 32))[name]
            footprint = analysis.footprint_probe(
                prefix, (shape[2] // 2, shape[3] // 2), (32, 32))
            rows = [y for y, _ in footprint]
            columns = [x for _, x in footprint]

            self.assertEqual(max(rows) - min(rows) + 1, fields[name], name)
            self.assertEqual(max(columns) - min(columns) + 1, fields[name],
                             name)

    def test_errors(self):
        """Global pooling, multiple inputs and large inputs are rejected."""
        with self.assertRaises(ProbeError):
            analysis.footprint_probe(blocks.cam_graph(8), (0, 0), (8, 8))
        with self.assertRaises(ProbeError):
            analysis.footprint_probe(blocks.spn_graph(), (0, 0), (8, 8))
        with self.assertRaises(ProbeError):
            analysis.footprint_probe(conv_stack([1]), (0, 0), (8, 8),
                                     Settings(probe_cap=16))
        with self.assertRaises(ProbeError):
            analysis.footprint_probe(conv_stack([1]), (9, 0), (8, 8))


class TestGridding(unittest.TestCase):
    def test_dense(self):
        """A rate 1 kernel covers its window."""
        self.assertEqual(analysis.gridding_coverage([(3, 1)]), 1.0)

    def test_sparse(self):
        """A rate 16 kernel samples 9 of 33x33 pixels."""
        self.assertAlmostEqual(analysis.gridding_coverage([(3, 16)]),
                               9 / 33 ** 2)
        self.assertAlmostEqual(analysis.gridding_coverage([(3, 16)]),
                               0.00826, places=5)

    def test_ladder(self):
        """Stacked rates fill the gaps of the largest one."""
        coverage = analysis.gridding_coverage([(3, 2), (3, 4), (3, 8),
                                               (3, 16)])

        self.assertAlmostEqual(coverage, (31 / 61) ** 2)
        self.assertGreater(coverage, analysis.gridding_coverage([(3, 16)]))

    def test_offsets(self):
        """Offsets are sums of the taps of every layer."""
        self.assertEqual(analysis.offset_set([(3, 2)]), {-2, 0, 2})
        self.assertEqual(analysis.offset_set([(3, 1), (3, 3)]),
                         {-4, -3, -2, -1, 0, 1, 2, 3, 4})

        with self.assertRaises(ShapeError):
            analysis.offset_set([(2, 1)])


class TestCount(unittest.TestCase):
    def test_single_conv(self):
        """Closed-form counts of the stem convolution."""
        builder = GraphBuilder()
        out = builder.input('image', 3)
        graph = builder.build(builder.conv(
            'conv', out, ConvSpec.same(3, 32, stride=2), bias=True))

        report = analysis.count_params_flops(graph, (448, 896))

        self.assertEqual(report.total_params, 896)
        self.assertEqual(report.total_macs, 224 * 448 * 32 * 9 * 3)
        self.assertEqual(report.total_flops, 2 * report.total_macs)
        self.assertEqual(report.layers[0].shape, (1, 32, 224, 448))
        self.assertEqual(report.layers[0].rf, 3)

    def test_aux_ops(self):
        """Batch norms count two operations per element."""
        builder = GraphBuilder()
        out = builder.input('input', 4)
        graph = builder.build(builder.batchnorm('bn', out))

        report = analysis.count_params_flops(graph, (1, 4, 5, 5))

        self.assertEqual(report.total_params, 8)
        self.assertEqual(report.total_aux_ops, 2 * 4 * 25)
        self.assertEqual(report.total_macs, 0)

    def test_network(self):
        """The network counts fall within the reference bracket."""
        report = analysis.count_params_flops(network.build_network(),
                                             (448, 896), with_fields=False)

        self.assertEqual(report.total_params, 3254203)
        self.assertAlmostEqual(report.total_macs / 1e9, 31.856, places=2)
        self.assertEqual(report.flops_bracket(),
                         (report.total_macs, report.total_flops))
        self.assertTrue(report.within_reference())
        self.assertFalse(report.within_reference(flops=10e9))

    def test_input_scaling(self):
        """Doubling the input sides quadruples the spatial MACs only."""
        graph = network.build_network()
        small = analysis.count_params_flops(graph, (64, 128),
                                            with_fields=False)
        large = analysis.count_params_flops(graph, (128, 256),
                                            with_fields=False)
        pooled = sum(r.macs for r in small.layers if r.shape[2:] == (1, 1))

        self.assertEqual(large.total_params, small.total_params)
        self.assertEqual(large.total_params, 3254203)
        self.assertGreater(pooled, 0)
        self.assertEqual(large.total_macs, 4 * small.total_macs - 3 * pooled)
        for first, second in zip(small.layers, large.layers):
            self.assertEqual(first.params, second.params)
            if first.shape[2:] != (1, 1):
                self.assertEqual(second.macs, 4 * first.macs, first.name)

    def test_params_reference(self):
        """The parameter count is compared with 6.2 M +/- 20%."""
        report = analysis.count_params_flops(network.build_network(),
                                             (64, 128), with_fields=False)

        self.assertFalse(report.params_within_reference())
        self.assertTrue(report.params_within_reference(params=3.0e6))
        self.assertTrue(report.params_within_reference(tolerance=0.5))

    def test_coverage(self):
        """Labelled rate stacks add their gridding density."""
        graph = network.build_network()
        stacks = {'backbone': [(3, rate) for rate
                               in network.backbone_rates(graph)],
                  'single': [(3, 16)]}

        report = analysis.count_params_flops(graph, (64, 128),
                                             with_fields=False,
                                             rate_stacks=stacks)
        data = report.to_dict()

        self.assertAlmostEqual(report.coverage['backbone'], (61 / 121) ** 2)
        self.assertAlmostEqual(data['coverage']['single'], 9 / 33 ** 2)
        self.assertNotIn('timings', data)
        self.assertIn('coverage backbone: 0.25415', report.to_text())

    def test_report(self):
        """Reports serialize to JSON and text."""
        report = analysis.count_params_flops(conv_stack([1, 2]), (8, 8))

        data = json.loads(report.to_json())
        text = report.to_text()

        self.assertEqual(data['totals']['params'], 18)
        self.assertEqual(data['layers'][1]['rf'], 7)
        self.assertIn('params: 18', text)
        self.assertIn('conv1', text)


class TestProfile(unittest.TestCase):
    def setUp(self):
        self.graph = conv_stack([1, 2])
        self.weights = network.random_init(self.graph, 0)
        self.image = seeded_fill((1, 1, 16, 16), 0, Uniform(1.0))

    def test_profile(self):
        """Mean and deviation of the timed runs are reported."""
        timer = TimingRouter()

        summary = analysis.profile_forward(self.graph, self.weights,
                                           self.image, repeats=3,
                                           path=KernelPath.NAIVE, timer=timer)

        self.assertEqual(summary.path, 'naive')
        self.assertEqual(summary.repeats, 3)
        self.assertGreater(summary.mean, 0)
        self.assertGreaterEqual(summary.stddev, 0)
        self.assertEqual(set(summary.layers), {'conv0', 'conv1'})
        self.assertLessEqual(summary.max_error, 1e-4)

    def test_paths_disagree(self):
        """Profiling fails when the kernel paths disagree."""
        with self.assertRaises(VerificationError):
            analysis.profile_forward(self.graph, self.weights, self.image,
                                     repeats=3, tolerance=-1.0)

    def test_repeats(self):
        """At least three repeats are needed."""
        with self.assertRaises(ConfigurationError):
            analysis.profile_forward(self.graph, self.weights, self.image,
                                     repeats=2)

    def test_compare_paths(self):
        """Both kernel paths give the same output."""
        self.assertLessEqual(analysis.compare_paths(self.graph, self.weights,
                                                    self.image), 1e-5)
