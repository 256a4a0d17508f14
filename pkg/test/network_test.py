import unittest

import numpy

from atrousnet import network
from atrousnet import ShapeError, WeightError, Settings, Tensor
from atrousnet import AttentionKind, ContextKind, PoolKind, MergeMode
from atrousnet import FusionMode, RateMode, SpatialKind, BatchNormParams
from atrousnet import ConfigurationError
from atrousnet.analysis import count_params_flops
from atrousnet.common import Op, Branch, NETWORK_TAPS
from atrousnet.graph import GraphBuilder, NetworkGraph, Node, execute
from atrousnet.kernels import ConvSpec
from atrousnet.tensor import Uniform, seeded_fill, relative_error
from atrousnet.verify import zero_weights


TAP_SHAPES = {'block0_out': (1, 32, 224, 448),
              'block1_out': (1, 16, 224, 448),
              'block2_out': (1, 24, 112, 224),
              'block3_out': (1, 32, 56, 112),
              'block4_out': (1, 64, 56, 112),
              'block5_out': (1, 96, 56, 112),
              'block6_out': (1, 160, 56, 112),
              'block7_out': (1, 320, 56, 112),
              'dense_skip': (1, 640, 56, 112),
              'daspp_in': (1, 128, 56, 112),
              'daspp_out': (1, 128, 56, 112),
              'spn_layer0': (1, 64, 112, 224),
              'spn_layer1': (1, 64, 112, 224),
              'spn_out': (1, 88, 112, 224),
              'fused': (1, 216, 112, 224),
              'logits': (1, 19, 448, 896)}


def random_image(height, width, seed=0):
    return seeded_fill((1, 3, height, width), seed, Uniform(1.0))


def randomize_batchnorms(store, seed):
    generator = numpy.random.default_rng(seed)

    for name, params in list(store.batchnorms()):
        channels = params.channels
        store.set_batchnorm(name, BatchNormParams(
            generator.uniform(0.5, 1.5, channels),
            generator.uniform(-0.1, 0.1, channels),
            generator.uniform(-0.1, 0.1, channels),
            generator.uniform(0.5, 1.5, channels)))


class TestBuildNetwork(unittest.TestCase):
    def setUp(self):
        self.graph = network.build_network()

    def test_taps(self):
        """Every documented tap is exposed."""
        self.assertEqual(set(self.graph.taps), set(NETWORK_TAPS))

    def test_tap_shapes(self):
        """Tap shapes follow the layer table for a 448x896 input."""
        shapes = self.graph.infer_shapes((1, 3, 448, 896))

        for tap, shape in TAP_SHAPES.items():
            self.assertEqual(shapes[self.graph.taps[tap]], shape, tap)
        self.assertEqual(shapes[self.graph.output], (1, 19, 448, 896))

    def test_channel_arithmetic(self):
        """Dense skip, context, spatial and fusion widths."""
        shapes = self.graph.infer_shapes((1, 3, 64, 128))

        self.assertEqual(shapes['lbn.dense_skip'][1], 640)
        self.assertEqual(shapes['ffn.concat'][1], 216)
        self.assertEqual(self.graph.node('ffn.classifier.conv')
                         .attrs['spec'].weight_shape, (19, 216, 1, 1))

    def test_parameter_count(self):
        """The default network has a fixed number of parameters."""
        total = sum(int(numpy.prod(p.shape)) * (2 if p.kind == 'batchnorm'
                                                else 1)
                    for p in self.graph.parameters())

        self.assertEqual(total, 3254203)

    def test_branches(self):
        """Stem nodes are spatial, the head is fusion."""
        self.assertEqual(self.graph.node('spn.layer0.conv').branch,
                         Branch.SPATIAL)
        self.assertEqual(self.graph.node('lbn.block4.unit0.expand.conv')
                         .branch, Branch.SEMANTIC)
        self.assertEqual(self.graph.node('spn.concat').branch, Branch.FUSION)
        self.assertEqual(self.graph.node('ffn.fuse.conv').branch,
                         Branch.FUSION)

    def test_atrous_rates(self):
        """Blocks 4 to 7 hold rates 2, 4, 8 and 16."""
        for block, rate in (('block4', 2), ('block5', 4), ('block6', 8),
                            ('block7', 16)):
            node = self.graph.node('lbn.%s.unit0.depthwise.conv' % block)
            self.assertEqual(node.attrs['spec'].atrous_rate, rate)
            self.assertEqual(node.attrs['spec'].stride, 1)

    def test_rate_mode_first(self):
        """Only the first unit keeps the block rate."""
        graph = network.build_network(rate_mode=RateMode.FIRST)

        first = graph.node('lbn.block5.unit0.depthwise.conv')
        last = graph.node('lbn.block5.unit2.depthwise.conv')
        held = self.graph.node('lbn.block5.unit2.depthwise.conv')

        self.assertEqual(first.attrs['spec'].atrous_rate, 4)
        self.assertEqual(last.attrs['spec'].atrous_rate, 1)
        self.assertEqual(held.attrs['spec'].atrous_rate, 4)

    def test_attention_variants(self):
        """Attention modules are selectable."""
        se = network.build_network(attention=AttentionKind.SE)
        none = network.build_network(attention='none')

        self.assertIn('lbn.block4.attention.reduce.conv', self.graph)
        self.assertIn('lbn.block4.attention.excite', se)
        self.assertNotIn('lbn.block4.attention.scale', none)
        self.assertEqual(none.taps['block4_out'],
                         'lbn.block4.unit3.residual')

    def test_without_spatial_branch(self):
        """The semantic branch alone is projected and upsampled."""
        graph = network.build_network(spatial=SpatialKind.NONE)
        shapes = graph.infer_shapes((1, 3, 448, 896))

        self.assertEqual(shapes[graph.output], (1, 19, 448, 896))
        self.assertEqual(shapes[graph.taps['fused']], (1, 19, 56, 112))
        self.assertEqual(graph.node('head.classifier.conv').inputs,
                         (self.graph.taps['daspp_out'], ))
        self.assertFalse(any(n.name.startswith(('spn.', 'ffn.'))
                             for n in graph))
        self.assertFalse(any(n.branch == Branch.SPATIAL for n in graph))
        self.assertNotIn('spn_out', graph.taps)
        self.assertEqual(graph.options['spatial'], SpatialKind.NONE)

        with self.assertRaises(ConfigurationError):
            network.build_network(spatial='none', fusion=FusionMode.ADD)

    def test_without_spatial_branch_counts(self):
        """Dropping the spatial branch removes the stem and fusion layers
        and adds a single 128 to 19 classifier."""
        full = count_params_flops(self.graph, (448, 896), with_fields=False)
        alone = count_params_flops(network.build_network(spatial='none'),
                                   (448, 896), with_fields=False)
        removed = [r for r in full.layers
                   if r.name.startswith(('spn.', 'ffn.'))]

        self.assertEqual(alone.total_params,
                         full.total_params - sum(r.params for r in removed)
                         + 128 * 19 + 19)
        self.assertEqual(alone.total_macs,
                         full.total_macs - sum(r.macs for r in removed)
                         + 56 * 112 * 19 * 128)
        self.assertLess(alone.total_macs, full.total_macs)

    def test_backbone_rates(self):
        """Depthwise rates of blocks 4 to 7 in both rate modes."""
        self.assertEqual(network.backbone_rates(self.graph),
                         [2] * 4 + [4] * 3 + [8] * 3 + [16])
        self.assertEqual(network.backbone_rates(
            network.build_network(rate_mode=RateMode.FIRST)),
            [2, 1, 1, 1, 4, 1, 1, 8, 1, 1, 16])

    def test_aspp_context(self):
        """The ASPP context is projected back to 128 channels."""
        graph = network.build_network(context=ContextKind.ASPP)
        shapes = graph.infer_shapes((1, 3, 64, 64))

        self.assertNotIn('daspp.concat', graph)
        self.assertEqual(shapes['aspp.concat'][1], 512)
        self.assertEqual(shapes[graph.taps['daspp_out']][1], 128)

    def test_options(self):
        """Build options are recorded on the graph."""
        graph = network.build_network(num_classes=5, pool='max')

        self.assertEqual(graph.options['num_classes'], 5)
        self.assertEqual(graph.options['pool'], PoolKind.MAX)
        self.assertEqual(graph.infer_shapes((1, 3, 32, 32))[graph.output],
                         (1, 5, 32, 32))

    def test_input_errors(self):
        """Inputs must be RGB with sides divisible by 8."""
        with self.assertRaises(ShapeError):
            self.graph.infer_shapes((1, 3, 450, 896))
        with self.assertRaises(ShapeError):
            self.graph.infer_shapes((1, 1, 448, 896))
        with self.assertRaises(ShapeError):
            network.build_network(num_classes=0)


class TestForward(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.graph = network.build_network()
        cls.weights = network.random_init(cls.graph, 0)

    def test_determinism(self):
        """Seeded weights and inputs give bit-identical logits."""
        image = random_image(64, 64)

        first = network.forward(self.graph, self.weights, image)
        second = network.forward(self.graph, self.weights, image)

        self.assertEqual(first.shape, (1, 19, 64, 64))
        self.assertTrue(first.isfinite())
        self.assertEqual(first, second)

    def test_threads(self):
        """Concurrent branches do not change the result."""
        image = random_image(32, 32, seed=1)

        serial = network.forward(self.graph, self.weights, image,
                                 Settings(threads=1))
        parallel = network.forward(self.graph, self.weights, image,
                                   Settings(threads=2))

        self.assertEqual(serial, parallel)

    def test_taps(self):
        """Taps are retained while intermediate values are released."""
        activations = network.run(self.graph, self.weights,
                                  random_image(32, 32))

        self.assertEqual(set(activations.taps()), set(NETWORK_TAPS))
        self.assertEqual(activations['dense_skip'].channels, 640)
        self.assertNotIn('lbn.block4.unit1.expand.conv', activations)
        with self.assertRaises(KeyError):
            activations['lbn.block4.unit1.expand.conv']

    def test_keep_all(self):
        """Every value is retained on demand."""
        activations = network.run(self.graph, self.weights,
                                  random_image(32, 32), keep_all=True)

        self.assertIn('lbn.block4.unit1.expand.conv', activations)

    def test_labels(self):
        """Predicted labels are valid class ids."""
        logits = network.forward(self.graph, self.weights,
                                 random_image(32, 32))
        labels = network.predict_labels(logits)

        self.assertEqual(labels.shape, (32, 32))
        self.assertTrue(((labels >= 0) & (labels < 19)).all())

    def test_ablations(self):
        """Every pooling, merge and fusion combination yields its own
        logits."""
        image = random_image(64, 64, seed=2)
        outputs = []

        for pool in PoolKind:
            for merge in MergeMode:
                for fusion in FusionMode:
                    graph = network.build_network(pool=pool, merge=merge,
                                                  fusion=fusion)
                    logits = network.forward(
                        graph, network.random_init(graph, 3), image)
                    self.assertEqual(logits.shape, (1, 19, 64, 64))
                    self.assertTrue(logits.isfinite())
                    outputs.append(logits)

        self.assertEqual(len(outputs), 8)
        for index, logits in enumerate(outputs):
            for other in outputs[index + 1:]:
                self.assertNotEqual(logits, other)

    def test_without_spatial_branch(self):
        """The semantic branch alone yields full resolution logits."""
        graph = network.build_network(spatial=SpatialKind.NONE)
        activations = network.run(graph, network.random_init(graph, 3),
                                  random_image(64, 64, seed=2))

        self.assertEqual(activations.output.shape, (1, 19, 64, 64))
        self.assertTrue(activations.output.isfinite())
        self.assertEqual(activations['fused'].shape, (1, 19, 8, 8))
        self.assertNotIn('spn_out', activations)

    def test_dense_skip_order(self):
        """Dense skip stacks blocks 4 to 7 in order."""
        concat = self.graph.node('lbn.dense_skip')
        widths = (64, 96, 160, 320)
        self.assertEqual(concat.inputs, tuple(
            self.graph.taps['block%d_out' % block] for block in (4, 5, 6, 7)))

        nodes = [Node(name, Op.INPUT, (), {'channels': width},
                      Branch.SEMANTIC)
                 for name, width in zip(concat.inputs, widths)]
        feeds = {name: Tensor.full((1, width, 2, 3), float(block))
                 for block, name, width in zip((4, 5, 6, 7), concat.inputs,
                                               widths)}

        out = execute(NetworkGraph(nodes + [concat], concat.name), None,
                      feeds).output

        expected = numpy.repeat([4.0, 5.0, 6.0, 7.0], widths)
        self.assertEqual(out.shape, (1, 640, 2, 3))
        self.assertEqual(out.array[0, :, 1, 2].tolist(), expected.tolist())

    def test_zero_weights(self):
        """A zeroed network labels every pixel as class 0."""
        logits = network.forward(self.graph, zero_weights(self.graph),
                                 random_image(32, 32))

        self.assertFalse(logits.array.any())
        self.assertFalse(network.predict_labels(logits).any())

    def test_strict_binding(self):
        """Missing or unused weights are rejected."""
        store = self.weights.copy()
        store.set_tensor('unused.weight', numpy.zeros(3))

        with self.assertRaises(WeightError):
            network.forward(self.graph, store, random_image(32, 32))

        network.forward(self.graph, store, random_image(32, 32),
                        Settings(strict_weights=False))

        store.remove('ffn.classifier.conv.bias')
        with self.assertRaises(WeightError):
            network.forward(self.graph, store, random_image(32, 32),
                            Settings(strict_weights=False))


class TestPredictLabels(unittest.TestCase):
    def test_ties(self):
        """Ties go to the lowest class index."""
        labels = network.predict_labels(Tensor.zeros((1, 19, 4, 6)))

        self.assertEqual(labels.shape, (4, 6))
        self.assertEqual(labels.dtype, numpy.int32)
        self.assertFalse(labels.any())

    def test_one_hot(self):
        """One-hot logits select their class."""
        data = numpy.zeros((1, 19, 3, 3))
        data[:, 7] = 1.0

        self.assertTrue((network.predict_labels(Tensor(data)) == 7).all())

    def test_batch(self):
        """Batches give a stack of label maps."""
        labels = network.predict_labels(Tensor.zeros((2, 19, 3, 5)))

        self.assertEqual(labels.shape, (2, 3, 5))


class TestRandomInit(unittest.TestCase):
    def setUp(self):
        self.graph = network.build_network()

    def test_determinism(self):
        """Same seeds give identical stores, different seeds differ."""
        store = network.random_init(self.graph, 7)

        self.assertEqual(store, network.random_init(self.graph, 7))
        self.assertNotEqual(store, network.random_init(self.graph, 8))
        self.assertEqual(len(store), len(self.graph.parameters()))

    def test_bounds(self):
        """Weights lie within 1 / sqrt(fan in), batch norms are identities."""
        store = network.random_init(self.graph, 0)

        weight = store.tensor('lbn.block4.unit0.project.conv.weight')
        self.assertLessEqual(float(numpy.abs(weight).max()),
                             1.000001 / numpy.sqrt(192))
        bias = store.tensor('ffn.classifier.conv.bias')
        self.assertLessEqual(float(numpy.abs(bias).max()),
                             1.000001 / numpy.sqrt(216))
        self.assertEqual(store.batchnorm('lbn.block0.bn'),
                         BatchNormParams.identity(32))

    def test_finite_logits(self):
        """Every seed gives finite logits."""
        image = random_image(32, 32, seed=6)

        for seed in range(10):
            with self.subTest(seed=seed):
                logits = network.forward(
                    self.graph, network.random_init(self.graph, seed), image)

                self.assertEqual(logits.shape, (1, 19, 32, 32))
                self.assertTrue(logits.isfinite())


class TestFoldNetwork(unittest.TestCase):
    def test_fold(self):
        """Folded networks match the original one."""
        graph = network.build_network()

        for seed in range(10):
            with self.subTest(seed=seed):
                store = network.random_init(graph, seed)
                randomize_batchnorms(store, seed)
                image = random_image(32, 32, seed=seed + 4)

                folded_graph, folded_store = network.fold_network(graph,
                                                                  store)
                expected = network.forward(graph, store, image)
                folded = network.forward(folded_graph, folded_store, image)

                self.assertLessEqual(relative_error(folded, expected), 1e-4)

    def test_folded_graph(self):
        """Only batch norms not fed by a convolution remain."""
        graph = network.build_network()
        folded_graph, folded_store = network.fold_network(
            graph, network.random_init(graph, 0))

        remaining = [n.name for n in folded_graph if n.op == Op.BN]

        self.assertEqual(remaining, ['ffn.concat.bn'])
        self.assertTrue(folded_graph.node('lbn.block0.conv').attrs['bias'])
        self.assertEqual(folded_graph.taps['block1_out'],
                         'lbn.block1.unit0.project.conv')
        self.assertEqual(set(folded_graph.taps), set(graph.taps))
        folded_store.bind(folded_graph)


class TestGraph(unittest.TestCase):
    def test_builder_errors(self):
        """Duplicates, unknown sources and channel mismatches are rejected."""
        builder = GraphBuilder()
        source = builder.input('input', 3)

        with self.assertRaises(ShapeError):
            builder.input('input', 3)
        with self.assertRaises(ShapeError):
            builder.conv('conv', source, ConvSpec.same(4, 4))
        with self.assertRaises(KeyError):
            builder.conv('conv', 'missing', ConvSpec.same(3, 4))

    def test_channel_attributes(self):
        """Inputs and batch norms record their width as an attribute."""
        builder = GraphBuilder()
        source = builder.input('input', 3)
        norm = builder.batchnorm('bn', source)
        graph = builder.build(norm)

        self.assertEqual(graph.node('input').attrs['channels'], 3)
        self.assertEqual(graph.node('bn').attrs['channels'], 3)
        self.assertEqual(builder.channels('bn'), 3)
        self.assertEqual([p.shape for p in graph.parameters()], [(3, )])

    def test_branch_crossing(self):
        """Spatial nodes cannot consume semantic nodes."""
        spec = ConvSpec.same(1, 1)
        nodes = [Node('input', Op.INPUT, (), {'channels': 1},
                      Branch.SEMANTIC),
                 Node('a', Op.CONV, ('input', ), {'spec': spec, 'bias': False},
                      Branch.SEMANTIC),
                 Node('b', Op.CONV, ('a', ), {'spec': spec, 'bias': False},
                      Branch.SPATIAL)]

        with self.assertRaises(ShapeError):
            NetworkGraph(nodes, 'b')

        NetworkGraph(nodes[:2] + [nodes[2]._replace(branch=Branch.FUSION)],
                     'b')

    def test_prefix(self):
        """Prefixes keep the ancestors of a node only."""
        graph = network.build_network()

        prefix = graph.prefix('block2_out')

        self.assertEqual(prefix.output, graph.taps['block2_out'])
        self.assertNotIn('lbn.block3.unit0.expand.conv', prefix)
        self.assertNotIn('spn.layer0.conv', prefix)
        self.assertEqual(prefix.inputs, ('image', ))

    def test_manifest(self):
        """The manifest lists every parameter with its shape."""
        manifest = network.build_network().manifest().splitlines()

        self.assertIn('lbn.block0.conv.weight\ttensor\t32x3x3x3', manifest)
        self.assertIn('lbn.block0.bn\tbatchnorm\t32', manifest)

    def test_execute_feeds(self):
        """Multi-input graphs are fed by name."""
        builder = GraphBuilder()
        a = builder.input('a', 2)
        b = builder.input('b', 2)
        graph = builder.build(builder.add('sum', [a, b]))

        out = execute(graph, None, {'a': Tensor.full((1, 2, 2, 2), 1.0),
                                    'b': Tensor.full((1, 2, 2, 2), 2.0)})

        self.assertEqual(out.output, Tensor.full((1, 2, 2, 2), 3.0))
