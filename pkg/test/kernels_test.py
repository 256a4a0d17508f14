import unittest

import numpy

from atrousnet import ShapeError, Tensor, ConvSpec, BatchNormParams
from atrousnet import ConfigurationError
from atrousnet.common import ExitCode, exit_code
from atrousnet import KernelPath, PoolKind, ActivationKind
from atrousnet import kernels
from atrousnet.tensor import Uniform, seeded_fill, seeded_array
from atrousnet.tensor import relative_error
from atrousnet.kernels import conv2d, batchnorm_inference, fold_batchnorm
from atrousnet.kernels import activation, pool2d, pool_output_size
from atrousnet.kernels import global_avg_pool, bilinear_resize, linear


PATHS = (KernelPath.NAIVE, KernelPath.OPTIMIZED)


def column(values):
    array = numpy.array(values, dtype=numpy.float32)

    return Tensor(array.reshape(1, -1, 1, 1))


class TestConvSpec(unittest.TestCase):
    def test_output_size(self):
        """Strided 3x3 convolution halves the resolution."""
        spec = ConvSpec(3, 32, kernel=3, stride=2, padding=1)

        self.assertEqual(spec.output_size(448, 896), (224, 448))
        self.assertEqual(spec.weight_shape, (32, 3, 3, 3))

    def test_same_padding(self):
        """Same padding preserves the resolution of atrous convolutions."""
        for rate in (1, 2, 4, 8, 16, 36):
            spec = ConvSpec.same(8, 8, atrous_rate=rate)

            self.assertEqual(spec.padding, rate)
            self.assertEqual(spec.effective_extent, 2 * rate + 1)
            self.assertEqual(spec.output_size(56, 112), (56, 112))

    def test_depthwise(self):
        """Depthwise specs are recognized."""
        self.assertTrue(ConvSpec.same(96, 96, groups=96).depthwise)
        self.assertFalse(ConvSpec.same(96, 96).depthwise)
        self.assertEqual(ConvSpec.same(96, 96, groups=96).weight_shape,
                         (96, 1, 3, 3))

    def test_errors(self):
        """Invalid geometries are rejected."""
        with self.assertRaises(ShapeError):
            ConvSpec(3, 8, groups=2)
        with self.assertRaises(ShapeError):
            ConvSpec(3, 8, atrous_rate=0)
        with self.assertRaises(ShapeError):
            ConvSpec(3, 8, padding=-1)
        with self.assertRaises(ShapeError):
            ConvSpec.same(3, 8, kernel=2)
        with self.assertRaises(ShapeError):
            ConvSpec(3, 8, kernel=3, atrous_rate=4).output_size(5, 5)


class TestConv2d(unittest.TestCase):
    def test_hand_countable(self):
        """Ones kernel over ones input counts the valid taps."""
        x = Tensor.full((1, 1, 3, 3), 1.0)
        weights = numpy.ones((1, 1, 3, 3))
        spec = ConvSpec(1, 1, kernel=3, padding=1)
        expected = [[4, 6, 4], [6, 9, 6], [4, 6, 4]]

        for path in PATHS:
            out = conv2d(x, weights, spec=spec, path=path)
            self.assertEqual(out.array[0, 0].tolist(), expected)

    def test_identity(self):
        """A unit 1x1 kernel reproduces the input."""
        x = seeded_fill((1, 1, 5, 7), 0, Uniform(1.0))
        weights = numpy.ones((1, 1, 1, 1))

        for path in PATHS:
            for rate in (1, 3):
                spec = ConvSpec(1, 1, kernel=1, atrous_rate=rate)
                self.assertEqual(conv2d(x, weights, spec=spec, path=path), x)

    def test_bias(self):
        """Zero weights output the bias."""
        x = seeded_fill((1, 2, 4, 4), 0, Uniform(1.0))
        spec = ConvSpec.same(2, 3)

        for path in PATHS:
            out = conv2d(x, numpy.zeros(spec.weight_shape), [1, 2, 3],
                         spec=spec, path=path)
            self.assertTrue((out.array[0, 2] == 3).all())

    def test_atrous_sampling(self):
        """A rate 2 kernel skips the in-between samples."""
        x = Tensor(numpy.arange(25, dtype=numpy.float32).reshape(1, 1, 5, 5))
        weights = numpy.ones((1, 1, 3, 3))
        spec = ConvSpec(1, 1, kernel=3, atrous_rate=2)

        for path in PATHS:
            out = conv2d(x, weights, spec=spec, path=path)
            self.assertEqual(out.shape, (1, 1, 1, 1))
            self.assertEqual(out.array[0, 0, 0, 0],
                             sum((0, 2, 4, 10, 12, 14, 20, 22, 24)))

    def test_paths_agree(self):
        """Naive and optimized convolutions agree on random cases."""
        specs = (ConvSpec(4, 6, kernel=3, atrous_rate=2, padding=2),
                 ConvSpec(4, 8, kernel=3, stride=2, padding=1),
                 ConvSpec(6, 6, kernel=3, atrous_rate=3, padding=3, groups=6),
                 ConvSpec(6, 6, kernel=3, stride=2, padding=1, groups=6),
                 ConvSpec(4, 4, kernel=3, padding=1, groups=2),
                 ConvSpec(4, 5, kernel=1),
                 ConvSpec(3, 4, kernel=7, stride=2, padding=3))

        for index, spec in enumerate(specs):
            x = seeded_fill((1, spec.in_channels, 9, 8), index, Uniform(1.0))
            weights = seeded_array(spec.weight_shape, index, Uniform(0.5),
                                   stream=1)
            bias = seeded_array((spec.out_channels, ), index, Uniform(0.5),
                                stream=2)

            naive = conv2d(x, weights, bias, spec, path=KernelPath.NAIVE)
            optimized = conv2d(x, weights, bias, spec,
                               path=KernelPath.OPTIMIZED)

            self.assertEqual(naive.shape, optimized.shape)
            self.assertLessEqual(relative_error(optimized, naive), 1e-5)

    def test_linearity(self):
        """Convolution is linear in the input and in the weights."""
        spec = ConvSpec.same(3, 4, atrous_rate=2, stride=2)
        first = seeded_fill((1, 3, 9, 10), 5, Uniform(1.0))
        second = seeded_fill((1, 3, 9, 10), 5, Uniform(1.0), stream=1)
        weights = seeded_array(spec.weight_shape, 5, Uniform(0.5), stream=2)
        others = seeded_array(spec.weight_shape, 5, Uniform(0.5), stream=3)

        for path in PATHS:
            combined = conv2d(Tensor(2.0 * first.array - 0.5 * second.array),
                              weights, spec=spec, path=path)
            numpy.testing.assert_allclose(
                combined.array,
                2.0 * conv2d(first, weights, spec=spec, path=path).array -
                0.5 * conv2d(second, weights, spec=spec, path=path).array,
                rtol=1e-5, atol=1e-5)

            combined = conv2d(first, 3.0 * weights + others, spec=spec,
                              path=path)
            numpy.testing.assert_allclose(
                combined.array,
                3.0 * conv2d(first, weights, spec=spec, path=path).array +
                conv2d(first, others, spec=spec, path=path).array,
                rtol=1e-5, atol=1e-5)

    def test_translation(self):
        """Shifted inputs shift the output away from the borders."""
        for rate in (1, 2, 3):
            spec = ConvSpec.same(2, 3, atrous_rate=rate)
            pad = spec.padding
            x = seeded_fill((1, 2, 20, 18), rate, Uniform(1.0))
            weights = seeded_array(spec.weight_shape, rate, Uniform(0.5),
                                   stream=1)
            shifted = numpy.zeros_like(x.array)
            shifted[:, :, 3:, 2:] = x.array[:, :, :-3, :-2]

            out = conv2d(x, weights, spec=spec).array
            moved = conv2d(Tensor(shifted), weights, spec=spec).array

            numpy.testing.assert_allclose(moved[:, :, 3 + pad:20 - pad,
                                                2 + pad:18 - pad],
                                          out[:, :, pad:17 - pad,
                                              pad:16 - pad],
                                          rtol=1e-5, atol=1e-5)

    def test_reference_oracle(self):
        """Both paths match the pure Python loops on random cases."""
        from atrousnet import reference

        generator = numpy.random.default_rng(11)

        for _ in range(100):
            rate = int(generator.choice((1, 2, 3, 4)))
            stride = int(generator.integers(1, 3))
            channels = int(generator.integers(1, 5))
            groups = channels if generator.integers(0, 2) else 1
            out_channels = channels if groups > 1 else \
                int(generator.integers(1, 5))
            spec = ConvSpec.same(channels, out_channels, atrous_rate=rate,
                                 stride=stride, groups=groups)
            height, width = (int(v) for v in generator.integers(3, 13, 2))
            x = Tensor(generator.standard_normal((1, channels, height,
                                                  width)))
            weights = generator.standard_normal(spec.weight_shape)
            bias = generator.standard_normal(out_channels)

            expected = Tensor(reference.conv2d(
                x.array, weights.astype(numpy.float32),
                bias.astype(numpy.float32), stride, rate, spec.padding,
                groups, *spec.output_size(height, width)))

            for path in PATHS:
                out = conv2d(x, weights, bias, spec, path=path)
                self.assertLessEqual(relative_error(out, expected), 1e-5,
                                     msg=repr(spec))

    def test_row_blocks(self):
        """Small im2col budgets only change the blocking."""
        x = seeded_fill((1, 4, 8, 8), 3, Uniform(1.0))
        spec = ConvSpec.same(4, 4, atrous_rate=2)
        weights = seeded_array(spec.weight_shape, 3, Uniform(0.5), stream=1)

        whole = conv2d(x, weights, spec=spec)
        blocked = conv2d(x, weights, spec=spec, budget=1)

        self.assertLessEqual(relative_error(blocked, whole), 1e-6)

    def test_errors(self):
        """Mismatching inputs, weights and biases are rejected."""
        x = Tensor.zeros((1, 3, 4, 4))
        spec = ConvSpec.same(3, 2)

        with self.assertRaises(ShapeError):
            conv2d(Tensor.zeros((1, 2, 4, 4)), numpy.zeros((2, 3, 3, 3)),
                   spec=spec)
        with self.assertRaises(ShapeError):
            conv2d(x, numpy.zeros((2, 3, 1, 1)), spec=spec)
        with self.assertRaises(ShapeError):
            conv2d(x, numpy.zeros((2, 3, 3, 3)), [1.0], spec=spec)


class TestBatchNorm(unittest.TestCase):
    def test_identity(self):
        """Unit statistics without epsilon leave the input unchanged."""
        x = seeded_fill((1, 3, 4, 4), 0, Uniform(1.0))
        params = BatchNormParams.identity(3, epsilon=0.0)

        self.assertEqual(batchnorm_inference(x, params), x)

    def test_constant_mean(self):
        """A channel equal to its mean maps to beta."""
        x = Tensor.full((1, 2, 3, 3), 2.0)
        params = BatchNormParams([3, 3], [0.5, -1], [2, 2], [4, 4])

        out = batchnorm_inference(x, params)

        self.assertTrue((out.array[0, 0] == 0.5).all())
        self.assertTrue((out.array[0, 1] == -1).all())

    def test_formula(self):
        """Output matches the normalization formula."""
        params = BatchNormParams([2.0], [1.0], [0.5], [3.0], epsilon=1.0)

        out = batchnorm_inference(column([2.5]), params)

        self.assertAlmostEqual(float(out.array[0, 0, 0, 0]), 3.0, places=6)

    def test_errors(self):
        """Negative variance and channel mismatches are rejected."""
        with self.assertRaises(ShapeError):
            BatchNormParams([1], [0], [0], [-1])
        with self.assertRaises(ShapeError):
            BatchNormParams([1], [0], [0], [0], epsilon=0.0)
        with self.assertRaises(ShapeError):
            BatchNormParams([1, 1], [0], [0], [1])
        with self.assertRaises(ShapeError):
            batchnorm_inference(Tensor.zeros((1, 2, 2, 2)),
                                BatchNormParams.identity(3))


class TestFoldBatchNorm(unittest.TestCase):
    def test_identity(self):
        """Unit normalization leaves the convolution unchanged."""
        epsilon = 1e-3
        weights = seeded_array((4, 3, 3, 3), 0, Uniform(1.0))
        bias = seeded_array((4, ), 0, Uniform(1.0), stream=1)
        params = BatchNormParams(numpy.ones(4), numpy.zeros(4),
                                 numpy.zeros(4), numpy.full(4, 1 - epsilon),
                                 epsilon)

        folded_weights, folded_bias = fold_batchnorm(weights, bias, params)

        numpy.testing.assert_allclose(folded_weights, weights, rtol=1e-6)
        numpy.testing.assert_allclose(folded_bias, bias, rtol=1e-6)

    def test_zero_weights(self):
        """Zero weights fold to the normalized bias."""
        params = BatchNormParams([2.0, 1.0], [0.5, -0.5], [1.0, 2.0],
                                 [4.0, 1.0], epsilon=0.0)

        weights, bias = fold_batchnorm(numpy.zeros((2, 1, 3, 3)), None,
                                       params)

        self.assertFalse(weights.any())
        numpy.testing.assert_allclose(bias, [0.5 - 2.0 * 1.0 / 2.0,
                                             -0.5 - 2.0], rtol=1e-6)

    def test_equivalence(self):
        """Folded convolutions match convolution followed by batch norm."""
        spec = ConvSpec.same(4, 6, atrous_rate=2)
        x = seeded_fill((1, 4, 8, 8), 1, Uniform(1.0))
        weights = seeded_array(spec.weight_shape, 1, Uniform(0.5), stream=1)
        params = BatchNormParams(
            seeded_array((6, ), 1, Uniform(1.0), stream=2) + 1.5,
            seeded_array((6, ), 1, Uniform(1.0), stream=3),
            seeded_array((6, ), 1, Uniform(1.0), stream=4),
            seeded_array((6, ), 1, Uniform(1.0), stream=5) + 1.5)

        expected = batchnorm_inference(conv2d(x, weights, spec=spec), params)
        folded = conv2d(x, *fold_batchnorm(weights, None, params), spec=spec)

        self.assertLessEqual(relative_error(folded, expected), 1e-5)

    def test_errors(self):
        """Channel counts must match."""
        with self.assertRaises(ShapeError):
            fold_batchnorm(numpy.zeros((3, 1, 1, 1)), None,
                           BatchNormParams.identity(2))


class TestActivation(unittest.TestCase):
    def test_relu6(self):
        """ReLU6 clips to [0, 6]."""
        out = activation(column([7, -1, 3]), ActivationKind.RELU6)

        self.assertEqual(out.data.tolist(), [6, 0, 3])

    def test_relu(self):
        """ReLU zeroes negative values."""
        out = activation(column([7, -1, 0]), ActivationKind.RELU)

        self.assertEqual(out.data.tolist(), [7, 0, 0])

    def test_leaky_relu(self):
        """Leaky ReLU scales negative values by the slope."""
        out = activation(column([-2, 2]), ActivationKind.LEAKY_RELU)

        self.assertAlmostEqual(float(out.data[0]), -0.02, places=7)
        self.assertEqual(float(out.data[1]), 2.0)

        with self.assertRaises(ConfigurationError):
            activation(column([1]), ActivationKind.LEAKY_RELU, slope=1.5)

    def test_unknown_activation(self):
        """Unknown activations are usage errors."""
        with self.assertRaises(ConfigurationError) as context:
            activation(column([1]), 42)

        self.assertEqual(exit_code(context.exception), ExitCode.USAGE)

    def test_sigmoid(self):
        """Sigmoid is 0.5 at the origin and saturates without overflow."""
        with numpy.errstate(over='raise', invalid='raise'):
            out = activation(column([0, 1000, -1000]), ActivationKind.SIGMOID)

        self.assertEqual(float(out.data[0]), 0.5)
        self.assertEqual(float(out.data[1]), 1.0)
        self.assertEqual(float(out.data[2]), 0.0)


class TestPool(unittest.TestCase):
    def test_output_size(self):
        """Same padded unit stride pools keep the resolution."""
        for kernel in (3, 5, 7):
            self.assertEqual(pool_output_size(56, 112, kernel, 1, kernel // 2),
                             (56, 112))
        self.assertEqual(pool_output_size(224, 448, 3, 2, 1), (112, 224))

        with self.assertRaises(ShapeError):
            pool_output_size(8, 8, 3, 1, 2)

    def test_constant(self):
        """Average pooling of a constant is the constant."""
        x = Tensor.full((1, 2, 7, 9), 3.5)

        for path in PATHS:
            for kernel, stride, padding in ((3, 1, 1), (5, 2, 2), (7, 1, 3)):
                out = pool2d(x, PoolKind.AVG, kernel, stride, padding, path)
                self.assertTrue((out.array == 3.5).all())

    def test_max(self):
        """Max pooling finds the single maximum."""
        data = numpy.zeros((1, 1, 3, 3), dtype=numpy.float32)
        data[0, 0, 1, 2] = 5.0

        for path in PATHS:
            out = pool2d(Tensor(data), PoolKind.MAX, 3, 1, 0, path)
            self.assertEqual(out.array[0, 0, 0, 0], 5.0)

    def test_max_padding(self):
        """Padding never wins a max pool of negative values."""
        x = Tensor.full((1, 1, 4, 4), -2.0)

        for path in PATHS:
            out = pool2d(x, PoolKind.MAX, 3, 2, 1, path)
            self.assertTrue((out.array == -2.0).all())

    def test_denominator(self):
        """Average pooling divides by the in-bounds window size."""
        data = numpy.arange(9, dtype=numpy.float32).reshape(1, 1, 3, 3)

        for path in PATHS:
            out = pool2d(Tensor(data), PoolKind.AVG, 3, 1, 1, path)
            self.assertAlmostEqual(float(out.array[0, 0, 0, 0]),
                                   (0 + 1 + 3 + 4) / 4, places=6)
            self.assertAlmostEqual(float(out.array[0, 0, 1, 1]), 4.0,
                                   places=6)
            self.assertAlmostEqual(float(out.array[0, 0, 0, 1]),
                                   (0 + 1 + 2 + 3 + 4 + 5) / 6, places=6)

    def test_paths_agree(self):
        """Naive and optimized pools agree on random inputs."""
        x = seeded_fill((1, 3, 9, 10), 4, Uniform(1.0))

        for kind in PoolKind:
            for kernel, stride, padding in ((3, 1, 1), (3, 2, 1), (5, 1, 2)):
                naive = pool2d(x, kind, kernel, stride, padding,
                               KernelPath.NAIVE)
                optimized = pool2d(x, kind, kernel, stride, padding,
                                   KernelPath.OPTIMIZED)
                self.assertLessEqual(relative_error(optimized, naive), 1e-6)

    def test_global_avg_pool(self):
        """Global pooling averages every channel."""
        x = Tensor(numpy.array([[1, 2], [3, 4]]).reshape(1, 1, 2, 2))

        self.assertEqual(global_avg_pool(x).array[0, 0, 0, 0], 2.5)
        self.assertEqual(global_avg_pool(Tensor.full((2, 3, 4, 5), 1.5)),
                         Tensor.full((2, 3, 1, 1), 1.5))


class TestBilinearResize(unittest.TestCase):
    def test_identity(self):
        """Resizing to the same size is exact."""
        x = seeded_fill((1, 2, 5, 6), 0, Uniform(1.0))

        for path in PATHS:
            self.assertEqual(bilinear_resize(x, 5, 6, path), x)

    def test_constant(self):
        """Constants stay constant at any size."""
        x = Tensor.full((1, 1, 3, 5), 0.25)

        for path in PATHS:
            for height, width in ((1, 1), (6, 10), (7, 4)):
                out = bilinear_resize(x, height, width, path)
                self.assertEqual(out, Tensor.full((1, 1, height, width), 0.25))

    def test_half_pixel(self):
        """Upsampling follows the half-pixel center formula."""
        x = Tensor(numpy.array([[0, 1], [2, 3]]).reshape(1, 1, 2, 2))

        def sample(i, j):
            y = min(max((i + 0.5) * 0.5 - 0.5, 0), 1)
            z = min(max((j + 0.5) * 0.5 - 0.5, 0), 1)
            return 2 * y + z

        expected = [[sample(i, j) for j in range(4)] for i in range(4)]

        for path in PATHS:
            out = bilinear_resize(x, 4, 4, path)
            numpy.testing.assert_allclose(out.array[0, 0], expected,
                                          rtol=0, atol=1e-6)

    def test_paths_agree(self):
        """Naive and optimized resizes agree."""
        x = seeded_fill((1, 3, 7, 14), 5, Uniform(1.0))

        for height, width in ((14, 28), (56, 112), (3, 5)):
            naive = bilinear_resize(x, height, width, KernelPath.NAIVE)
            optimized = bilinear_resize(x, height, width,
                                        KernelPath.OPTIMIZED)
            self.assertLessEqual(relative_error(optimized, naive), 1e-6)

    def test_errors(self):
        """Empty targets are rejected."""
        with self.assertRaises(ShapeError):
            bilinear_resize(Tensor.zeros((1, 1, 2, 2)), 0, 2)


class TestLinear(unittest.TestCase):
    def test_identity(self):
        """Identity weights reproduce the input."""
        x = numpy.array([1.0, -2.0, 3.0])

        self.assertEqual(linear(x, numpy.eye(3)).tolist(), [1, -2, 3])

    def test_bias(self):
        """Zero input outputs the bias."""
        self.assertEqual(linear(numpy.zeros(2), numpy.ones((3, 2)),
                                [1, 2, 3]).tolist(), [1, 2, 3])

    def test_dot_product(self):
        """Outputs are the dot products of the weight rows."""
        x = seeded_array((2, 5), 0, Uniform(1.0))
        weights = seeded_array((4, 5), 0, Uniform(1.0), stream=1)

        out = linear(x, weights)

        for n in range(2):
            for o in range(4):
                expected = sum(float(a) * float(b)
                               for a, b in zip(x[n], weights[o]))
                self.assertAlmostEqual(float(out[n, o]), expected, places=5)

    def test_errors(self):
        """Dimension mismatches are rejected."""
        with self.assertRaises(ShapeError):
            linear(numpy.zeros(3), numpy.zeros((2, 4)))
        with self.assertRaises(ShapeError):
            linear(numpy.zeros(4), numpy.zeros((2, 4)), [1, 2, 3])


class TestNative(unittest.TestCase):
    @unittest.skipUnless(kernels.native_available(),
                         "native kernels not compiled")
    def test_reference_agrees(self):
        """Compiled and pure Python naive kernels agree."""
        from atrousnet import reference

        spec = ConvSpec(4, 6, kernel=3, atrous_rate=2, padding=2, groups=2)
        x = seeded_fill((1, 4, 7, 6), 9, Uniform(1.0))
        weights = seeded_array(spec.weight_shape, 9, Uniform(0.5), stream=1)

        native = conv2d(x, weights, spec=spec, path=KernelPath.NAIVE)
        python = reference.conv2d(x.array, weights, None, spec.stride,
                                  spec.atrous_rate, spec.padding, spec.groups,
                                  *spec.output_size(7, 6))

        self.assertLessEqual(relative_error(native, Tensor(python)), 1e-6)
