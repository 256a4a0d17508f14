import os
import time
import unittest

from atrousnet import kernels, network
from atrousnet import Settings, KernelPath
from atrousnet.tensor import Uniform, seeded_fill


SLOW = os.environ.get('ATROUSNET_SLOW_TESTS') == '1'


@unittest.skipUnless(SLOW and kernels.native_available(),
                     "set ATROUSNET_SLOW_TESTS=1 with compiled kernels")
class TestEndToEnd(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.graph = network.build_network()
        cls.weights = network.random_init(cls.graph, 42)
        cls.image = seeded_fill((1, 3, 224, 448), 7, Uniform(1.0))

    def forward(self, path):
        settings = Settings(kernel_path=path)
        start = time.perf_counter()
        logits = network.forward(self.graph, self.weights, self.image,
                                 settings)

        return logits, time.perf_counter() - start

    def test_naive_pipeline(self):
        """The naive path is deterministic, finite and fast enough."""
        first, elapsed = self.forward(KernelPath.NAIVE)
        second, _ = self.forward(KernelPath.NAIVE)
        labels = network.predict_labels(first)

        self.assertEqual(first.shape, (1, 19, 224, 448))
        self.assertTrue(first.isfinite())
        self.assertEqual(first, second)
        self.assertTrue(((labels >= 0) & (labels < 19)).all())
        self.assertLessEqual(elapsed, 300)

    def test_speedup(self):
        """The optimized path is at least five times faster."""
        self.forward(KernelPath.OPTIMIZED)
        _, naive = self.forward(KernelPath.NAIVE)
        _, optimized = self.forward(KernelPath.OPTIMIZED)

        self.assertGreaterEqual(naive / optimized, 5)
