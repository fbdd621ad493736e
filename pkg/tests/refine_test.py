import shutil
import unittest

import numpy as np

from fixtures import (
    best_modularity,
    random_graph,
    random_partition,
    running_example,
    running_example_partition,
    two_triangles,
)
from blockpart.errors import DomainError, InputError, RefinerError, RefinerTimeout
from blockpart.graph import Partition, coarsen, from_edge_list
from blockpart.metrics import ari, modularity
from blockpart.refine import RefinerConfig, refine_from_coarse, refine_from_scratch, refine_weighted
from blockpart.sbmgen import GeneratorParams, generate

TWO_TRIANGLE_TRUTH = Partition(np.array([0, 0, 0, 1, 1, 1]), 2)


class TestRefinerConfig(unittest.TestCase):
    def test_validation(self):
        with self.assertRaises(InputError):
            RefinerConfig(max_sweeps=0)
        with self.assertRaises(InputError):
            RefinerConfig(min_gain=-1.0)
        with self.assertRaises(InputError):
            RefinerConfig(kind="metis")
        with self.assertRaises(InputError):
            RefinerConfig(kind="external")
        with self.assertRaises(InputError):
            RefinerConfig(timeout_s=0)
        self.assertEqual(RefinerConfig(min_gain=float("inf")).min_gain, float("inf"))


class TestBuiltinRefiner(unittest.TestCase):
    def test_optimal_partition_is_kept(self):
        result = refine_weighted(two_triangles(), TWO_TRIANGLE_TRUTH, RefinerConfig())
        self.assertEqual(result, TWO_TRIANGLE_TRUTH)

    def test_singletons_converge_to_triangles(self):
        result = refine_from_scratch(two_triangles(), RefinerConfig(seed=3))
        self.assertEqual(result.k, 2)
        self.assertEqual(ari(result, TWO_TRIANGLE_TRUTH), 1.0)
        self.assertAlmostEqual(modularity(two_triangles(), result), 0.5)

    def test_infinite_min_gain_returns_init(self):
        init = Partition.singletons(6)
        self.assertIs(refine_weighted(two_triangles(), init, RefinerConfig(min_gain=float("inf"))), init)

    def test_nodes_leave_their_init_block(self):
        init = Partition(np.array([0, 0, 1, 1, 1, 1]), 2)
        result = refine_weighted(two_triangles(), init, RefinerConfig(seed=5))
        self.assertEqual(result, TWO_TRIANGLE_TRUTH)
        self.assertFalse(init.is_refinement_of(result))

    def test_single_block_cannot_split(self):
        result = refine_weighted(two_triangles(), Partition.single_block(6), RefinerConfig())
        self.assertEqual(result.k, 1)

    def test_edgeless_graph(self):
        with self.assertRaises(DomainError):
            refine_from_scratch(from_edge_list([], n_hint=3), RefinerConfig())

    def test_size_mismatch(self):
        with self.assertRaises(InputError):
            refine_weighted(two_triangles(), Partition.singletons(5), RefinerConfig())

    def test_never_lowers_modularity(self):
        rng = np.random.default_rng(13)
        for trial in range(30):
            n = int(rng.integers(5, 120))
            g = random_graph(rng, n, min(1.0, 5.0 / n), min_edges=1)
            init = random_partition(rng, n, int(rng.integers(1, n + 1)))
            result = refine_weighted(g, init, RefinerConfig(seed=trial))
            self.assertGreaterEqual(modularity(g, result), modularity(g, init) - 1e-12)

    def test_near_optimal_on_tiny_graphs(self):
        rng = np.random.default_rng(17)
        ratios = []
        while len(ratios) < 30:
            n = int(rng.integers(5, 9))
            g = random_graph(rng, n, 0.35, min_edges=3)
            best = best_modularity(g)
            if best <= 1e-9:
                continue
            found = modularity(g, refine_from_scratch(g, RefinerConfig(seed=len(ratios))))
            self.assertLessEqual(found, best + 1e-12)
            ratios.append(found / best)
        self.assertGreaterEqual(float(np.mean(ratios)), 0.95)

    def test_seeded(self):
        rng = np.random.default_rng(19)
        g = random_graph(rng, 200, 0.03, min_edges=1)
        a = refine_from_scratch(g, RefinerConfig(seed=5))
        b = refine_from_scratch(g, RefinerConfig(seed=5))
        self.assertEqual(a, b)

    def test_weighted_self_loops_respected(self):
        sg = coarsen(running_example(), running_example_partition())
        result = refine_from_scratch(sg.coarse, RefinerConfig())
        self.assertGreaterEqual(modularity(sg.coarse, result),
                                modularity(sg.coarse, Partition.singletons(4)) - 1e-12)


class TestRefineFromCoarse(unittest.TestCase):
    def test_running_example(self):
        g = running_example()
        init = running_example_partition()
        result = refine_from_coarse(g, init, RefinerConfig())
        self.assertTrue(init.is_refinement_of(result))
        self.assertGreaterEqual(modularity(g, result), modularity(g, init) - 1e-12)

    def test_single_block_init(self):
        g = running_example()
        result = refine_from_coarse(g, Partition.single_block(g.n), RefinerConfig())
        self.assertEqual(result.k, 1)

    def test_singleton_init_matches_scratch(self):
        rng = np.random.default_rng(23)
        for seed in range(5):
            g = random_graph(rng, 150, 0.04, min_edges=1)
            cfg = RefinerConfig(seed=seed)
            self.assertEqual(refine_from_coarse(g, Partition.singletons(g.n), cfg), refine_from_scratch(g, cfg))

    def test_truth_init_is_kept_on_clear_structure(self):
        g, truth = generate(GeneratorParams(n=1000, within_between_ratio=5.0, size_heterogeneity=1.5,
                                            avg_degree=20.0, seed=2))
        result = refine_from_coarse(g, truth, RefinerConfig(seed=1))
        self.assertGreaterEqual(ari(result, truth), 0.99)


@unittest.skipUnless(shutil.which("cp") and shutil.which("false") and shutil.which("sleep"),
                     "POSIX utilities not available")
class TestExternalRefiner(unittest.TestCase):
    def test_copying_refiner_returns_init(self):
        cfg = RefinerConfig(kind="external", external_cmd_template="cp {init} {out}")
        result = refine_weighted(two_triangles(), TWO_TRIANGLE_TRUTH, cfg)
        self.assertEqual(result, TWO_TRIANGLE_TRUTH)

    def test_coarse_path_through_external_refiner(self):
        cfg = RefinerConfig(kind="external", external_cmd_template="cp {init} {out}")
        g = running_example()
        self.assertEqual(refine_from_coarse(g, running_example_partition(), cfg), running_example_partition())

    def test_failing_refiner(self):
        cfg = RefinerConfig(kind="external", external_cmd_template="false {graph}")
        with self.assertRaises(RefinerError) as ctx:
            refine_weighted(two_triangles(), TWO_TRIANGLE_TRUTH, cfg)
        self.assertNotEqual(ctx.exception.returncode, 0)

    def test_missing_output(self):
        cfg = RefinerConfig(kind="external", external_cmd_template="cp {init} {graph}")
        with self.assertRaises(RefinerError):
            refine_weighted(two_triangles(), TWO_TRIANGLE_TRUTH, cfg)

    def test_missing_executable(self):
        cfg = RefinerConfig(kind="external", external_cmd_template="blockpart-no-such-refiner {graph}")
        with self.assertRaises(RefinerError):
            refine_weighted(two_triangles(), TWO_TRIANGLE_TRUTH, cfg)

    def test_timeout(self):
        cfg = RefinerConfig(kind="external", external_cmd_template="sleep 5", timeout_s=0.2)
        with self.assertRaises(RefinerTimeout):
            refine_weighted(two_triangles(), TWO_TRIANGLE_TRUTH, cfg)


if __name__ == '__main__':
    unittest.main()
