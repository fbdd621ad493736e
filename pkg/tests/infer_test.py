import unittest

import numpy as np

from fixtures import (
    random_graph,
    running_example,
    running_example_partition,
    running_example_scores,
    two_triangles,
)
from blockpart.errors import InputError, StreamAborted
from blockpart.graph import Partition, connected_components, from_edge_list
from blockpart.infer import (
    derive_partition,
    generalize_and_refine,
    partition_from_scores,
    scratch_partition,
    stream_partition,
)
from blockpart.model import ModelConfig, init_checkpoint
from blockpart.refine import RefinerConfig, refine_from_scratch
from blockpart.sbmgen import GeneratorParams, StreamStep, generate, snowball_split


def small_ckpt(seed=0):
    return init_checkpoint(ModelConfig(k=4), seed=seed)


class TestPartitionFromScores(unittest.TestCase):
    def test_all_ones_gives_components(self):
        g = from_edge_list([(0, 1), (1, 2), (3, 4)], n_hint=6)
        p = derive_partition(g, small_ckpt(), scores=np.ones(3))
        self.assertEqual(p, connected_components(g))
        self.assertEqual(p.k, 3)

    def test_all_zeros_gives_singletons(self):
        g = two_triangles()
        self.assertEqual(derive_partition(g, small_ckpt(), scores=np.zeros(6)), Partition.singletons(6))

    def test_threshold_is_strict(self):
        g = two_triangles()
        self.assertEqual(derive_partition(g, small_ckpt(), scores=np.full(6, 0.5)), Partition.singletons(6))
        self.assertEqual(derive_partition(g, small_ckpt(), scores=np.full(6, 0.51)).k, 2)

    def test_running_example(self):
        g = running_example()
        p = derive_partition(g, small_ckpt(), scores=running_example_scores(g))
        self.assertEqual(p, running_example_partition())

    def test_higher_threshold_refines(self):
        rng = np.random.default_rng(29)
        for _ in range(20):
            g = random_graph(rng, int(rng.integers(5, 80)), 0.1, min_edges=1)
            scores = rng.random(g.num_edges)
            lo, hi = sorted(rng.random(2))
            fine = partition_from_scores(g, g.edges(), scores, hi)
            coarse = partition_from_scores(g, g.edges(), scores, lo)
            self.assertTrue(fine.is_refinement_of(coarse))

    def test_model_scores(self):
        g = running_example()
        p = derive_partition(g, small_ckpt(1))
        self.assertEqual(p.n, g.n)

    def test_errors(self):
        g = two_triangles()
        with self.assertRaises(InputError):
            partition_from_scores(g, g.edges(), np.ones(5))
        with self.assertRaises(InputError):
            derive_partition(from_edge_list([], n_hint=3), small_ckpt())


class TestGeneralizeAndRefine(unittest.TestCase):
    def test_report_fields(self):
        g = running_example()
        final, report = generalize_and_refine(g, small_ckpt(), RefinerConfig(), truth=running_example_partition(),
                                              graph_id="running")
        self.assertEqual((report.n, report.m), (11, 17))
        self.assertLessEqual(report.n_super, report.n)
        self.assertLessEqual(report.k_final, report.n_super)
        self.assertEqual(report.k_final, final.k)
        self.assertLessEqual(report.phase_sum, report.total_s + 1e-9)
        self.assertGreaterEqual(report.modularity_final, report.modularity_init - 1e-12)
        self.assertEqual(report.metrics.k_true, 4)
        self.assertEqual((report.arm, report.phase, report.graph_id), ("pipeline", "static", "running"))
        self.assertGreater(report.peak_rss_mb, 0.0)

    def test_scores_hook_skips_model_timing(self):
        g = running_example()
        final, report = generalize_and_refine(g, small_ckpt(), RefinerConfig(), scores=running_example_scores(g))
        self.assertEqual((report.feat_s, report.ffp_s), (0.0, 0.0))
        self.assertEqual(report.n_super, 4)
        self.assertTrue(running_example_partition().is_refinement_of(final))
        self.assertIsNone(report.metrics)

    def test_zero_scores_match_scratch(self):
        rng = np.random.default_rng(31)
        for seed in range(3):
            g = random_graph(rng, 120, 0.05, min_edges=1)
            cfg = RefinerConfig(seed=seed)
            final, report = generalize_and_refine(g, small_ckpt(), cfg, scores=np.zeros(g.num_edges))
            self.assertEqual(report.n_super, g.n)
            self.assertEqual(final, refine_from_scratch(g, cfg))

    def test_checkpoint_untouched(self):
        ckpt = small_ckpt(2)
        digest = ckpt.digest()
        generalize_and_refine(running_example(), ckpt, RefinerConfig())
        self.assertEqual(ckpt.digest(), digest)

    def test_edgeless_graph(self):
        with self.assertRaises(InputError):
            generalize_and_refine(from_edge_list([], n_hint=4), small_ckpt(), RefinerConfig())

    def test_scratch_arm(self):
        g = running_example()
        final, report = scratch_partition(g, RefinerConfig(), truth=running_example_partition())
        self.assertEqual(report.arm, "scratch")
        self.assertEqual(report.n_super, g.n)
        self.assertEqual(report.total_s, report.refine_s)
        self.assertEqual(report.k_final, final.k)
        self.assertIsNotNone(report.metrics)


class TestStreamPartition(unittest.TestCase):
    def test_last_step_matches_static_run(self):
        g, truth = generate(GeneratorParams(n=400, avg_degree=10.0, seed=8))
        ckpt = small_ckpt(3)
        cfg = RefinerConfig(seed=4)
        _, steps = snowball_split(g, truth, 4, seed=5)
        results = stream_partition(steps, ckpt, cfg)
        self.assertEqual(len(results), 4)
        self.assertEqual([r.n for _, r in results], [s.graph.n for s in steps])
        self.assertEqual([r.phase for _, r in results], [f"stream-step {t}" for t in range(1, 5)])
        static, _ = generalize_and_refine(g, ckpt, cfg)
        self.assertEqual(results[-1][0], static)

    def test_failed_step_keeps_earlier_results(self):
        g = running_example()
        steps = [
            StreamStep(t=1, nodes=np.arange(g.n), graph=g, truth=running_example_partition()),
            StreamStep(t=2, nodes=np.arange(3), graph=from_edge_list([], n_hint=3)),
        ]
        with self.assertRaises(StreamAborted) as ctx:
            stream_partition(steps, small_ckpt(), RefinerConfig())
        self.assertEqual(ctx.exception.step, 2)
        self.assertEqual(len(ctx.exception.partial), 1)


if __name__ == '__main__':
    unittest.main()
