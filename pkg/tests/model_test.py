import os
import struct
import tempfile
import unittest

import numpy as np

from fixtures import dense_projection, random_graph, running_example, triangle, two_triangles
from blockpart.errors import CheckpointError, CheckpointVersionError, InputError
from blockpart.graph import from_edge_list
from blockpart.model import (
    Embeddings,
    ModelCheckpoint,
    ModelConfig,
    classify_pairs,
    extract_features,
    forward_edges,
    init_checkpoint,
    load_checkpoint,
    mlp_forward,
    pair_terms,
    param_shapes,
    projection_matrix,
    propagate,
    propagation_matrix,
    random_projection,
    save_checkpoint,
    tau_scale,
)


def small_ckpt(k=4, seed=0, **overrides):
    return init_checkpoint(ModelConfig(k=k, **overrides), seed=seed)


class TestRandomProjection(unittest.TestCase):
    def test_matches_dense_modularity_product(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = int(rng.integers(2, 50))
            g = random_graph(rng, n, 0.2, min_edges=1)
            omega = projection_matrix(n, 5, int(rng.integers(0, 1000)))
            np.testing.assert_allclose(random_projection(g, 5, 0, omega=omega), dense_projection(g, omega),
                                       atol=1e-9, rtol=0)

    def test_columns_sum_to_zero(self):
        x = random_projection(triangle(), 3, seed=2)
        np.testing.assert_allclose(x.sum(axis=0), 0.0, atol=1e-12)

    def test_zero_omega(self):
        g = two_triangles()
        x = random_projection(g, 4, 0, omega=np.zeros((6, 4)))
        self.assertTrue((x == 0).all())

    def test_seeded(self):
        g = running_example()
        np.testing.assert_array_equal(random_projection(g, 4, 9), random_projection(g, 4, 9))

    def test_errors(self):
        with self.assertRaises(InputError):
            random_projection(from_edge_list([], n_hint=3), 2, 0)
        with self.assertRaises(InputError):
            random_projection(triangle(), 2, 0, omega=np.ones((3, 3)))
        with self.assertRaises(InputError):
            random_projection(triangle(), 2, 0, precision="float16")


class TestMlp(unittest.TestCase):
    def test_identity_layers(self):
        params = {"f.0.weight": np.eye(3), "f.0.bias": np.zeros(3),
                  "f.1.weight": np.eye(3), "f.1.bias": np.zeros(3)}
        x = np.array([[1.0, -2.0, 3.0]])
        out, _ = mlp_forward(x, params, "f", 2, activation="identity")
        np.testing.assert_array_equal(out, x)
        out, _ = mlp_forward(x, params, "f", 2, activation="relu")
        np.testing.assert_array_equal(out, [[1.0, 0.0, 3.0]])

    def test_zero_weights_give_last_bias(self):
        params = {"f.0.weight": np.zeros((2, 2)), "f.0.bias": np.ones(2),
                  "f.1.weight": np.zeros((2, 2)), "f.1.bias": np.array([-1.0, 2.0])}
        out, inputs = mlp_forward(np.ones((4, 2)), params, "f", 2, keep=True)
        np.testing.assert_array_equal(out, np.tile([-1.0, 2.0], (4, 1)))
        self.assertEqual(len(inputs), 2)
        np.testing.assert_array_equal(inputs[1], np.ones((4, 2)))

    def test_last_layer_is_linear(self):
        params = {"f.0.weight": -np.eye(2), "f.0.bias": np.zeros(2)}
        out, _ = mlp_forward(np.ones((1, 2)), params, "f", 1)
        np.testing.assert_array_equal(out, [[-1.0, -1.0]])


class TestPropagation(unittest.TestCase):
    def test_matrix_entries(self):
        prop = propagation_matrix(triangle()).toarray()
        np.testing.assert_allclose(prop, np.full((3, 3), 1.0 / 3.0))

    def test_isolated_node_keeps_self_weight(self):
        prop = propagation_matrix(from_edge_list([(0, 1)], n_hint=3)).toarray()
        self.assertEqual(prop[2, 2], 1.0)
        self.assertAlmostEqual(prop[0, 1], 0.5)

    def test_rows_unit_norm(self):
        rng = np.random.default_rng(3)
        g = running_example()
        emb = propagate(g, rng.standard_normal((g.n, 4)), 2)
        np.testing.assert_allclose(np.linalg.norm(emb.z, axis=1), 1.0)
        self.assertEqual(emb.n_zero, 0)

    def test_depth_zero_only_normalizes(self):
        x = np.array([[3.0, 4.0], [0.0, 2.0], [1.0, 0.0]])
        emb = propagate(triangle(), x, 0)
        np.testing.assert_allclose(emb.z, [[0.6, 0.8], [0.0, 1.0], [1.0, 0.0]])

    def test_triangle_rows_collapse(self):
        rng = np.random.default_rng(4)
        emb = propagate(triangle(), rng.standard_normal((3, 5)), 1)
        np.testing.assert_allclose(emb.z[0], emb.z[1])
        np.testing.assert_allclose(emb.z[0], emb.z[2])

    def test_zero_rows_flagged(self):
        g = from_edge_list([(0, 1)], n_hint=3)
        x = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
        emb = propagate(g, x, 2)
        np.testing.assert_array_equal(emb.zero_rows, [2])
        np.testing.assert_array_equal(emb.z[2], [0.0, 0.0])
        self.assertTrue(np.isfinite(emb.z).all())

    def test_errors(self):
        with self.assertRaises(InputError):
            propagate(triangle(), np.ones((3, 2)), -1)
        with self.assertRaises(InputError):
            propagate(triangle(), np.ones((4, 2)), 1)


class TestClassifyPairs(unittest.TestCase):
    def test_identical_embeddings_score_one(self):
        emb = Embeddings(z=np.tile([0.6, 0.8], (3, 1)))
        scores = classify_pairs(emb, [(0, 1), (1, 2)], small_ckpt(k=2))
        np.testing.assert_allclose(scores, 1.0)

    def test_orthogonal_with_fixed_tau(self):
        emb = Embeddings(z=np.eye(2))
        scores = classify_pairs(emb, [(0, 1)], small_ckpt(k=2), tau_override=1.0)
        self.assertAlmostEqual(float(scores[0]), np.exp(-2.0), places=12)
        self.assertAlmostEqual(float(scores[0]), 0.13534, places=5)

    def test_matches_closed_form(self):
        rng = np.random.default_rng(5)
        ckpt = small_ckpt(k=4, seed=3)
        z = rng.standard_normal((6, 4))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        pairs = np.array([(0, 1), (2, 5), (4, 3), (1, 0)])
        cfg = ckpt.config
        h_s, _ = mlp_forward(z, ckpt.params, "g_s", cfg.classifier_layers)
        h_d, _ = mlp_forward(z, ckpt.params, "g_d", cfg.classifier_layers)
        tau = np.log1p(np.exp(np.sum(h_s[pairs[:, 0]] * h_d[pairs[:, 1]], axis=1)))
        cos = np.sum(z[pairs[:, 0]] * z[pairs[:, 1]], axis=1)
        expected = np.exp(2 * tau * (cos - 1))
        np.testing.assert_allclose(classify_pairs(Embeddings(z=z), pairs, ckpt), expected, rtol=1e-12)

    def test_scores_in_unit_interval(self):
        rng = np.random.default_rng(6)
        z = rng.standard_normal((20, 4))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        pairs = rng.integers(0, 20, size=(100, 2))
        scores = classify_pairs(Embeddings(z=z), pairs, small_ckpt(k=4, seed=1))
        self.assertTrue(((scores >= 0) & (scores <= 1)).all())

    def test_calibrated_scale_multiplies_tau(self):
        rng = np.random.default_rng(8)
        z = rng.standard_normal((6, 4))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        emb = Embeddings(z=z)
        pairs = np.array([(0, 1), (2, 5), (4, 3)])
        ckpt = small_ckpt(k=4, seed=2)
        cos, tau = pair_terms(emb, pairs, ckpt)
        scaled = ckpt.replace_params({}, tau_scale=2.5)
        np.testing.assert_allclose(classify_pairs(emb, pairs, scaled),
                                   np.minimum(np.exp(5.0 * tau * (cos - 1.0)), 1.0), rtol=1e-12)
        np.testing.assert_allclose(classify_pairs(emb, pairs, ckpt), np.exp(2.0 * tau * (cos - 1.0)), rtol=1e-12)
        np.testing.assert_array_equal(classify_pairs(emb, pairs, scaled, tau_override=1.0),
                                      classify_pairs(emb, pairs, ckpt, tau_override=1.0))

    def test_invalid_scale(self):
        for bad in (0.0, -1.0, float("inf")):
            ckpt = small_ckpt(k=2).replace_params({}, tau_scale=bad)
            with self.assertRaises(CheckpointError):
                classify_pairs(Embeddings(z=np.eye(2)), [(0, 1)], ckpt)

    def test_scale_defaults_to_one_and_survives_bytes(self):
        ckpt = small_ckpt(k=2)
        self.assertEqual(tau_scale(ckpt), 1.0)
        scaled = ModelCheckpoint.from_bytes(ckpt.replace_params({}, tau_scale=0.25).to_bytes())
        self.assertEqual(tau_scale(scaled), 0.25)

    def test_out_of_range_pair(self):
        with self.assertRaises(InputError):
            classify_pairs(Embeddings(z=np.eye(2)), [(0, 2)], small_ckpt(k=2))


class TestForwardEdges(unittest.TestCase):
    def test_one_score_per_edge(self):
        g = running_example()
        out = forward_edges(g, small_ckpt(k=8, seed=2))
        np.testing.assert_array_equal(out.edges, g.edges())
        self.assertEqual(out.scores.shape, (17,))
        self.assertTrue(((out.scores >= 0) & (out.scores <= 1)).all())
        self.assertGreaterEqual(out.feat_s, 0.0)
        self.assertGreaterEqual(out.ffp_s, 0.0)

    def test_larger_scale_lowers_scores(self):
        g = running_example()
        ckpt = small_ckpt(k=8, seed=2)
        base = forward_edges(g, ckpt).scores
        sharper = forward_edges(g, ckpt.replace_params({}, tau_scale=3.0)).scores
        self.assertTrue((sharper <= base + 1e-12).all())
        below_one = (base < 1.0) & (base > 0.0)
        self.assertTrue((sharper[below_one] < base[below_one]).all())

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(7)
        g = random_graph(rng, 40, 0.15, min_edges=1)
        ckpt = small_ckpt(k=6, seed=4)
        perm = rng.permutation(g.n)
        edges = g.edges()
        g_perm = from_edge_list(perm[edges], n_hint=g.n)
        omega = projection_matrix(g.n, 6, 0)
        omega_perm = np.empty_like(omega)
        omega_perm[perm] = omega
        cfg = ckpt.config
        emb = propagate(g, extract_features(g, ckpt, omega=omega), cfg.propagation_depth)
        emb_perm = propagate(g_perm, extract_features(g_perm, ckpt, omega=omega_perm), cfg.propagation_depth)
        np.testing.assert_allclose(classify_pairs(emb_perm, perm[edges], ckpt),
                                   classify_pairs(emb, edges, ckpt), atol=1e-10)

    def test_float32_close_to_float64(self):
        g = running_example()
        ckpt = small_ckpt(k=8, seed=5)
        full = forward_edges(g, ckpt)
        single = forward_edges(g, ckpt, precision="float32")
        np.testing.assert_allclose(single.scores, full.scores, atol=1e-3)

    def test_parameters_unchanged_by_inference(self):
        ckpt = small_ckpt(k=4, seed=6)
        digest = ckpt.digest()
        forward_edges(running_example(), ckpt)
        self.assertEqual(ckpt.digest(), digest)


class TestCheckpoint(unittest.TestCase):
    def test_shapes(self):
        shapes = dict(param_shapes(ModelConfig(k=5, feature_layers=1, classifier_layers=2)))
        self.assertEqual(len(shapes), 2 * (1 + 2 + 2))
        self.assertEqual(shapes["g_d.1.weight"], (5, 5))
        self.assertEqual(shapes["feature.0.bias"], (5,))

    def test_bytes_round_trip(self):
        ckpt = small_ckpt(k=3, seed=8).replace_params({}, note="unit")
        back = ModelCheckpoint.from_bytes(ckpt.to_bytes())
        self.assertEqual(back.config, ckpt.config)
        self.assertEqual(back.metadata["note"], "unit")
        for name, value in ckpt.params.items():
            np.testing.assert_array_equal(back.params[name], value)
        self.assertEqual(back.digest(), ckpt.digest())

    def test_file_round_trip(self):
        ckpt = small_ckpt(k=3, seed=9)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "nested", "model.ckpt")
            save_checkpoint(ckpt, path)
            self.assertEqual(load_checkpoint(path).digest(), ckpt.digest())
            with self.assertRaises(CheckpointError):
                load_checkpoint(os.path.join(tmp, "missing.ckpt"))

    def test_corruption(self):
        data = small_ckpt(k=3).to_bytes()
        with self.assertRaises(CheckpointVersionError):
            ModelCheckpoint.from_bytes(b"XXXX" + data[4:])
        with self.assertRaises(CheckpointVersionError):
            ModelCheckpoint.from_bytes(data[:4] + struct.pack("<I", 99) + data[8:])
        with self.assertRaises(CheckpointVersionError):
            ModelCheckpoint.from_bytes(data[:12] + b"!" + data[13:])
        with self.assertRaises(CheckpointError):
            ModelCheckpoint.from_bytes(data[:-8])
        with self.assertRaises(CheckpointError):
            ModelCheckpoint.from_bytes(data + b"\x00" * 8)

    def test_parameter_validation(self):
        config = ModelConfig(k=2, feature_layers=1, classifier_layers=1)
        good = {name: np.zeros(shape) for name, shape in param_shapes(config)}
        ModelCheckpoint(config, good)
        with self.assertRaises(CheckpointError):
            ModelCheckpoint(config, {**good, "feature.0.weight": np.zeros((3, 2))})
        with self.assertRaises(CheckpointError):
            ModelCheckpoint(config, {**good, "g_s.0.bias": np.array([np.nan, 0.0])})
        missing = dict(good)
        del missing["g_d.0.bias"]
        with self.assertRaises(CheckpointError):
            ModelCheckpoint(config, missing)

    def test_params_read_only(self):
        ckpt = small_ckpt(k=2)
        with self.assertRaises(ValueError):
            ckpt.params["feature.0.weight"][0, 0] = 1.0

    def test_config_validation(self):
        with self.assertRaises(InputError):
            ModelConfig(k=0)
        with self.assertRaises(InputError):
            ModelConfig(propagation_depth=0)
        with self.assertRaises(InputError):
            ModelConfig(activation="tanh")

    def test_init_is_seeded(self):
        self.assertEqual(small_ckpt(k=4, seed=1).digest(), small_ckpt(k=4, seed=1).digest())
        self.assertNotEqual(small_ckpt(k=4, seed=1).digest(), small_ckpt(k=4, seed=2).digest())


if __name__ == '__main__':
    unittest.main()
