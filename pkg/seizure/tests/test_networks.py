import numpy as np
from django.test import SimpleTestCase

from seizure import numcore
from seizure.exceptions import CheckpointError, ConfigError, StructuralError
from seizure.networks import (
    CnnExtractor, ConvLstmExtractor, LOCATIONS, ModelConfig, ModelKind, SAMPLE_SHAPE, SeizureNet,
    bilinear_pool, bilinear_pool_backward, convlstm_cell, convlstm_cell_backward, convlstm_cell_forward,
)
from seizure.numcore import LayerParams

from .helpers import DEBUG_MODEL, numeric_grad, rel_error


def zero_params(extractor):
    return {pid: np.zeros(shape) for pid, shape in extractor.param_shapes().items()}


def random_params(extractor, rng, scale=0.3):
    return {pid: rng.normal(0, scale, size=shape) for pid, shape in extractor.param_shapes().items()}


class ExtractorShapeTest(SimpleTestCase):

    def test_full_width_extractors_emit_12_by_64(self):
        rng = np.random.default_rng(0)
        sample = rng.normal(size=SAMPLE_SHAPE).astype(np.float32)
        model = SeizureNet(ModelKind.HYBRID, 8, seed=0)
        for name, extractor in model.streams.items():
            self.assertEqual(extractor.extract(model.params, sample).shape, (LOCATIONS, 64), name)
        self.assertEqual(model.head_inputs, 4096)

    def test_hybrid_logits_shape(self):
        model = SeizureNet(ModelKind.HYBRID, 8, DEBUG_MODEL, seed=0)
        x = np.random.default_rng(1).normal(size=(2,) + SAMPLE_SHAPE).astype(np.float32)
        logits, _ = model.forward(x)
        self.assertEqual(logits.shape, (2, 8))
        self.assertEqual(logits.dtype, np.float32)

    def test_bad_sample_shape(self):
        model = SeizureNet(ModelKind.CNN, 2, DEBUG_MODEL)
        with self.assertRaises(StructuralError):
            model.forward(np.zeros((1, 32, 9, 18)))

    def test_config_validation(self):
        with self.assertRaises(ConfigError):
            ModelConfig(cnn_filters=(4, 8))
        with self.assertRaises(ConfigError):
            ModelConfig(kernel_size=2)


class CnnExtractorTest(SimpleTestCase):

    def test_zero_sample_zero_bias(self):
        extractor = CnnExtractor('cnn', (2, 2, 4))
        params = random_params(extractor, np.random.default_rng(0))
        for pid in params:
            if pid.endswith('.bias'):
                params[pid][:] = 0
        features = extractor.extract(params, np.zeros(SAMPLE_SHAPE))
        np.testing.assert_array_equal(features, 0)

    def test_deterministic(self):
        extractor = CnnExtractor('cnn', (2, 2, 4))
        rng = np.random.default_rng(1)
        params = random_params(extractor, rng)
        sample = rng.normal(size=SAMPLE_SHAPE)
        np.testing.assert_array_equal(extractor.extract(params, sample), extractor.extract(params, sample))

    def test_backward_finite_differences(self):
        rng = np.random.default_rng(2)
        extractor = CnnExtractor('cnn', (2, 2, 3))
        params = random_params(extractor, rng, 0.5)
        x = rng.normal(size=(1,) + SAMPLE_SHAPE)
        upstream = rng.normal(size=(1, LOCATIONS, 3))

        def loss():
            return float((extractor.forward(params, x)[0] * upstream).sum())

        features, cache = extractor.forward(params, x)
        grads, _ = extractor.backward(params, cache, upstream)
        for pid in ('cnn.block3.conv.weights', 'cnn.block2.conv.bias'):
            # relu and max-pool kinks need a small step
            self.assertLess(rel_error(grads[pid], numeric_grad(loss, params[pid], 1e-6)), 1e-3, pid)


class ConvLstmCellTest(SimpleTestCase):

    def test_zero_everything(self):
        layer = LayerParams(np.zeros((3, 3, 3, 8)), np.zeros(8), 'cell')
        h, c = convlstm_cell(np.zeros((4, 5, 1)), np.zeros((4, 5, 2)), np.zeros((4, 5, 2)), layer)
        np.testing.assert_array_equal(h, 0)
        np.testing.assert_array_equal(c, 0)

    def test_pure_memory(self):
        rng = np.random.default_rng(3)
        hidden = 2
        bias = np.zeros(4 * hidden)
        bias[:hidden] = -1e3  # input gate closed
        bias[hidden:2 * hidden] = 1e3  # forget gate open
        layer = LayerParams(np.zeros((3, 3, 1 + hidden, 4 * hidden)), bias, 'cell')
        c = rng.normal(size=(4, 5, hidden))
        _, c_next = convlstm_cell(rng.normal(size=(4, 5, 1)), rng.normal(size=(4, 5, hidden)), c, layer)
        np.testing.assert_array_equal(c_next, c)

    def test_backward_finite_differences(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            hidden, cin = int(rng.integers(1, 3)), int(rng.integers(1, 3))
            shape = (int(rng.integers(2, 5)), int(rng.integers(2, 5)))
            weights = rng.normal(0, 0.5, size=(3, 3, cin + hidden, 4 * hidden))
            bias = rng.normal(0, 0.5, size=4 * hidden)
            layer = LayerParams(weights, bias, 'cell')
            x = rng.normal(size=shape + (cin,))
            h = rng.normal(size=shape + (hidden,))
            c = rng.normal(size=shape + (hidden,))
            upstream_h = rng.normal(size=shape + (hidden,))
            upstream_c = rng.normal(size=shape + (hidden,))

            def loss():
                h_next, c_next = convlstm_cell(x, h, c, layer)
                return float((h_next * upstream_h).sum() + (c_next * upstream_c).sum())

            _, _, cache = convlstm_cell_forward(x, h, c, layer)
            grads = convlstm_cell_backward(cache, upstream_h, upstream_c)
            self.assertLess(rel_error(grads.params['cell.weights'], numeric_grad(loss, weights)), 1e-3)
            self.assertLess(rel_error(grads.params['cell.bias'], numeric_grad(loss, bias)), 1e-3)
            self.assertLess(rel_error(grads.x, numeric_grad(loss, x)), 1e-3)
            self.assertLess(rel_error(grads.h, numeric_grad(loss, h)), 1e-3)
            self.assertLess(rel_error(grads.c, numeric_grad(loss, c)), 1e-3)


class ConvLstmExtractorTest(SimpleTestCase):

    def test_zero_parameters_give_zero_features(self):
        extractor = ConvLstmExtractor('rnn', (2, 4))
        features = extractor.extract(zero_params(extractor), np.zeros(SAMPLE_SHAPE))
        self.assertEqual(features.shape, (LOCATIONS, 4))
        np.testing.assert_array_equal(features, 0)

    def test_state_accumulates_over_frames(self):
        rng = np.random.default_rng(5)
        extractor = ConvLstmExtractor('rnn', (2, 4))
        params = random_params(extractor, rng, 0.5)
        frame = rng.normal(size=SAMPLE_SHAPE[:1] + SAMPLE_SHAPE[2:])
        repeated = np.repeat(frame[:, None, :], SAMPLE_SHAPE[1], axis=1)
        single = np.zeros(SAMPLE_SHAPE)
        single[:, -1, :] = frame
        self.assertFalse(np.allclose(extractor.extract(params, repeated), extractor.extract(params, single)))

    def test_backward_through_time(self):
        rng = np.random.default_rng(6)
        extractor = ConvLstmExtractor('rnn', (1, 2))
        params = random_params(extractor, rng, 0.5)
        x = rng.normal(size=(1,) + SAMPLE_SHAPE)
        upstream = rng.normal(size=(1, LOCATIONS, 2))

        def loss():
            return float((extractor.forward(params, x)[0] * upstream).sum())

        _, cache = extractor.forward(params, x)
        grads, _ = extractor.backward(params, cache, upstream)
        for pid in ('rnn.layer1.gates.weights', 'rnn.layer2.gates.bias'):
            self.assertLess(rel_error(grads[pid], numeric_grad(loss, params[pid], 1e-6)), 1e-3, pid)


class BilinearPoolTest(SimpleTestCase):

    def test_single_location(self):
        out = bilinear_pool(np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]]))
        np.testing.assert_array_equal(out, [3, 4, 6, 8])

    def test_zero_stream(self):
        out = bilinear_pool(np.ones((12, 4)), np.zeros((12, 4)))
        np.testing.assert_array_equal(out, 0)

    def test_triple_loop_oracle(self):
        rng = np.random.default_rng(7)
        a, b = rng.normal(size=(12, 64)), rng.normal(size=(12, 64))
        oracle = np.zeros((64, 64))
        for o in range(12):
            for m in range(64):
                for n in range(64):
                    oracle[m, n] += a[o, m] * b[o, n]
        np.testing.assert_allclose(bilinear_pool(a, b), oracle.ravel(), atol=1e-4)

    def test_transpose_duality_and_location_permutation(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            a, b = rng.normal(size=(12, 5)), rng.normal(size=(12, 6))
            phi = bilinear_pool(a, b).reshape(5, 6)
            np.testing.assert_allclose(bilinear_pool(b, a).reshape(6, 5), phi.T, atol=1e-10)
            order = rng.permutation(12)
            np.testing.assert_allclose(bilinear_pool(a[order], b[order]).reshape(5, 6), phi, atol=1e-10)

    def test_bilinearity(self):
        rng = np.random.default_rng(15)
        for _ in range(20):
            a1, a2, b = (rng.normal(size=(12, 64)).astype(np.float32) for _ in range(3))
            alpha = np.float32(rng.uniform(-3, 3))
            phi = bilinear_pool(a1, b)
            np.testing.assert_allclose(bilinear_pool(alpha * a1, b), alpha * phi, rtol=1e-5, atol=1e-4)
            np.testing.assert_allclose(bilinear_pool(a1, alpha * b), alpha * phi, rtol=1e-5, atol=1e-4)
            np.testing.assert_allclose(
                bilinear_pool(a1 + a2, b), phi + bilinear_pool(a2, b), rtol=1e-5, atol=1e-4
            )

    def test_symmetric_input_gives_symmetric_matrix(self):
        a = np.random.default_rng(9).normal(size=(12, 4))
        phi = bilinear_pool(a, a).reshape(4, 4)
        np.testing.assert_allclose(phi, phi.T, atol=1e-12)

    def test_backward(self):
        np.testing.assert_array_equal(bilinear_pool_backward(np.ones((12, 3)), np.ones((12, 2)), np.zeros(6))[0], 0)
        a, b = np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])
        d_a, d_b = bilinear_pool_backward(a, b, np.ones(4))
        np.testing.assert_array_equal(d_a, [[1.0, 1.0]])
        np.testing.assert_array_equal(d_b, [[1.0, 1.0]])
        rng = np.random.default_rng(10)
        for _ in range(20):
            a, b = rng.normal(size=(2, 12, 3)), rng.normal(size=(2, 12, 4))
            upstream = rng.normal(size=(2, 12))

            def loss():
                return float((bilinear_pool(a, b) * upstream).sum())

            d_a, d_b = bilinear_pool_backward(a, b, upstream)
            self.assertLess(rel_error(d_a, numeric_grad(loss, a)), 1e-3)
            self.assertLess(rel_error(d_b, numeric_grad(loss, b)), 1e-3)


class SeizureNetTest(SimpleTestCase):

    def test_head_backward_finite_differences(self):
        rng = np.random.default_rng(11)
        for kind in (ModelKind.CNN, ModelKind.HYBRID):
            model = SeizureNet(kind, 3, DEBUG_MODEL, seed=1)
            params = {pid: value.astype(np.float64) for pid, value in model.params.items()}
            features = {
                name: rng.normal(size=(4, LOCATIONS, ex.feature_dim)) for name, ex in model.streams.items()
            }
            targets = np.array([0, 1, 2, 1])
            weights = np.ones(4)

            def loss():
                logits, _ = model.head_forward(features, params)
                return numcore.batch_softmax_cross_entropy(logits, targets, weights)[0]

            logits, cache = model.head_forward(features, params)
            _, d_logits = numcore.batch_softmax_cross_entropy(logits, targets, weights)
            grads, d_features = model.head_backward(cache, d_logits, params)
            self.assertLess(rel_error(grads['head.weights'], numeric_grad(loss, params['head.weights'])), 1e-3)
            for name in model.streams:
                self.assertLess(rel_error(d_features[name], numeric_grad(loss, features[name], 1e-5)), 1e-3)

    def test_hybrid_gradient_of_every_parameter(self):
        rng = np.random.default_rng(16)
        model = SeizureNet(ModelKind.HYBRID, 3, DEBUG_MODEL, seed=6)
        params = {pid: value.astype(np.float64) for pid, value in model.params.items()}
        x = rng.normal(size=(2,) + SAMPLE_SHAPE)
        targets, weights = np.array([0, 2]), np.array([1.0, 0.5])

        def loss():
            logits, _ = model.forward(x, params)
            return numcore.batch_softmax_cross_entropy(logits, targets, weights)[0]

        logits, cache = model.forward(x, params)
        _, d_logits = numcore.batch_softmax_cross_entropy(logits, targets, weights)
        grads = model.backward(cache, d_logits, params)
        self.assertEqual(set(grads), set(params))

        step = 1e-6
        analytic, numeric = [], []
        for pid, value in params.items():
            flat = value.reshape(-1)
            picks = rng.choice(flat.size, size=min(flat.size, 6), replace=False)
            expected = []
            for i in picks:
                original = flat[i]
                flat[i] = original + step
                plus = loss()
                flat[i] = original - step
                minus = loss()
                flat[i] = original
                expected.append((plus - minus) / (2 * step))
            got = grads[pid].reshape(-1)[picks]
            # relu and max-pool kinks need a small step
            np.testing.assert_allclose(got, expected, rtol=1e-3, atol=1e-7, err_msg=pid)
            analytic.extend(got)
            numeric.extend(expected)
        self.assertLess(rel_error(analytic, numeric), 1e-3)

    def test_full_backward_covers_every_parameter(self):
        model = SeizureNet(ModelKind.BCNN, 2, DEBUG_MODEL, seed=2)
        x = np.random.default_rng(12).normal(size=(3,) + SAMPLE_SHAPE).astype(np.float32)
        logits, cache = model.forward(x)
        _, d_logits = numcore.batch_softmax_cross_entropy(logits, [0, 1, 0], np.ones(3))
        grads = model.backward(cache, d_logits)
        self.assertEqual(set(grads), set(model.params))
        for pid, grad in grads.items():
            self.assertEqual(grad.shape, model.params[pid].shape, pid)

    def test_head_only_backward(self):
        model = SeizureNet(ModelKind.HYBRID, 2, DEBUG_MODEL, seed=2)
        x = np.random.default_rng(13).normal(size=(2,) + SAMPLE_SHAPE).astype(np.float32)
        logits, cache = model.forward(x)
        grads = model.backward(cache, np.ones_like(logits), extractors=False)
        self.assertEqual(set(grads), set(model.head_ids()))

    def test_prediction_invariant_to_logit_shift(self):
        model = SeizureNet(ModelKind.RNN, 4, DEBUG_MODEL, seed=3)
        x = np.random.default_rng(14).normal(size=(5,) + SAMPLE_SHAPE).astype(np.float32)
        logits = model.logits(x)
        np.testing.assert_array_equal((logits + 7.0).argmax(axis=1), model.predict(x))

    def test_seeded_init_is_deterministic(self):
        a = SeizureNet(ModelKind.BRNN, 3, DEBUG_MODEL, seed=5)
        b = SeizureNet(ModelKind.BRNN, 3, DEBUG_MODEL, seed=5)
        for pid in a.params:
            np.testing.assert_array_equal(a.params[pid], b.params[pid])

    def test_stream_layout(self):
        self.assertEqual([f for _, f in ModelKind.BCNN.streams], ['cnn', 'cnn'])
        self.assertEqual([f for _, f in ModelKind.BRNN.streams], ['rnn', 'rnn'])
        self.assertEqual([f for _, f in ModelKind.HYBRID.streams], ['cnn', 'rnn'])
        self.assertEqual(ModelKind.HYBRID.base_kinds, (ModelKind.CNN, ModelKind.RNN))

    def test_load_stream_from_base_model(self):
        base = SeizureNet(ModelKind.CNN, 3, DEBUG_MODEL, seed=1)
        hybrid = SeizureNet(ModelKind.HYBRID, 3, DEBUG_MODEL, seed=2)
        hybrid.load_stream(base.stream_state('cnn'), 'cnn')
        for pid in base.stream_ids('cnn'):
            np.testing.assert_array_equal(hybrid.params[pid], base.params[pid])
        with self.assertRaises(CheckpointError) as ctx:
            hybrid.load_stream(base.stream_state('cnn'), 'rnn', source_stream='cnn')
        self.assertEqual(ctx.exception.param_id, 'cnn.layer1.gates.weights')

    def test_parameter_count(self):
        model = SeizureNet(ModelKind.CNN, 2, ModelConfig((2, 2, 4), (2, 4), 3))
        expected = (3 * 3 * 19 * 2 + 2) + (3 * 3 * 2 * 2 + 2) + (3 * 3 * 2 * 4 + 4) + (12 * 4 * 2 + 2)
        self.assertEqual(model.parameter_count, expected)
