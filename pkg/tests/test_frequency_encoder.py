"""
Tests for the frequency encoder.
"""

import os
import sys
import tempfile
import unittest

import numpy as np
import torch

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from errors import PreconditionError, ShapeMismatchError
from frequency_encoder import (EncoderWeights, FrequencyEncoder, SpatialPassthrough, SubbandPassthrough,
                               apply_update, build_input_encoder, encode, freeze, load_weights,
                               save_weights, weights_digest)
from wavelet_transform import dwt_image


class TestReferenceEncode(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(11)
        self.weights = EncoderWeights.initial(self.rng)

    def test_output_shape(self):
        encoded = encode(self.rng.normal(size=(3, 8, 6)), self.weights)
        self.assertEqual(encoded.values.shape, (3, 4, 3))
        self.assertEqual(tuple(encoded.source_shape), (8, 6))

    def test_low_channel_only_sees_ll(self):
        weights = EncoderWeights(w_low=[1, 0, 0], bias_low=0.0, w_high=np.zeros(9), bias_high=0.0,
                                 w_global=np.zeros(12), bias_global=0.0)
        image = self.rng.normal(size=(3, 4, 4))
        encoded = encode(image, weights)
        np.testing.assert_allclose(encoded.values[0], dwt_image(image)[0].ll, atol=1e-6)
        self.assertFalse(np.any(encoded.values[1]))

    def test_high_channel_plane_order(self):
        # coefficient 4 of w_high addresses hl of channel 1
        w_high = np.zeros(9)
        w_high[4] = 1.0
        weights = EncoderWeights(w_low=np.zeros(3), bias_low=0.0, w_high=w_high, bias_high=0.0,
                                 w_global=np.zeros(12), bias_global=0.0)
        image = self.rng.normal(size=(3, 4, 4))
        np.testing.assert_allclose(encode(image, weights).values[1], dwt_image(image)[1].hl, atol=1e-6)

    def test_zero_bias_encoding_is_linear(self):
        weights = EncoderWeights(w_low=self.weights.w_low, bias_low=0.0, w_high=self.weights.w_high,
                                 bias_high=0.0, w_global=self.weights.w_global, bias_global=0.0)
        x = self.rng.normal(size=(3, 8, 8))
        y = self.rng.normal(size=(3, 8, 8))
        np.testing.assert_allclose(encode(2.5 * x, weights).values, 2.5 * encode(x, weights).values, atol=1e-5)
        np.testing.assert_allclose(encode(x + y, weights).values,
                                   encode(x, weights).values + encode(y, weights).values, atol=1e-5)

    def test_rejects_non_rgb(self):
        with self.assertRaises(ShapeMismatchError):
            encode(np.zeros((1, 4, 4)), self.weights)


class TestEncoderWeights(unittest.TestCase):

    def setUp(self):
        self.weights = EncoderWeights.initial(np.random.default_rng(0))

    def test_serialized_size(self):
        self.assertEqual(len(self.weights.to_bytes()), 27 * 4 + 1)

    def test_bytes_preserve_values_and_flag(self):
        restored = EncoderWeights.from_bytes(freeze(self.weights).to_bytes())
        np.testing.assert_array_equal(restored.flat(), self.weights.flat())
        self.assertTrue(restored.frozen)

    def test_freeze_blocks_updates(self):
        frozen = freeze(self.weights)
        self.assertIs(freeze(frozen), frozen)
        self.assertIs(apply_update(frozen, np.ones(27), 0.1), frozen)
        self.assertEqual(weights_digest(frozen), weights_digest(self.weights))

    def test_update_changes_digest(self):
        updated = apply_update(self.weights, np.ones(27), 0.1)
        self.assertNotEqual(weights_digest(updated), weights_digest(self.weights))
        np.testing.assert_allclose(updated.flat(), self.weights.flat() - 0.1, atol=1e-6)

    def test_wrong_coefficient_count(self):
        with self.assertRaises(ShapeMismatchError):
            EncoderWeights(w_low=np.zeros(2), bias_low=0.0, w_high=np.zeros(9), bias_high=0.0,
                           w_global=np.zeros(12), bias_global=0.0)


class TestFrequencyEncoderModule(unittest.TestCase):

    def setUp(self):
        torch.manual_seed(0)
        self.encoder = FrequencyEncoder()

    def test_matches_reference(self):
        images = torch.randn(3, 3, 8, 8)
        out = self.encoder(images).detach().numpy()
        weights = self.encoder.get_weights()
        for n in range(images.shape[0]):
            np.testing.assert_allclose(out[n], encode(images[n].numpy(), weights).values, atol=1e-5)

    def test_gradcheck(self):
        encoder = FrequencyEncoder().double()
        images = torch.randn(2, 3, 4, 4, dtype=torch.float64, requires_grad=True)
        self.assertTrue(torch.autograd.gradcheck(encoder, (images,)))

    def test_gradcheck_over_merge_parameters(self):
        encoder = FrequencyEncoder().double()
        images = torch.randn(2, 3, 4, 4, dtype=torch.float64)
        names = [name for name, _ in encoder.named_parameters()]
        params = tuple(p.detach().clone().requires_grad_(True) for _, p in encoder.named_parameters())
        self.assertEqual(sum(p.numel() for p in params), 27)

        def forward(*values):
            return torch.func.functional_call(encoder, dict(zip(names, values)), (images,))

        self.assertTrue(torch.autograd.gradcheck(forward, params))

    def test_freeze_keeps_digest_through_training(self):
        self.encoder.freeze()
        digest = self.encoder.digest()
        self.assertTrue(all(not p.requires_grad for p in self.encoder.parameters()))
        head = torch.nn.Conv2d(3, 1, 1)
        optimizer = torch.optim.SGD(list(head.parameters()), lr=0.5)
        for _ in range(3):
            loss = head(self.encoder(torch.randn(4, 3, 8, 8))).pow(2).mean()
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        self.assertEqual(self.encoder.digest(), digest)

    def test_freeze_is_idempotent(self):
        self.encoder.freeze()
        self.encoder.freeze()
        self.assertTrue(self.encoder.frozen)

    def test_load_into_frozen_encoder_fails(self):
        weights = self.encoder.get_weights()
        self.encoder.freeze()
        with self.assertRaises(PreconditionError):
            self.encoder.load_weights(weights)

    def test_weights_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'encoder.bin')
            save_weights(self.encoder, path)
            other = FrequencyEncoder()
            other.load_weights(load_weights(path))
            self.assertEqual(other.digest(), self.encoder.digest())


class TestInputModes(unittest.TestCase):

    def test_modes(self):
        images = torch.randn(2, 3, 8, 8)
        self.assertIsInstance(build_input_encoder('ffe'), FrequencyEncoder)
        spatial = build_input_encoder('spatial')
        self.assertIsInstance(spatial, SpatialPassthrough)
        self.assertFalse(spatial.downsamples)
        self.assertTrue(torch.equal(spatial(images), images))
        hh = build_input_encoder('hh')
        self.assertIsInstance(hh, SubbandPassthrough)
        self.assertEqual(tuple(hh(images).shape), (2, 3, 4, 4))

    def test_unknown_mode(self):
        with self.assertRaises(ValueError):
            build_input_encoder('dct')

    def test_encoder_without_bias(self):
        encoder = build_input_encoder('ffe', bias=False)
        self.assertIsNone(encoder.merge_low.bias)
        self.assertEqual(encoder.get_weights().bias_global, 0.0)


if __name__ == '__main__':
    unittest.main()
