import unittest

import numpy as np

from liner_blc_transfer.augment import TrainingPair, augment, augment_all, flip_vertical, \
    gaussian_blur, multiplicity
from liner_blc_transfer.exceptions import ConfigError
from liner_blc_transfer.image_prep import ReflectionImage
from liner_blc_transfer.surface_core import Blc


def make_pair(seed=0, label=None):
    rng = np.random.default_rng(seed)
    img = ReflectionImage(rng.integers(0, 255, size=(16, 16, 3)), source_id=f"p{seed}")
    return TrainingPair(img, label if label is not None else Blc(np.linspace(1, -1, 8)),
                        source_id=f"p{seed}")


class TestAugment(unittest.TestCase):
    def test_four_variants(self):
        pair = make_pair()
        variants = augment(pair)
        self.assertEqual([v.variant for v in variants],
                         ["original", "flip", "blur", "flip+blur"])
        for v in variants:
            self.assertIs(v.label, pair.label)
            self.assertEqual(v.source_id, pair.source_id)
        self.assertTrue(np.array_equal(variants[1].image.pixels, pair.image.pixels[::-1]))

    def test_training_set_size(self):
        pairs = [make_pair(i) for i in range(351)]
        self.assertEqual(len(augment_all(pairs)), 1404)
        self.assertEqual(multiplicity(), 4)
        self.assertEqual(multiplicity({"compose": False}), 3)
        self.assertEqual(multiplicity({"flip": False}), 2)

    def test_zero_sigma_is_identity(self):
        pair = make_pair(3)
        self.assertTrue(np.array_equal(gaussian_blur(pair.image, 0).pixels, pair.image.pixels))
        variants = augment(pair, {"blur_sigma": 0.0})
        self.assertTrue(np.array_equal(variants[2].image.pixels, pair.image.pixels))
        with self.assertRaises(ConfigError):
            augment(pair, {"blur_sigma": -1.0})

    def test_blur_smooths(self):
        img = make_pair(4).image
        blurred = gaussian_blur(img, 1.0)
        self.assertLess(np.std(np.diff(blurred.pixels.astype(float), axis=0)),
                        np.std(np.diff(img.pixels.astype(float), axis=0)))
        self.assertEqual(blurred.pixels.dtype, np.uint8)

    def test_flip_twice(self):
        img = make_pair(5).image
        self.assertTrue(np.array_equal(flip_vertical(flip_vertical(img)).pixels, img.pixels))
