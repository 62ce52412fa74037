import os
import tempfile
import unittest

import numpy as np
from scipy.stats import spearmanr

from liner_blc_transfer.dataset import Manifest
from liner_blc_transfer.exceptions import ConfigError, DataIOError
from liner_blc_transfer.image_prep import psi_transform
from liner_blc_transfer.surface_core import DepthProfile, compute_blc, extract_k_params, \
    read_blc, read_htdp
from liner_blc_transfer.synthlab import SurfaceRecipe, generate_dataset, generate_pair, \
    generate_surface, illumination_field, render_reflection, sample_recipe

SMALL = {"size": 48, "liners": 5, "k": 64}


def sk_of(profile):
    return extract_k_params(compute_blc(profile, 512)).sk


class TestSurfaceRecipe(unittest.TestCase):
    def test_validation(self):
        with self.assertRaises(ConfigError):
            SurfaceRecipe(wear=1.5)
        with self.assertRaises(ConfigError):
            SurfaceRecipe(spacing=0)
        with self.assertRaises(ConfigError):
            SurfaceRecipe(size=8)
        with self.assertRaises(ConfigError):
            SurfaceRecipe(illumination=1.0)

    def test_segments_and_hours(self):
        config = {"n": 10, "liners": 2}
        draws = [sample_recipe(i, config, seed=4) for i in range(10)]
        self.assertEqual([d[1] for d in draws], [0] * 5 + [1] * 5)
        self.assertEqual([d[2] for d in draws[:5]], ["6h", "3h", "6h", "3h", "6h"])
        self.assertEqual(len({d[3] for d in draws[:5]}), 1)
        worn, light = draws[0][0], draws[1][0]
        self.assertAlmostEqual(light.wear, 0.5 * worn.wear)
        self.assertAlmostEqual(draws[0][3], 60000.0 * worn.wear)


class TestSurfaces(unittest.TestCase):
    def test_wear_lowers_core_depth(self):
        for seed in range(5):
            fresh = generate_surface(SurfaceRecipe(seed=seed))
            worn = generate_surface(SurfaceRecipe(seed=seed, wear=1.0))
            self.assertLess(sk_of(worn), sk_of(fresh))

    def test_deterministic(self):
        a = generate_surface(SurfaceRecipe(seed=11, wear=0.4))
        b = generate_surface(SurfaceRecipe(seed=11, wear=0.4))
        self.assertTrue(np.array_equal(a.heights, b.heights))
        self.assertEqual(a.pixel_pitch, 4.0)

    def test_core_depth_sweep(self):
        values = [sk_of(generate_surface(SurfaceRecipe(seed=s, size=64))) for s in range(100)]
        self.assertGreaterEqual(min(values), 0.5)
        self.assertLessEqual(max(values), 2.8)


class TestRendering(unittest.TestCase):
    def test_flat_depth_renders_constant(self):
        recipe = SurfaceRecipe(noise=0.0, illumination=0.0, size=32)
        img = render_reflection(DepthProfile(np.zeros((32, 32))), recipe)
        self.assertEqual(img.shape, (32, 32))
        self.assertEqual(len(np.unique(img.pixels.reshape(-1, 3), axis=0)), 1)

    def test_deterministic(self):
        recipe = SurfaceRecipe(seed=3, size=48)
        depth = generate_surface(recipe)
        a = render_reflection(depth, recipe)
        b = render_reflection(depth, recipe)
        self.assertTrue(np.array_equal(a.pixels, b.pixels))

    def test_illumination_is_filtered_out(self):
        recipe = SurfaceRecipe(seed=5, noise=0.0)
        depth = generate_surface(recipe)
        fields = [illumination_field(depth.shape, 0.2, np.random.default_rng(s))
                  for s in (1, 2)]
        a, b = (psi_transform(render_reflection(depth, recipe, f), 128).curves
                for f in fields)
        self.assertLess(np.linalg.norm(a - b) / np.linalg.norm(a), 0.1)


class TestDatasetGeneration(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = self.tmp.name

    def tearDown(self):
        self.tmp.cleanup()

    def read(self, path):
        with open(path, "rb") as f:
            return f.read()

    def test_grouping_and_files(self):
        out = os.path.join(self.dir, "a")
        pairs, manifest = generate_dataset(out, SMALL, seed=2, n=20)
        self.assertEqual(len(pairs), 20)
        self.assertEqual(len(manifest), 20)
        self.assertEqual(len(manifest.liners), 5)
        loaded = Manifest.load(os.path.join(out, "manifest.json"))
        self.assertEqual(loaded.ids, manifest.ids)
        self.assertTrue(os.path.exists(os.path.join(out, "recipes.json")))

    def test_stored_blc_matches_stored_depth(self):
        out = os.path.join(self.dir, "a")
        generate_dataset(out, SMALL, seed=2, n=6)
        manifest = Manifest.load(os.path.join(out, "manifest.json"))
        for record in manifest:
            depth = read_htdp(manifest.path(record.depth_path))
            stored = read_blc(manifest.path(record.blc_path))
            self.assertTrue(np.array_equal(compute_blc(depth, 64).values, stored.values))
            self.assertEqual(manifest.load_image(record).shape, depth.shape)

    def test_reproducible(self):
        a, b = os.path.join(self.dir, "a"), os.path.join(self.dir, "b")
        generate_dataset(a, SMALL, seed=7, n=8)
        generate_dataset(b, SMALL, seed=7, n=8, workers=3)
        self.assertEqual(self.read(os.path.join(a, "manifest.json")),
                         self.read(os.path.join(b, "manifest.json")))
        self.assertEqual(self.read(os.path.join(a, "rgb", "s0005.png")),
                         self.read(os.path.join(b, "rgb", "s0005.png")))

    def test_errors(self):
        blocker = os.path.join(self.dir, "file")
        with open(blocker, "w") as f:
            f.write("x")
        with self.assertRaises(DataIOError):
            generate_dataset(os.path.join(blocker, "sub"), SMALL, n=5)
        with self.assertRaises(ConfigError):
            generate_dataset(self.dir, SMALL, n=0)
        with self.assertRaises(ConfigError):
            generate_dataset(self.dir, SMALL, n=3)


class TestDefaultDistribution(unittest.TestCase):
    """Statistics of the default 200-pair configuration."""

    @classmethod
    def setUpClass(cls):
        pairs = [generate_pair(i, seed=0) for i in range(200)]
        cls.wear = np.array([p.recipe.wear for p in pairs])
        cls.sk = np.array([sk_of(p.depth) for p in pairs])

    def test_wear_is_learnable(self):
        rho = spearmanr(self.wear, self.sk).correlation
        self.assertLessEqual(rho, -0.8)

    def test_core_depth_quartiles(self):
        q1, q3 = np.percentile(self.sk, [25, 75])
        self.assertGreaterEqual(q1, 0.475)
        self.assertLessEqual(q1, 1.425)
        self.assertGreaterEqual(q3, 0.71)
        self.assertLessEqual(q3, 2.13)
