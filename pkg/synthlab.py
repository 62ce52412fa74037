# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Synthetic plateau-honed surfaces and their rendered reflection images.

Every pair draws its randomness from (seed, index) and every liner from
(seed, liner), so datasets are reproducible regardless of worker count.
"""
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict
from os.path import join

import numpy as np
from ovos_utils.log import LOG
from scipy import ndimage

from .config import section
from .dataset import Manifest, ManifestRecord
from .exceptions import ConfigError, DataIOError
from .image_prep import ReflectionImage, write_png
from .surface_core import Blc, DepthProfile, compute_blc, extract_k_params, write_blc, \
    write_htdp

CALIBRATION_K = 512
LIGHT = np.array([0.35, 0.25, 0.9]) / np.linalg.norm([0.35, 0.25, 0.9])
TINT = np.array([0.93, 0.95, 1.0])
LINER_STREAM = 1 << 20


@dataclass(frozen=True)
class SurfaceRecipe:
    angle: float = 30.0
    spacing: float = 36.0
    groove_depth: float = 1.0
    plateau_roughness: float = 0.25
    wear: float = 0.0
    illumination: float = 0.1
    noise: float = 2.0
    seed: int = 0
    core_depth: float = 2.1
    size: int = 128
    pixel_pitch: float = 4.0

    def __post_init__(self):
        if not 0.0 <= self.wear <= 1.0:
            raise ConfigError("wear level must lie in [0, 1]", wear=self.wear)
        for name in ("spacing", "groove_depth", "plateau_roughness", "core_depth",
                     "pixel_pitch"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"recipe {name} must be positive",
                                  value=getattr(self, name))
        if not 0.0 <= self.illumination < 1.0 or self.noise < 0:
            raise ConfigError("illumination must lie in [0, 1) and noise be >= 0")
        if self.size < 16:
            raise ConfigError("synthetic surfaces need at least 16 x 16 pixels",
                              size=self.size)

    def as_dict(self):
        return asdict(self)


@dataclass
class SyntheticPair:
    id: str
    depth: DepthProfile
    image: ReflectionImage
    blc: Blc
    recipe: SurfaceRecipe
    liner_id: str
    segment: str
    operating_hours: float


def _grooves(shape, recipe, rng):
    rows, cols = shape
    y, x = np.mgrid[0:rows, 0:cols].astype(np.float64) * recipe.pixel_pitch
    heights = np.zeros(shape)
    for sign in (1.0, -1.0):
        theta = np.radians(recipe.angle) * sign
        u = x * np.cos(theta) + y * np.sin(theta)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        wave = np.cos(2.0 * np.pi * u / recipe.spacing + phase)
        # narrow valleys between wide flats
        heights -= recipe.groove_depth * ((1.0 - wave) / 2.0) ** 6
    return heights


def _plateau(shape, recipe, rng):
    field = ndimage.gaussian_filter(rng.standard_normal(shape), sigma=1.5, mode="wrap")
    return recipe.plateau_roughness * recipe.groove_depth * field / field.std()


def generate_surface(recipe):
    rng = np.random.default_rng(recipe.seed)
    shape = (recipe.size, recipe.size)
    heights = _grooves(shape, recipe, rng) + _plateau(shape, recipe, rng)
    heights -= heights.mean()
    sk = extract_k_params(compute_blc(heights, CALIBRATION_K)).sk
    if sk <= 0:
        raise ConfigError("recipe produced a surface without a core", seed=recipe.seed)
    heights *= recipe.core_depth / sk
    if recipe.wear > 0:
        heights = np.minimum(heights, np.quantile(heights, 1.0 - 0.3 * recipe.wear))
    return DepthProfile(heights, pixel_pitch=recipe.pixel_pitch)


def illumination_field(shape, amplitude, rng):
    """Smooth periodic light falloff with mean one."""
    rows, cols = shape
    yy, xx = np.mgrid[0:rows, 0:cols].astype(np.float64)
    px, py = rng.uniform(0.0, 2.0 * np.pi, size=2)
    return 1.0 + amplitude * 0.5 * (np.cos(2.0 * np.pi * xx / cols + px) +
                                    np.cos(2.0 * np.pi * yy / rows + py))


def render_reflection(depth, recipe, field=None):
    heights = depth.heights if isinstance(depth, DepthProfile) else DepthProfile(depth).heights
    pitch = depth.pixel_pitch if isinstance(depth, DepthProfile) else recipe.pixel_pitch
    rng = np.random.default_rng([recipe.seed, 1])
    gy, gx = np.gradient(heights, pitch)
    shade = np.clip((-gx * LIGHT[0] - gy * LIGHT[1] + LIGHT[2]) /
                    np.sqrt(1.0 + gx ** 2 + gy ** 2), 0.0, 1.0)
    span = np.ptp(heights)
    cavity = 0.75 + 0.25 * (heights - heights.min()) / span if span > 0 else 1.0
    if field is None:
        field = illumination_field(heights.shape, recipe.illumination, rng)
    gray = 150.0 * shade * cavity * field + 40.0
    rgb = gray[..., None] * TINT
    if recipe.noise > 0:
        rgb = rgb + rng.normal(0.0, recipe.noise, heights.shape)[..., None]
    return ReflectionImage(np.clip(np.round(rgb), 0, 255).astype(np.uint8))


def _span(config, name):
    lo, hi = config[name]
    if lo > hi:
        raise ConfigError(f"synth.{name} range is reversed", range=config[name])
    return float(lo), float(hi)


def liner_of(index, n, n_liners):
    return index * n_liners // n


def liner_draw(liner, config, seed):
    rng = np.random.default_rng([seed, LINER_STREAM + liner])
    wear = rng.uniform(*_span(config, "liner_wear"))
    core = rng.uniform(*_span(config, "core_depth"))
    return wear, core


def sample_recipe(index, config=None, seed=0):
    """Recipe, liner number and segment tag of pair `index`."""
    config = section("synth", config)
    n, n_liners = int(config["n"]), int(config["liners"])
    liner = liner_of(index, n, n_liners)
    first = -(-liner * n // n_liners)
    segment = "6h" if (index - first) % 2 == 0 else "3h"
    liner_wear, core = liner_draw(liner, config, seed)
    wear = liner_wear if segment == "6h" else liner_wear * float(config["bdc_wear_factor"])
    rng = np.random.default_rng([seed, index])
    recipe = SurfaceRecipe(angle=rng.uniform(*_span(config, "angle")),
                           spacing=rng.uniform(*_span(config, "spacing")),
                           plateau_roughness=rng.uniform(*_span(config, "plateau_roughness")),
                           illumination=rng.uniform(*_span(config, "illumination")),
                           noise=rng.uniform(*_span(config, "noise")),
                           seed=int(rng.integers(0, 2 ** 31 - 1)),
                           wear=float(np.clip(wear, 0.0, 1.0)), core_depth=core,
                           size=int(config["size"]),
                           pixel_pitch=float(config["pixel_pitch"]))
    return recipe, liner, segment, 60000.0 * liner_wear


def generate_pair(index, config=None, seed=0):
    config = section("synth", config)
    recipe, liner, segment, hours = sample_recipe(index, config, seed)
    surface = generate_surface(recipe)
    # store exactly what the depth file will hold
    stored = DepthProfile(surface.heights.astype("<f4").astype(np.float64),
                          pixel_pitch=surface.pixel_pitch)
    return SyntheticPair(id=f"s{index:04d}", depth=stored,
                         image=render_reflection(stored, recipe),
                         blc=compute_blc(stored, int(config["k"])), recipe=recipe,
                         liner_id=f"L{liner:03d}", segment=segment, operating_hours=hours)


def _write_pair(pair, out_dir):
    rec = ManifestRecord(id=pair.id, liner_id=pair.liner_id, segment=pair.segment,
                         operating_hours=pair.operating_hours,
                         rgb_path=f"rgb/{pair.id}.png", depth_path=f"depth/{pair.id}.htdp",
                         blc_path=f"blc/{pair.id}.blc")
    write_png(join(out_dir, rec.rgb_path), pair.image)
    write_htdp(join(out_dir, rec.depth_path), pair.depth.heights)
    write_blc(join(out_dir, rec.blc_path), pair.blc)
    return rec


def generate_dataset(out_dir, config=None, seed=0, workers=1, n=None):
    """Generate, write and index `n` pairs under `out_dir`.

    Returns the pairs and the manifest written to `out_dir/manifest.json`.
    """
    config = section("synth", config)
    if n is not None:
        config["n"] = int(n)
    n, n_liners = int(config["n"]), int(config["liners"])
    if n < 1:
        raise ConfigError("synth.n must be at least 1", n=n)
    if not 1 <= n_liners <= n:
        raise ConfigError("synth.liners must lie in [1, n]", liners=n_liners, n=n)
    try:
        for sub in ("rgb", "depth", "blc"):
            os.makedirs(join(out_dir, sub), exist_ok=True)
    except OSError as err:
        raise DataIOError(f"cannot create dataset directory {out_dir}: {err}")

    def make(index):
        pair = generate_pair(index, config, seed)
        return pair, _write_pair(pair, out_dir)

    LOG.info("generating %d synthetic pairs over %d liners in %s", n, n_liners, out_dir)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(make, range(n)))
    else:
        results = [make(i) for i in range(n)]
    pairs = [p for p, _ in results]
    manifest = Manifest([r for _, r in results], root=out_dir)
    manifest.save(join(out_dir, "manifest.json"))
    try:
        with open(join(out_dir, "recipes.json"), "w", encoding="utf-8") as f:
            json.dump([dict(p.recipe.as_dict(), id=p.id) for p in pairs], f, indent=2)
    except OSError as err:
        raise DataIOError(f"cannot write recipes: {err}")
    return pairs, manifest