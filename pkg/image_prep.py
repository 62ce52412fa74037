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
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from PIL import Image
from ovos_utils.log import LOG
from scipy import ndimage

from .config import section
from .exceptions import InvalidInputError, DataIOError, ConfigError
from .surface_core import compute_blc, write_htdp

SIGMAS = (8, 16, 32, 64)
LUMA = np.array([0.299, 0.587, 0.114])
MIN_SIDE = 16


@dataclass
class ReflectionImage:
    pixels: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise InvalidInputError("reflection image must be m1 x m2 x 3",
                                    shape=pixels.shape)
        if pixels.shape[0] < MIN_SIDE or pixels.shape[1] < MIN_SIDE:
            raise InvalidInputError("reflection image is too small",
                                    shape=pixels.shape, minimum=MIN_SIDE)
        if not np.all(np.isfinite(pixels)) or pixels.min() < 0 or pixels.max() > 255:
            raise InvalidInputError("channel values must lie in [0, 255]")
        if not np.all(pixels == np.round(pixels)):
            raise InvalidInputError("channel values must be integers")
        self.pixels = pixels.astype(np.uint8)

    @property
    def shape(self):
        return self.pixels.shape[:2]


@dataclass
class FilteredBlcStack:
    curves: np.ndarray
    sigmas: tuple = field(default=SIGMAS)

    def __post_init__(self):
        self.curves = np.asarray(self.curves, dtype=np.float64)
        if self.curves.ndim != 2 or self.curves.shape[1] != len(self.sigmas):
            raise InvalidInputError("stack must be K x len(sigmas)",
                                    shape=self.curves.shape)

    @property
    def k(self):
        return self.curves.shape[0]

    def column(self, i):
        return self.curves[:, i]


def read_png(path):
    try:
        with Image.open(path) as im:
            pixels = np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as err:
        raise DataIOError(f"cannot read image {path}: {err}")
    return ReflectionImage(pixels, source_id=str(path))


def write_png(path, img):
    pixels = img.pixels if isinstance(img, ReflectionImage) else np.asarray(img)
    try:
        Image.fromarray(pixels.astype(np.uint8)).save(path, format="PNG")
    except (OSError, ValueError) as err:
        raise DataIOError(f"cannot write image {path}: {err}")


def to_grayscale(img):
    pixels = img.pixels if isinstance(img, ReflectionImage) else np.asarray(img)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise InvalidInputError("grayscale conversion expects 3 channels")
    if pixels.min() < 0 or pixels.max() > 255:
        raise InvalidInputError("channel values must lie in [0, 255]")
    return pixels.astype(np.float64) @ LUMA / 255.0


@lru_cache(maxsize=32)
def _highpass_mask(rows, cols, sigma):
    i = np.arange(rows, dtype=np.float64)[:, None] - rows // 2
    j = np.arange(cols, dtype=np.float64)[None, :] - cols // 2
    mask = 1.0 - np.exp(-(i ** 2 + j ** 2) / (2.0 * sigma ** 2))
    mask.setflags(write=False)
    return mask


def highpass_mask(shape, sigma):
    """Gaussian high-pass transfer function, centred where fftshift puts DC."""
    if sigma <= 0:
        raise InvalidInputError("cut-off distance must be positive", sigma=sigma)
    rows, cols = shape
    return _highpass_mask(int(rows), int(cols), float(sigma))


def highpass_filter(gray, sigma):
    gray = np.asarray(gray, dtype=np.float64)
    if gray.ndim != 2:
        raise InvalidInputError("high-pass filtering expects a 2D profile")
    if not np.all(np.isfinite(gray)):
        raise InvalidInputError("profile contains non-finite values")
    spectrum = np.fft.fftshift(np.fft.fft2(gray))
    spectrum *= highpass_mask(gray.shape, sigma)
    return np.real(np.fft.ifft2(np.fft.ifftshift(spectrum)))


def resize_bilinear(img, target, clamp=True):
    """Corner-aligned bilinear resize, channel by channel.

    Pixel data is clamped to [0, 255]; pass `clamp=False` for filtered profiles.
    """
    rows, cols = (int(t) for t in target)
    if rows < 2 or cols < 2:
        raise InvalidInputError("resize target must be at least 2 x 2", target=target)
    is_image = isinstance(img, ReflectionImage)
    pixels = np.asarray(img.pixels if is_image else img, dtype=np.float64)
    if pixels.ndim not in (2, 3):
        raise InvalidInputError("resize expects a 2D or 3D array", shape=pixels.shape)
    if pixels.shape[:2] == (rows, cols):
        out = pixels.copy()
    else:
        r = np.linspace(0.0, pixels.shape[0] - 1, rows)
        c = np.linspace(0.0, pixels.shape[1] - 1, cols)
        rr, cc = np.meshgrid(r, c, indexing="ij")
        if pixels.ndim == 2:
            out = ndimage.map_coordinates(pixels, [rr, cc], order=1, mode="nearest")
        else:
            out = np.stack([ndimage.map_coordinates(pixels[..., ch], [rr, cc],
                                                    order=1, mode="nearest")
                            for ch in range(pixels.shape[2])], axis=-1)
    if clamp or is_image:
        out = np.clip(out, 0.0, 255.0)
    if is_image:
        return ReflectionImage(np.round(out).astype(np.uint8), source_id=img.source_id)
    return out


def filtered_profiles(img, sigmas=SIGMAS):
    gray = to_grayscale(img)
    return [highpass_filter(gray, s) for s in sigmas]


def stack_profiles(profiles, k, sigmas=SIGMAS):
    k = int(k)
    if k < 10:
        raise InvalidInputError("psi transform needs K >= 10", k=k)
    curves = [compute_blc(p, k).values for p in profiles]
    return FilteredBlcStack(np.stack(curves, axis=1), sigmas=tuple(sigmas))


def psi_transform(img, k, sigmas=SIGMAS):
    return stack_profiles(filtered_profiles(img, sigmas), k, sigmas)


class Preprocessor:
    """Resize plus psi transform, configured from the `preprocess` section."""

    def __init__(self, config=None):
        self.config = section("preprocess", config)
        self.k = int(self.config["k"])
        self.sigmas = tuple(float(s) for s in self.config["sigmas"])
        resize = self.config.get("resize")
        self.resize = tuple(int(r) for r in resize) if resize else None
        self.filter_after_resize = bool(self.config.get("filter_after_resize", True))
        if self.k < 10:
            raise ConfigError("preprocess.k must be at least 10", k=self.k)
        if not self.sigmas or min(self.sigmas) <= 0:
            raise ConfigError("preprocess.sigmas must be positive")
        if not self.filter_after_resize:
            LOG.warning("filter_after_resize is off: spectra follow the raw image size")

    def profiles(self, img):
        """Filtered grayscale profiles at the configured size."""
        if not self.resize:
            return filtered_profiles(img, self.sigmas)
        if self.filter_after_resize:
            return filtered_profiles(resize_bilinear(img, self.resize), self.sigmas)
        return [resize_bilinear(p, self.resize, clamp=False)
                for p in filtered_profiles(img, self.sigmas)]

    def transform(self, img):
        return stack_profiles(self.profiles(img), self.k, self.sigmas)

    def transform_many(self, images, workers=1):
        """Psi stacks for many images; output order follows input order."""
        if workers <= 1:
            return [self.transform(img) for img in images]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(self.transform, images))

    def export_profiles(self, img, prefix):
        """Write each filtered grayscale profile as HTDP for inspection."""
        paths = []
        for sigma, profile in zip(self.sigmas, self.profiles(img)):
            path = f"{prefix}_s{int(sigma)}.htdp"
            write_htdp(path, profile)
            paths.append(path)
        return paths
