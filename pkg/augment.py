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
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .config import section
from .exceptions import ConfigError
from .image_prep import ReflectionImage


@dataclass
class TrainingPair:
    image: ReflectionImage
    label: object
    source_id: str = ""
    variant: str = "original"


def flip_vertical(img):
    return ReflectionImage(np.flipud(img.pixels).copy(), source_id=img.source_id)


def gaussian_blur(img, sigma):
    if sigma <= 0:
        return ReflectionImage(img.pixels.copy(), source_id=img.source_id)
    blurred = ndimage.gaussian_filter(img.pixels.astype(np.float64),
                                      sigma=(sigma, sigma, 0), mode="reflect")
    return ReflectionImage(np.clip(np.round(blurred), 0, 255).astype(np.uint8),
                           source_id=img.source_id)


def augment(pair, config=None):
    """Original, flipped, blurred and (optionally) flipped-then-blurred variants.

    Every variant shares the source label object.
    """
    config = section("augment", config)
    sigma = float(config["blur_sigma"])
    if sigma < 0:
        raise ConfigError("augment.blur_sigma must be >= 0", blur_sigma=sigma)
    out = [pair]
    if config["flip"]:
        out.append(TrainingPair(flip_vertical(pair.image), pair.label, pair.source_id, "flip"))
    out.append(TrainingPair(gaussian_blur(pair.image, sigma), pair.label, pair.source_id,
                            "blur"))
    if config["flip"] and config["compose"]:
        out.append(TrainingPair(gaussian_blur(out[1].image, sigma), pair.label,
                                pair.source_id, "flip+blur"))
    return out


def augment_all(pairs, config=None):
    return [variant for pair in pairs for variant in augment(pair, config)]


def multiplicity(config=None):
    config = section("augment", config)
    return 2 + int(bool(config["flip"])) + int(bool(config["flip"] and config["compose"]))
