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
from ovos_utils import classproperty

from liner_blc_transfer.blc_module import ModelBundle, predict_transfer
from liner_blc_transfer.config import load_config
from liner_blc_transfer.image_prep import ReflectionImage, read_png
from liner_blc_transfer.surface_core import Blc, DepthProfile, compute_blc, extract_all, \
    wasserstein1
from liner_blc_transfer.version import __version__


class BlcTransfer:
    """Loaded model bundle behind a one-call image -> curve interface."""

    def __init__(self, model_path, config=None):
        config = config or {}
        self.config = config
        self.bundle = ModelBundle.load(model_path)
        if "monotone" in config:
            self.bundle.blc.monotone = bool(config["monotone"])

    @classproperty
    def default_config(self):
        return load_config()

    @property
    def k(self):
        return self.bundle.k

    def predict(self, image):
        """`image` is a ReflectionImage, an RGB array or a PNG path."""
        if isinstance(image, str):
            image = read_png(image)
        elif not isinstance(image, ReflectionImage):
            image = ReflectionImage(image)
        return predict_transfer(self.bundle, image)

    def predict_params(self, image):
        return self.predict(image)[1].as_dict()
