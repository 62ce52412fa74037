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
from dataclasses import dataclass, asdict

import numpy as np
from ovos_utils.log import LOG

from .config import section
from .exceptions import ConfigError, InvalidInputError, StateError
from .image_prep import FilteredBlcStack
from .nn_engine import Dense, LeakyReLU, Linear, Sequential, fit
from .surface_core import extract_k_params, extract_volume_params

FAMILIES = ("sk", "vvv", "vmp")
N_FEATURES = 12


@dataclass(frozen=True)
class ParamTriple:
    sk: float
    vvv: float
    vmp: float

    def as_array(self):
        return np.array([self.sk, self.vvv, self.vmp], dtype=np.float64)

    def as_dict(self):
        return asdict(self)

    @classmethod
    def from_array(cls, values):
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if values.size != 3 or not np.all(np.isfinite(values)):
            raise InvalidInputError("a parameter triple needs three finite values")
        return cls(sk=float(values[0]), vvv=float(values[1]), vmp=float(values[2]))

    @classmethod
    def from_blc(cls, b, sk_search="full"):
        vol = extract_volume_params(b)
        return cls(sk=extract_k_params(b, sk_search).sk, vvv=vol.vvv, vmp=vol.vmp)


@dataclass
class Standardizer:
    """Per-column mean and standard deviation fitted on training data."""
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.std = np.asarray(self.std, dtype=np.float64).reshape(-1)
        if self.mean.shape != self.std.shape:
            raise ConfigError("standardizer mean and std differ in length")
        if not np.all(self.std > 0):
            raise ConfigError("standardizer needs positive deviations",
                              std=self.std.tolist())

    @classmethod
    def fit(cls, data, strict=True):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2 or len(data) < 2:
            raise InvalidInputError("standardizer needs at least two rows",
                                    shape=data.shape)
        mean = data.mean(axis=0)
        std = data.std(axis=0)
        degenerate = ~(std > 1e-12 * np.maximum(1.0, np.abs(mean)))
        if np.any(degenerate):
            if strict:
                raise ConfigError("degenerate target variance",
                                  columns=np.flatnonzero(degenerate).tolist())
            std = np.where(degenerate, 1.0, std)
        return cls(mean, std)

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def to_dict(self):
        # repr round-trips float64 exactly through JSON
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, data):
        return cls(data["mean"], data["std"])


def build_feature_vector(stack, sk_search="full"):
    """[Sk, Vvv, Vmp] of every filtered curve, family-major in sigma order."""
    if not isinstance(stack, FilteredBlcStack):
        stack = FilteredBlcStack(stack)
    sk, vvv, vmp = [], [], []
    for i in range(stack.curves.shape[1]):
        column = stack.column(i)
        sk.append(extract_k_params(column, sk_search).sk)
        vol = extract_volume_params(column)
        vvv.append(vol.vvv)
        vmp.append(vol.vmp)
    features = np.array(sk + vvv + vmp, dtype=np.float64)
    if features.size != N_FEATURES:
        raise InvalidInputError("feature vector needs four filtered curves",
                                size=features.size)
    return features


def build_param_network(hidden=(64, 128, 256, 256), slope=0.2, seed=0):
    rng = np.random.default_rng(seed)
    layers = []
    width = N_FEATURES
    for size in hidden:
        layers += [Dense(width, size, rng=rng), LeakyReLU(slope)]
        width = size
    layers += [Dense(width, len(FAMILIES), rng=rng), Linear()]
    return Sequential(*layers)


class ParameterModule:
    """Stage one: twelve Psi features in, standardized (Sk, Vvv, Vmp) out."""

    def __init__(self, config=None):
        self.config = section("params", config)
        self.seed = int(self.config["seed"])
        self.loss = self.config["loss"]
        if self.loss not in ("mae", "mse"):
            raise ConfigError(f"unknown params loss '{self.loss}'")
        self.network = build_param_network(tuple(self.config["hidden"]),
                                           float(self.config["slope"]), self.seed)
        self.standardizer = None
        self.input_standardizer = None
        self.history = None

    @property
    def standardize_inputs(self):
        return bool(self.config.get("standardize_inputs", False))

    def _inputs(self, features):
        features = np.asarray(features, dtype=np.float64)
        if features.shape[-1] != N_FEATURES or not np.all(np.isfinite(features)):
            raise InvalidInputError("features must be finite length-12 vectors",
                                    shape=features.shape)
        if self.standardize_inputs:
            if self.input_standardizer is None:
                raise StateError("input standardizer has not been fitted")
            return self.input_standardizer.transform(features)
        return features

    def predict_standardized(self, features):
        return self.network.apply(self._inputs(features))

    def predict(self, features):
        if self.standardizer is None:
            raise StateError("parameter module has no standardizer")
        return self.standardizer.inverse(self.predict_standardized(features))

    def fit(self, features, targets, validation=None, scheduler=None):
        features = np.asarray(features, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
        if len(features) < 2:
            raise InvalidInputError("parameter training needs at least two samples",
                                    n=len(features))
        if targets.shape != (len(features), len(FAMILIES)):
            raise InvalidInputError("targets must be N x 3", shape=targets.shape)
        self.standardizer = Standardizer.fit(targets)
        if self.standardize_inputs:
            self.input_standardizer = Standardizer.fit(features, strict=False)
        val = None
        if validation is not None:
            val = (self._inputs(validation[0]), self.standardizer.transform(validation[1]))
        scheduler = section("scheduler", scheduler)
        LOG.info("training parameter module on %d samples", len(features))
        self.history = fit(self.network, self._inputs(features),
                           self.standardizer.transform(targets),
                           epochs=int(self.config["epochs"]), lr=float(self.config["lr"]),
                           batch_size=int(self.config["batch_size"]), loss=self.loss,
                           seed=self.seed, factor=float(scheduler["factor"]),
                           patience=int(scheduler["patience"]), validation=val,
                           stage="params")
        return self

    def header(self):
        header = {"architecture": "param-dense-v1",
                  "hidden": list(self.config["hidden"]),
                  "slope": float(self.config["slope"]),
                  "layer_shapes": self.network.layer_shapes(),
                  "standardize_inputs": self.standardize_inputs,
                  "standardizer": self.standardizer.to_dict() if self.standardizer else None}
        if self.input_standardizer is not None:
            header["input_standardizer"] = self.input_standardizer.to_dict()
        return header


def predict_params(model, features, standardizer=None):
    """De-standardized parameter triple for one feature vector."""
    standardizer = standardizer or model.standardizer
    if standardizer is None:
        raise StateError("parameter prediction needs a standardizer")
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (N_FEATURES,):
        raise InvalidInputError("expected a single length-12 feature vector",
                                shape=features.shape)
    z = model.predict_standardized(features[None])[0]
    return ParamTriple.from_array(standardizer.inverse(z))


def train_params(features, targets, config=None, validation=None, scheduler=None):
    if isinstance(targets, (list, tuple)) and targets and isinstance(targets[0], ParamTriple):
        targets = np.stack([t.as_array() for t in targets])
    return ParameterModule(config).fit(features, targets, validation, scheduler)
